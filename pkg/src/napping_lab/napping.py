"""Adaptation principles over a Voronoi partition of the policy embedding.

The store keeps a growing list of anchors (model states). A query belongs to
the Voronoi cell of its nearest anchor; principles are keyed by
``(anchor_id, baseline_action)`` and hold the candidate actions still in the
running for that cell. ``select`` and ``update`` form the per-step loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels as K

SNAPSHOT_VERSION = 1


class InvariantError(RuntimeError):
    """The principle store reached a state its update rules forbid."""


@dataclass
class AdaptationPrinciple:
    candidates: list
    tested: set = field(default_factory=set)

    @property
    def closed(self) -> bool:
        return len(self.candidates) == 1

    @property
    def status(self) -> str:
        return "closed" if self.closed else "open"


@dataclass(frozen=True)
class EvalSpec:
    """Transition score with acceptance threshold ``thre`` and ceiling ``sup``.

    ``fn`` receives ``(internal_state, action, next_internal_state, cause)``
    where ``cause`` is a terminal-cause code from ``kernels``.
    """

    fn: Callable
    thre: float
    sup: Optional[float] = None
    domain: str = ""

    def __call__(self, s, a, s_next, cause=K.CAUSE_NONE) -> float:
        return float(self.fn(s, a, s_next, cause))


class PrincipleStore:
    def __init__(self, n_actions: int, dim: Optional[int] = None):
        self.n_actions = int(n_actions)
        self.dim = dim
        self._anchors = np.zeros((0, dim or 0))
        self.n_anchors = 0
        self.principles: dict = {}
        self.best_score: dict = {}
        # updates that fell in the gap of the case analysis: score < best but >= thre
        self.unmatched_updates = 0
        self._last_query = None

    @property
    def anchors(self) -> np.ndarray:
        return self._anchors[:self.n_anchors]

    def __len__(self):
        return len(self.principles)

    def counts(self):
        """``(open, closed)`` principle counts."""
        closed = sum(p.closed for p in self.principles.values())
        return len(self.principles) - closed, closed

    def _add_anchor(self, ms) -> int:
        ms = np.asarray(ms, dtype=np.float64)
        if self.dim is None:
            self.dim = ms.shape[0]
            self._anchors = np.zeros((16, self.dim))
        if ms.shape != (self.dim,):
            raise ValueError(f"model state must have shape ({self.dim},), got {ms.shape}")
        if self.n_anchors == self._anchors.shape[0]:
            grown = np.zeros((max(16, 2 * self.n_anchors), self.dim))
            grown[:self.n_anchors] = self._anchors[:self.n_anchors]
            self._anchors = grown
        self._anchors[self.n_anchors] = ms
        self.n_anchors += 1
        return self.n_anchors - 1

    def nearest_anchor(self, ms) -> int:
        if self.n_anchors == 0:
            raise ValueError("anchor set is empty")
        ms = np.ascontiguousarray(ms, dtype=np.float64)
        if ms.shape != (self.dim,):
            raise ValueError(f"model state must have shape ({self.dim},), got {ms.shape}")
        # select and update query the same state back to back
        tag = (ms.tobytes(), self.n_anchors)
        if self._last_query is not None and self._last_query[0] == tag:
            return self._last_query[1]
        idx = int(K.nearest_row(self._anchors, self.n_anchors, ms))
        self._last_query = (tag, idx)
        return idx

    def _create(self, ms, a_agent, a_ap, score, thre):
        anchor = self._add_anchor(ms)
        if score >= thre:
            cands = [a_agent]
        else:
            cands = [a for a in range(self.n_actions) if a != a_agent]
        key = (anchor, a_agent)
        self.principles[key] = AdaptationPrinciple(cands, {a_ap})
        self.best_score[key] = score
        return key

    def select(self, ms, a_agent: int, rng: np.random.Generator) -> int:
        if not self.principles:
            return a_agent
        key = (self.nearest_anchor(ms), a_agent)
        principle = self.principles.get(key)
        if principle is None:
            return a_agent
        if principle.closed:
            return principle.candidates[0]
        return principle.candidates[int(rng.integers(len(principle.candidates)))]

    def apply_score(self, ms, a_agent: int, a_ap: int, score: float, thre: float,
                    sup: Optional[float] = None):
        """Advance the store with an already-evaluated transition.

        Returns the key of the principle that was created or touched.
        """
        if not self.principles:
            return self._create(ms, a_agent, a_ap, score, thre)
        key = (self.nearest_anchor(ms), a_agent)
        principle = self.principles.get(key)
        if principle is None:
            return self._create(ms, a_agent, a_ap, score, thre)
        cands = principle.candidates
        if a_ap not in cands:
            raise ValueError(f"action {a_ap} is not a candidate of principle {key}")
        principle.tested.add(a_ap)
        best = self.best_score[key]
        is_open = len(cands) > 1

        if sup is not None and score >= sup:
            if is_open:
                principle.candidates = [a_ap]
                self.best_score[key] = score
        elif score > best or (score == best and score >= thre):
            if is_open:
                drop = principle.tested - {a_ap}
                principle.candidates = [a for a in cands if a not in drop]
                self.best_score[key] = score
        elif score < thre:
            # score <= best here
            if is_open:
                principle.candidates = [a for a in cands if a != a_ap]
            elif score < best:
                return self._create(ms, a_agent, a_ap, score, thre)
        else:
            self.unmatched_updates += 1

        if not principle.candidates:
            raise InvariantError(f"principle {key} lost its last candidate")
        return key

    def update(self, ms, a_agent: int, a_ap: int, s, s_next, eval_spec: EvalSpec,
               cause: int = K.CAUSE_NONE) -> float:
        score = eval_spec(s, a_ap, s_next, cause)
        self.apply_score(ms, a_agent, a_ap, score, eval_spec.thre, eval_spec.sup)
        return score

    # -- snapshots ----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": SNAPSHOT_VERSION,
            "n_actions": self.n_actions,
            "dim": self.dim,
            "anchors": [[float(v) for v in row] for row in self.anchors],
            "principles": [
                {
                    "anchor": a,
                    "baseline_action": b,
                    "candidates": list(p.candidates),
                    "tested": sorted(p.tested),
                    "status": p.status,
                    "best_score": self.best_score[(a, b)],
                }
                for (a, b), p in sorted(self.principles.items())
            ],
            "unmatched_updates": self.unmatched_updates,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PrincipleStore":
        if doc.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported store snapshot version {doc.get('version')!r}")
        store = cls(doc["n_actions"], doc["dim"])
        for row in doc["anchors"]:
            store._add_anchor(row)
        for p in doc["principles"]:
            key = (int(p["anchor"]), int(p["baseline_action"]))
            if not 0 <= key[0] < store.n_anchors:
                raise ValueError(f"principle references missing anchor {key[0]}")
            store.principles[key] = AdaptationPrinciple(list(p["candidates"]), set(p["tested"]))
            store.best_score[key] = float(p["best_score"])
        store.unmatched_updates = int(doc.get("unmatched_updates", 0))
        return store


def nearest_anchor(store: PrincipleStore, ms) -> int:
    return store.nearest_anchor(ms)


def napping_select(store: PrincipleStore, ms, a_agent: int, rng: np.random.Generator) -> int:
    return store.select(ms, a_agent, rng)


def napping_update(store: PrincipleStore, ms, a_agent: int, a_ap: int, s, s_next,
                   eval_spec: EvalSpec, cause: int = K.CAUSE_NONE) -> float:
    return store.update(ms, a_agent, a_ap, s, s_next, eval_spec, cause)


# -- domain scores ------------------------------------------------------------

CARTPOLE_HORIZON = 0.05
CARTPOLE_TOLERANCE = math.radians(2.0)
MOUNTAINCAR_GOAL = 0.5
MOUNTAINCAR_SUP = 1000.0
MOUNTAINCAR_THRE = 1e-9


def _cartpole_score(s, a, s_next, cause):
    # a push counts as sound if the pole ends inside the band or the cart was
    # pushed toward the side the pole is falling; which way a push turns the
    # pole does not depend on the physical parameters
    if cause == K.CAUSE_FAILURE:
        return 0.0
    if abs(s_next[2] + CARTPOLE_HORIZON * s_next[3]) <= CARTPOLE_TOLERANCE:
        return 1.0
    lean = s[2] + CARTPOLE_HORIZON * s[3]
    return 1.0 if (a == 1) == (lean > 0) else 0.0


def _mountaincar_score(s, a, s_next, cause):
    # sign of the work the push did: positive when pushing along the motion,
    # zero for stay or when pinned at a wall; free of force and gravity values
    if cause == K.CAUSE_GOAL or s_next[0] >= MOUNTAINCAR_GOAL:
        return MOUNTAINCAR_SUP
    return (a - 1) * (s_next[0] - s[0])


def _crossroad_score(s, a, s_next, cause):
    if cause == K.CAUSE_GOAL:
        return 2.0
    if cause in (K.CAUSE_FAILURE, K.CAUSE_TIMEOUT):
        return -1.0
    return 1.0 if s_next[1] < s[1] else 0.0


CARTPOLE_EVAL = EvalSpec(_cartpole_score, thre=1.0, sup=1.0, domain="cartpole")
MOUNTAINCAR_EVAL = EvalSpec(_mountaincar_score, thre=MOUNTAINCAR_THRE, sup=MOUNTAINCAR_SUP,
                            domain="mountaincar")
CROSSROAD_EVAL = EvalSpec(_crossroad_score, thre=0.0, sup=2.0, domain="crossroad")
EVAL_SPECS = {"cartpole": CARTPOLE_EVAL, "mountaincar": MOUNTAINCAR_EVAL,
              "crossroad": CROSSROAD_EVAL}

_CAUSE_CODES = {"none": K.CAUSE_NONE, "goal": K.CAUSE_GOAL, "failure": K.CAUSE_FAILURE,
                "timeout": K.CAUSE_TIMEOUT}


def _state_args(domain, s, s_next):
    for st in (s, s_next):
        if getattr(st, "domain", domain) != domain:
            raise ValueError(f"{domain} score applied to a {st.domain} state")
    cause = _CAUSE_CODES[getattr(s_next, "terminal_cause", "none")]
    return getattr(s, "internal", s), getattr(s_next, "internal", s_next), cause


def eval_cartpole(s, a, s_next) -> float:
    """1 when the pole stays up and either the projected lean
    ``theta + 0.05 * theta_dot`` ends within 2 degrees or the push went toward
    the side the pole leans; else 0."""
    s, s_next, cause = _state_args("cartpole", s, s_next)
    return CARTPOLE_EVAL(s, a, s_next, cause)


def eval_mountaincar(s, a, s_next) -> float:
    """Push direction times displacement; 1000 on reaching the goal."""
    s, s_next, cause = _state_args("mountaincar", s, s_next)
    return MOUNTAINCAR_EVAL(s, a, s_next, cause)


def eval_crossroad(s, a, s_next) -> float:
    s, s_next, cause = _state_args("crossroad", s, s_next)
    return CROSSROAD_EVAL(s, a, s_next, cause)
