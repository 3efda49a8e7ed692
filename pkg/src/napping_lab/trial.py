"""The 80-episode open-world trial: 40 pre-novelty, 40 post-novelty episodes."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import baseline as B
from . import envs
from . import kernels as K
from .napping import EVAL_SPECS, PrincipleStore

AGENT_MODES = ("frozen", "online", "finetune", "napping")

WINDOW = 5
FLOOR_REWARD = {"cartpole": 1.0, "mountaincar": -500.0, "crossroad": -1.0}
REWARD_BOUNDS = {"cartpole": (1.0, 200.0), "mountaincar": (-500.0, -1.0), "crossroad": (-1.0, 1.0)}


def detect_novelty(recent_rewards, domain: str) -> bool:
    """Rolling-average novelty test over the last five episode rewards."""
    if len(recent_rewards) < WINDOW:
        raise ValueError(f"need at least {WINDOW} episodes, got {len(recent_rewards)}")
    mean = sum(recent_rewards[-WINDOW:]) / WINDOW
    if domain == "cartpole":
        return mean < 150
    if domain == "mountaincar":
        return mean < -120 or mean > -80
    if domain == "crossroad":
        return mean < 1
    raise ValueError(f"unknown domain {domain!r}")


@dataclass
class TrialConfig:
    domain: str
    agent_mode: str
    novelty: envs.EnvParams
    seed: int = 0
    pre_episodes: int = 40
    post_episodes: int = 40
    detection_start_index: int = 5

    def __post_init__(self):
        if self.agent_mode not in AGENT_MODES:
            raise ValueError(f"unknown agent mode {self.agent_mode!r}")
        if self.novelty.domain != self.domain:
            raise ValueError("novelty parameters belong to another domain")


@dataclass
class EpisodeRecord:
    episode_index: int
    total_reward: float
    steps: int
    detected_flag: bool
    principles_open: int
    principles_closed: int
    terminal_cause: str


@dataclass
class TrialRecord:
    config: TrialConfig
    episodes: list
    novelty: dict
    wall_time: float = 0.0
    n_anchors: int = 0
    unmatched_updates: int = 0
    store: Optional[dict] = None

    def post_rewards(self) -> np.ndarray:
        return np.array([e.total_reward for e in self.episodes if e.episode_index >= 0])

    @property
    def post_median_reward(self) -> float:
        return float(np.median(self.post_rewards()))

    @property
    def post_last10_mean(self) -> float:
        return float(np.mean(self.post_rewards()[-10:]))

    @property
    def failed(self) -> bool:
        return trial_failed(self.config.domain, self.post_rewards())


def trial_failed(domain: str, post_rewards) -> bool:
    """mountaincar: any floor (-500) episode among the last ten; cartpole:
    last-ten mean below the detection threshold; crossroad: solved fewer
    than half of the last ten."""
    last = np.asarray(post_rewards, dtype=float)[-10:]
    if domain == "mountaincar":
        return bool(np.any(last <= FLOOR_REWARD["mountaincar"]))
    if domain == "cartpole":
        return bool(last.mean() < 150)
    return bool(last.mean() < 0)


def _napping_episode(policy, store, spec, code, pvec, start, rng):
    theta, sizes, offset, scale = policy.kernel_args()
    state = start.copy()
    total, t = 0.0, 0
    while True:
        obs = K.env_observe(code, state, pvec)
        logits, ms = K.mlp_forward(theta, sizes, offset, scale, obs)
        a_agent = int(np.argmax(logits))
        a = store.select(ms, a_agent, rng)
        nxt, r, cause = K.env_step(code, state, a, pvec, t)
        score = spec.fn(state, a, nxt, cause)
        store.apply_score(ms, a_agent, a, score, spec.thre, spec.sup)
        total += r
        t += 1
        state = nxt
        if cause != K.CAUSE_NONE:
            return total, t, int(cause)


def _greedy_episode(policy, params, start):
    totals, steps, causes, _ = B.rollouts(policy, params, start[None, :])
    return float(totals[0]), int(steps[0]), int(causes[0])


def run_trial(config: TrialConfig, policy: B.BaselinePolicy, keep_store: bool = False) -> TrialRecord:
    """Play one trial. Randomness derives from ``config.seed`` only.

    Start states come from their own stream, so every agent mode sees the
    same sequence of episode starts for a given seed.
    """
    if policy.domain != config.domain:
        raise ValueError(f"{policy.domain} policy cannot play a {config.domain} trial")
    t0 = time.perf_counter()
    start_rng, select_rng, cem_rng = (np.random.default_rng(s)
                                      for s in np.random.SeedSequence(config.seed).spawn(3))
    domain = config.domain
    code = envs.DOMAIN_CODE[domain]
    pre_params = envs.default_params(domain)
    spec = EVAL_SPECS[domain]
    store = PrincipleStore(policy.n_actions, policy.embedding_dim)
    adapter = B.EpisodeCEM(policy, "online", cem_rng) if config.agent_mode == "online" else None

    rewards, records = [], []
    detected = False
    for idx in range(-config.pre_episodes, config.post_episodes):
        params = pre_params if idx < 0 else config.novelty
        if not detected and idx >= config.detection_start_index and len(rewards) >= WINDOW:
            detected = detect_novelty(rewards, domain)
            if detected and config.agent_mode == "finetune":
                adapter = B.EpisodeCEM(policy, "finetune", cem_rng)
        start = envs.initial_internal(params, start_rng)

        if config.agent_mode == "napping" and detected:
            total, steps, cause = _napping_episode(policy, store, spec, code, params.to_vector(),
                                                   start, select_rng)
        elif adapter is not None and idx >= 0:
            total, steps, cause = _greedy_episode(adapter.next_policy(), params, start)
            adapter.record(total)
        else:
            total, steps, cause = _greedy_episode(policy, params, start)

        rewards.append(total)
        n_open, n_closed = store.counts()
        records.append(EpisodeRecord(idx, total, steps, detected, n_open, n_closed,
                                     envs.CAUSES[cause]))

    return TrialRecord(
        config=config,
        episodes=records,
        novelty=envs.params_to_dict(config.novelty),
        wall_time=time.perf_counter() - t0,
        n_anchors=store.n_anchors,
        unmatched_updates=store.unmatched_updates,
        store=store.to_dict() if keep_store else None,
    )


# -- aggregation ----------------------------------------------------------------

@dataclass
class ModeSummary:
    n_trials: int
    episode_indices: list
    median_curve: list
    mean_curve: list
    failures: int
    post_solve_rate: float
    last10_median: float
    first5_median: float
    mean_anchors: float


@dataclass
class Summary:
    domain: str
    modes: dict = field(default_factory=dict)
    failure_reduction_pct: Optional[float] = None


def _curve(records, reducer):
    idx = [e.episode_index for e in records[0].episodes]
    table = np.array([[e.total_reward for e in r.episodes] for r in records])
    return idx, [float(reducer(table[:, j])) for j in range(table.shape[1])]


def _median(values):
    return statistics.median(float(v) for v in values)


def aggregate(records) -> Summary:
    """Per-mode reward curves (median and mean per episode index) and failure counts."""
    records = list(records)
    if not records:
        raise ValueError("no trial records to aggregate")
    domains = {r.config.domain for r in records}
    if len(domains) != 1:
        raise ValueError(f"cannot aggregate mixed domains {sorted(domains)}")
    domain = domains.pop()
    summary = Summary(domain)
    by_mode = {}
    for r in records:
        by_mode.setdefault(r.config.agent_mode, []).append(r)
    for mode in sorted(by_mode, key=AGENT_MODES.index):
        recs = by_mode[mode]
        lengths = {len(r.episodes) for r in recs}
        if len(lengths) != 1:
            raise ValueError(f"{mode} trials have differing episode counts")
        idx, med = _curve(recs, _median)
        _, mean = _curve(recs, np.mean)
        post = [j for j, i in enumerate(idx) if i >= 0]
        goals = [e.terminal_cause == "goal" for r in recs for e in r.episodes if e.episode_index >= 0]
        summary.modes[mode] = ModeSummary(
            n_trials=len(recs),
            episode_indices=idx,
            median_curve=med,
            mean_curve=mean,
            failures=sum(r.failed for r in recs),
            post_solve_rate=float(np.mean(goals)) if goals else 0.0,
            last10_median=float(np.mean([med[j] for j in post[-10:]])),
            first5_median=float(np.mean([med[j] for j in post[:5]])),
            mean_anchors=float(np.mean([r.n_anchors for r in recs])),
        )
    if "frozen" in summary.modes and "napping" in summary.modes:
        base = summary.modes["frozen"].failures
        if base:
            summary.failure_reduction_pct = 100.0 * (base - summary.modes["napping"].failures) / base
    return summary
