"""Small tanh MLP policy with an exposed embedding, trained by cross-entropy search."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import envs
from . import kernels as K

log = logging.getLogger(__name__)

WEIGHT_FILE_VERSION = 1

# fixed input normalisation per domain: (obs - offset) / scale
INPUT_NORM = {
    "cartpole": (np.zeros(4), np.array([2.4, 2.0, 0.21, 2.0])),
    "mountaincar": (np.array([-0.3, 0.0]), np.array([0.9, 0.07])),
    "crossroad": (np.full(18, 4.5), np.full(18, 4.5)),
}

# mountaincar must finish inside the detector's quiet band (-120, -80) or
# detection would fire with no novelty present
TARGETS = {"cartpole": 195.0, "mountaincar": -110.0, "crossroad": 0.9}


def n_params(sizes) -> int:
    n_in, h1, h2, n_out = sizes
    return h1 * n_in + h1 + h2 * h1 + h2 + n_out * h2 + n_out


@dataclass
class BaselinePolicy:
    domain: str
    sizes: tuple
    theta: np.ndarray
    seed: int = 0
    train_score: float = float("nan")

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if self.theta.shape != (n_params(self.sizes),):
            raise ValueError(f"expected {n_params(self.sizes)} weights, got {self.theta.shape}")
        self._sizes_arr = np.array(self.sizes, dtype=np.int64)
        self._offset, self._scale = INPUT_NORM[self.domain]

    @classmethod
    def zeros(cls, domain: str, hidden=(32, 32)) -> "BaselinePolicy":
        sizes = (envs.OBS_DIM[domain], hidden[0], hidden[1], len(envs.ACTIONS[domain]))
        return cls(domain, sizes, np.zeros(n_params(sizes)))

    @property
    def embedding_dim(self) -> int:
        return self.sizes[2]

    @property
    def n_actions(self) -> int:
        return self.sizes[3]

    def with_theta(self, theta) -> "BaselinePolicy":
        return BaselinePolicy(self.domain, self.sizes, np.array(theta, dtype=float), self.seed,
                              self.train_score)

    def layers(self):
        """Unpack ``theta`` into ``[(W1, b1), (W2, b2), (W3, b3)]`` views."""
        n_in, h1, h2, n_out = self.sizes
        out, i = [], 0
        for rows, cols in ((h1, n_in), (h2, h1), (n_out, h2)):
            w = self.theta[i:i + rows * cols].reshape(rows, cols)
            i += rows * cols
            out.append((w, self.theta[i:i + rows]))
            i += rows
        return out

    def kernel_args(self):
        return self.theta, self._sizes_arr, self._offset, self._scale


def forward(policy: BaselinePolicy, observation):
    obs = np.asarray(observation, dtype=np.float64)
    if obs.shape != (policy.sizes[0],):
        raise ValueError(f"observation must have shape ({policy.sizes[0]},), got {obs.shape}")
    return K.mlp_forward(*policy.kernel_args(), obs)


def act(policy: BaselinePolicy, observation) -> int:
    """Greedy action; ties go to the lowest index."""
    logits, _ = forward(policy, observation)
    return int(np.argmax(logits))


def embed(policy: BaselinePolicy, observation) -> np.ndarray:
    return forward(policy, observation)[1]


# -- evaluation -------------------------------------------------------------

def start_states(params, n: int, rng: np.random.Generator) -> np.ndarray:
    return np.stack([envs.initial_internal(params, rng) for _ in range(n)])


def rollouts(policy: BaselinePolicy, params, starts: np.ndarray):
    """Greedy episodes from each start; returns ``(rewards, steps, causes, progress)``."""
    return K.rollout(envs.DOMAIN_CODE[policy.domain], *policy.kernel_args(),
                     params.to_vector(), np.ascontiguousarray(starts, dtype=float))


def validate(policy: BaselinePolicy, params=None, episodes: int = 100, rng=None) -> dict:
    """Mean return and goal/solve rate over fresh greedy episodes."""
    params = params or envs.default_params(policy.domain)
    rng = rng if rng is not None else np.random.default_rng(12345)
    rewards, _, causes, _ = rollouts(policy, params, start_states(params, episodes, rng))
    return {
        "mean_reward": float(rewards.mean()),
        "goal_rate": float(np.mean(causes == K.CAUSE_GOAL)),
        "episodes": episodes,
    }


def meets_target(domain: str, stats: dict, margin: float = 0.0) -> bool:
    """Pre-novelty competence bar per domain, raised by ``margin`` reward units."""
    if domain == "cartpole":
        return stats["mean_reward"] >= TARGETS["cartpole"] + margin
    if domain == "mountaincar":
        return (stats["mean_reward"] >= TARGETS["mountaincar"] + margin
                and stats["goal_rate"] >= 0.9)
    return stats["goal_rate"] >= 0.95


# training confirms against a raised bar so that a fresh 100-episode
# validation does not land just under the target by sampling noise
CONFIRM_MARGIN = {"cartpole": 2.0, "mountaincar": 2.0, "crossroad": 0.0}


# -- training ---------------------------------------------------------------

@dataclass
class TrainConfig:
    population: int = 50
    elite_frac: float = 0.2
    noise_scale: float = 0.5
    extra_noise: float = 0.05
    max_generations: int = 200
    episodes_per_candidate: int = 5
    validation_episodes: int = 20
    confirm_episodes: int = 300
    hidden: tuple = (32, 32)
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.elite_frac < 1:
            raise ValueError("elite_frac must lie in (0, 1)")
        if self.population < 2 or int(self.population * self.elite_frac) < 1:
            raise ValueError("population too small for the elite fraction")
        if self.noise_scale <= 0 or self.max_generations < 1 or self.episodes_per_candidate < 1:
            raise ValueError("noise_scale, max_generations and episodes_per_candidate must be positive")

    @property
    def n_elite(self) -> int:
        return int(self.population * self.elite_frac)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = {k: v for k, v in d.items() if k not in ("schema_version", "domain")}
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


DEFAULT_TRAIN = {
    "cartpole": TrainConfig(),
    "mountaincar": TrainConfig(max_generations=300),
    # sparse +1/-1 outcomes need a larger population and more episodes to rank
    "crossroad": TrainConfig(population=100, episodes_per_candidate=20, max_generations=300),
}


def default_train_config(domain: str, **overrides) -> TrainConfig:
    if domain not in DEFAULT_TRAIN:
        raise ValueError(f"unknown domain {domain!r}")
    return replace(DEFAULT_TRAIN[domain], **overrides)


class CompetenceError(RuntimeError):
    """Training ended without reaching the competence target."""

    def __init__(self, policy: BaselinePolicy, stats: dict):
        super().__init__(f"{policy.domain} policy below target: {stats}")
        self.policy = policy
        self.stats = stats


def _fitness(domain, means, progress):
    # mountaincar returns are flat at -500 until the goal is reached; the
    # furthest position breaks ties
    if domain == "mountaincar":
        return means + 10.0 * progress
    return means


def train(domain: str, config: TrainConfig | None = None, rng=None, params=None,
          init: BaselinePolicy | None = None) -> BaselinePolicy:
    """Cross-entropy search over MLP weights on the pre-novelty environment.

    Returns the first candidate that meets the domain target on
    ``validation_episodes`` fresh episodes (and on ``confirm_episodes``).
    Raises ``CompetenceError`` carrying the best policy found otherwise.
    """
    config = config or DEFAULT_TRAIN[domain]
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    params = params or envs.default_params(domain)
    template = init or BaselinePolicy.zeros(domain, config.hidden)
    code = envs.DOMAIN_CODE[domain]
    _, sizes, offset, scale = template.kernel_args()
    pvec = params.to_vector()
    mu = template.theta.copy()
    sigma = np.full_like(mu, config.noise_scale)
    best = (-np.inf, template)

    for gen in range(config.max_generations):
        starts = start_states(params, config.episodes_per_candidate, rng)
        eps = rng.standard_normal((config.population, mu.size))
        thetas = mu + sigma * eps
        thetas[0] = mu
        means, progress = K.evaluate_population(code, thetas, sizes, offset, scale, pvec, starts)
        fit = _fitness(domain, means, progress)
        order = np.argsort(-fit, kind="stable")
        elite = thetas[order[:config.n_elite]]
        decay = max(0.0, 1.0 - gen / (0.5 * config.max_generations))
        mu = elite.mean(axis=0)
        sigma = elite.std(axis=0) + config.extra_noise * decay

        for cand in (thetas[order[0]], mu):
            policy = template.with_theta(cand)
            policy.seed = config.seed
            stats = validate(policy, params, config.validation_episodes, rng)
            score = stats["mean_reward"]
            if score > best[0]:
                best = (score, policy)
            if meets_target(domain, stats):
                confirm = validate(policy, params, config.confirm_episodes, rng)
                if meets_target(domain, confirm, CONFIRM_MARGIN[domain]):
                    policy.train_score = confirm["mean_reward"]
                    log.info("%s: target met at generation %d (%s)", domain, gen, confirm)
                    return policy
        log.debug("%s gen %d: best fitness %.2f", domain, gen, fit[order[0]])

    policy = best[1]
    stats = validate(policy, params, config.confirm_episodes, rng)
    policy.train_score = stats["mean_reward"]
    raise CompetenceError(policy, stats)


# -- comparators --------------------------------------------------------------

@dataclass(frozen=True)
class AdaptConfig:
    """Episode-window CEM used by the online and fine-tune comparators.

    Each trial episode is played by one candidate; after ``window`` episodes
    the mean moves toward the elite candidates.
    """

    window: int = 8
    noise_scale: float = 0.05
    elite_frac: float = 0.25
    step_size: float = 0.5


ONLINE = AdaptConfig(window=8, noise_scale=0.05, elite_frac=0.25, step_size=0.5)
FINETUNE = AdaptConfig(window=8, noise_scale=0.1, elite_frac=0.25, step_size=1.0)


def _elite_mean(episode_batch, elite_frac):
    returns = np.array([r for _, r in episode_batch], dtype=float)
    n_elite = max(1, int(round(len(episode_batch) * elite_frac)))
    order = np.argsort(-returns, kind="stable")[:n_elite]
    return np.mean([episode_batch[i][0].theta for i in order], axis=0)


def online_step(policy: BaselinePolicy, episode_batch, config: AdaptConfig = ONLINE) -> BaselinePolicy:
    """One generation of online CEM over ``(candidate_policy, return)`` pairs."""
    if not episode_batch:
        return policy
    target = _elite_mean(episode_batch, config.elite_frac)
    return policy.with_theta(policy.theta + config.step_size * (target - policy.theta))


def fine_tune(policy: BaselinePolicy, episode_batch, config: AdaptConfig = FINETUNE) -> BaselinePolicy:
    """One generation of CEM restarted from ``policy`` on post-novelty episodes."""
    if not episode_batch:
        return policy
    target = _elite_mean(episode_batch, config.elite_frac)
    return policy.with_theta(policy.theta + config.step_size * (target - policy.theta))


class EpisodeCEM:
    """Schedules one candidate per trial episode and updates per window."""

    def __init__(self, policy: BaselinePolicy, mode: str, rng: np.random.Generator):
        if mode not in ("online", "finetune"):
            raise ValueError(f"unknown comparator mode {mode!r}")
        self.policy = policy
        self.mode = mode
        self.config = ONLINE if mode == "online" else FINETUNE
        self.rng = rng
        self.batch = []
        self._pending = None

    def next_policy(self) -> BaselinePolicy:
        if not self.batch:
            cand = self.policy  # first slot of each window replays the mean
        else:
            noise = self.rng.standard_normal(self.policy.theta.size) * self.config.noise_scale
            cand = self.policy.with_theta(self.policy.theta + noise)
        self._pending = cand
        return cand

    def record(self, episode_return: float):
        self.batch.append((self._pending, float(episode_return)))
        if len(self.batch) >= self.config.window:
            update = online_step if self.mode == "online" else fine_tune
            self.policy = update(self.policy, self.batch, self.config)
            self.batch = []


# -- weight files -------------------------------------------------------------

def save(policy: BaselinePolicy, path) -> None:
    doc = {
        "version": WEIGHT_FILE_VERSION,
        "domain": policy.domain,
        "layer_sizes": list(policy.sizes),
        "weights": [float(w) for w in policy.theta],
        "seed": int(policy.seed),
        "train_score": float(policy.train_score),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load(path) -> BaselinePolicy:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not a valid weight file ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("version") != WEIGHT_FILE_VERSION:
        raise ValueError(f"{path}: unsupported weight file version {doc.get('version') if isinstance(doc, dict) else None!r}")
    missing = {"domain", "layer_sizes", "weights", "seed", "train_score"} - set(doc)
    if missing:
        raise ValueError(f"{path}: missing fields {sorted(missing)}")
    if doc["domain"] not in envs.DOMAINS:
        raise ValueError(f"{path}: unknown domain {doc['domain']!r}")
    return BaselinePolicy(doc["domain"], tuple(doc["layer_sizes"]),
                          np.array(doc["weights"], dtype=float), int(doc["seed"]),
                          float(doc["train_score"]))
