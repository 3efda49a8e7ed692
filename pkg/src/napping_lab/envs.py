"""Parameterised CartPole, MountainCar and CrossRoad plus novelty samplers."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Union

import numpy as np

from . import kernels as K

DOMAINS = ("cartpole", "mountaincar", "crossroad")
DOMAIN_CODE = {name: i for i, name in enumerate(DOMAINS)}

ACTIONS = {
    "cartpole": ("left", "right"),
    "mountaincar": ("backward", "stay", "forward"),
    "crossroad": ("up", "down", "left", "right", "stay"),
}
OBS_DIM = {"cartpole": 4, "mountaincar": 2, "crossroad": 18}
CAUSES = ("none", "goal", "failure", "timeout")


@dataclass(frozen=True)
class CartPoleParams:
    pole_length: float = 0.5
    gravity: float = 9.8
    mass_cart: float = 1.0
    mass_pole: float = 0.1
    force_mag: float = 10.0
    tau: float = 0.02
    angle_limit: float = 12 * 2 * math.pi / 360
    x_limit: float = 2.4
    max_steps: int = 200

    domain = "cartpole"

    def __post_init__(self):
        for name in ("pole_length", "gravity", "mass_cart", "mass_pole", "force_mag", "tau",
                     "angle_limit", "x_limit", "max_steps"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"cartpole {name} must be finite and > 0, got {value}")

    def to_vector(self):
        return np.array([self.pole_length, self.gravity, self.mass_cart, self.mass_pole,
                         self.force_mag, self.tau, self.angle_limit, self.x_limit,
                         float(self.max_steps)])


@dataclass(frozen=True)
class MountainCarParams:
    force: float = 0.001
    gravity: float = 0.0025
    x_range: tuple = (-1.2, 0.6)
    v_max: float = 0.07
    goal_x: float = 0.5
    max_steps: int = 500

    domain = "mountaincar"

    def __post_init__(self):
        object.__setattr__(self, "x_range", tuple(float(v) for v in self.x_range))
        if not (self.force > 0 and self.gravity > 0):
            raise ValueError("mountaincar force and gravity must be > 0")
        if not self.x_range[0] < self.goal_x <= self.x_range[1]:
            raise ValueError("goal_x must lie inside x_range")
        if self.max_steps < 1 or self.v_max <= 0:
            raise ValueError("max_steps and v_max must be positive")

    def to_vector(self):
        return np.array([self.force, self.gravity, self.x_range[0], self.x_range[1],
                         self.v_max, self.goal_x, float(self.max_steps)])


# rows are counted from the top; row 0 is the goal line, row 9 the start line
DEFAULT_CAR_ROWS = (
    # (row, speed in cells/step, initial x); offsets put every car on the
    # straight-up path of a player that never waits
    (1, 1.0, 7.0),
    (2, -1.0, 2.0),
    (3, 0.5, 2.0),
    (4, -0.5, 7.5),
    (5, 1.0, 1.0),
    (6, -1.0, 8.0),
    (7, 0.5, 4.0),
    (8, -0.5, 5.5),
)

NOVELTY_BASES = (
    "super_slow",
    "super_fast",
    "new_speeds",
    "opposite_direction",
    "all_left",
    "all_right",
    "shift_speeds",
    "reverse_cars",
)

SUPER_SLOW_FACTOR = 0.25
SUPER_FAST_FACTOR = 2.0
NEW_SPEED_MAGNITUDES = (0.5, 0.75, 1.0, 1.0, 0.5, 0.75, 1.0, 0.75)
# speed noise is drawn in percent of one cell/step
SPEED_NOISE_UNIT = 0.01


@dataclass(frozen=True)
class CrossRoadParams:
    grid_width: int = 10
    grid_height: int = 10
    car_rows: tuple = DEFAULT_CAR_ROWS
    max_steps: int = 100
    position_noise_range: tuple = (-1.0, 1.0)
    speed_noise_range: tuple = (-10.0, 10.0)
    base: str = "default"

    domain = "crossroad"

    def __post_init__(self):
        rows = tuple((int(r), float(s), float(x)) for r, s, x in self.car_rows)
        object.__setattr__(self, "car_rows", rows)
        object.__setattr__(self, "position_noise_range", tuple(map(float, self.position_noise_range)))
        object.__setattr__(self, "speed_noise_range", tuple(map(float, self.speed_noise_range)))
        if len(rows) != K.N_CARS:
            raise ValueError(f"crossroad needs exactly {K.N_CARS} cars, got {len(rows)}")
        if self.max_steps != 100:
            raise ValueError("crossroad episodes last 100 steps")
        for r, s, x in rows:
            if not 0 < r < self.grid_height - 1:
                raise ValueError(f"car row {r} outside the road")
            if not (math.isfinite(s) and math.isfinite(x)):
                raise ValueError("car speed and position must be finite")

    def to_vector(self):
        rows = [float(r) for r, _, _ in self.car_rows]
        speeds = [s for _, s, _ in self.car_rows]
        return np.array([float(self.grid_width), float(self.grid_height), float(self.max_steps),
                         *rows, *speeds])


EnvParams = Union[CartPoleParams, MountainCarParams, CrossRoadParams]
PARAM_TYPES = {"cartpole": CartPoleParams, "mountaincar": MountainCarParams,
               "crossroad": CrossRoadParams}


def default_params(domain: str) -> EnvParams:
    try:
        return PARAM_TYPES[domain]()
    except KeyError:
        raise ValueError(f"unknown domain {domain!r}") from None


def params_to_dict(params: EnvParams) -> dict:
    d = asdict(params)
    d["domain"] = params.domain
    if "car_rows" in d:
        d["car_rows"] = [list(row) for row in d["car_rows"]]
    for key in ("x_range", "position_noise_range", "speed_noise_range"):
        if key in d:
            d[key] = list(d[key])
    return d


def params_from_dict(d: dict) -> EnvParams:
    d = dict(d)
    domain = d.pop("domain", None)
    if domain not in PARAM_TYPES:
        raise ValueError(f"unknown domain {domain!r}")
    if "car_rows" in d:
        d["car_rows"] = tuple(tuple(row) for row in d["car_rows"])
    return PARAM_TYPES[domain](**d)


@dataclass
class EnvState:
    domain: str
    observation: np.ndarray
    internal: np.ndarray
    step_count: int = 0
    done: bool = False
    terminal_cause: str = "none"


@dataclass
class StepResult:
    next_state: EnvState
    reward: float
    terminated: bool
    terminal_cause: str = "none"


def _action_index(domain, action):
    names = ACTIONS[domain]
    if isinstance(action, str):
        try:
            return names.index(action)
        except ValueError:
            raise ValueError(f"{domain} has no action {action!r}") from None
    a = int(action)
    if not 0 <= a < len(names):
        raise ValueError(f"{domain} action index {a} out of range")
    return a


def _check_state(state: EnvState, domain: str):
    if state.domain != domain:
        raise ValueError(f"expected a {domain} state, got {state.domain}")
    if state.done:
        raise ValueError("cannot step a terminated state")
    if not np.all(np.isfinite(state.internal)):
        raise ValueError("state has non-finite components")


def _step(domain, state, action, params):
    _check_state(state, domain)
    code = DOMAIN_CODE[domain]
    p = params.to_vector()
    a = _action_index(domain, action)
    internal, reward, cause = K.env_step(code, np.asarray(state.internal, dtype=float), a, p,
                                         state.step_count)
    done = cause != K.CAUSE_NONE
    nxt = EnvState(domain, K.env_observe(code, internal, p), internal, state.step_count + 1, done,
                   CAUSES[cause])
    return StepResult(nxt, float(reward), done, CAUSES[cause])


def cartpole_step(state: EnvState, action, params: CartPoleParams = CartPoleParams()) -> StepResult:
    return _step("cartpole", state, action, params)


def mountaincar_step(state: EnvState, action,
                     params: MountainCarParams = MountainCarParams()) -> StepResult:
    return _step("mountaincar", state, action, params)


def crossroad_step(state: EnvState, action,
                   params: CrossRoadParams = CrossRoadParams()) -> StepResult:
    return _step("crossroad", state, action, params)


def step(state: EnvState, action, params: EnvParams) -> StepResult:
    return _step(params.domain, state, action, params)


def crossroad_observe(internal, params: CrossRoadParams = CrossRoadParams()) -> np.ndarray:
    """Player cell followed by the 8 neighbour cells, row-major from top-left.

    An occupied neighbour reports its own (x, y); empty or off-grid cells
    report (-1, -1).
    """
    return K.crossroad_observe(np.asarray(internal, dtype=float), params.to_vector())


def make_state(params: EnvParams, internal, step_count: int = 0) -> EnvState:
    internal = np.asarray(internal, dtype=float).copy()
    code = DOMAIN_CODE[params.domain]
    if internal.shape != (K.STATE_DIM[code],):
        raise ValueError(f"{params.domain} state must have {K.STATE_DIM[code]} components")
    obs = K.env_observe(code, internal, params.to_vector())
    return EnvState(params.domain, obs, internal, step_count)


def initial_internal(params: EnvParams, rng: np.random.Generator) -> np.ndarray:
    """Draw a start state.

    cartpole and mountaincar follow the classic random resets. A crossroad
    layout is fixed by its parameters (noise is part of the novelty draw),
    so its reset consumes no randomness.
    """
    if params.domain == "cartpole":
        return rng.uniform(-0.05, 0.05, size=4)
    if params.domain == "mountaincar":
        return np.array([rng.uniform(-0.6, -0.4), 0.0])
    cars = np.array([x for _, _, x in params.car_rows])
    return np.concatenate([[params.grid_width // 2, params.grid_height - 1],
                           np.mod(cars, params.grid_width)])


def reset(params: EnvParams, rng: np.random.Generator) -> EnvState:
    return make_state(params, initial_internal(params, rng))


# -- novelty ---------------------------------------------------------------

CARTPOLE_NOVELTY_FIELDS = ("pole_length", "gravity", "mass_cart", "mass_pole", "force_mag")
MOUNTAINCAR_FORCE_RANGE = (0.0001, 0.02)
MOUNTAINCAR_GRAVITY_RANGE = (0.0001, 0.005)


def cartpole_range(field_name: str, middle_half: bool = False):
    """Sampling range for one cartpole parameter: default /10 to default x10."""
    base = getattr(CartPoleParams(), field_name)
    lo, hi = base / 10.0, base * 10.0
    if middle_half:
        span = hi - lo
        lo, hi = lo + span / 4, hi - span / 4
    return lo, hi


def crossroad_base(base: str, params: CrossRoadParams = CrossRoadParams()) -> CrossRoadParams:
    """Apply one of the eight layout transformations to ``params`` (noise-free)."""
    rows = [r for r, _, _ in params.car_rows]
    speeds = np.array([s for _, s, _ in params.car_rows])
    xs = np.array([x for _, _, x in params.car_rows])
    if base == "super_slow":
        speeds = speeds * SUPER_SLOW_FACTOR
    elif base == "super_fast":
        speeds = speeds * SUPER_FAST_FACTOR
    elif base == "new_speeds":
        speeds = np.sign(speeds) * np.array(NEW_SPEED_MAGNITUDES)
    elif base == "opposite_direction":
        speeds = -speeds
    elif base == "all_left":
        speeds = -np.abs(speeds)
    elif base == "all_right":
        speeds = np.abs(speeds)
    elif base == "shift_speeds":
        speeds = np.roll(speeds, 1)
    elif base == "reverse_cars":
        speeds = speeds[::-1]
        xs = xs[::-1]
    elif base != "default":
        raise ValueError(f"unknown crossroad novelty base {base!r}")
    car_rows = tuple((r, float(s), float(x)) for r, s, x in zip(rows, speeds, xs))
    return replace(params, car_rows=car_rows, base=base)


def add_crossroad_noise(params: CrossRoadParams, rng: np.random.Generator) -> CrossRoadParams:
    plo, phi = params.position_noise_range
    slo, shi = params.speed_noise_range
    rows = tuple(
        (r, s + rng.uniform(slo, shi) * SPEED_NOISE_UNIT, x + rng.uniform(plo, phi))
        for r, s, x in params.car_rows
    )
    return replace(params, car_rows=rows)


def sample_novelty(domain: str, rng: np.random.Generator, *, base: str | None = None,
                   middle_half: bool = False) -> EnvParams:
    """Draw one post-novelty parameter set.

    cartpole: one of the five physical parameters resampled uniformly,
    others at default. mountaincar: (force, gravity) uniform on the novelty
    rectangle. crossroad: a layout base (random unless given) plus per-car
    position and speed noise.
    """
    if domain == "cartpole":
        name = CARTPOLE_NOVELTY_FIELDS[rng.integers(len(CARTPOLE_NOVELTY_FIELDS))]
        lo, hi = cartpole_range(name, middle_half)
        return replace(CartPoleParams(), **{name: float(rng.uniform(lo, hi))})
    if domain == "mountaincar":
        return MountainCarParams(force=float(rng.uniform(*MOUNTAINCAR_FORCE_RANGE)),
                                 gravity=float(rng.uniform(*MOUNTAINCAR_GRAVITY_RANGE)))
    if domain == "crossroad":
        if base is None:
            base = NOVELTY_BASES[rng.integers(len(NOVELTY_BASES))]
        return add_crossroad_noise(crossroad_base(base), rng)
    raise ValueError(f"unknown domain {domain!r}")


def changed_fields(params: EnvParams) -> dict:
    """Fields of ``params`` that differ from the domain defaults."""
    default = default_params(params.domain)
    return {k: v for k, v in params_to_dict(params).items()
            if v != params_to_dict(default).get(k)}
