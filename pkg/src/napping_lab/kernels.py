"""Hot numeric kernels: environment transitions, MLP forward pass, rollouts.

Everything here works on flat float64 arrays so the same source runs under
``numba.njit`` and as plain numpy (see ``_accel``). Higher-level wrappers in
``envs`` and ``baseline`` build the typed objects.

Domain codes: 0 cartpole, 1 mountaincar, 2 crossroad.
Terminal causes: 0 none, 1 goal, 2 failure, 3 timeout.

Parameter vector layouts::

    cartpole    [length, gravity, mass_cart, mass_pole, force_mag, tau,
                 angle_limit, x_limit, max_steps]
    mountaincar [force, gravity, x_min, x_max, v_max, goal_x, max_steps]
    crossroad   [width, height, max_steps, row_0..row_7, speed_0..speed_7]

State vector layouts::

    cartpole    [x, x_dot, theta, theta_dot]
    mountaincar [x, x_dot]
    crossroad   [player_x, player_y, car_x_0..car_x_7]
"""

import numpy as np

from ._accel import kernel

CARTPOLE = 0
MOUNTAINCAR = 1
CROSSROAD = 2

CAUSE_NONE = 0
CAUSE_GOAL = 1
CAUSE_FAILURE = 2
CAUSE_TIMEOUT = 3

N_CARS = 8
OBS_DIM = (4, 2, 18)
N_ACTIONS = (2, 3, 5)
STATE_DIM = (4, 2, 2 + N_CARS)

# crossroad actions
UP, DOWN, LEFT, RIGHT, STAY = 0, 1, 2, 3, 4


@kernel
def cartpole_step(state, action, p, t):
    length, gravity, mass_cart, mass_pole, force_mag, tau = p[0], p[1], p[2], p[3], p[4], p[5]
    x, x_dot, theta, theta_dot = state[0], state[1], state[2], state[3]
    force = force_mag if action == 1 else -force_mag
    total_mass = mass_cart + mass_pole
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)
    temp = (force + mass_pole * length * theta_dot * theta_dot * sin_t) / total_mass
    theta_acc = (gravity * sin_t - cos_t * temp) / (
        length * (4.0 / 3.0 - mass_pole * cos_t * cos_t / total_mass)
    )
    x_acc = temp - mass_pole * length * theta_acc * cos_t / total_mass
    out = np.empty(4)
    out[0] = x + tau * x_dot
    out[1] = x_dot + tau * x_acc
    out[2] = theta + tau * theta_dot
    out[3] = theta_dot + tau * theta_acc
    cause = CAUSE_NONE
    if abs(out[2]) > p[6] or abs(out[0]) > p[7]:
        cause = CAUSE_FAILURE
    elif t + 1 >= p[8]:
        cause = CAUSE_TIMEOUT
    return out, 1.0, cause


@kernel
def mountaincar_step(state, action, p, t):
    force, gravity, x_min, x_max, v_max, goal_x = p[0], p[1], p[2], p[3], p[4], p[5]
    x, v = state[0], state[1]
    v = v + (action - 1) * force - gravity * np.cos(3.0 * x)
    v = min(max(v, -v_max), v_max)
    x = min(max(x + v, x_min), x_max)
    out = np.empty(2)
    out[0] = x
    out[1] = v
    cause = CAUSE_NONE
    if x >= goal_x:
        cause = CAUSE_GOAL
    elif t + 1 >= p[6]:
        cause = CAUSE_TIMEOUT
    return out, -1.0, cause


@kernel
def car_cell(car_x, width):
    return int(np.floor(car_x + 0.5)) % width


@kernel
def crossroad_step(state, action, p, t):
    width = int(p[0])
    height = int(p[1])
    px = state[0]
    py = state[1]
    if action == UP:
        py = max(py - 1.0, 0.0)
    elif action == DOWN:
        py = min(py + 1.0, height - 1.0)
    elif action == LEFT:
        px = max(px - 1.0, 0.0)
    elif action == RIGHT:
        px = min(px + 1.0, width - 1.0)
    out = np.empty(2 + N_CARS)
    out[0] = px
    out[1] = py
    collided = False
    for i in range(N_CARS):
        cx = (state[2 + i] + p[3 + N_CARS + i]) % width
        out[2 + i] = cx
        if p[3 + i] == py and car_cell(cx, width) == int(px):
            collided = True
    if py == 0.0:
        return out, 1.0, CAUSE_GOAL
    if collided:
        return out, -1.0, CAUSE_FAILURE
    if t + 1 >= p[2]:
        return out, -1.0, CAUSE_TIMEOUT
    return out, 0.0, CAUSE_NONE


@kernel
def crossroad_observe(state, p):
    width = int(p[0])
    height = int(p[1])
    px = int(state[0])
    py = int(state[1])
    obs = np.full(18, -1.0)
    obs[0] = px
    obs[1] = py
    k = 2
    for dy in range(-1, 2):
        for dx in range(-1, 2):
            if dx == 0 and dy == 0:
                continue
            cx = px + dx
            cy = py + dy
            if 0 <= cx < width and 0 <= cy < height:
                for i in range(N_CARS):
                    if p[3 + i] == cy and car_cell(state[2 + i], width) == cx:
                        obs[k] = cx
                        obs[k + 1] = cy
                        break
            k += 2
    return obs


@kernel
def env_step(domain, state, action, p, t):
    if domain == CARTPOLE:
        return cartpole_step(state, action, p, t)
    if domain == MOUNTAINCAR:
        return mountaincar_step(state, action, p, t)
    return crossroad_step(state, action, p, t)


@kernel
def env_observe(domain, state, p):
    if domain == CROSSROAD:
        return crossroad_observe(state, p)
    return state.copy()


@kernel
def mlp_forward(theta, sizes, offset, scale, obs):
    """Return ``(logits, embedding)`` for one observation.

    ``theta`` packs W1, b1, W2, b2, W3, b3 row-major; ``sizes`` is
    ``[n_in, h1, h2, n_out]``. Inputs are normalised as ``(obs - offset) / scale``.
    """
    n_in, h1, h2, n_out = sizes[0], sizes[1], sizes[2], sizes[3]
    x = (obs - offset) / scale
    i = 0
    w1 = theta[i:i + h1 * n_in].reshape((h1, n_in))
    i += h1 * n_in
    b1 = theta[i:i + h1]
    i += h1
    w2 = theta[i:i + h2 * h1].reshape((h2, h1))
    i += h2 * h1
    b2 = theta[i:i + h2]
    i += h2
    w3 = theta[i:i + n_out * h2].reshape((n_out, h2))
    i += n_out * h2
    b3 = theta[i:i + n_out]
    a1 = np.tanh(np.dot(w1, x) + b1)
    emb = np.tanh(np.dot(w2, a1) + b2)
    logits = np.dot(w3, emb) + b3
    return logits, emb


@kernel
def greedy_action(theta, sizes, offset, scale, obs):
    logits, _ = mlp_forward(theta, sizes, offset, scale, obs)
    return int(np.argmax(logits))


@kernel
def rollout(domain, theta, sizes, offset, scale, p, init_states):
    """Play one greedy episode from each row of ``init_states``.

    Returns per-episode ``(total_reward, steps, terminal_cause, progress)``;
    ``progress`` is the furthest x reached (mountaincar) or the lowest row
    index reached (crossroad), and 0 for cartpole.
    """
    n = init_states.shape[0]
    totals = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    causes = np.zeros(n, dtype=np.int64)
    progress = np.zeros(n)
    for e in range(n):
        state = init_states[e].copy()
        total = 0.0
        t = 0
        best = state[0] if domain == MOUNTAINCAR else (state[1] if domain == CROSSROAD else 0.0)
        while True:
            obs = env_observe(domain, state, p)
            a = greedy_action(theta, sizes, offset, scale, obs)
            state, r, cause = env_step(domain, state, a, p, t)
            total += r
            t += 1
            if domain == MOUNTAINCAR:
                best = max(best, state[0])
            elif domain == CROSSROAD:
                best = min(best, state[1])
            if cause != CAUSE_NONE:
                causes[e] = cause
                break
        totals[e] = total
        steps[e] = t
        progress[e] = best
    return totals, steps, causes, progress


@kernel
def evaluate_population(domain, thetas, sizes, offset, scale, p, init_states):
    """Mean greedy return and mean progress for every row of ``thetas``."""
    n_pop = thetas.shape[0]
    means = np.zeros(n_pop)
    prog = np.zeros(n_pop)
    for k in range(n_pop):
        totals, _, _, progress = rollout(domain, thetas[k], sizes, offset, scale, p, init_states)
        means[k] = totals.mean()
        prog[k] = progress.mean()
    return means, prog


def _nearest_row_numpy(points, n, query):
    d = ((points[:n] - query) ** 2).sum(axis=1)
    return int(np.argmin(d))


@kernel(fallback=_nearest_row_numpy)
def nearest_row(points, n, query):
    """Index of the row of ``points[:n]`` closest to ``query`` (squared
    Euclidean); ties go to the lowest index."""
    best = -1
    best_d = np.inf
    dim = query.shape[0]
    for i in range(n):
        d = 0.0
        for j in range(dim):
            diff = points[i, j] - query[j]
            d += diff * diff
            if d >= best_d:
                break
        if d < best_d:
            best_d = d
            best = i
    return best
