"""Task generators: GP regression (optionally with periodic noise), Lotka-Volterra, hare-lynx.

Every generator is a pure function of its spec and an integer seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

X_RANGE = (-2.0, 2.0)
LV_SCALE = 0.01


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    family: str = "RBF"
    s: float = 3.0
    l: float = 3.0  # noqa: E741
    freq: float = 10.0
    p: float = 2.0 * math.pi

    def __post_init__(self):
        if self.family not in ("RBF", "Matern32", "Periodic"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not (self.s > 0 and self.l > 0):
            raise ValueError("kernel s and l must be positive")
        if self.family == "Periodic" and not (self.freq >= 1 and self.p > 0):
            raise ValueError("periodic kernel needs freq >= 1 and p > 0")

    def to_dict(self):
        return asdict(self)


RBF_TRAIN = KernelSpec("RBF", s=3.0, l=3.0)
PERIODIC_NOISE = KernelSpec("Periodic", s=1.0, l=1.0, freq=30.0, p=2.0 * math.pi)
TEST_KERNELS = {
    "rbf": KernelSpec("RBF", s=3.0, l=3.0),
    "matern": KernelSpec("Matern32", s=3.0, l=3.0),
    "periodic": KernelSpec("Periodic", s=3.0, l=3.0, freq=10.0, p=2.0 * math.pi),
}


def kernel_matrix(spec: KernelSpec, xa, xb):
    xa = np.asarray(xa, dtype=np.float64).reshape(len(xa), -1)
    xb = np.asarray(xb, dtype=np.float64).reshape(len(xb), -1)
    diff = xa[:, None, :] - xb[None, :, :]
    d = np.sqrt((diff**2).sum(-1))
    s2 = spec.s**2
    if spec.family == "RBF":
        return s2 * np.exp(-(d**2) / (2.0 * spec.l**2))
    if spec.family == "Matern32":
        r = math.sqrt(3.0) * d / spec.l
        return s2 * (1.0 + r) * np.exp(-r)
    return s2 * np.exp(-2.0 * np.sin(math.pi * spec.freq * d / spec.p) ** 2 / spec.l**2)


def kernel_eval(spec: KernelSpec, x, x2):
    return float(kernel_matrix(spec, np.atleast_1d(x)[None], np.atleast_1d(x2)[None])[0, 0])


def gp_sample(spec: KernelSpec, xs, seed):
    """One GP draw at ``xs`` ([n] or [n, d]), Cholesky with escalating jitter."""
    xs = np.asarray(xs, dtype=np.float64)
    if len(xs) == 0:
        raise ValueError("gp_sample needs at least one input")
    cov = kernel_matrix(spec, xs, xs)
    eye = np.eye(len(xs))
    for jitter in (1e-6, 1e-5, 1e-4):
        try:
            chol = np.linalg.cholesky(cov + jitter * eye)
            break
        except np.linalg.LinAlgError:
            continue
    else:
        raise ArithmeticError("GP covariance is not positive definite even with 1e-4 jitter")
    rng = np.random.default_rng(seed)
    return chol @ rng.standard_normal(len(xs))


@dataclass
class Task:
    x_context: np.ndarray
    y_context: np.ndarray
    x_target: np.ndarray
    y_target: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_context(self):
        return len(self.x_context)

    @property
    def n_target(self):
        return len(self.x_target)

    @classmethod
    def from_points(cls, x, y, n_context, meta=None):
        """Context is the first ``n_context`` rows; targets are all rows."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim == 1:
            y = y[:, None]
        meta = dict(meta or {})
        meta.update(n_context=int(n_context), n_target=len(x))
        return cls(x[:n_context].copy(), y[:n_context].copy(), x, y, meta)


def task_seed(global_seed, index):
    """Deterministic per-task seed from (global seed, task index)."""
    return int(np.random.SeedSequence([int(global_seed), int(index)]).generate_state(1)[0])


def make_regression_task(train_spec: KernelSpec, noise_spec: KernelSpec | None, seed,
                         n_context=None, n_target=None, max_points=100, min_context=3,
                         min_extra=3):
    rng = np.random.default_rng(seed)
    if n_context is None:
        n_context = int(rng.integers(min_context, max_points - min_extra + 1))
    if n_target is None:
        n_extra = int(rng.integers(min_extra, max_points - n_context + 1))
        n_target = n_context + n_extra
    x = rng.uniform(*X_RANGE, size=n_target)
    sub = rng.integers(0, 2**63 - 1, size=2)
    y = gp_sample(train_spec, x, int(sub[0]))
    if noise_spec is not None:
        y = y + gp_sample(noise_spec, x, int(sub[1]))
    meta = {"kernel": train_spec.family, "noisy": noise_spec is not None, "seed": int(seed)}
    return Task.from_points(x, y, n_context, meta)


class RegressionSource:
    """Fresh GP regression tasks, one per integer seed."""

    d_x = 1
    d_y = 1

    def __init__(self, spec: KernelSpec = RBF_TRAIN, noise: KernelSpec | None = None, name=None):
        self.spec = spec
        self.noise = noise
        self.name = name or spec.family.lower()

    def sample(self, seed):
        return make_regression_task(self.spec, self.noise, seed)


# ----------------------------------------------------------- Lotka-Volterra

LV_THETA = (0.01, 0.5, 1.0, 0.01)


@dataclass
class LVState:
    t: float
    X: int
    Y: int


def lv_rates(theta, X, Y):
    t1, t2, t3, t4 = theta
    return np.array([t1 * X * Y, t2 * X, t3 * Y, t4 * X * Y])


_LV_JUMPS = ((1, 0), (-1, 0), (0, 1), (0, -1))


def lv_simulate(theta, init: LVState, t_max=30.0, max_events=100_000, seed=0):
    """Gillespie simulation; returns (times, X, Y) arrays of the jump chain.

    Prey birth increments Y (the standard model). When the clock passes
    ``t_max`` the state is repeated at ``t_max`` so the record covers the
    whole window; an absorbed chain (R = 0) is returned as is.
    """
    if any(th <= 0 for th in theta):
        raise ValueError("theta entries must be positive")
    if init.X < 0 or init.Y < 0:
        raise ValueError("populations must be non-negative")
    rng = np.random.default_rng(seed)
    t1, t2, t3, t4 = (float(v) for v in theta)
    t, X, Y = float(init.t), int(init.X), int(init.Y)
    ts, xs, ys = [t], [X], [Y]
    for _ in range(max_events):
        r1, r2, r3, r4 = t1 * X * Y, t2 * X, t3 * Y, t4 * X * Y
        total = r1 + r2 + r3 + r4
        if total <= 0:
            break
        t += rng.exponential(1.0 / total)
        if t > t_max:
            ts.append(t_max)
            xs.append(X)
            ys.append(Y)
            break
        u = rng.random() * total
        if u < r1:
            X += 1
        elif u < r1 + r2:
            X -= 1
        elif u < r1 + r2 + r3:
            Y += 1
        else:
            Y -= 1
        ts.append(t)
        xs.append(X)
        ys.append(Y)
    return np.array(ts), np.array(xs), np.array(ys)


def record_on_grid(times, X, Y, t_max=30.0, n_grid=100, absorbed=None):
    """Last-value interpolation onto a regular grid.

    Grid points past the last simulated time are dropped unless the chain
    was absorbed (no further events possible).
    """
    grid = np.linspace(0.0, t_max, n_grid)
    if absorbed is None:
        absorbed = X[-1] == 0 and Y[-1] == 0
    if not absorbed:
        grid = grid[grid <= times[-1]]
    idx = np.searchsorted(times, grid, side="right") - 1
    return grid, X[idx], Y[idx]


def simulate_lv_series(theta=LV_THETA, init=None, t_max=30.0, n_grid=100, seed=0,
                       max_events=100_000):
    rng = np.random.default_rng(seed)
    if init is None:
        init = LVState(0.0, int(rng.integers(50, 100)), int(rng.integers(100, 150)))
    ts, xs, ys = lv_simulate(theta, init, t_max, max_events, int(rng.integers(2**63 - 1)))
    final_rate = lv_rates(theta, xs[-1], ys[-1]).sum()
    return record_on_grid(ts, xs, ys, t_max, n_grid, absorbed=final_rate == 0)


def make_lv_task(times, X, Y, seed, min_context=15, min_extra=15):
    """Random context/target split of a recorded series, populations scaled by 1/100."""
    n = len(times)
    if n < 60:
        raise ValueError(f"trajectory has {n} recorded points, need at least 60")
    rng = np.random.default_rng(seed)
    n_context = int(rng.integers(min_context, n // 2 + 1))
    n_extra = int(rng.integers(min_extra, n - n_context + 1))
    idx = rng.permutation(n)[: n_context + n_extra]
    x = np.asarray(times, dtype=np.float64)[idx, None]
    y = np.stack([np.asarray(X), np.asarray(Y)], axis=1).astype(np.float64)[idx] * LV_SCALE
    return Task.from_points(x, y, n_context, {"kernel": "LV", "noisy": False, "seed": int(seed)})


class LVSource:
    """Tasks cut from a fixed pool of simulated trajectories.

    Trajectories whose populations ever exceed ``max_population`` are
    rejected: once predators die out the prey grows like exp(t), which is
    useless as a regression target.
    """

    d_x = 1
    d_y = 2

    def __init__(self, theta=LV_THETA, t_max=30.0, n_grid=100, pool_size=160, seed=0,
                 name="lv", max_population=500):
        self.name = name
        self.pool = []
        i = 0
        while len(self.pool) < pool_size:
            series = simulate_lv_series(theta, None, t_max, n_grid, task_seed(seed, i))
            i += 1
            if len(series[0]) >= 60 and max(series[1].max(), series[2].max()) <= max_population:
                self.pool.append(series)
            if i > 50 * pool_size:
                raise RuntimeError("could not simulate enough usable LV trajectories")

    def sample(self, seed):
        rng = np.random.default_rng(seed)
        series = self.pool[int(rng.integers(len(self.pool)))]
        return make_lv_task(*series, int(rng.integers(2**63 - 1)))


# ------------------------------------------------------------- hare-lynx


def write_hare_lynx(path, years, hare, lynx):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["year", "hare", "lynx"])
        for row in zip(years, hare, lynx):
            w.writerow([repr(float(v)) if not float(v).is_integer() else int(v) for v in row])


def load_hare_lynx(path):
    """Read ``year,hare,lynx`` CSV -> (years, hare, lynx) float arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header != ["year", "hare", "lynx"]:
        raise ParseError(f"{path}:1: expected header 'year,hare,lynx', got {','.join(header)!r}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ParseError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
        try:
            out.append([float(v) for v in row])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
    if not out:
        raise ParseError(f"{path}: no data rows")
    arr = np.array(out)
    return arr[:, 0], arr[:, 1], arr[:, 2]


class HareLynxSource:
    """Tasks from the single hare-lynx series.

    Years map onto the simulator's time axis, one grid step per year;
    predator = lynx, prey = hare, both scaled like the simulation.
    """

    d_x = 1
    d_y = 2

    def __init__(self, path, t_max=30.0, n_grid=100, name="hare-lynx"):
        self.name = name
        years, hare, lynx = load_hare_lynx(path)
        dt = t_max / (n_grid - 1)
        self.series = ((years - years[0]) * dt, lynx, hare)

    def sample(self, seed):
        return make_lv_task(*self.series, seed)


# ------------------------------------------------------------ task dumps


def write_task_csv(path, task: Task):
    dx, dy = task.x_target.shape[1], task.y_target.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["role"] + [f"x{i}" for i in range(dx)] + [f"y{i}" for i in range(dy)])
        for i in range(task.n_target):
            role = "context" if i < task.n_context else "extra"
            w.writerow([role] + [repr(float(v)) for v in task.x_target[i]]
                       + [repr(float(v)) for v in task.y_target[i]])


def read_task_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    dx = sum(h.startswith("x") for h in header)
    body = rows[1:]
    roles = [r[0] for r in body]
    vals = np.array([[float(v) for v in r[1:]] for r in body])
    n_context = sum(r == "context" for r in roles)
    if roles[:n_context] != ["context"] * n_context:
        raise ParseError(f"{path}: context rows must precede extra rows")
    return Task.from_points(vals[:, :dx], vals[:, dx:], n_context)
