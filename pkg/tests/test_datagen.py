import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from npsa import datagen as D
from npsa.datagen import KernelSpec, LVState, ParseError


def test_kernel_values():
    rbf = KernelSpec("RBF", 3.0, 3.0)
    assert D.kernel_eval(rbf, 0.4, 0.4) == 9.0
    assert D.kernel_eval(rbf, 0.0, 3.0) == pytest.approx(9 * math.exp(-0.5), abs=1e-12)
    assert D.kernel_eval(KernelSpec("Matern32", 3.0, 3.0), 1.0, 1.0) == 9.0
    assert D.kernel_eval(D.TEST_KERNELS["periodic"], 0.2, 0.2) == 9.0


def test_matern_uses_lengthscale():
    m = KernelSpec("Matern32", 2.0, 1.5)
    d = 0.9
    r = math.sqrt(3) * d / 1.5
    assert D.kernel_eval(m, 0.0, d) == pytest.approx(4 * (1 + r) * math.exp(-r), rel=1e-14)


def test_periodic_kernel_has_period_p_over_freq():
    k = D.PERIODIC_NOISE
    period = k.p / k.freq
    assert D.kernel_eval(k, 0.0, period) == pytest.approx(1.0, abs=1e-12)
    assert D.kernel_eval(k, 0.0, period / 2) < 0.2


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(["RBF", "Matern32", "Periodic"]), st.floats(-2, 2), st.floats(-2, 2))
def test_kernels_symmetric(family, a, b):
    spec = KernelSpec(family, 1.3, 0.7)
    assert D.kernel_eval(spec, a, b) == D.kernel_eval(spec, b, a)


def test_kernel_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec("RBF", 0.0, 1.0)
    with pytest.raises(ValueError):
        KernelSpec("Periodic", 1.0, 1.0, freq=0.5)
    with pytest.raises(ValueError):
        KernelSpec("Cosine")


def test_gp_single_point_variance_monte_carlo():
    # one point: y = chol * z with chol = sqrt(9 + 1e-6); 1e5 independent seeds
    n = 10**5
    ys = np.array([D.gp_sample(D.RBF_TRAIN, [0.3], s)[0] for s in range(n)])
    var = ys.var(ddof=1)
    assert abs(var - 9.0) < 3 * 9.0 * math.sqrt(2 / (n - 1))


def test_gp_covariance_matches_kernel():
    pairs = [(0.0, 0.5), (-1.0, 1.0), (0.3, 0.35), (-2.0, 2.0), (1.2, -0.4)]
    n = 20_000
    spec = KernelSpec("Matern32", 1.0, 0.8)
    for a, b in pairs:
        ys = np.array([D.gp_sample(spec, [a, b], s) for s in range(n)])
        prod = ys[:, 0] * ys[:, 1]
        se = prod.std() / math.sqrt(n)
        assert abs(prod.mean() - D.kernel_eval(spec, a, b)) < 3.5 * se


def test_gp_duplicate_inputs_nearly_equal_and_deterministic():
    xs = [0.1, 0.1, 0.7]
    a = D.gp_sample(D.RBF_TRAIN, xs, 5)
    assert abs(a[0] - a[1]) < 1e-2
    assert np.array_equal(a, D.gp_sample(D.RBF_TRAIN, xs, 5))


def test_gp_needs_inputs():
    with pytest.raises(ValueError):
        D.gp_sample(D.RBF_TRAIN, [], 0)


def test_gp_jitter_escalation_failure_is_numeric():
    # a huge scale swamps every jitter level with rounding noise
    spec = KernelSpec("RBF", 1e9, 50.0)
    with pytest.raises(ArithmeticError):
        D.gp_sample(spec, np.linspace(-2, 2, 200), 0)


def _check_task(t, lo_c, hi_c, lo_t, hi_t):
    assert lo_c <= t.n_context <= hi_c
    assert lo_t <= t.n_target <= hi_t
    assert np.array_equal(t.x_target[: t.n_context], t.x_context)
    assert np.array_equal(t.y_target[: t.n_context], t.y_context)


def test_regression_task_counts_over_many_seeds():
    for s in range(10_000):
        t = D.make_regression_task(D.RBF_TRAIN, D.PERIODIC_NOISE, s)
        _check_task(t, 3, 97, 6, 100)
        assert np.all(np.abs(t.x_target) <= 2)


def test_noise_free_task_is_plain_gp_draw():
    t = D.make_regression_task(D.RBF_TRAIN, None, 11)
    rng = np.random.default_rng(11)
    rng.integers(3, 98)
    rng.integers(3, 100 - t.n_context + 1)
    x = rng.uniform(-2, 2, size=t.n_target)
    sub = rng.integers(0, 2**63 - 1, size=2)
    assert np.array_equal(t.y_target[:, 0], D.gp_sample(D.RBF_TRAIN, x, int(sub[0])))
    assert t.meta["noisy"] is False


def test_noisy_task_adds_independent_draw():
    a = D.make_regression_task(D.RBF_TRAIN, None, 4)
    b = D.make_regression_task(D.RBF_TRAIN, D.PERIODIC_NOISE, 4)
    assert np.array_equal(a.x_target, b.x_target)
    diff = b.y_target - a.y_target
    rng = np.random.default_rng(4)
    rng.integers(3, 98)
    rng.integers(3, 100 - a.n_context + 1)
    rng.uniform(-2, 2, size=a.n_target)
    sub = rng.integers(0, 2**63 - 1, size=2)
    assert np.allclose(diff[:, 0], D.gp_sample(D.PERIODIC_NOISE, a.x_target, int(sub[1])), atol=1e-12)


def test_test_kernel_parameters():
    for spec in D.TEST_KERNELS.values():
        assert (spec.s, spec.l) == (3.0, 3.0)
    assert D.TEST_KERNELS["periodic"].freq == 10.0
    assert (D.PERIODIC_NOISE.freq, D.PERIODIC_NOISE.p, D.PERIODIC_NOISE.s) == (30.0, 2 * math.pi, 1.0)


def test_task_seed_is_deterministic_and_distinct():
    assert D.task_seed(1, 2) == D.task_seed(1, 2)
    assert len({D.task_seed(0, i) for i in range(1000)}) == 1000


# ------------------------------------------------------------ Lotka-Volterra


def test_lv_rates_example():
    assert D.lv_rates(D.LV_THETA, 10, 10).sum() == pytest.approx(17.0, abs=1e-12)


def test_lv_absorbed_start():
    ts, xs, ys = D.lv_simulate(D.LV_THETA, LVState(0.0, 0, 0), seed=0)
    assert len(ts) == 1


def test_lv_populations_never_negative():
    for s in range(1000):
        _, xs, ys = D.lv_simulate(D.LV_THETA, LVState(0.0, 20, 30), t_max=5.0, seed=s)
        assert xs.min() >= 0 and ys.min() >= 0


def test_lv_time_non_decreasing_and_grid():
    ts, xs, ys = D.lv_simulate(D.LV_THETA, LVState(0.0, 60, 110), seed=1)
    assert np.all(np.diff(ts) >= 0)
    grid, gx, gy = D.record_on_grid(ts, xs, ys)
    assert len(grid) == 100 and grid[-1] == 30.0
    i = np.searchsorted(ts, grid[40], side="right") - 1
    assert gx[40] == xs[i] and gy[40] == ys[i]


def test_lv_waiting_times_exponential_at_frozen_state():
    # from a frozen state the first waiting time is Exp(R); 1e5 independent first events
    rate = D.lv_rates(D.LV_THETA, 10, 10).sum()
    waits = np.empty(10**5)
    for s in range(len(waits)):
        ts, _, _ = D.lv_simulate(D.LV_THETA, LVState(0.0, 10, 10), t_max=1e9, max_events=1, seed=s)
        waits[s] = ts[1]
    se = waits.std() / math.sqrt(len(waits))
    assert abs(waits.mean() - 1 / rate) < 3 * se


def test_lv_task_counts_and_rescale():
    series = D.simulate_lv_series(seed=3)
    for s in range(2000):
        t = D.make_lv_task(*series, seed=s)
        n = len(series[0])
        assert 15 <= t.n_context <= n // 2
        assert t.n_target - t.n_context >= 15
        _check_task(t, 15, n // 2, 30, n)
    t = D.make_lv_task(*series, seed=0)
    assert t.x_target.shape[1] == 1 and t.y_target.shape[1] == 2
    grid, xs, ys = series
    row = np.searchsorted(grid, t.x_target[0, 0])
    assert np.array_equal(t.y_target[0], np.array([xs[row], ys[row]]) / 100)


def test_lv_rescale_example():
    grid = np.linspace(0, 30, 60)
    t = D.make_lv_task(grid, np.full(60, 150), np.full(60, 20), seed=0)
    assert t.y_target[0, 0] == 1.5


def test_lv_task_needs_long_trajectory():
    with pytest.raises(ValueError):
        D.make_lv_task(np.arange(59.0), np.ones(59), np.ones(59), 0)


def test_lv_rejects_bad_inputs():
    with pytest.raises(ValueError):
        D.lv_simulate((0.01, 0.5, 0.0, 0.01), LVState(0.0, 1, 1))
    with pytest.raises(ValueError):
        D.lv_simulate(D.LV_THETA, LVState(0.0, -1, 1))


def test_lv_source_pool_bounded():
    src = D.LVSource(pool_size=10, seed=2)
    for grid, xs, ys in src.pool:
        assert len(grid) >= 60 and max(xs.max(), ys.max()) <= 500
    t = src.sample(5)
    assert t.y_target.shape[1] == 2


# ----------------------------------------------------------------- hare-lynx


def test_hare_lynx_round_trip(tmp_path):
    years = np.arange(1900, 1991)
    rng = np.random.default_rng(0)
    hare = np.round(rng.uniform(5, 150, 91), 1)
    lynx = np.round(rng.uniform(5, 80, 91), 1)
    path = tmp_path / "hl.csv"
    D.write_hare_lynx(path, years, hare, lynx)
    y2, h2, l2 = D.load_hare_lynx(path)
    assert np.array_equal(y2, years) and np.array_equal(h2, hare) and np.array_equal(l2, lynx)
    src = D.HareLynxSource(path)
    for s in range(200):
        t = src.sample(s)
        _check_task(t, 15, 45, 30, 91)


def test_hare_lynx_missing_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("year,hare\n1900,1\n")
    with pytest.raises(ParseError, match=":1"):
        D.load_hare_lynx(path)


def test_hare_lynx_bad_row_names_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("year,hare,lynx\n1900,1,2\n1901,x,3\n")
    with pytest.raises(ParseError, match=":3"):
        D.load_hare_lynx(path)
    path.write_text("year,hare,lynx\n1900,1\n")
    with pytest.raises(ParseError, match=":2"):
        D.load_hare_lynx(path)


def test_bundled_fixture_loads():
    from npsa.experiments import default_hare_lynx_path
    years, hare, lynx = D.load_hare_lynx(default_hare_lynx_path())
    assert len(years) == 91 and np.all(hare > 0) and np.all(lynx > 0)


def test_task_csv_round_trip(tmp_path):
    t = D.make_regression_task(D.RBF_TRAIN, D.PERIODIC_NOISE, 2)
    D.write_task_csv(tmp_path / "t.csv", t)
    back = D.read_task_csv(tmp_path / "t.csv")
    assert back.n_context == t.n_context
    assert np.array_equal(back.x_target, t.x_target) and np.array_equal(back.y_target, t.y_target)
