import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scopf.pso import (CampaignResult, PsoHyperparameters, constriction, inertia, initialize,
                       limit_velocity, mutate, position_update, reflect_at_bounds,
                       round_integers, run, run_parallel, run_seeds, set_to_limit,
                       velocity_max, velocity_update)


class Quadratic:
    """f(x) = sum((x - c)^2) on a box; optional integer dimensions."""

    def __init__(self, centre, lower, upper, integer=None, classes=None):
        self.centre = np.asarray(centre, float)
        self.lower = np.asarray(lower, float)
        self.upper = np.asarray(upper, float)
        m = len(self.lower)
        self.integer_mask = np.zeros(m, bool) if integer is None else np.asarray(integer, bool)
        self.classes = tuple(classes or ["AR"] * m)
        self.seen: list[np.ndarray] = []

    def __call__(self, x):
        self.seen.append(np.array(x))
        return float(np.sum((x - self.centre) ** 2))


def test_defaults_follow_hyperparameter_table():
    h = PsoHyperparameters()
    assert (h.n_particles, h.t_max, h.c1, h.c2) == (200, 500, 2.0, 2.0)
    assert (h.w_start, h.w_end, h.n_runs) == (0.9, 0.4, 100)
    assert h.z_ar == h.z_rr == 0.1
    assert h.z_tq == h.z_tip == h.z_vc == 0.2


@pytest.mark.parametrize("kw", [dict(c1=1.0, c2=2.0), dict(w_start=0.3, w_end=0.4),
                                dict(w_end=0.0, w_start=0.0), dict(z_ar=0.0), dict(z_vc=1.5),
                                dict(n_runs=0), dict(mutation_rate=2.0),
                                dict(mutation_mode="sideways")])
def test_hyperparameter_validation(kw):
    with pytest.raises(ValueError):
        PsoHyperparameters(**kw)


def test_unknown_class_rejected():
    with pytest.raises(ValueError):
        PsoHyperparameters().speed("XX")


def test_inertia_schedule():
    h = PsoHyperparameters()
    assert inertia(0, h) == 0.9
    assert inertia(h.t_max, h) == 0.4
    assert inertia(h.t_max / 2, h) == pytest.approx(0.65, abs=1e-15)


def test_constriction_values():
    assert constriction(2.0, 2.0) == 1.0
    assert constriction(2.05, 2.05) == pytest.approx(0.7298437881283576, rel=1e-12)
    with pytest.raises(ValueError):
        constriction(1.0, 1.0)


@pytest.mark.parametrize("x, expected", [(0.0, 0.0), (0.75, 1.0), (0.5, 0.0), (-0.5, -1.0),
                                         (1.2, 1.0), (1.6, 2.0), (-10.0, -10.0), (10.0, 10.0)])
def test_rounding_table(x, expected):
    assert round_integers(np.array([x]), np.array([True]))[0] == expected


def test_rounding_leaves_continuous_and_source_untouched():
    x = np.array([0.75, 0.75])
    out = round_integers(x, np.array([False, True]))
    assert out.tolist() == [0.75, 1.0]
    assert x.tolist() == [0.75, 0.75]


def test_velocity_update_examples():
    h = PsoHyperparameters()
    rng = np.random.default_rng(0)
    x = np.array([1.0, -2.0])
    v = np.array([0.3, -0.7])
    assert np.array_equal(velocity_update(x, v, x, x, 0.6, h, rng), 0.6 * v)
    pb = np.array([2.0, 0.0])
    gb = np.array([-1.0, 1.0])
    out = velocity_update(x, v, pb, gb, 0.0, h, rng, r1=1.0, r2=1.0)
    assert np.array_equal(out, 2 * (pb - x) + 2 * (gb - x))


def test_random_factors_scalar_per_particle():
    h = PsoHyperparameters()
    x = np.zeros((50, 4))
    out = velocity_update(x, np.zeros_like(x), np.ones_like(x), np.zeros(4), 0.0, h,
                          np.random.default_rng(1))
    # one r1 per particle: all dimensions of a row move together
    assert np.allclose(out, out[:, :1])
    per_dim = PsoHyperparameters(per_dimension_random=True)
    out = velocity_update(x, np.zeros_like(x), np.ones_like(x), np.zeros(4), 0.0, per_dim,
                          np.random.default_rng(1))
    assert not np.allclose(out, out[:, :1])


def test_attraction_term_mean():
    # E[c r (p - x)] = c (p - x) / 2 for r uniform on [0, 1]
    h = PsoHyperparameters()
    n = 200_000
    x = np.zeros((n, 1))
    pb = np.full((n, 1), 1.5)
    out = velocity_update(x, np.zeros_like(x), pb, x[0], inertia(0, h), h,
                          np.random.default_rng(7))
    se = h.c1 * 1.5 / math.sqrt(12 * n)
    assert abs(out.mean() - h.c1 * 1.5 / 2) < 5 * se


def test_position_update():
    x = np.array([1.0, 2.0])
    assert np.array_equal(position_update(x, np.zeros(2), 1.0), x)
    assert np.array_equal(position_update(x, np.array([0.5, -1.0]), constriction(2, 2)),
                          np.array([1.5, 1.0]))


def test_set_to_limit():
    lo = np.array([-10.0, 0.0])
    hi = np.array([10.0, 1.0])
    assert np.array_equal(set_to_limit(np.array([3.0, 0.5]), lo, hi), [3.0, 0.5])
    assert np.array_equal(set_to_limit(np.array([-15.0, -1.0]), lo, hi), [-10.0, 0.0])


def test_velocity_limit():
    assert velocity_max(np.array([-10.0]), np.array([10.0]), np.array([0.2]))[0] == 4.0
    vmax = np.array([4.0, 4.0, 4.0])
    v = np.array([1.0, -3.9, 4.0])
    assert np.array_equal(limit_velocity(v, vmax, np.random.default_rng(0)), v)
    big = np.array([40.0, -40.0, 0.0])
    out = limit_velocity(big, vmax, np.random.default_rng(0))
    assert np.all(np.abs(out) <= vmax)
    assert out[0] >= 0 and out[1] <= 0 and out[2] == 0
    out = limit_velocity(big, vmax, None, r3=np.array([0.5, 0.25, 0.9]))
    assert out.tolist() == [2.0, -1.0, 0.0]


def test_reflect():
    lo = np.array([0.0, 0.0, 0.0])
    hi = np.array([1.0, 1.0, 1.0])
    x = np.array([0.5, 1.0, 0.0])
    v = np.array([0.3, 0.3, 0.3])
    assert reflect_at_bounds(x, v, lo, hi).tolist() == [0.3, -0.3, 0.3]
    assert reflect_at_bounds(x, -v, lo, hi).tolist() == [-0.3, -0.3, 0.3]


def test_mutation_examples():
    lo = np.array([-10.0, 5.0])
    hi = np.array([10.0, 10.0])
    vmax = velocity_max(lo, hi, np.array([0.2, 0.2]))
    x = np.array([7.0, 8.0])
    assert mutate(x, lo, hi, vmax, None, r4=0, r5=0.0).tolist() == [0.0, 8.0]
    assert mutate(x, lo, hi, vmax, None, r4=0, r5=1.0).tolist() == [4.0, 8.0]
    assert mutate(x, lo, hi, vmax, None, r4=1, r5=0.0).tolist() == [7.0, 5.0]
    assert mutate(x, lo, hi, vmax, None, mode="additive", r4=0, r5=-0.5).tolist() == [5.0, 8.0]
    assert x.tolist() == [7.0, 8.0]


def test_mutation_touches_one_dimension():
    rng = np.random.default_rng(3)
    lo = np.full(6, -1.0)
    hi = np.full(6, 1.0)
    for _ in range(50):
        x = rng.uniform(-1, 1, 6)
        out = mutate(x, lo, hi, np.full(6, 0.4), rng)
        assert np.count_nonzero(out != x) <= 1


def test_initialize_bounds_and_determinism():
    h = PsoHyperparameters(n_particles=300)
    lo = np.array([0.0, 2.0])
    hi = np.array([1.0, 2.0])
    a = initialize(lo, hi, ["AR", "VC"], h, np.random.default_rng(5))
    b = initialize(lo, hi, ["AR", "VC"], h, np.random.default_rng(5))
    assert np.array_equal(a.x, b.x) and np.array_equal(a.v, b.v)
    assert np.all((a.x[:, 0] >= 0) & (a.x[:, 0] <= 1))
    assert np.all(np.abs(a.v[:, 0]) <= 0.1)
    # degenerate bound: pinned position, zero velocity
    assert np.all(a.x[:, 1] == 2.0) and np.all(a.v[:, 1] == 0.0)
    with pytest.raises(ValueError):
        initialize(hi, lo, ["AR", "VC"], h, np.random.default_rng(0))


def test_one_dimensional_quadratic_defaults():
    import time
    prob = Quadratic([3.0], [-10.0], [10.0])
    t0 = time.perf_counter()
    res = run(prob, PsoHyperparameters())
    assert time.perf_counter() - t0 < 5.0
    assert abs(res.best_position[0] - 3.0) < 0.01


def test_degenerate_bounds_stationary():
    lo = np.array([1.0, -2.0, 3.0])
    prob = Quadratic([0.0, 0.0, 0.0], lo, lo, integer=[False, False, True])
    h = PsoHyperparameters(n_particles=5, t_max=10, mutation_rate=0.0)
    res = run(prob, h, callback=lambda t, s: np.testing.assert_array_equal(
        s.x, np.broadcast_to(lo, s.x.shape)))
    assert res.best_fitness == prob(lo)
    assert np.all(res.trace == res.best_fitness)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), mode=st.sampled_from(["absolute", "additive"]),
       per_dim=st.booleans())
def test_run_invariants(seed, mode, per_dim):
    lo = np.array([-10.0, -10.0, 0.9, -5.0])
    hi = np.array([10.0, 10.0, 1.1, 15.0])
    prob = Quadratic([2.3, -7.6, 1.05, 4.0], lo, hi, integer=[True, True, False, False],
                     classes=["TQ", "TIP", "VC", "AR"])
    h = PsoHyperparameters(n_particles=12, t_max=25, mutation_mode=mode,
                           per_dimension_random=per_dim)
    vmax = velocity_max(lo, hi, h.speeds(prob.classes))

    def check(t, s):
        assert np.all((s.x >= lo) & (s.x <= hi))
        assert np.all(np.abs(s.v) <= vmax + 1e-12)
        assert s.g_fitness == s.f_best.min()

    res = run(prob, h, seed=seed, callback=check)
    evaluated = np.array(prob.seen)
    taps = evaluated[:, :2]
    assert np.array_equal(taps, np.round(taps))
    assert np.all((taps >= -10) & (taps <= 10))
    assert np.all(np.diff(res.trace) <= 0)
    assert res.best_fitness == pytest.approx(prob(res.best_evaluated), abs=0)
    assert res.seed == seed and res.iterations == 25


def test_bit_identical_reruns():
    prob = Quadratic([0.4, -0.2], [-1, -1], [1, 1], integer=[False, True])
    h = PsoHyperparameters(n_particles=10, t_max=30, seed=42)
    a, b = run(prob, h), run(prob, h)
    assert np.array_equal(a.trace, b.trace)
    assert np.array_equal(a.best_position, b.best_position)
    c = run(prob, h, seed=43)
    assert not np.array_equal(a.best_position, c.best_position)


def test_run_parallel_single_and_many():
    prob = Quadratic([0.4, -0.2], [-1, -1], [1, 1])
    h = PsoHyperparameters(n_particles=8, t_max=15, seed=100)
    one = run_parallel(prob, h, n_runs=1)
    single = run(prob, h, seed=100)
    assert one.best == one.average == one.worst == single.best_fitness
    assert run_seeds(h, 3) == [100, 101, 102]

    serial = run_parallel(prob, h, n_runs=8, workers=1)
    pooled = run_parallel(prob, h, n_runs=8, workers=2)
    assert np.array_equal(serial.fitness, pooled.fitness)
    assert [r.seed for r in pooled.runs] == list(range(100, 108))
    assert serial.best <= serial.average <= serial.worst
    assert serial.best_run.best_fitness == serial.best
    with pytest.raises(ValueError):
        run_parallel(prob, h, n_runs=0)


def test_campaign_aggregates():
    from scopf.pso import RunResult

    def rr(f):
        return RunResult(np.zeros(1), np.zeros(1), f, np.array([f]), 0.0, 1, 0)

    c = CampaignResult([rr(3.0), rr(1.0), rr(2.0)])
    assert (c.best, c.average, c.worst) == (1.0, 2.0, 3.0)
    assert c.best_run.best_fitness == 1.0
