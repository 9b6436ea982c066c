"""Modified particle swarm optimization for mixed-integer control problems.

A problem is any object with ``lower``, ``upper`` (arrays), ``integer_mask``,
``classes`` (speed-class label per dimension) and ``__call__(x) -> float``.
Integer dimensions stay continuous inside the swarm and are rounded only in
the copy handed to the fitness function.

Per iteration: evaluate -> update personal/global bests -> velocity update
-> velocity limit -> position update -> set-to-limit -> reflect at bounds
-> mutation.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np


@dataclass(frozen=True)
class PsoHyperparameters:
    n_particles: int = 200
    t_max: int = 500
    c1: float = 2.0
    c2: float = 2.0
    w_start: float = 0.9
    w_end: float = 0.4
    z_ar: float = 1 / 10
    z_rr: float = 1 / 10
    z_tq: float = 1 / 5
    z_tip: float = 1 / 5
    z_vc: float = 1 / 5
    n_runs: int = 100  # lambda
    seed: int = 0
    per_dimension_random: bool = False  # draw r1, r2 per dimension instead of per particle
    mutation_rate: float = 1.0
    mutation_mode: str = "absolute"  # or "additive"

    def __post_init__(self):
        if self.n_particles < 1 or self.t_max < 1 or self.n_runs < 1:
            raise ValueError("n_particles, t_max and n_runs must be positive")
        if self.c1 + self.c2 < 4:
            raise ValueError("constriction requires c1 + c2 >= 4")
        if not self.w_start >= self.w_end > 0:
            raise ValueError("inertia must satisfy w_start >= w_end > 0")
        for z in (self.z_ar, self.z_rr, self.z_tq, self.z_tip, self.z_vc):
            if not 0 < z <= 1:
                raise ValueError("speed coefficients must lie in (0, 1]")
        if not 0 <= self.mutation_rate <= 1:
            raise ValueError("mutation_rate must lie in [0, 1]")
        if self.mutation_mode not in ("absolute", "additive"):
            raise ValueError("mutation_mode must be 'absolute' or 'additive'")

    def speed(self, cls: str) -> float:
        try:
            return {"AR": self.z_ar, "RR": self.z_rr, "TQ": self.z_tq,
                    "TIP": self.z_tip, "VC": self.z_vc}[cls]
        except KeyError:
            raise ValueError(f"unknown control class {cls!r}") from None

    def speeds(self, classes: Sequence[str]) -> np.ndarray:
        return np.array([self.speed(c) for c in classes], dtype=float)


@dataclass
class Swarm:
    x: np.ndarray  # (n, m) positions
    v: np.ndarray  # (n, m) velocities
    p_best: np.ndarray
    f_best: np.ndarray
    g_index: int = -1  # particle holding the global best
    g_best: np.ndarray | None = None
    g_fitness: float = math.inf


@dataclass
class RunResult:
    best_position: np.ndarray
    best_evaluated: np.ndarray
    best_fitness: float
    trace: np.ndarray
    wall_time: float
    iterations: int
    seed: int


@dataclass
class CampaignResult:
    runs: list[RunResult]

    @property
    def fitness(self) -> np.ndarray:
        return np.array([r.best_fitness for r in self.runs])

    @property
    def best(self) -> float:
        return float(self.fitness.min())

    @property
    def average(self) -> float:
        return float(self.fitness.mean())

    @property
    def worst(self) -> float:
        return float(self.fitness.max())

    @property
    def best_run(self) -> RunResult:
        return self.runs[int(np.argmin(self.fitness))]


# -- operators --------------------------------------------------------------

def inertia(t: float, hyper: PsoHyperparameters) -> float:
    return hyper.w_start - t * (hyper.w_start - hyper.w_end) / hyper.t_max


def constriction(c1: float, c2: float) -> float:
    psi = c1 + c2
    if psi < 4:
        raise ValueError("constriction requires c1 + c2 >= 4")
    return 2.0 / abs(2.0 - psi - math.sqrt(psi * psi - 4.0 * psi))


def velocity_max(lower: np.ndarray, upper: np.ndarray, z: np.ndarray) -> np.ndarray:
    return z * (np.asarray(upper, float) - np.asarray(lower, float))


def round_integers(x: np.ndarray, integer_mask: np.ndarray) -> np.ndarray:
    """Copy of ``x`` with integer dimensions replaced by ``floor(ceil(2x) / 2)``."""
    out = np.array(x, dtype=float, copy=True)
    out[..., integer_mask] = np.floor(np.ceil(2.0 * out[..., integer_mask]) / 2.0)
    return out


def set_to_limit(x: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    return np.minimum(np.maximum(x, lower), upper)


def velocity_update(x, v, p_best, g_best, w, hyper: PsoHyperparameters, rng,
                    r1=None, r2=None) -> np.ndarray:
    """``w v + c1 r1 (p_best - x) + c2 r2 (g_best - x)``.

    ``x``, ``v`` and ``p_best`` may hold one particle (1-D) or the whole
    swarm (2-D).  By default ``r1``/``r2`` are one scalar per particle;
    ``hyper.per_dimension_random`` draws them per dimension.
    """
    x = np.asarray(x, float)
    if r1 is None or r2 is None:
        shape = x.shape if hyper.per_dimension_random else x.shape[:-1] + (1,)
        r1 = rng.random(shape)
        r2 = rng.random(shape)
    return w * v + hyper.c1 * r1 * (p_best - x) + hyper.c2 * r2 * (g_best - x)


def position_update(x: np.ndarray, v: np.ndarray, k: float) -> np.ndarray:
    return x + k * v


def limit_velocity(v: np.ndarray, v_max: np.ndarray, rng, r3=None) -> np.ndarray:
    """Replace every ``|v_j| > v_max_j`` by ``sign(v_j) r3 v_max_j`` with fresh r3 in [0, 1]."""
    v = np.array(v, dtype=float, copy=True)
    if r3 is None:
        r3 = rng.random(v.shape)
    over = np.abs(v) > v_max
    v[over] = (np.sign(v) * r3 * np.broadcast_to(v_max, v.shape))[over]
    return v


def reflect_at_bounds(x: np.ndarray, v: np.ndarray, lower, upper) -> np.ndarray:
    v = np.array(v, dtype=float, copy=True)
    flip = ((x == lower) & (v < 0)) | ((x == upper) & (v > 0))
    v[flip] = -v[flip]
    return v


def mutate(x: np.ndarray, lower, upper, v_max, rng, *, mode: str = "absolute",
           r4=None, r5=None) -> np.ndarray:
    """Re-seed one uniformly chosen dimension of a particle.

    ``absolute``: ``x[r4] = r5 * v_max[r4]``; ``additive``: ``x[r4] += r5 * v_max[r4]``,
    with ``r5`` uniform in [-1, 1].  The result is clamped to the bounds.
    """
    x = np.array(x, dtype=float, copy=True)
    if r4 is None:
        r4 = int(rng.integers(x.shape[-1]))
    if r5 is None:
        r5 = rng.uniform(-1.0, 1.0)
    step = r5 * np.asarray(v_max)[r4]
    x[r4] = step if mode == "absolute" else x[r4] + step
    return set_to_limit(x, lower, upper)


def initialize(lower, upper, classes, hyper: PsoHyperparameters, rng) -> Swarm:
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    if lower.shape != upper.shape or np.any(lower > upper):
        raise ValueError("bounds must satisfy lower <= upper")
    n, m = hyper.n_particles, len(lower)
    v_max = velocity_max(lower, upper, hyper.speeds(classes))
    x = lower + rng.random((n, m)) * (upper - lower)
    v = (2.0 * rng.random((n, m)) - 1.0) * v_max
    return Swarm(x=x, v=v, p_best=x.copy(), f_best=np.full(n, math.inf))


# -- driver -----------------------------------------------------------------

def run(problem, hyper: PsoHyperparameters, seed: int | None = None,
        callback: Callable[[int, Swarm], None] | None = None) -> RunResult:
    """One swarm run of ``hyper.t_max`` iterations; deterministic for a given seed."""
    seed = hyper.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    lower = np.asarray(problem.lower, float)
    upper = np.asarray(problem.upper, float)
    mask = np.asarray(problem.integer_mask, bool)
    v_max = velocity_max(lower, upper, hyper.speeds(problem.classes))
    k = constriction(hyper.c1, hyper.c2)
    n, m = hyper.n_particles, len(lower)

    start = time.perf_counter()
    swarm = initialize(lower, upper, problem.classes, hyper, rng)
    trace = np.empty(hyper.t_max)
    for t in range(hyper.t_max):
        evaluated = round_integers(swarm.x, mask)
        f = np.array([problem(xe) for xe in evaluated], dtype=float)
        f[~np.isfinite(f)] = math.inf
        better = f < swarm.f_best
        swarm.p_best[better] = swarm.x[better]
        swarm.f_best[better] = f[better]
        i = int(np.argmin(swarm.f_best))
        if swarm.f_best[i] < swarm.g_fitness:
            swarm.g_fitness = float(swarm.f_best[i])
            swarm.g_best = swarm.p_best[i].copy()
            swarm.g_index = i
        trace[t] = swarm.g_fitness
        if callback is not None:
            callback(t, swarm)

        w = inertia(t, hyper)
        v = velocity_update(swarm.x, swarm.v, swarm.p_best, swarm.g_best, w, hyper, rng)
        v = limit_velocity(v, v_max, rng)
        x = set_to_limit(position_update(swarm.x, v, k), lower, upper)
        v = reflect_at_bounds(x, v, lower, upper)
        # mutation: every particle except the incumbent, one dimension each
        r4 = rng.integers(m, size=n) if m else np.zeros(n, int)
        r5 = rng.uniform(-1.0, 1.0, size=n)
        gate = rng.random(n) < hyper.mutation_rate
        gate[swarm.g_index] = False
        if m:
            for p in np.flatnonzero(gate):
                x[p] = mutate(x[p], lower, upper, v_max, rng, mode=hyper.mutation_mode,
                              r4=int(r4[p]), r5=float(r5[p]))
        swarm.x, swarm.v = x, v

    best = swarm.g_best if swarm.g_best is not None else swarm.x[0]
    return RunResult(best_position=best.copy(), best_evaluated=round_integers(best, mask),
                     best_fitness=swarm.g_fitness, trace=trace,
                     wall_time=time.perf_counter() - start, iterations=hyper.t_max, seed=seed)


def _run_one(args):
    problem, hyper, seed = args
    return run(problem, hyper, seed)


def run_seeds(hyper: PsoHyperparameters, n_runs: int | None = None) -> list[int]:
    """Decorrelated per-run seeds derived from the master seed."""
    n_runs = hyper.n_runs if n_runs is None else n_runs
    return [int(hyper.seed) + i for i in range(n_runs)]


def run_parallel(problem, hyper: PsoHyperparameters, n_runs: int | None = None,
                 workers: int | None = None) -> CampaignResult:
    """``n_runs`` independent runs (default ``hyper.n_runs``), results ordered by run index.

    Run ``i`` uses seed ``hyper.seed + i``, so results do not depend on the
    number of workers or their scheduling.
    """
    seeds = run_seeds(hyper, n_runs)
    if not seeds:
        raise ValueError("n_runs must be at least 1")
    workers = workers or os.cpu_count() or 1
    jobs = [(problem, hyper, s) for s in seeds]
    if workers <= 1 or len(jobs) == 1:
        runs = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            runs = list(pool.map(_run_one, jobs))
    return CampaignResult(runs=runs)


def hyper_dict(hyper: PsoHyperparameters) -> dict:
    return asdict(hyper)
