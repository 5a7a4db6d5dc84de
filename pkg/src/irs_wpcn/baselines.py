"""Non-learning solvers: a real-coded GA, the random-phase baseline and
brute-force oracles used to check them on small instances."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .channel import FeatureVector, SystemParams
from .evaluator import (TAU_EPS, TWO_PI, PhaseConfig, capacity, et_gain, it_gain,
                        throughput, wrap_phase)
from .rng import Stream

log = logging.getLogger(__name__)


@dataclass
class GAParams:
    population: int = 50
    generations: int = 5
    crossover_prob: float = 0.9
    mutation_prob: float | None = None  # None -> 1 / genome length
    mutation_scale: float = 0.05  # fraction of each variable's range
    tournament: int = 3
    elitism: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if not 0 <= self.elitism < self.population:
            raise ValueError("elitism must lie in [0, population)")
        if self.generations < 0 or self.tournament < 1:
            raise ValueError("generations must be >= 0 and tournament >= 1")
        probs = [self.crossover_prob] + ([self.mutation_prob] if self.mutation_prob is not None else [])
        if any(not 0 <= q <= 1 for q in probs):
            raise ValueError("probabilities must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GAResult:
    genome: np.ndarray
    fitness: float
    history: list[float] = field(default_factory=list)  # best-ever fitness after each generation
    nan_count: int = 0
    evaluations: int = 0


def genetic_maximize(objective: Callable[[np.ndarray], np.ndarray], lower, upper, periodic,
                     ga: GAParams, rng: Stream | None = None) -> GAResult:
    """Maximise a vectorised objective over a box.

    ``objective`` maps a ``(P, D)`` array of genomes to ``(P,)`` fitness
    values.  Periodic coordinates wrap on mutation, the rest are clipped.
    Tournament selection, uniform crossover, Gaussian mutation and elitism;
    the best genome ever evaluated is returned.
    """
    rng = rng or Stream(ga.seed)
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    periodic = np.asarray(periodic, dtype=bool)
    D = lower.size
    span = upper - lower
    P = ga.population
    pm = ga.mutation_prob if ga.mutation_prob is not None else 1.0 / D
    sigma = ga.mutation_scale * span

    def repair(x):
        x = np.where(periodic, lower + np.mod(x - lower, span), np.clip(x, lower, upper))
        # mod may round up to the open upper end
        return np.where(periodic & (x >= upper), lower, x)

    nan_count = 0

    def score(x):
        nonlocal nan_count
        f = np.asarray(objective(x), dtype=np.float64).reshape(-1)
        bad = ~np.isfinite(f)
        if bad.any():
            nan_count += int(bad.sum())
            f = np.where(bad, -np.inf, f)
        return f

    pop = lower + span * rng.uniform((P, D))
    pop = repair(pop)
    fit = score(pop)
    evaluations = P
    b = int(np.argmax(fit))
    best_x, best_f = pop[b].copy(), fit[b]
    history = []

    n_child = P - ga.elitism
    for _ in range(ga.generations):
        order = np.argsort(-fit, kind="stable")
        elites = pop[order[:ga.elitism]]
        elite_fit = fit[order[:ga.elitism]]

        n_pairs = (n_child + 1) // 2
        contenders = rng.integers(0, P, (2 * n_pairs, ga.tournament))
        winners = contenders[np.arange(2 * n_pairs), np.argmax(fit[contenders], axis=1)]
        pa, pb = pop[winners[0::2]], pop[winners[1::2]]
        do_cross = rng.uniform(n_pairs) < ga.crossover_prob
        swap = (rng.uniform((n_pairs, D)) < 0.5) & do_cross[:, None]
        c1 = np.where(swap, pb, pa)
        c2 = np.where(swap, pa, pb)
        children = np.concatenate([c1, c2], axis=0)[:n_child]

        mutate = rng.uniform(children.shape) < pm
        noise = rng.normal(children.shape) * sigma
        children = repair(children + np.where(mutate, noise, 0.0))

        child_fit = score(children)
        evaluations += children.shape[0]
        pop = np.concatenate([elites, children], axis=0)
        fit = np.concatenate([elite_fit, child_fit])
        b = int(np.argmax(fit))
        if fit[b] > best_f:
            best_x, best_f = pop[b].copy(), fit[b]
        history.append(float(best_f))

    if nan_count:
        log.warning("GA discarded %d non-finite objective values", nan_count)
    return GAResult(genome=best_x, fitness=float(best_f), history=history,
                    nan_count=nan_count, evaluations=evaluations)


def phase_box(N: int):
    lower = np.concatenate([np.zeros(2 * N), [TAU_EPS]])
    upper = np.concatenate([np.full(2 * N, TWO_PI), [1.0 - TAU_EPS]])
    periodic = np.concatenate([np.ones(2 * N, bool), [False]])
    return lower, upper, periodic


def ga_optimize(objective: Callable[[PhaseConfig], np.ndarray], N: int, ga: GAParams,
                rng: Stream | None = None) -> tuple[PhaseConfig, float, GAResult]:
    """GA over (theta_ET, theta_IT, tau); ``objective`` receives a batched PhaseConfig."""
    if N < 1:
        raise ValueError("N must be >= 1")
    lower, upper, periodic = phase_box(N)
    res = genetic_maximize(lambda g: objective(PhaseConfig.from_genome(g)), lower, upper,
                           periodic, ga, rng)
    return PhaseConfig.from_genome(res.genome).canonical(), res.fitness, res


def ga_throughput(f: FeatureVector, p: SystemParams, ga: GAParams,
                  rng: Stream | None = None) -> PhaseConfig:
    """Jointly optimise both phase vectors and tau for one feature vector."""
    cfg, _, _ = ga_optimize(lambda c: throughput(f, c, p), f.N, ga, rng)
    return cfg


def golden_section_max(fn: Callable[[float], float], lo: float, hi: float,
                       tol: float = 1e-10, max_iter: int = 200) -> tuple[float, float]:
    """Maximiser of a unimodal function on [lo, hi]; returns (x, fn(x))."""
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fn(d)
    x = c if fc >= fd else d
    return x, max(fc, fd)


def optimal_tau(f: FeatureVector, theta_ET, theta_IT, p: SystemParams) -> tuple[float, float]:
    """Golden-section tau for fixed phases (throughput is concave in tau)."""
    A = p.eta * float(et_gain(f, theta_ET, p) * it_gain(f, theta_IT, p))
    return golden_section_max(lambda t: float(capacity(A * t / (1.0 - t), t)),
                              TAU_EPS, 1.0 - TAU_EPS)


@dataclass
class BaselineResult:
    config: PhaseConfig
    throughput: float
    golden_tau: float
    golden_throughput: float


def random_baseline(f: FeatureVector, p: SystemParams, ga: GAParams,
                    rng: Stream | None = None) -> BaselineResult:
    """Uniform random phases, then tau chosen by a one-dimensional GA."""
    N = f.N
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = rng or Stream(ga.seed)
    th = rng.uniform(2 * N, 0.0, TWO_PI)
    th_et, th_it = th[:N], th[N:]
    res = genetic_maximize(
        lambda g: throughput(f, PhaseConfig(np.broadcast_to(th_et, (len(g), N)),
                                            np.broadcast_to(th_it, (len(g), N)), g[:, 0]), p),
        [TAU_EPS], [1.0 - TAU_EPS], [False], ga, rng)
    g_tau, g_c = optimal_tau(f, th_et, th_it, p)
    log.debug("random baseline: GA tau %.6f (C=%.6f), golden tau %.6f (C=%.6f)",
              res.genome[0], res.fitness, g_tau, g_c)
    cfg = PhaseConfig(wrap_phase(th_et), wrap_phase(th_it), np.float64(res.genome[0]))
    return BaselineResult(cfg.canonical(), res.fitness, g_tau, g_c)


def _grid_max(gain: Callable[[np.ndarray], np.ndarray], N: int, resolution: int,
              chunk: int = 1 << 18) -> tuple[float, np.ndarray]:
    step = TWO_PI / resolution
    total = resolution ** N
    best, best_idx = -np.inf, 0
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk))
        # digit n of idx in base `resolution` -> phase index of element n (element 0 slowest)
        digits = (idx[:, None] // resolution ** np.arange(N - 1, -1, -1)) % resolution
        vals = gain(digits * step)
        k = int(np.argmax(vals))
        if vals[k] > best:
            best, best_idx = float(vals[k]), int(idx[k])
    digits = (best_idx // resolution ** np.arange(N - 1, -1, -1)) % resolution
    return best, digits * step


def grid_oracle(f: FeatureVector, p: SystemParams, resolution: int,
                budget: float = 1e8) -> tuple[PhaseConfig, float]:
    """Exhaustive search over the phase grid (step 2pi/res) x tau grid (step 1/res).

    SINR factors as tau/(1-tau) * ET(theta_ET) * IT(theta_IT) with both
    factors non-negative and throughput increasing in SINR, so the argmax of
    the full product grid is found by maximising each factor over its own
    grid and then scanning tau.  ``budget`` bounds the number of evaluated
    points, ``2 * res**N + res - 1``.
    """
    N = f.N
    points = 2 * float(resolution) ** N + resolution - 1
    if points > budget:
        raise ValueError(f"grid of ~{points:.3g} evaluations exceeds budget {budget:.3g}")
    et_best, th_et = _grid_max(lambda th: et_gain(f, th, p), N, resolution)
    it_best, th_it = _grid_max(lambda th: it_gain(f, th, p), N, resolution)
    taus = np.arange(1, resolution) / resolution
    A = p.eta * et_best * it_best
    C = capacity(A * taus / (1.0 - taus), taus)
    k = int(np.argmax(C))
    return PhaseConfig(th_et, th_it, np.float64(taus[k])), float(C[k])
