"""Covariance matrix adaptation evolution strategy (mu/mu_w, lambda).

Episodic tuner for the flattened precedence parameter vector: sample a
population around the mean, rank candidates by fitness (lower is better),
then update the mean by weighted recombination, the covariance by rank-one
and rank-mu terms, and the step size by cumulative step-size adaptation.
Non-finite fitness values are assigned the worst rank, so candidates that
fail to complete an episode simply lose. The covariance is kept symmetric
positive-definite by an eigenvalue floor; repairs are counted.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np


def sphere(x: np.ndarray) -> float:
    """Benchmark fitness: squared distance from the origin."""
    x = np.asarray(x, dtype=float)
    return float(x @ x)


@dataclass
class CmaState:
    mean: np.ndarray
    sigma: float
    cov: np.ndarray
    path_sigma: np.ndarray
    path_cov: np.ndarray
    generation: int = 0
    repairs: int = 0
    best_x: np.ndarray | None = None
    best_f: float = np.inf
    history: list[float] = field(default_factory=list)


class CmaesOptimizer:
    """ask/tell interface over one CMA-ES state."""

    EIGEN_FLOOR = 1e-20

    def __init__(
        self,
        x0: np.ndarray,
        sigma0: float,
        population: int = 12,
        seed: int = 0,
    ):
        x0 = np.asarray(x0, dtype=float)
        n = x0.size
        self.n = n
        self.lam = population
        self.mu = population // 2
        raw = np.log((population + 1) / 2.0) - np.log(np.arange(1, self.mu + 1))
        self.weights = raw / raw.sum()
        self.mueff = 1.0 / float(self.weights @ self.weights)

        self.c_sigma = (self.mueff + 2) / (n + self.mueff + 5)
        self.d_sigma = 1 + 2 * max(0.0, np.sqrt((self.mueff - 1) / (n + 1)) - 1) \
            + self.c_sigma
        self.c_cov_path = (4 + self.mueff / n) / (n + 4 + 2 * self.mueff / n)
        self.c_one = 2 / ((n + 1.3) ** 2 + self.mueff)
        self.c_mu = min(1 - self.c_one,
                        2 * (self.mueff - 2 + 1 / self.mueff)
                        / ((n + 2) ** 2 + self.mueff))
        self.chi_n = np.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))

        self.state = CmaState(
            mean=x0.copy(),
            sigma=float(sigma0),
            cov=np.eye(n),
            path_sigma=np.zeros(n),
            path_cov=np.zeros(n),
        )
        self.rng = np.random.default_rng(seed)
        self._decompose()

    def _decompose(self) -> None:
        st = self.state
        st.cov = (st.cov + st.cov.T) / 2.0
        vals, vecs = np.linalg.eigh(st.cov)
        floor = max(self.EIGEN_FLOOR, vals.max() * 1e-14) if vals.size else 0.0
        if (vals < floor).any():
            st.repairs += int((vals < floor).sum())
            vals = np.maximum(vals, floor)
            st.cov = (vecs * vals) @ vecs.T
        self._B = vecs
        self._D = np.sqrt(vals)
        self._inv_sqrt = (vecs / self._D) @ vecs.T

    def ask(self) -> np.ndarray:
        """Sample the generation's candidates: shape (population, n)."""
        z = self.rng.standard_normal((self.lam, self.n))
        y = z @ (self._B * self._D).T
        return self.state.mean + self.state.sigma * y

    def tell(self, candidates: np.ndarray, fitnesses) -> None:
        """Rank-and-update; lower fitness is better, non-finite ranks last."""
        st = self.state
        f = np.asarray(fitnesses, dtype=float)
        f = np.where(np.isfinite(f), f, np.inf)
        order = np.argsort(f, kind="stable")
        elite = candidates[order[:self.mu]]
        best_idx = order[0]
        if f[best_idx] < st.best_f:
            st.best_f = float(f[best_idx])
            st.best_x = candidates[best_idx].copy()
        st.history.append(st.best_f)

        old_mean = st.mean
        y_elite = (elite - old_mean) / st.sigma
        y_w = self.weights @ y_elite
        st.mean = old_mean + st.sigma * y_w

        st.path_sigma = (1 - self.c_sigma) * st.path_sigma + \
            np.sqrt(self.c_sigma * (2 - self.c_sigma) * self.mueff) * \
            (self._inv_sqrt @ y_w)
        st.generation += 1
        norm = np.linalg.norm(st.path_sigma)
        denom = np.sqrt(1 - (1 - self.c_sigma) ** (2 * st.generation))
        h_sigma = float(norm / denom / self.chi_n < 1.4 + 2 / (self.n + 1))

        st.path_cov = (1 - self.c_cov_path) * st.path_cov + \
            h_sigma * np.sqrt(self.c_cov_path * (2 - self.c_cov_path)
                              * self.mueff) * y_w

        rank_mu = (y_elite.T * self.weights) @ y_elite
        correction = (1 - h_sigma) * self.c_cov_path * (2 - self.c_cov_path)
        st.cov = (1 - self.c_one - self.c_mu) * st.cov + \
            self.c_one * (np.outer(st.path_cov, st.path_cov)
                          + correction * st.cov) + \
            self.c_mu * rank_mu
        st.sigma = st.sigma * float(
            np.exp((self.c_sigma / self.d_sigma) * (norm / self.chi_n - 1)))
        self._decompose()

    def covariance_is_spd(self) -> bool:
        vals = np.linalg.eigvalsh((self.state.cov + self.state.cov.T) / 2)
        return bool((vals > 0).all())


def cma_es_tune(
    x0: np.ndarray,
    fitness,
    generations: int,
    sigma0: float | None = None,
    initial_variance: float = 0.2,
    population: int = 12,
    seed: int = 0,
    n_jobs: int = 1,
    target: float | None = None,
    callback=None,
) -> CmaState:
    """Tune a parameter vector; returns the final state with best-ever result.

    ``fitness`` maps a candidate vector to a scalar (lower is better, e.g.
    mean episode delay). Candidate evaluations within a generation may run
    in parallel; results are consumed in candidate order, so the run is
    deterministic either way.
    """
    if sigma0 is None:
        sigma0 = float(np.sqrt(initial_variance))
    opt = CmaesOptimizer(x0, sigma0, population=population, seed=seed)
    executor = ProcessPoolExecutor(max_workers=n_jobs) if n_jobs > 1 else None
    try:
        for _ in range(generations):
            xs = opt.ask()
            if executor is not None:
                fs = list(executor.map(fitness, [xs[i] for i in range(len(xs))]))
            else:
                fs = [fitness(xs[i]) for i in range(len(xs))]
            opt.tell(xs, fs)
            if callback is not None:
                callback(opt.state)
            if target is not None and opt.state.best_f < target:
                break
    finally:
        if executor is not None:
            executor.shutdown()
    return opt.state
