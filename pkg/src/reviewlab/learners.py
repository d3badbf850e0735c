"""Learner state: grid posteriors and non-Bayesian feedback estimators.

Posteriors are stored in the log domain with renormalization after every
update; an unaware learner applying the fixed-quality rule in a changing
world can push masses far below 1e-300, and its losses must reflect the
model, not float underflow.

The estimator side tracks the empirical feedback distribution, its
exponentially discounted variant, and running averages of the kernel table
(per symbol and grid point) under the same two schedules; inverting the
averaged table recovers a quality estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError
from .model import QualitySpace

__all__ = [
    "PosteriorGrid",
    "EstimatorState",
    "QualityEstimate",
    "bayes_update_stationary",
    "bayes_update_dynamic",
    "imperfect_update",
    "posterior_mean",
    "estimator_observe",
    "psi_invert",
]


@dataclass
class PosteriorGrid:
    """Normalized belief over the materialized quality grid (log masses)."""

    grid: np.ndarray  # (K, d), shared with the QualitySpace
    log_mass: np.ndarray  # (K,)

    @classmethod
    def uniform(cls, space: QualitySpace) -> "PosteriorGrid":
        K = space.size
        return cls(grid=space.points, log_mass=np.full(K, -np.log(K)))

    @classmethod
    def from_mass(cls, space: QualitySpace, mass) -> "PosteriorGrid":
        mass = np.asarray(mass, dtype=float)
        if mass.shape != (space.size,) or np.any(mass < 0):
            raise ValueError("mass must be a nonnegative vector over the grid")
        with np.errstate(divide="ignore"):
            lm = np.log(mass / mass.sum())
        return cls(grid=space.points, log_mass=lm)

    @property
    def mass(self) -> np.ndarray:
        return np.exp(self.log_mass)

    def mean(self) -> np.ndarray:
        return self.mass @ self.grid

    def copy(self) -> "PosteriorGrid":
        return PosteriorGrid(grid=self.grid, log_mass=self.log_mass.copy())


def _check_row(g_row: np.ndarray, K: int) -> np.ndarray:
    g_row = np.asarray(g_row, dtype=float)
    if g_row.shape != (K,):
        raise ValueError(f"G row must have shape ({K},), got {g_row.shape}")
    if np.any(g_row <= 0.0):
        raise ConfigError(
            "feedback kernel row has a non-positive entry; the identifiability "
            "assumption requires G > 0 for every quality"
        )
    return g_row


def bayes_update_stationary(post: PosteriorGrid, g_row) -> PosteriorGrid:
    """One fixed-quality Bayes step: pi'(q) proportional to G(z, pi, q) pi(q)."""
    g_row = _check_row(g_row, post.log_mass.size)
    lm = post.log_mass + np.log(g_row)
    lm -= logsumexp(lm)
    return PosteriorGrid(grid=post.grid, log_mass=lm)


def bayes_update_dynamic(
    post: PosteriorGrid, g_row, eta: float, prior: PosteriorGrid | None = None
) -> PosteriorGrid:
    """Change-aware step: (1 - eta) * BayesStep + eta * prior.

    With a uniform binary prior this is the (1-eta)(.) + eta/2 rule; arbitrary
    priors mix in eta * pi0(q) instead.  eta = 0 reduces exactly to the
    stationary update.
    """
    if not 0.0 <= eta < 1.0:
        raise ConfigError(f"change rate eta must lie in [0, 1), got {eta}")
    if eta == 0.0:
        return bayes_update_stationary(post, g_row)
    stepped = bayes_update_stationary(post, g_row)
    prior_mass = np.full(post.log_mass.size, 1.0 / post.log_mass.size) if prior is None else prior.mass
    mixed = (1.0 - eta) * stepped.mass + eta * prior_mass
    return PosteriorGrid(grid=post.grid, log_mass=np.log(mixed))


def imperfect_update(post: PosteriorGrid, g_row) -> PosteriorGrid:
    """The stationary rule applied by a learner unaware that quality changes."""
    return bayes_update_stationary(post, g_row)


def posterior_mean(post: PosteriorGrid) -> np.ndarray:
    return post.mean()


@dataclass
class EstimatorState:
    """Running feedback statistics over the full alphabet (index 0 = no-purchase).

    After n observed rounds (i.e. at round t = n + 1):
      counts / (n + 1)    -- plain empirical distribution L_t
      discounted          -- L_t^{eta1}; masses sum to 1 - (1 - eta1)^n
      psi_sum / n         -- average kernel table, one row per symbol
      psi_disc            -- discounted kernel table under the same schedule
    """

    grid: np.ndarray  # (K, d)
    eta1: float
    counts: np.ndarray  # (n_symbols,)
    discounted: np.ndarray  # (n_symbols,)
    psi_sum: np.ndarray  # (n_symbols, K)
    psi_disc: np.ndarray  # (n_symbols, K)
    n_obs: int = 0

    @classmethod
    def fresh(cls, space: QualitySpace, n_symbols: int, eta1: float) -> "EstimatorState":
        if not 0.0 < eta1 < 1.0:
            raise ConfigError(f"estimator discount eta1 must lie in (0, 1), got {eta1}")
        K = space.size
        return cls(
            grid=space.points,
            eta1=eta1,
            counts=np.zeros(n_symbols),
            discounted=np.zeros(n_symbols),
            psi_sum=np.zeros((n_symbols, K)),
            psi_disc=np.zeros((n_symbols, K)),
        )

    @property
    def L_plain(self) -> np.ndarray:
        return self.counts / (self.n_obs + 1)

    @property
    def L_discounted(self) -> np.ndarray:
        return self.discounted

    @property
    def psi_plain(self) -> np.ndarray:
        return self.psi_sum / max(self.n_obs, 1)

    @property
    def psi_discounted(self) -> np.ndarray:
        return self.psi_disc


@dataclass(frozen=True)
class QualityEstimate:
    value: np.ndarray  # (d,)
    residual: float  # squared distance achieved by the inversion


def estimator_observe(state: EstimatorState, z_index: int, g_table) -> EstimatorState:
    """Fold one observed symbol plus the round's kernel table into the state.

    g_table holds G(z, pi_t, q_k) for every symbol and grid point, evaluated
    at the belief the buying population actually used this round.
    """
    g_table = np.asarray(g_table, dtype=float)
    if g_table.shape != state.psi_sum.shape:
        raise ValueError(f"expected table shape {state.psi_sum.shape}, got {g_table.shape}")
    e1 = state.eta1
    counts = state.counts.copy()
    counts[z_index] += 1.0
    discounted = (1.0 - e1) * state.discounted
    discounted[z_index] += e1
    return replace(
        state,
        counts=counts,
        discounted=discounted,
        psi_sum=state.psi_sum + g_table,
        psi_disc=(1.0 - e1) * state.psi_disc + e1 * g_table,
        n_obs=state.n_obs + 1,
    )


def psi_invert(state: EstimatorState, which: str = "plain") -> QualityEstimate:
    """Exhaustive argmin over the grid of || L - psi_bar(q) ||^2.

    Ties go to the lexicographically smallest grid point (the grid is sorted,
    so the first argmin wins).
    """
    if state.grid.shape[0] == 0:
        raise ValueError("empty quality grid")
    if which == "plain":
        L, psi = state.L_plain, state.psi_plain
    elif which == "discounted":
        L, psi = state.L_discounted, state.psi_discounted
    else:
        raise ValueError(f"which must be 'plain' or 'discounted', got {which!r}")
    dist = ((L[:, None] - psi) ** 2).sum(axis=0)
    k = int(np.argmin(dist))
    return QualityEstimate(value=state.grid[k].copy(), residual=float(dist[k]))
