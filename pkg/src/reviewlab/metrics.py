"""Losses, regret, block statistics, separation constants and bound curves.

All functions here are pure over traces or plain arrays.  Cross-instance
aggregation helpers use math.fsum so chunked and serial reductions agree
bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import Trace
from .errors import ConfigError, UnsupportedModelError
from .gkernel import make_kernel
from .model import ModelSpec
from .seeds import EVAL, stream

__all__ = [
    "Blocks",
    "SeparationStats",
    "MetricsReport",
    "loss_series",
    "loss_LT",
    "regret",
    "block_decompose",
    "tau_times",
    "tau_times_trace",
    "delta_gamma",
    "stationary_bound_curve",
    "bridge_bound",
    "anti_concentration_ratio",
    "make_psi_bar_mc",
    "build_metrics_report",
    "write_metrics_csv",
    "mean_se",
]

METRICS_HEADER = "run_id,eta,eta1,T,learner,loss_LT,regret,imperfect_loss,n_blocks,mean_tau_minus_tk"


def mean_se(values) -> tuple[float, float]:
    """Order-deterministic mean and standard error of a sample."""
    vals = [float(v) for v in values]
    n = len(vals)
    if n == 0:
        return 0.0, 0.0
    m = math.fsum(vals) / n
    if n == 1:
        return m, 0.0
    var = math.fsum((v - m) ** 2 for v in vals) / (n - 1)
    return m, math.sqrt(var / n)


def loss_series(trace: Trace, learner: str) -> np.ndarray:
    """Per-round loss: ||posterior mean - Q_t|| for Bayes learners, and
    1 - pi_t(Q_t) for the change-unaware learner."""
    kind = trace.learner_kinds.get(learner)
    if kind is None:
        raise KeyError(f"trace has no learner {learner!r}")
    if kind == "imperfect":
        return 1.0 - trace.post_true[learner]
    if kind in ("dynamic", "stationary"):
        diff = trace.post_mean[learner] - trace.quality
        return np.sqrt((diff**2).sum(axis=1))
    raise ConfigError(f"loss is defined for posterior learners, not {kind!r}")


def loss_LT(trace: Trace, learner: str = "dynamic") -> float:
    return float(loss_series(trace, learner).sum())


def regret(trace: Trace, lipschitz_k: float = 1.0) -> float:
    """Total utility gap against a consumer who knows Q_t: sum of
    r(Q_t, theta_t)_+ - u_t.  The companion Lipschitz bound is
    lipschitz_k * loss_LT (see build_metrics_report)."""
    r = trace.model.reward.value(trace.quality, trace.theta)
    return float((np.maximum(r, 0.0) - trace.utility).sum())


@dataclass(frozen=True)
class Blocks:
    """Maximal constant-quality blocks: block k covers rounds
    [starts[k] + 1, ends[k]] and the blocks tile [1, T]."""

    starts: np.ndarray  # t_k values; starts[0] = 0
    ends: np.ndarray  # t_{k+1} values; the last one is the horizon

    @property
    def lengths(self) -> np.ndarray:
        return self.ends - self.starts

    @property
    def count(self) -> int:
        return self.starts.size


def block_decompose(quality_path: np.ndarray) -> Blocks:
    """Decompose a quality path (T,) or (T, d) into constant blocks."""
    q = np.asarray(quality_path)
    if q.size == 0:
        raise ValueError("empty quality path")
    if q.ndim == 1:
        q = q[:, None]
    change = np.any(q[1:] != q[:-1], axis=1)
    starts = np.concatenate([[0], np.flatnonzero(change) + 1])
    ends = np.concatenate([starts[1:], [q.shape[0]]])
    return Blocks(starts=starts, ends=ends)


def tau_times(pi_true: np.ndarray, blocks: Blocks) -> np.ndarray:
    """Per block, the first round where the posterior mass on the block's
    quality reaches 1/2 (falling back to the block's last round)."""
    pi_true = np.asarray(pi_true, dtype=float)
    taus = np.empty(blocks.count, dtype=np.int64)
    for k in range(blocks.count):
        a, b = int(blocks.starts[k]), int(blocks.ends[k])
        seg = pi_true[a:b] >= 0.5
        taus[k] = a + 1 + int(np.argmax(seg)) if seg.any() else b
    return taus


def tau_times_trace(trace: Trace, learner: str = "dynamic") -> np.ndarray:
    blocks = block_decompose(trace.quality)
    return tau_times(trace.post_true[learner], blocks)


@dataclass(frozen=True)
class SeparationStats:
    """Worst-case feedback separation between two qualities.

    delta: minimal total variation of the feedback law over beliefs.
    gamma: twice the maximal absolute log-likelihood ratio.
    c:     1 + the maximal kernel ratio (lower-bound diagnostic only).
    Grid minima over beliefs over-estimate the true delta (and under-estimate
    gamma), so the coarse-grid envelope is reported alongside the refined one.
    """

    delta: float
    gamma: float
    c: float
    delta_coarse: float
    gamma_coarse: float
    pi_grid_size: int


def _mean_grid(model: ModelSpec, resolution: int) -> np.ndarray:
    lo, hi = model.quality.lo, model.quality.hi
    if model.d == 1:
        return np.linspace(lo[0], hi[0], resolution)[:, None]
    per_dim = max(3, int(round(resolution ** (1.0 / model.d))))
    axes = [np.linspace(lo[i], hi[i], per_dim) for i in range(model.d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def delta_gamma(
    model: ModelSpec, q, q_prime, resolution: int = 101, kernel=None
) -> SeparationStats:
    """Evaluate delta(q, q') and gamma(q, q') over a belief grid.

    The kernel depends on the belief only through the buy set, which for
    linear rewards is a function of the posterior mean; the belief grid is
    therefore a grid of achievable means (for a binary model this is exactly
    the discretized 1-simplex).  One refinement pass re-grids around the
    coarse argmin/argmax.
    """
    if not model.reward.linear:
        raise UnsupportedModelError("delta_gamma needs a linear reward family")
    q = np.atleast_1d(np.asarray(q, dtype=float))
    qp = np.atleast_1d(np.asarray(q_prime, dtype=float))
    if np.array_equal(q, qp):
        raise ConfigError("delta_gamma requires two distinct qualities")
    iq = model.quality.nearest_index(q)
    iqp = model.quality.nearest_index(qp)
    if not (
        np.allclose(model.quality.points[iq], q) and np.allclose(model.quality.points[iqp], qp)
    ):
        raise ConfigError("qualities must be points of the materialized grid")
    if kernel is None:
        kernel = make_kernel(model)

    def stats_on(means: np.ndarray):
        if model.d == 1 and hasattr(kernel, "_J_at"):
            tables = kernel.table(means[:, 0])  # (R, n_z, K)
        else:
            tables = np.stack([kernel.table(m) for m in means])
        g1, g2 = tables[:, :, iq], tables[:, :, iqp]
        tv = np.abs(g1 - g2).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.abs(np.log(g1) - np.log(g2))
            cmax = np.nanmax(np.maximum(g1 / g2, g2 / g1), axis=1)
        logmax = np.nanmax(ratio, axis=1)
        return tv, logmax, cmax

    means = _mean_grid(model, resolution)
    tv, logmax, cmax = stats_on(means)
    j_min, j_max = int(np.argmin(tv)), int(np.argmax(logmax))
    delta_coarse = float(tv[j_min])
    gamma_coarse = float(2.0 * logmax[j_max])
    c = float(1.0 + cmax.max())

    delta, gamma = delta_coarse, gamma_coarse
    if model.d == 1:
        for j, take_min in ((j_min, True), (j_max, False)):
            lo = means[max(j - 1, 0), 0]
            hi = means[min(j + 1, means.shape[0] - 1), 0]
            fine = np.linspace(lo, hi, resolution)[:, None]
            tv_f, logmax_f, cmax_f = stats_on(fine)
            if take_min:
                delta = min(delta, float(tv_f.min()))
            else:
                gamma = max(gamma, float(2.0 * logmax_f.max()))
            c = max(c, float(1.0 + cmax_f.max()))
    return SeparationStats(
        delta=delta,
        gamma=gamma,
        c=c,
        delta_coarse=delta_coarse,
        gamma_coarse=gamma_coarse,
        pi_grid_size=means.shape[0],
    )


def stationary_bound_curve(stats: SeparationStats, t) -> np.ndarray:
    """Posterior concentration bound 2 exp(-t d^4 / (2 g^2 + 4 d^2)).

    Values above 1 are vacuous but reported as-is (at t = 0 the bound is 2).
    """
    if stats.delta <= 0 or stats.gamma <= 0:
        raise ConfigError("bound curve needs strictly positive delta and gamma")
    rate = stats.delta**4 / (2.0 * stats.gamma**2 + 4.0 * stats.delta**2)
    return 2.0 * np.exp(-rate * np.asarray(t, dtype=float))


def bridge_bound(grid_size: int, q_lo: float, q_hi: float, lam1: float, lam2: float, t) -> np.ndarray:
    """Discretization lower bound 1 - 4 sum_n exp(-t lam1^4 n (q_hi-q_lo)^2 / (K^2 lam2^2)).

    The series is truncated once terms drop below 1e-16; non-positive decay
    rates give -inf (the vacuous region).
    """
    if lam1 <= 0 or lam2 <= 0:
        raise ConfigError("bridge bound needs lam1, lam2 > 0")
    t = np.asarray(t, dtype=float)
    a = t * lam1**4 * (q_hi - q_lo) ** 2 / (grid_size**2 * lam2**2)
    out = np.full(a.shape, -np.inf)
    pos = a > 0
    if np.any(pos):
        ap = a[pos]
        total = np.zeros_like(ap)
        n = 1
        term = np.exp(-ap * n)
        while np.any(term >= 1e-16) and n < 100_000:
            total += term
            n += 1
            term = np.exp(-ap * n)
        out[pos] = 1.0 - 4.0 * total
    return out if out.shape else float(out)


def make_psi_bar_mc(model: ModelSpec, posterior_means, n_draws: int = 40_000, seed: int = 0):
    """An averaged-kernel evaluator psi_bar(q) usable at arbitrary qualities.

    psi_bar(q)(z) averages G(z, pi_s, q) over the supplied posterior means
    with a shared set of consumer draws, so differences psi_bar(q) -
    psi_bar(q') are estimated with common random numbers.
    """
    if not model.reward.linear:
        raise UnsupportedModelError("psi_bar evaluator needs a linear reward family")
    from .gkernel import _mc_draws, _symbol_indices  # shared sampling helpers

    rng = stream(seed, EVAL, 91)
    theta, eps, mask = _mc_draws(model, n_draws, rng)
    means = np.atleast_2d(np.asarray(posterior_means, dtype=float))
    buy = np.stack([model.reward.value(m, theta) > 0.0 for m in means])
    weight = buy.mean(axis=0)  # per-draw buying fraction across the history
    n_sym = len(model.alphabet)
    thresholds = np.asarray(model.feedback.thresholds)

    def psi(points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty((points.shape[0], n_sym))
        for j, qv in enumerate(points):
            idx = _symbol_indices(model, qv + theta + eps - thresholds, mask)
            out[j] = np.bincount(idx, weights=weight, minlength=n_sym) / n_draws
            out[j, 0] = 1.0 - weight.mean()
        return out

    return psi


def anti_concentration_ratio(pairs: np.ndarray, psi_fn) -> tuple[float, float]:
    """Minimal ||psi_bar(q) - psi_bar(q')||_inf / ||q - q'||_inf over pairs.

    Returns (min ratio, lambda_hat = 1 / min ratio).  Coincident pairs are
    rejected; the no-purchase component cancels in the difference, so the
    max-norm is taken over the purchase symbols.
    """
    pairs = np.asarray(pairs, dtype=float)
    if pairs.ndim != 3 or pairs.shape[1] != 2:
        raise ValueError("pairs must have shape (P, 2, d)")
    qdist = np.abs(pairs[:, 0] - pairs[:, 1]).max(axis=1)
    if np.any(qdist == 0):
        raise ConfigError("anti-concentration pairs must be distinct")
    flat = pairs.reshape(-1, pairs.shape[2])
    vals = psi_fn(flat).reshape(pairs.shape[0], 2, -1)
    pdist = np.abs(vals[:, 0, 1:] - vals[:, 1, 1:]).max(axis=1)
    ratios = pdist / qdist
    min_ratio = float(ratios.min())
    lam = float(np.inf) if min_ratio == 0 else 1.0 / min_ratio
    return min_ratio, lam


@dataclass
class MetricsReport:
    """Per-run metrics bundle for one trace."""

    loss_LT: float
    regret: float
    lemma1_check: float  # lipschitz_k * loss_LT
    imperfect_loss: float | None
    loss_per_round: np.ndarray
    blocks: Blocks
    taus: np.ndarray


def build_metrics_report(trace: Trace, lipschitz_k: float = 1.0, learner: str | None = None) -> MetricsReport:
    learner = learner or trace.deciding
    series = loss_series(trace, learner)
    blocks = block_decompose(trace.quality)
    imp = None
    for name, kind in trace.learner_kinds.items():
        if kind == "imperfect":
            imp = loss_LT(trace, name)
            break
    total = float(series.sum())
    return MetricsReport(
        loss_LT=total,
        regret=regret(trace, lipschitz_k),
        lemma1_check=lipschitz_k * total,
        imperfect_loss=imp,
        loss_per_round=series,
        blocks=blocks,
        taus=tau_times(trace.post_true[learner], blocks),
    )


def write_metrics_csv(rows, path) -> None:
    """rows: dicts with the METRICS_HEADER fields (missing values -> '')."""
    cols = METRICS_HEADER.split(",")
    lines = [METRICS_HEADER]
    for row in rows:
        lines.append(",".join("" if row.get(c) is None else str(row.get(c, "")) for c in cols))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
