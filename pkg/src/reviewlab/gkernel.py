"""Feedback kernel evaluation: G(z, pi, q) = P[Z_t = z | pi_t = pi, Q = q].

The kernel depends on the public belief pi only through the set of consumers
who buy.  For linear reward families that set is determined by the posterior
mean alone, which makes three evaluation routes possible:

* exact 1-D quadrature over the preference law (additive reward, d = 1),
* Monte Carlo over consumer draws (any model),
* a precomputed buy-threshold table with linear interpolation, used by the
  simulation engines for d = 1 additive models (`Additive1DKernel`).

Symbols are indexed against ``model.alphabet`` with NO_PURCHASE at index 0.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .distributions import Marginal
from .errors import UnsupportedModelError
from .model import NO_PURCHASE, ModelSpec
from .seeds import EVAL, stream

__all__ = [
    "Quadrature",
    "MonteCarlo",
    "eval_G",
    "Additive1DKernel",
    "MCKernel",
    "make_kernel",
    "kernel_positive_probe",
]


@dataclass(frozen=True)
class Quadrature:
    """Adaptive composite Gauss-Legendre integration to absolute tolerance."""

    tol: float = 1e-8


@dataclass(frozen=True)
class MonteCarlo:
    """Unbiased estimate from n consumer draws."""

    n: int = 100_000


@lru_cache(maxsize=8)
def _gl_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


def _buy_prob_1d(theta: Marginal, a: float | np.ndarray):
    """P(theta > a): strict inequality, matching the tie -> no-purchase rule."""
    return 1.0 - theta.cdf(a)


def _quad_J(theta: Marginal, eps: Marginal, a, b, tol: float):
    """J(a, b) = P(theta > a, theta + eps >= b) for scalar a, b.

    Point-mass marginals are handled in closed form; otherwise the eps tail is
    integrated over theta with panel doubling until the change is below tol.
    """
    if theta.kind == "point":
        return float(theta.a > a) * float(eps.sf_ge(b - theta.a))
    if eps.kind == "point":
        c = b - eps.a
        if c > a:
            return float(theta.sf_ge(c))
        return float(_buy_prob_1d(theta, a))
    lo, hi = theta.support(8.0)
    lo = max(lo, a)
    if lo >= hi:
        return 0.0

    def composite(panels: int) -> float:
        nodes, weights = _gl_nodes(16)
        edges = np.linspace(lo, hi, panels + 1)
        mids = 0.5 * (edges[:-1] + edges[1:])
        halfs = 0.5 * (edges[1:] - edges[:-1])
        x = mids[:, None] + halfs[:, None] * nodes[None, :]
        vals = theta.pdf(x) * eps.sf_ge(b - x)
        return float(np.sum((vals @ weights) * halfs))

    panels = 32
    last = composite(panels)
    while panels < 2048:
        panels *= 2
        cur = composite(panels)
        if abs(cur - last) <= 0.5 * max(tol, 1e-15):
            return cur
        last = cur
    return last


def _quadrature_G(model: ModelSpec, z, mean: float, q: float, tol: float) -> float:
    theta, eps = model.theta.marginals[0], model.epsilon.marginals[0]
    a = model.reward.price - mean
    buyp = float(_buy_prob_1d(theta, a))
    if z is NO_PURCHASE:
        return 1.0 - buyp
    p = model.feedback.thresholds[0]
    plus = _quad_J(theta, eps, a, p - q, tol)
    fam = model.feedback.family
    if fam in ("sign", "max_feature"):
        return plus if z[0] == 1 else buyp - plus
    r = model.feedback.reveal_prob[0]
    if z[0] == 1:
        return r * plus
    if z[0] == -1:
        return r * (buyp - plus)
    return (1.0 - r) * buyp


def _symbol_indices(model: ModelSpec, s: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    """Alphabet indices (NO_PURCHASE excluded) for score rows s = q+theta+eps-p."""
    fam = model.feedback.family
    d = model.d
    pos = s >= 0.0
    if fam == "sign":
        weights = 2 ** np.arange(d - 1, -1, -1)
        return 1 + pos.astype(np.int64) @ weights
    if fam == "sparse":
        trits = np.where(mask.astype(bool), np.where(pos, 2, 0), 1)
        weights = 3 ** np.arange(d - 1, -1, -1)
        return 1 + trits.astype(np.int64) @ weights
    # max_feature: index by (argmax dimension, sign at that dimension)
    lut = np.empty((d, 2), dtype=np.int64)
    for i in range(d):
        for j, sgn in enumerate((-1, 1)):
            sym = tuple(sgn if k == i else 0 for k in range(d))
            lut[i, j] = model.symbol_index[sym]
    best = np.argmax(s + np.asarray(model.feedback.thresholds), axis=-1)
    rows = np.arange(s.shape[0])
    return lut[best, pos[rows, best].astype(int)]


def _mc_buy_mask(model: ModelSpec, summary, theta: np.ndarray) -> np.ndarray:
    if model.reward.linear:
        return model.reward.value(np.asarray(summary, dtype=float), theta) > 0.0
    return model.reward.expected_value(np.asarray(summary, dtype=float), theta) > 0.0


def _mc_draws(model: ModelSpec, n: int, rng: np.random.Generator):
    theta = model.theta.sample(rng, n)
    eps = model.epsilon.sample(rng, n)
    mask = None
    if model.feedback.family == "sparse":
        mask = rng.random((n, model.d)) < np.asarray(model.feedback.reveal_prob)
    return theta, eps, mask


def _mc_G(model: ModelSpec, z, summary, q, n: int, rng: np.random.Generator) -> float:
    theta, eps, mask = _mc_draws(model, n, rng)
    buy = _mc_buy_mask(model, summary, theta)
    if z is NO_PURCHASE:
        return float(np.mean(~buy))
    s = np.asarray(q, dtype=float) + theta + eps - np.asarray(model.feedback.thresholds)
    idx = _symbol_indices(model, s, mask)
    return float(np.mean(buy & (idx == model.symbol_index[z])))


def eval_G(model: ModelSpec, z, posterior_summary, q, method, rng=None) -> float:
    """P[Z_t = z | pi, Q = q] for a posterior summarized by its mean (linear
    rewards) or by an (n, d) sample array (owa).

    Quadrature is exact up to `tol` but only supports one-dimensional additive
    models; Monte Carlo supports everything and is unbiased in the draw count.
    """
    if z is not NO_PURCHASE and tuple(z) not in model.symbol_index:
        raise ValueError(f"symbol {z!r} not in the model alphabet")
    q_arr = np.atleast_1d(np.asarray(q, dtype=float))
    if np.any(q_arr < model.quality.lo - 1e-12) or np.any(q_arr > model.quality.hi + 1e-12):
        raise ValueError(f"quality {q!r} outside the quality space")
    z_key = z if z is NO_PURCHASE else tuple(z)
    if isinstance(method, Quadrature):
        if model.d != 1 or model.reward.family != "additive":
            raise UnsupportedModelError(
                "quadrature supports only one-dimensional additive models; "
                "use MonteCarlo for this configuration"
            )
        mean = float(np.asarray(posterior_summary, dtype=float).reshape(-1)[0])
        return _quadrature_G(model, z_key, mean, float(q_arr[0]), method.tol)
    if isinstance(method, MonteCarlo):
        if rng is None:
            rng = stream(0, EVAL, method.n)
        return _mc_G(model, z_key, posterior_summary, q_arr, method.n, rng)
    raise TypeError(f"unknown method {method!r}")


class Additive1DKernel:
    """Tabulated kernel for d = 1 additive models with sign-style feedback.

    The buy set is {theta > a} with a = price - posterior mean, so the whole
    kernel reduces to the one-dimensional function J(a, b_k) with one column
    per grid point; J is precomputed on a fine knot grid in `a` with composite
    Gauss-Legendre panels and evaluated by linear interpolation (knot spacing
    is chosen so the interpolation error stays below ~1e-8).  Tables are
    immutable after construction, so concurrent readers are safe.
    """

    def __init__(self, model: ModelSpec, tail_stddevs: float = 8.0):
        if model.d != 1 or model.reward.family != "additive":
            raise UnsupportedModelError("Additive1DKernel needs a 1-d additive model")
        self.model = model
        self.theta = model.theta.marginals[0]
        self.eps = model.epsilon.marginals[0]
        self.n_symbols = len(model.alphabet)
        self.grid = model.quality.points[:, 0]
        self.K = self.grid.size
        p0 = model.reward.price
        self._b = model.feedback.thresholds[0] - self.grid  # (K,)
        self._a_lo = p0 - float(model.quality.hi[0])
        self._a_hi = p0 - float(model.quality.lo[0])
        self._analytic = self.theta.kind == "point" or self.eps.kind == "point"
        if not self._analytic:
            self._build_table(tail_stddevs)

    def _build_table(self, tail_stddevs: float) -> None:
        lo_s, hi_s = self.theta.support(tail_stddevs)
        scale = self.theta.b if self.theta.kind == "normal" else (self.theta.b - self.theta.a) / 4
        a_span = max(self._a_hi - self._a_lo, 1e-9)
        n_knots = int(np.clip(np.ceil(a_span / (scale / 2048.0)) + 1, 513, 32769))
        self._knots = np.linspace(self._a_lo, self._a_hi, n_knots)
        self._h = self._knots[1] - self._knots[0]

        def panel_sums(edges: np.ndarray, n_nodes: int) -> np.ndarray:
            nodes, weights = _gl_nodes(n_nodes)
            mids = 0.5 * (edges[:-1] + edges[1:])
            halfs = 0.5 * (edges[1:] - edges[:-1])
            x = mids[:, None] + halfs[:, None] * nodes[None, :]
            fw = self.theta.pdf(x) * (halfs[:, None] * weights[None, :])
            out = np.empty((edges.size - 1, self.K))
            for k in range(self.K):
                out[:, k] = (fw * self.eps.sf_ge(self._b[k] - x)).sum(axis=1)
            return out

        # Fine panels between knots (interpolation accuracy), coarse ones on
        # the tail up to the support end (integration accuracy only).
        panel = panel_sums(self._knots, 8)
        if hi_s > self._a_hi:
            width = max(self._h, scale / 8.0)
            tail_edges = np.append(np.arange(self._a_hi, hi_s, width), hi_s)
            panel = np.vstack([panel, panel_sums(tail_edges, 24)])
        suffix = np.cumsum(panel[::-1], axis=0)[::-1]
        table = np.zeros((n_knots, self.K))
        table[:-1] = suffix[: n_knots - 1]
        if suffix.shape[0] >= n_knots:
            table[-1] = suffix[n_knots - 1]
        self._J = table

    def buy_prob(self, mean):
        """P(purchase) as a function of the posterior mean."""
        a = self.model.reward.price - np.asarray(mean, dtype=float)
        return 1.0 - self.theta.cdf(a)

    def _J_at(self, a):
        a = np.asarray(a, dtype=float)
        if self._analytic:
            if self.theta.kind == "point":
                open_buy = (self.theta.a > a).astype(float)
                return open_buy[..., None] * self.eps.sf_ge(self._b - self.theta.a)
            c = self._b - self.eps.a  # theta >= c, intersected with theta > a
            hi = np.maximum(a[..., None], c)
            val = self.theta.sf_ge(hi)
            strict = 1.0 - self.theta.cdf(a)
            return np.where(c > a[..., None], val, strict[..., None])
        a_cl = np.clip(a, self._a_lo, self._a_hi)
        pos = (a_cl - self._a_lo) / self._h
        idx = np.minimum(pos.astype(np.int64), self._knots.size - 2)
        w = (pos - idx)[..., None]
        return self._J[idx] * (1.0 - w) + self._J[idx + 1] * w

    def table(self, mean) -> np.ndarray:
        """G values of shape (..., n_symbols, K) for posterior mean(s)."""
        mean = np.asarray(mean, dtype=float)
        a = self.model.reward.price - mean
        plus = np.maximum(self._J_at(a), 0.0)
        buyp = 1.0 - self.theta.cdf(a)
        minus = np.maximum(buyp[..., None] - plus, 0.0)
        star = (1.0 - buyp)[..., None] * np.ones(self.K)
        fam = self.model.feedback.family
        if fam in ("sign", "max_feature"):
            rows = [star, minus, plus]
        else:
            r = self.model.feedback.reveal_prob[0]
            rows = [star, r * minus, (1.0 - r) * buyp[..., None] * np.ones(self.K), r * plus]
        return np.stack(rows, axis=-2)

    def table_from_summary(self, summary) -> np.ndarray:
        """(n_symbols, K) table from a posterior-mean summary vector."""
        return self.table(float(np.asarray(summary, dtype=float).reshape(-1)[0]))


class MCKernel:
    """Monte Carlo kernel tables with a quantized-summary memo cache.

    G depends on the posterior only through the buy set, so tables are keyed
    by the posterior mean quantized at 1e-6 (or a digest of quantized samples
    for owa).  The same key always reuses the same derived draw stream, which
    keeps repeated evaluations deterministic.  The cache behaves as a
    read-mostly dict with atomic inserts; when it exceeds the cap it is
    cleared wholesale.
    """

    QUANTUM = 1e-6

    def __init__(self, model: ModelSpec, n: int = 8192, seed: int = 0, cache_cap: int = 1 << 16):
        self.model = model
        self.n = n
        self.seed = seed
        self.n_symbols = len(model.alphabet)
        self.K = model.quality.size
        self._cache: dict = {}
        self._cap = cache_cap

    def _key(self, summary):
        arr = np.asarray(summary, dtype=float)
        quant = np.round(arr / self.QUANTUM).astype(np.int64)
        if arr.ndim <= 1:
            return tuple(int(v) for v in np.atleast_1d(quant))
        dig = hashlib.sha256(quant.tobytes()).digest()
        return tuple(int.from_bytes(dig[i : i + 8], "big") for i in range(0, 32, 8))

    def table(self, summary) -> np.ndarray:
        key = self._key(summary)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        ent = tuple(v & ((1 << 63) - 1) for v in key)
        rng = stream(self.seed, EVAL, *ent)
        theta, eps, mask = _mc_draws(self.model, self.n, rng)
        buy = _mc_buy_mask(self.model, summary, theta)
        thresholds = np.asarray(self.model.feedback.thresholds)
        out = np.empty((self.n_symbols, self.K))
        out[0, :] = np.mean(~buy)
        pts = self.model.quality.points
        for k in range(self.K):
            s = pts[k] + theta + eps - thresholds
            idx = _symbol_indices(self.model, s, mask)
            counts = np.bincount(idx[buy], minlength=self.n_symbols)
            out[1:, k] = counts[1:] / self.n
        out.setflags(write=False)
        if len(self._cache) >= self._cap:
            self._cache.clear()
        self._cache[key] = out
        return out

    def table_from_summary(self, summary) -> np.ndarray:
        return self.table(summary)


def make_kernel(model: ModelSpec, mc_n: int = 8192, mc_seed: int = 0):
    """The kernel the simulation engines use for this model."""
    if model.d == 1 and model.reward.family == "additive":
        return Additive1DKernel(model)
    return MCKernel(model, n=mc_n, seed=mc_seed)


def kernel_positive_probe(model: ModelSpec, seed: int = 0):
    """Search for a non-positive kernel entry at probe posteriors.

    Only analytic kernels are probed; Monte Carlo kernels rely on the
    per-update positivity guard in the learners.  Returns None when no
    violation is found, else (symbol, grid index, value).
    """
    if not (model.d == 1 and model.reward.family == "additive"):
        return None
    kernel = Additive1DKernel(model)
    probes = np.array(
        [model.quality.lo[0], 0.5 * (model.quality.lo[0] + model.quality.hi[0]), model.quality.hi[0]]
    )
    tables = kernel.table(probes)
    zi, ki = np.unravel_index(np.argmin(tables.min(axis=0)), tables.shape[1:])
    val = float(tables[:, zi, ki].min())
    if val <= 0.0:
        return model.alphabet[zi], int(ki), val
    return None
