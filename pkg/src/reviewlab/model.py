"""Market model: quality space, consumer heterogeneity, reward and feedback.

A round works as follows.  A consumer with preference vector theta observes
the public belief over the product quality, buys iff her estimated expected
utility is strictly positive, and, if she bought, posts a review symbol
computed from the true quality, her preference and review noise epsilon.
No purchase is recorded as the reserved symbol ``NO_PURCHASE``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .distributions import DistributionSpec
from .errors import ConfigError
from .seeds import VALIDATION, stream

__all__ = [
    "NO_PURCHASE",
    "QualitySpace",
    "RewardSpec",
    "FeedbackSpec",
    "ConsumerDraw",
    "ModelSpec",
    "sample_consumer",
    "buy_decision",
    "feedback_eval",
    "buyer_fraction",
    "validate_model",
    "format_symbol",
]


class _NoPurchase:
    """Singleton marker for the no-purchase symbol."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "*"


#: The reserved no-purchase symbol; always index 0 of a model's alphabet.
NO_PURCHASE = _NoPurchase()

Symbol = object  # NO_PURCHASE or a tuple of per-dimension integers


def format_symbol(sym) -> str:
    """Render a feedback symbol for CSV: "*" or semicolon-joined integers."""
    if sym is NO_PURCHASE:
        return "*"
    return ";".join(str(int(v)) for v in sym)


def _sign(x: np.ndarray) -> np.ndarray:
    """sign with the tie rule sign(0) := +1."""
    return np.where(np.asarray(x, dtype=float) >= 0.0, 1, -1)


@dataclass(frozen=True)
class QualitySpace:
    """Compact quality space with a materialized, lexicographically sorted grid.

    `continuous` marks spaces whose prior draws live on the full hypercube;
    the grid is then only the learners' discretization of it.
    """

    points: np.ndarray  # (K, d)
    lo: np.ndarray  # (d,)
    hi: np.ndarray  # (d,)
    continuous: bool

    @classmethod
    def discrete(cls, points) -> "QualitySpace":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[0] == 1 and pts.shape[1] > 1 and np.asarray(points).ndim == 1:
            pts = pts.T  # a flat list means K scalar points, d=1
        order = np.lexsort(pts.T[::-1])
        pts = pts[order]
        if pts.shape[0] < 1:
            raise ConfigError("quality space needs at least one point")
        if np.any(np.all(pts[1:] == pts[:-1], axis=1)):
            raise ConfigError("discrete quality points must be distinct")
        return cls(points=pts, lo=pts.min(axis=0), hi=pts.max(axis=0), continuous=False)

    @classmethod
    def hypercube(cls, lo, hi, grid_per_dim) -> "QualitySpace":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.shape != hi.shape or not np.all(lo < hi):
            raise ConfigError("hypercube needs lo < hi componentwise")
        d = lo.size
        if np.isscalar(grid_per_dim) or np.asarray(grid_per_dim).ndim == 0:
            grid_per_dim = [int(grid_per_dim)] * d
        grid_per_dim = [int(g) for g in grid_per_dim]
        if len(grid_per_dim) != d or any(g < 2 for g in grid_per_dim):
            raise ConfigError("grid_per_dim needs >= 2 points per dimension")
        axes = [np.linspace(lo[i], hi[i], grid_per_dim[i]) for i in range(d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)  # lex order by construction
        return cls(points=pts, lo=lo, hi=hi, continuous=True)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def prior_uniforms_per_draw(self) -> int:
        """How many uniforms one prior draw consumes (fixed per space)."""
        return self.d if self.continuous else 1

    def prior_draw(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms to a prior sample: continuous uniform on the cube, or
        a uniformly chosen grid point for discrete spaces."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if self.continuous:
            return self.lo + (self.hi - self.lo) * u
        idx = min(int(u[0] * self.size), self.size - 1)
        return self.points[idx].copy()

    def nearest_index(self, q: np.ndarray) -> int:
        d2 = np.sum((self.points - np.asarray(q, dtype=float)) ** 2, axis=1)
        return int(np.argmin(d2))


@dataclass(frozen=True)
class RewardSpec:
    """Reward family: additive, scalar product, or ordered weighted average."""

    family: str  # "additive" | "scalar_product" | "owa"
    price: float = 0.0
    weights: tuple[float, ...] | None = None  # owa only

    def __post_init__(self) -> None:
        if self.family not in ("additive", "scalar_product", "owa"):
            raise ConfigError(f"unknown reward family {self.family!r}")
        if self.family == "owa":
            if self.weights is None:
                raise ConfigError("owa reward needs weights")
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ConfigError("owa weights must be nonnegative and sum to 1")

    @property
    def linear(self) -> bool:
        """True when E_pi[r(Q, theta)] = r(E_pi[Q], theta)."""
        return self.family in ("additive", "scalar_product")

    def value(self, q: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """r(q, theta), broadcasting over leading axes; last axis is the dim."""
        q = np.asarray(q, dtype=float)
        theta = np.asarray(theta, dtype=float)
        if self.family == "additive":
            return (q + theta).sum(axis=-1) - self.price
        if self.family == "scalar_product":
            return (q * theta).sum(axis=-1)
        s = np.sort(q + theta, axis=-1)[..., ::-1]  # descending components
        w = np.asarray(self.weights, dtype=float)
        return (s * w).sum(axis=-1) - self.price

    def expected_value(self, summary: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """E_{Q~pi}[r(Q, theta)] from a posterior summary.

        Linear families take the posterior mean; owa takes an (n, d) array of
        posterior samples and averages the reward over them.
        """
        summary = np.asarray(summary, dtype=float)
        if self.linear:
            return self.value(summary, theta)
        if summary.ndim != 2 or summary.shape[0] == 0:
            raise ConfigError("owa expected utility needs a nonempty sample set")
        theta = np.asarray(theta, dtype=float)
        vals = self.value(summary, theta[..., None, :])
        return vals.mean(axis=-1)

    def lipschitz(self) -> float | None:
        """A Lipschitz constant in Q w.r.t. the Euclidean norm, when one exists."""
        if self.family == "additive":
            return 1.0  # d = 1; callers scale by sqrt(d) for higher dimensions
        if self.family == "owa":
            return 1.0
        return None  # scalar product: depends on the preference magnitude


@dataclass(frozen=True)
class FeedbackSpec:
    """Feedback family and its per-dimension thresholds.

    sign:        z_i = sign(Q_i + theta_i + eps_i - p_i), all dimensions
    sparse:      same, but dimension i is revealed only with prob reveal[i]
    max_feature: only the dimension with the largest Q_j + theta_j + eps_j
                 carries a (signed) review; all others are 0
    """

    family: str  # "sign" | "sparse" | "max_feature"
    thresholds: tuple[float, ...]
    reveal_prob: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.family not in ("sign", "sparse", "max_feature"):
            raise ConfigError(f"unknown feedback family {self.family!r}")
        if self.family == "sparse":
            if self.reveal_prob is None:
                raise ConfigError("sparse feedback needs reveal_prob")
            r = np.asarray(self.reveal_prob, dtype=float)
            if len(self.reveal_prob) != len(self.thresholds):
                raise ConfigError("reveal_prob length must match thresholds")
            if np.any(r < 0) or np.any(r > 1):
                raise ConfigError("reveal_prob entries must lie in [0, 1]")

    @property
    def d(self) -> int:
        return len(self.thresholds)

    def alphabet(self) -> tuple:
        """All purchase symbols, lexicographically sorted."""
        d = self.d
        if self.family == "sign":
            syms = itertools.product((-1, 1), repeat=d)
        elif self.family == "sparse":
            syms = itertools.product((-1, 0, 1), repeat=d)
        else:
            syms = []
            for i in range(d):
                for s in (-1, 1):
                    z = [0] * d
                    z[i] = s
                    syms.append(tuple(z))
        return tuple(sorted(syms))

    def evaluate(self, q, theta, eps, mask=None) -> tuple:
        """The review symbol for a single purchase."""
        q = np.asarray(q, dtype=float)
        s = q + np.asarray(theta, dtype=float) + np.asarray(eps, dtype=float)
        p = np.asarray(self.thresholds, dtype=float)
        signs = _sign(s - p)
        if self.family == "sign":
            return tuple(int(v) for v in signs)
        if self.family == "sparse":
            return tuple(int(v) for v in signs * np.asarray(mask, dtype=int))
        best = int(np.argmax(s))  # ties resolved to the lowest index
        z = [0] * self.d
        z[best] = int(signs[best])
        return tuple(z)


@dataclass(frozen=True)
class ConsumerDraw:
    """One consumer's private randomness for a round."""

    theta: np.ndarray  # (d,)
    epsilon: np.ndarray  # (d,)
    mask: np.ndarray | None = None  # (d,) 0/1, sparse feedback only


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Full market model; the single source of truth for one experiment."""

    quality: QualitySpace
    reward: RewardSpec
    feedback: FeedbackSpec
    theta: DistributionSpec
    epsilon: DistributionSpec

    def __post_init__(self) -> None:
        d = self.quality.d
        for name, other in (
            ("feedback thresholds", self.feedback.d),
            ("theta", self.theta.d),
            ("epsilon", self.epsilon.d),
        ):
            if other != d:
                raise ConfigError(f"{name} dimension {other} != quality dimension {d}")

    @cached_property
    def alphabet(self) -> tuple:
        """NO_PURCHASE followed by the sorted purchase symbols."""
        return (NO_PURCHASE,) + self.feedback.alphabet()

    @cached_property
    def symbol_index(self) -> dict:
        return {sym: i for i, sym in enumerate(self.alphabet)}

    @property
    def d(self) -> int:
        return self.quality.d

    def describe(self) -> str:
        return (
            f"quality K={self.quality.size} d={self.d} "
            f"[{self.quality.lo} .. {self.quality.hi}] | reward {self.reward.family} "
            f"p0={self.reward.price:g} | feedback {self.feedback.family} | "
            f"theta: {self.theta} | epsilon: {self.epsilon}"
        )


def sample_consumer(model: ModelSpec, rng: np.random.Generator) -> ConsumerDraw:
    """Draw one consumer's (theta, epsilon[, sparsity mask]).

    Stream contract: consumes exactly d uniforms for theta, d for epsilon and,
    for sparse feedback, d for the mask -- independent of the marginal kinds.
    """
    theta = model.theta.sample(rng)
    eps = model.epsilon.sample(rng)
    mask = None
    if model.feedback.family == "sparse":
        mask = (rng.random(model.d) < np.asarray(model.feedback.reveal_prob)).astype(int)
    return ConsumerDraw(theta=theta, epsilon=eps, mask=mask)


def buy_decision(model: ModelSpec, posterior_summary, theta) -> bool:
    """True iff the estimated expected utility is strictly positive (ties: no buy)."""
    val = model.reward.expected_value(np.asarray(posterior_summary, dtype=float), theta)
    return bool(val > 0.0)


def feedback_eval(model: ModelSpec, q, draw: ConsumerDraw) -> tuple:
    """Review symbol for a consumer who already decided to purchase."""
    return model.feedback.evaluate(q, draw.theta, draw.epsilon, draw.mask)


def buyer_fraction(
    model: ModelSpec, q, n: int, rng: np.random.Generator | None = None
) -> float:
    """Monte Carlo estimate of P_theta(r(q, theta) > 0).

    Evaluated at the lowest quality this is the purchase-guarantee constant
    delta_buy; configurations need it strictly positive for learning to work.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if rng is None:
        rng = stream(0, VALIDATION)
    theta = model.theta.sample(rng, n)
    vals = model.reward.value(np.asarray(q, dtype=float), theta)
    return float(np.mean(vals > 0.0))


def validate_model(model: ModelSpec, n: int = 20_000, seed: int = 0) -> float:
    """Check the purchase guarantee and kernel positivity; return delta_buy.

    Raises ConfigError naming the violated assumption.  The check uses a
    dedicated validation stream, so it is deterministic per (model, seed).
    """
    rng = stream(seed, VALIDATION)
    delta_buy = buyer_fraction(model, model.quality.lo, n, rng)
    if delta_buy <= 0.0:
        raise ConfigError(
            "purchase guarantee violated: no consumer buys at the lowest quality "
            f"(estimated buyer fraction {delta_buy})"
        )
    from .gkernel import kernel_positive_probe  # local import avoids a cycle

    bad = kernel_positive_probe(model, seed=seed)
    if bad is not None:
        sym, qi, g = bad
        raise ConfigError(
            "identifiability violated: feedback kernel not strictly positive "
            f"(G({format_symbol(sym)}, ., q={qi}) = {g})"
        )
    return delta_buy
