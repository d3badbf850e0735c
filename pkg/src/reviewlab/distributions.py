"""Consumer preference and review-noise laws.

A `DistributionSpec` is a product law over `d` independent coordinates, with
Normal, Uniform and PointMass marginals.  Sampling always goes through the
inverse CDF applied to uniforms from a caller-owned stream, so a draw consumes
exactly `d` uniforms no matter the marginal kinds; this is the determinism
contract the simulation engines rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import ConfigError

_SQRT2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Marginal:
    """One scalar law: kind in {"normal", "uniform", "point"}.

    normal:  a = mean, b = stddev (> 0)
    uniform: a = lo, b = hi (lo < hi)
    point:   a = value
    """

    kind: str
    a: float
    b: float = 0.0

    def __post_init__(self) -> None:
        if self.kind == "normal":
            if not self.b > 0:
                raise ConfigError(f"normal stddev must be > 0, got {self.b}")
        elif self.kind == "uniform":
            if not self.a < self.b:
                raise ConfigError(f"uniform needs lo < hi, got [{self.a}, {self.b}]")
        elif self.kind != "point":
            raise ConfigError(f"unknown distribution kind {self.kind!r}")

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "normal":
            return self.a + self.b * ndtri(u)
        if self.kind == "uniform":
            return self.a + (self.b - self.a) * u
        return np.full_like(u, self.a)

    def cdf(self, x):
        """P(X <= x)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "normal":
            return ndtr((x - self.a) / self.b)
        if self.kind == "uniform":
            return np.clip((x - self.a) / (self.b - self.a), 0.0, 1.0)
        return (x >= self.a).astype(float)

    def sf_ge(self, x):
        """P(X >= x); differs from 1 - cdf only for point masses."""
        x = np.asarray(x, dtype=float)
        if self.kind == "point":
            return (x <= self.a).astype(float)
        return 1.0 - self.cdf(x)

    def cdf_lt(self, x):
        """P(X < x); differs from cdf only for point masses."""
        x = np.asarray(x, dtype=float)
        if self.kind == "point":
            return (x > self.a).astype(float)
        return self.cdf(x)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "normal":
            z = (x - self.a) / self.b
            return np.exp(-0.5 * z * z) / (self.b * _SQRT2PI)
        if self.kind == "uniform":
            inside = (x >= self.a) & (x <= self.b)
            return inside / (self.b - self.a)
        raise ConfigError("point mass has no density")

    @property
    def mean(self) -> float:
        if self.kind == "uniform":
            return 0.5 * (self.a + self.b)
        return self.a

    def support(self, tail_stddevs: float = 8.0) -> tuple[float, float]:
        """Effective integration bounds (normal truncated at +-tail_stddevs)."""
        if self.kind == "normal":
            return self.a - tail_stddevs * self.b, self.a + tail_stddevs * self.b
        if self.kind == "uniform":
            return self.a, self.b
        return self.a, self.a

    def __str__(self) -> str:
        if self.kind == "normal":
            return f"normal {self.a:g} {self.b:g}"
        if self.kind == "uniform":
            return f"uniform {self.a:g} {self.b:g}"
        return f"point {self.a:g}"


@dataclass(frozen=True)
class DistributionSpec:
    """Independent product of `d` scalar marginals."""

    marginals: tuple[Marginal, ...]

    @property
    def d(self) -> int:
        return len(self.marginals)

    @classmethod
    def normal(cls, mean: float = 0.0, stddev: float = 1.0, d: int = 1) -> "DistributionSpec":
        return cls(tuple(Marginal("normal", mean, stddev) for _ in range(d)))

    @classmethod
    def uniform(cls, lo: float, hi: float, d: int = 1) -> "DistributionSpec":
        return cls(tuple(Marginal("uniform", lo, hi) for _ in range(d)))

    @classmethod
    def point(cls, value: float, d: int = 1) -> "DistributionSpec":
        return cls(tuple(Marginal("point", value) for _ in range(d)))

    def ppf(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms of shape (..., d) through the per-dim inverse CDFs."""
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.d:
            raise ValueError(f"expected last axis {self.d}, got {u.shape}")
        out = np.empty_like(u)
        for i, m in enumerate(self.marginals):
            out[..., i] = m.ppf(u[..., i])
        return out

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Draw (d,) or (size, d) values, consuming exactly d uniforms per draw."""
        shape = (self.d,) if size is None else (size, self.d)
        return self.ppf(rng.random(shape))

    @property
    def means(self) -> np.ndarray:
        return np.array([m.mean for m in self.marginals])

    def __str__(self) -> str:
        return ", ".join(str(m) for m in self.marginals)


def parse_marginal(text: str) -> Marginal:
    """Parse "normal 0 1" / "uniform -1 1" / "point 0.3"."""
    parts = text.split()
    if not parts:
        raise ConfigError("empty distribution spec")
    kind = parts[0].lower()
    args = [float(p) for p in parts[1:]]
    if kind == "normal":
        if len(args) != 2:
            raise ConfigError(f"normal takes mean and stddev, got {text!r}")
        return Marginal("normal", args[0], args[1])
    if kind == "uniform":
        if len(args) != 2:
            raise ConfigError(f"uniform takes lo and hi, got {text!r}")
        return Marginal("uniform", args[0], args[1])
    if kind in ("point", "pointmass"):
        if len(args) != 1:
            raise ConfigError(f"point takes a single value, got {text!r}")
        return Marginal("point", args[0])
    raise ConfigError(f"unknown distribution kind {kind!r}")


def parse_distribution(text: str, d: int) -> DistributionSpec:
    """Parse a per-dim list "normal 0 1, normal 0 2" or broadcast one spec."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    margs = [parse_marginal(p) for p in parts]
    if len(margs) == 1 and d > 1:
        margs = margs * d
    if len(margs) != d:
        raise ConfigError(f"expected 1 or {d} marginals, got {len(margs)} in {text!r}")
    return DistributionSpec(tuple(margs))
