"""Round loop: quality evolution, purchases, feedback, learner updates.

Event order within round t: quality step -> consumer draw -> buy decision
using the current belief pi_t -> feedback -> learner updates producing
pi_{t+1}.  All randomness comes from per-(instance seed, purpose) streams
consumed at a fixed number of values per round, so the environment path never
depends on which learners are attached.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import seeds
from .errors import ConfigError
from .gkernel import make_kernel
from .learners import (
    EstimatorState,
    PosteriorGrid,
    bayes_update_dynamic,
    bayes_update_stationary,
    estimator_observe,
    imperfect_update,
    psi_invert,
)
from .model import NO_PURCHASE, ConsumerDraw, ModelSpec, format_symbol, validate_model

__all__ = [
    "DynamicsSpec",
    "LearnerSpec",
    "RoundRecord",
    "Trace",
    "quality_step",
    "simulate_run",
    "purchase_times",
    "write_trace_csv",
]

TRACE_HEADER = "t,quality,purchased,feedback,utility,post_true,post_mean,est_plain,est_discounted"

BAYES_KINDS = ("dynamic", "stationary", "imperfect")


@dataclass(frozen=True)
class DynamicsSpec:
    """Quality change rate per round and the simulation horizon."""

    eta: float
    horizon: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.eta < 1.0:
            raise ConfigError(f"change rate eta must lie in [0, 1), got {self.eta}")
        if self.horizon < 0:
            raise ConfigError(f"horizon must be >= 0, got {self.horizon}")

    @property
    def stationary(self) -> bool:
        return self.eta == 0.0


@dataclass(frozen=True)
class LearnerSpec:
    """One learner attached to a run.

    kinds: "dynamic" (change-aware Bayes), "stationary" (fixed-quality Bayes),
    "imperfect" (stationary rule in a changing world), "estimator" (empirical
    and discounted feedback distributions with inversion).
    """

    name: str
    kind: str
    eta1: float | None = None  # estimator discount; defaults to sqrt(eta)

    def __post_init__(self) -> None:
        if self.kind not in BAYES_KINDS + ("estimator",):
            raise ConfigError(f"unknown learner kind {self.kind!r}")


def default_learners(eta: float) -> tuple[LearnerSpec, ...]:
    return (LearnerSpec("dynamic", "dynamic"),)


@dataclass(frozen=True)
class RoundRecord:
    t: int
    quality: np.ndarray
    purchased: bool
    feedback: object
    utility: float
    post_true: float
    post_mean: np.ndarray


@dataclass
class Trace:
    """Columnar per-round record of one simulation run."""

    model: ModelSpec
    dynamics: DynamicsSpec
    seed: int
    config_digest: str
    deciding: str
    learner_kinds: dict[str, str]
    quality: np.ndarray  # (T, d)
    theta: np.ndarray  # (T, d)
    purchased: np.ndarray  # (T,) bool
    feedback_idx: np.ndarray  # (T,) int; 0 = no purchase
    utility: np.ndarray  # (T,)
    post_true: dict[str, np.ndarray] = field(default_factory=dict)  # (T,)
    post_mean: dict[str, np.ndarray] = field(default_factory=dict)  # (T, d)
    est_plain: np.ndarray | None = None  # (T, d)
    est_discounted: np.ndarray | None = None
    final_posteriors: dict[str, PosteriorGrid] = field(default_factory=dict)
    final_estimator: EstimatorState | None = None

    @property
    def horizon(self) -> int:
        return self.quality.shape[0]

    def symbol(self, t: int):
        """Feedback symbol at 1-based round t."""
        return self.model.alphabet[self.feedback_idx[t - 1]]

    def record(self, t: int) -> RoundRecord:
        i = t - 1
        return RoundRecord(
            t=t,
            quality=self.quality[i],
            purchased=bool(self.purchased[i]),
            feedback=self.model.alphabet[self.feedback_idx[i]],
            utility=float(self.utility[i]),
            post_true=float(self.post_true[self.deciding][i]),
            post_mean=self.post_mean[self.deciding][i],
        )

    def records(self):
        for t in range(1, self.horizon + 1):
            yield self.record(t)


def quality_step(q, eta: float, prior_sampler, rng: np.random.Generator):
    """One step of the switching process: keep q with prob 1 - eta, else a
    fresh prior draw (which may coincide with q)."""
    if not 0.0 <= eta <= 1.0:
        raise ConfigError(f"eta must lie in [0, 1], got {eta}")
    if rng.random() < eta:
        return np.asarray(prior_sampler(rng), dtype=float).copy()
    return np.asarray(q, dtype=float)


def purchase_times(trace: Trace) -> np.ndarray:
    """1-based indices of the purchase rounds b_k."""
    return np.flatnonzero(trace.purchased) + 1


def _digest(model: ModelSpec, dynamics: DynamicsSpec, learners, deciding: str, seed: int) -> str:
    text = "|".join(
        [
            model.describe(),
            f"eta={dynamics.eta!r} T={dynamics.horizon}",
            ";".join(f"{l.name}:{l.kind}:{l.eta1}" for l in learners),
            f"deciding={deciding}",
            f"seed={seed}",
        ]
    )
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def simulate_run(
    model: ModelSpec,
    dynamics: DynamicsSpec,
    learners=None,
    seed: int = 0,
    *,
    deciding: str | None = None,
    kernel=None,
    validate: bool = True,
    owa_samples: int = 512,
) -> Trace:
    """Simulate one run and return the full trace.

    Deterministic given (model, dynamics, learners, seed).  Purchases are
    decided by the `deciding` learner (default: the learner named "dynamic"),
    all learners observe the same feedback, and the estimator accumulates
    kernel tables evaluated at the deciding learner's belief.
    """
    if learners is None:
        learners = default_learners(dynamics.eta)
    learners = tuple(learners)
    names = [l.name for l in learners]
    if len(set(names)) != len(names):
        raise ConfigError("learner names must be unique")
    if deciding is None:
        deciding = "dynamic"
    by_name = {l.name: l for l in learners}
    if deciding not in by_name or by_name[deciding].kind not in BAYES_KINDS:
        raise ConfigError(f"deciding learner {deciding!r} must be a Bayesian learner")
    if validate:
        validate_model(model)
    if kernel is None:
        kernel = make_kernel(model)

    space = model.quality
    T = dynamics.horizon
    d = model.d
    eta = dynamics.eta
    digest = _digest(model, dynamics, learners, deciding, seed)

    # Fixed-layout uniforms, one block per purpose.
    rs = space.prior_uniforms_per_draw()
    u_coin = seeds.stream(seed, seeds.QUALITY).random(T) if T else np.empty(0)
    u_redraw = seeds.stream(seed, seeds.QUALITY, 1).random((T, rs)) if T else np.empty((0, rs))
    u_theta = seeds.stream(seed, seeds.THETA).random((T, d)) if T else np.empty((0, d))
    u_eps = seeds.stream(seed, seeds.EPSILON).random((T, d)) if T else np.empty((0, d))
    u_mask = None
    if model.feedback.family == "sparse":
        u_mask = seeds.stream(seed, seeds.MASK).random((T, d))
    reveal = None
    if model.feedback.family == "sparse":
        reveal = np.asarray(model.feedback.reveal_prob)

    posteriors = {l.name: PosteriorGrid.uniform(space) for l in learners if l.kind in BAYES_KINDS}
    prior = PosteriorGrid.uniform(space)
    est_specs = [l for l in learners if l.kind == "estimator"]
    est_states = {}
    for l in est_specs:
        eta1 = l.eta1 if l.eta1 is not None else (np.sqrt(eta) if eta > 0 else 0.5)
        est_states[l.name] = EstimatorState.fresh(space, len(model.alphabet), eta1)

    quality = np.empty((T, d))
    theta_rec = np.empty((T, d))
    purchased = np.zeros(T, dtype=bool)
    fidx = np.zeros(T, dtype=np.int32)
    utility = np.zeros(T)
    post_true = {n: np.empty(T) for n in posteriors}
    post_mean = {n: np.empty((T, d)) for n in posteriors}
    est_plain = np.empty((T, d)) if est_specs else None
    est_disc = np.empty((T, d)) if est_specs else None

    q = None
    for i in range(T):
        t = i + 1
        if t == 1 or u_coin[i] < eta:
            q = space.prior_draw(u_redraw[i])
        quality[i] = q
        qi = space.nearest_index(q)

        theta = model.theta.ppf(u_theta[i])
        eps = model.epsilon.ppf(u_eps[i])
        mask = (u_mask[i] < reveal).astype(int) if u_mask is not None else None
        draw = ConsumerDraw(theta=theta, epsilon=eps, mask=mask)
        theta_rec[i] = theta

        summaries = {}
        for name, post in posteriors.items():
            if model.reward.linear:
                summaries[name] = post.mean()
            else:
                rng_owa = seeds.stream(seed, seeds.OWA, t)
                idx = rng_owa.choice(space.size, size=owa_samples, p=post.mass)
                summaries[name] = post.grid[idx]

        for name, post in posteriors.items():
            post_true[name][i] = post.mass[qi]
            post_mean[name][i] = post.mean()
        for name, st in est_states.items():
            est_plain[i] = psi_invert(st, "plain").value
            est_disc[i] = psi_invert(st, "discounted").value

        util = model.reward.expected_value(summaries[deciding], theta)
        buy = bool(util > 0.0)
        purchased[i] = buy
        if buy:
            z = model.feedback.evaluate(q, theta, eps, mask)
            z_idx = model.symbol_index[z]
            utility[i] = model.reward.value(q, theta)
        else:
            z_idx = 0
        fidx[i] = z_idx

        tables = {name: kernel.table_from_summary(summaries[name]) for name in posteriors}
        for l in learners:
            if l.kind == "estimator":
                est_states[l.name] = estimator_observe(est_states[l.name], z_idx, tables[deciding])
                continue
            post = posteriors[l.name]
            g_row = tables[l.name][z_idx]
            if l.kind == "dynamic":
                posteriors[l.name] = bayes_update_dynamic(post, g_row, eta, prior)
            elif l.kind == "stationary":
                posteriors[l.name] = bayes_update_stationary(post, g_row)
            else:
                posteriors[l.name] = imperfect_update(post, g_row)

    return Trace(
        model=model,
        dynamics=dynamics,
        seed=seed,
        config_digest=digest,
        deciding=deciding,
        learner_kinds={l.name: l.kind for l in learners},
        quality=quality,
        theta=theta_rec,
        purchased=purchased,
        feedback_idx=fidx,
        utility=utility,
        post_true=post_true,
        post_mean=post_mean,
        est_plain=est_plain,
        est_discounted=est_disc,
        final_posteriors=posteriors,
        final_estimator=next(iter(est_states.values()), None),
    )


def _vec(row: np.ndarray) -> str:
    return ";".join(repr(float(v)) for v in np.atleast_1d(row))


def write_trace_csv(trace: Trace, path) -> None:
    """Persist a trace with the stable column layout (one row per round)."""
    lines = [TRACE_HEADER]
    dec = trace.deciding
    for i in range(trace.horizon):
        sym = trace.model.alphabet[trace.feedback_idx[i]]
        fields = [
            str(i + 1),
            _vec(trace.quality[i]),
            "1" if trace.purchased[i] else "0",
            format_symbol(sym),
            repr(float(trace.utility[i])),
            repr(float(trace.post_true[dec][i])),
            _vec(trace.post_mean[dec][i]),
            _vec(trace.est_plain[i]) if trace.est_plain is not None else "",
            _vec(trace.est_discounted[i]) if trace.est_discounted is not None else "",
        ]
        lines.append(",".join(fields))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
