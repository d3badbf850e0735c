"""Vectorized Monte Carlo engines for the heavy experiments.

Two fast paths live here:

* `run_binary_batch` advances many independent binary-quality instances in
  lockstep, one numpy-vectorized round at a time.  Per-instance streams are
  identical to the sequential engine's, so a batch of n instances produces
  the same per-instance results as n separate `simulate_run` calls.

* `run_tracking_batch` reproduces the discounted-estimator tracking
  experiment with the buyer population pinned to a fixed posterior mean;
  with the mean pinned the averaged-kernel target has the closed form
  G(z, M, Q_t) * (1 - (1 - eta1)^(t-1)), so whole instances vectorize over
  the horizon and the discounted estimator becomes a linear filter.

Cross-instance reductions happen in fixed instance order, so results do not
depend on worker count or batch splits.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from . import seeds
from .distributions import DistributionSpec, Marginal
from .dynamics import DynamicsSpec
from .errors import UnsupportedModelError
from .gkernel import Additive1DKernel
from .model import FeedbackSpec, ModelSpec, QualitySpace, RewardSpec

__all__ = ["BinaryBatchResult", "run_binary_batch", "TrackingResult", "run_tracking_batch"]


@dataclass
class BinaryBatchResult:
    """Per-instance accumulators from a lockstep binary batch."""

    loss: np.ndarray  # (n,) sum over rounds of |M_t - Q_t| (deciding learner)
    regret: np.ndarray  # (n,) sum of r(Q_t, theta_t)_+ - u_t
    imperfect_loss: np.ndarray | None  # (n,) sum of 1 - pi_imp(Q_t)
    purchases: np.ndarray  # (n,)
    value_changes: np.ndarray  # (n,) observed quality value changes
    pi_true: np.ndarray | None  # (n, T) deciding-learner mass at the true quality
    quality_idx: np.ndarray | None  # (n, T) int8 grid index of Q_t
    wrong_sum: np.ndarray | None  # (T,) sum over instances of pi_t(wrong quality)
    wrong_sumsq: np.ndarray | None


def run_binary_batch(
    model: ModelSpec,
    dynamics: DynamicsSpec,
    n_instances: int,
    master_seed: int,
    *,
    include_imperfect: bool = False,
    record_series: bool = False,
    record_wrong: bool = False,
    instance_offset: int = 0,
    chunk_rounds: int = 8192,
) -> BinaryBatchResult:
    """Lockstep simulation of a binary additive sign-feedback market."""
    if model.quality.size != 2 or model.d != 1:
        raise UnsupportedModelError("binary batch engine needs a two-point 1-d quality space")
    if model.reward.family != "additive" or model.feedback.family not in ("sign", "max_feature"):
        raise UnsupportedModelError("binary batch engine needs additive reward and sign feedback")
    kernel = Additive1DKernel(model)
    theta_m: Marginal = model.theta.marginals[0]
    eps_m: Marginal = model.epsilon.marginals[0]
    qvals = model.quality.points[:, 0]  # (2,), sorted
    p0 = model.reward.price
    p1 = model.feedback.thresholds[0]
    eta = dynamics.eta
    T = dynamics.horizon
    n = n_instances

    inst_seeds = [seeds.instance_seed(master_seed, instance_offset + i) for i in range(n)]
    gens = {
        tag: [seeds.stream(s, purpose, *extra) for s in inst_seeds]
        for tag, (purpose, extra) in {
            "coin": (seeds.QUALITY, ()),
            "redraw": (seeds.QUALITY, (1,)),
            "theta": (seeds.THETA, ()),
            "eps": (seeds.EPSILON, ()),
        }.items()
    }

    q_idx = np.zeros(n, dtype=np.int8)
    p_dyn = np.full(n, 0.5)  # deciding learner's mass on the high quality
    limp = np.full((n, 2), -np.log(2.0)) if include_imperfect else None

    loss = np.zeros(n)
    regret_acc = np.zeros(n)
    imp_loss = np.zeros(n) if include_imperfect else None
    purchases = np.zeros(n)
    value_changes = np.zeros(n)
    pi_true = np.empty((n, T), dtype=np.float32) if record_series else None
    q_series = np.empty((n, T), dtype=np.int8) if record_series else None
    wrong_sum = np.zeros(T) if record_wrong else None
    wrong_sumsq = np.zeros(T) if record_wrong else None

    rows = np.arange(n)
    done = 0
    while done < T:
        L = min(chunk_rounds, T - done)
        u = {tag: np.stack([g.random(L) for g in gens[tag]]) for tag in gens}
        for j in range(L):
            i = done + j
            fresh = np.minimum((u["redraw"][:, j] * 2).astype(np.int8), 1)
            if i == 0:
                q_idx = fresh
            else:
                change = u["coin"][:, j] < eta
                value_changes += change & (fresh != q_idx)
                q_idx = np.where(change, fresh, q_idx)
            q_val = qvals[q_idx]

            theta = theta_m.ppf(u["theta"][:, j])
            eps = eps_m.ppf(u["eps"][:, j])
            M = qvals[0] + p_dyn * (qvals[1] - qvals[0])

            cur_true = np.where(q_idx == 1, p_dyn, 1.0 - p_dyn)
            if record_series:
                pi_true[:, i] = cur_true
                q_series[:, i] = q_idx
            if record_wrong:
                wrong = 1.0 - cur_true
                wrong_sum[i] = wrong.sum()
                wrong_sumsq[i] = (wrong**2).sum()
            loss += np.abs(M - q_val)
            if include_imperfect:
                imp_loss += 1.0 - np.exp(limp[rows, q_idx])

            buy = (M + theta - p0) > 0.0
            r = q_val + theta - p0
            regret_acc += np.maximum(r, 0.0) - np.where(buy, r, 0.0)
            purchases += buy

            pos = (q_val + theta + eps - p1) >= 0.0
            fidx = np.where(buy, np.where(pos, 2, 1), 0)
            table = kernel.table(M)  # (n, 3, 2)
            g_sel = table[rows, fidx, :]  # (n, 2) kernel row for the observed symbol
            num = g_sel[:, 1] * p_dyn
            den = num + g_sel[:, 0] * (1.0 - p_dyn)
            p_dyn = (1.0 - eta) * num / den + 0.5 * eta
            if include_imperfect:
                # The unaware learner conditions on its own belief, not the
                # deciding learner's, so it gets its own kernel rows.
                p_imp = np.exp(limp[:, 1])
                M_imp = qvals[0] + p_imp * (qvals[1] - qvals[0])
                g_imp = kernel.table(M_imp)[rows, fidx, :]
                limp = limp + np.log(g_imp)
                limp -= np.logaddexp(limp[:, 0], limp[:, 1])[:, None]
        done += L

    return BinaryBatchResult(
        loss=loss,
        regret=regret_acc,
        imperfect_loss=imp_loss,
        purchases=purchases,
        value_changes=value_changes,
        pi_true=pi_true,
        quality_idx=q_series,
        wrong_sum=wrong_sum,
        wrong_sumsq=wrong_sumsq,
    )


@dataclass
class TrackingResult:
    """Tracking error of the discounted feedback distribution, pooled over
    instances: sq_sums[eta1] holds per-round sums over instances of the
    squared tracking error (purchase symbols only)."""

    eta: float
    horizon: int
    instances: int
    eta1_list: tuple[float, ...]
    sq_sums: dict[float, np.ndarray]

    def error_total(self, eta1: float) -> float:
        return float(np.sqrt(self.sq_sums[eta1] / self.instances).sum())

    def per_round_rms(self, eta1: float) -> float:
        return self.error_total(eta1) / self.horizon


def _tracking_params(
    eta: float,
    eta1_list,
    horizon: int,
    theta_m: Marginal,
    eps_m: Marginal,
    price: float,
    threshold: float,
    q_lo: float,
    q_hi: float,
    pinned_mean: float,
    dense: int = 1025,
):
    """Precompute the closed-form kernel slices used by every instance."""
    space = QualitySpace.hypercube([q_lo], [q_hi], dense)
    model = ModelSpec(
        quality=space,
        reward=RewardSpec("additive", price=price),
        feedback=FeedbackSpec("sign", thresholds=(threshold,)),
        theta=DistributionSpec((theta_m,)),
        epsilon=DistributionSpec((eps_m,)),
    )
    kernel = Additive1DKernel(model)
    tbl = kernel.table(np.array([pinned_mean]))[0]  # (3, dense)
    grid = space.points[:, 0]
    return grid, tbl[2], tbl[1], float(kernel.buy_prob(pinned_mean))


def _tracking_one(args) -> dict[float, np.ndarray]:
    (
        inst_seed,
        eta,
        eta1_list,
        T,
        theta_m,
        eps_m,
        price,
        threshold,
        q_lo,
        q_hi,
        pinned_mean,
        grid,
        gplus,
        gminus,
    ) = args
    u_coin = seeds.stream(inst_seed, seeds.QUALITY).random(T)
    u_redraw = seeds.stream(inst_seed, seeds.QUALITY, 1).random((T, 1))[:, 0]
    u_theta = seeds.stream(inst_seed, seeds.THETA).random(T)
    u_eps = seeds.stream(inst_seed, seeds.EPSILON).random(T)

    change = u_coin < eta
    change[0] = True
    last = np.maximum.accumulate(np.where(change, np.arange(T), 0))
    Q = q_lo + (q_hi - q_lo) * u_redraw[last]

    theta = theta_m.ppf(u_theta)
    eps = eps_m.ppf(u_eps)
    buy = (pinned_mean + theta - price) > 0.0
    pos = (buy & (Q + theta + eps - threshold >= 0.0)).astype(float)
    neg = (buy & (Q + theta + eps - threshold < 0.0)).astype(float)

    g_plus_Q = np.interp(Q, grid, gplus)
    g_minus_Q = np.interp(Q, grid, gminus)
    t_idx = np.arange(T, dtype=float)

    out = {}
    for eta1 in eta1_list:
        coeff_b = [eta1]
        coeff_a = [1.0, -(1.0 - eta1)]
        Lp = np.concatenate([[0.0], lfilter(coeff_b, coeff_a, pos)[:-1]])
        Ln = np.concatenate([[0.0], lfilter(coeff_b, coeff_a, neg)[:-1]])
        w = 1.0 - np.exp(t_idx * np.log1p(-eta1))
        out[eta1] = (Lp - g_plus_Q * w) ** 2 + (Ln - g_minus_Q * w) ** 2
    return out


def run_tracking_batch(
    eta: float,
    eta1_list,
    horizon: int,
    instances: int,
    master_seed: int,
    *,
    theta_m: Marginal | None = None,
    eps_m: Marginal | None = None,
    price: float = 0.0,
    threshold: float = 0.0,
    q_lo: float = 0.0,
    q_hi: float = 1.0,
    pinned_mean: float = 1.0,
    workers: int = 1,
    instance_offset: int = 0,
) -> TrackingResult:
    """Tracking error of L^{eta1} against the discounted averaged kernel.

    One-dimensional additive market with sign feedback; buyers are the
    pinned-mean population.  The squared error sums over the two purchase
    symbols; expectations over instances are taken by the caller-facing
    accessors (inner expectation first, then sqrt, then the sum over rounds).
    """
    theta_m = theta_m or Marginal("normal", 0.0, 1.0)
    eps_m = eps_m or Marginal("normal", 0.0, 1.0)
    eta1_list = tuple(float(e) for e in eta1_list)
    grid, gplus, gminus, _ = _tracking_params(
        eta, eta1_list, horizon, theta_m, eps_m, price, threshold, q_lo, q_hi, pinned_mean
    )
    args = [
        (
            seeds.instance_seed(master_seed, instance_offset + i),
            eta,
            eta1_list,
            horizon,
            theta_m,
            eps_m,
            price,
            threshold,
            q_lo,
            q_hi,
            pinned_mean,
            grid,
            gplus,
            gminus,
        )
        for i in range(instances)
    ]
    sums = {e: np.zeros(horizon) for e in eta1_list}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for res in pool.map(_tracking_one, args, chunksize=8):
                for e in eta1_list:
                    sums[e] += res[e]
    else:
        for a in args:
            res = _tracking_one(a)
            for e in eta1_list:
                sums[e] += res[e]
    return TrackingResult(
        eta=eta, horizon=horizon, instances=instances, eta1_list=eta1_list, sq_sums=sums
    )
