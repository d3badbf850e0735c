"""Config-driven Monte Carlo orchestration and the quantitative experiments.

Configs are flat ``key = value`` text with dotted keys; unknown keys are
errors.  Every result row is a pure function of (config digest, master seed):
per-instance seeds come from splitmix64 of (master seed, instance index),
instances are aggregated in index order with exact summation, and re-running
on top of existing per-instance outputs skips the completed ones.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import seeds
from .distributions import DistributionSpec, Marginal, parse_distribution
from .dynamics import BAYES_KINDS, DynamicsSpec, LearnerSpec, simulate_run, write_trace_csv
from .errors import ConfigError, UnsupportedModelError
from .lockstep import TrackingResult, run_binary_batch, run_tracking_batch
from .metrics import build_metrics_report, loss_LT, mean_se
from .model import FeedbackSpec, ModelSpec, QualitySpace, RewardSpec, validate_model

__all__ = [
    "ExperimentConfig",
    "ResultRow",
    "ResultTable",
    "parse_config_text",
    "load_config",
    "build_config",
    "run_monte_carlo",
    "reproduce_eta1_table",
    "rate_fit",
    "sweep_eta",
    "binary_gaussian_model",
    "interval_gaussian_model",
    "CANONICAL_ETA1_EXPONENTS",
]

RESULTS_HEADER = "eta,eta1,learner,metric,mean,se,n"

#: Discount exponents of the estimator-tuning experiment: eta^(1/3), sqrt(eta),
#: eta^(2/3) and eta itself.
CANONICAL_ETA1_EXPONENTS = (1.0 / 3.0, 0.5, 2.0 / 3.0, 1.0)


# ---------------------------------------------------------------------------
# Config file handling


_KNOWN_KEYS = {
    "model.quality.kind",
    "model.quality.points",
    "model.quality.lo",
    "model.quality.hi",
    "model.quality.grid",
    "model.reward",
    "model.price",
    "model.owa_weights",
    "model.feedback",
    "model.thresholds",
    "model.reveal_prob",
    "model.theta",
    "model.epsilon",
    "dynamics.eta",
    "dynamics.horizon",
    "learners.set",
    "learners.eta1",
    "learners.deciding",
    "experiment.instances",
    "experiment.seed",
    "experiment.workers",
    "experiment.instance_offset",
    "experiment.save_traces",
    "experiment.eta_list",
    "experiment.eta_t_product",
    "experiment.eta1_list",
    "experiment.mc_eval_n",
    "experiment.pinned_mean",
    "experiment.lipschitz",
}

_REQUIRED_KEYS = ("model.reward", "model.feedback", "model.theta", "model.epsilon",
                  "model.quality.kind", "dynamics.eta", "dynamics.horizon")


def parse_config_text(text: str) -> dict[str, str]:
    """Parse flat key = value lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        if key in out:
            raise ConfigError(f"duplicate config key {key!r}")
        out[key] = value
    return out


def _floats(text: str) -> list[float]:
    return [float(p) for p in text.replace(",", " ").split()]


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    dynamics: DynamicsSpec
    learners: tuple[LearnerSpec, ...]
    deciding: str
    instances: int
    seed: int
    workers: int
    instance_offset: int
    save_traces: bool
    eta_list: tuple[float, ...] | None
    eta_t_product: float | None
    eta1_list: tuple[float, ...] | None
    mc_eval_n: int
    pinned_mean: float
    lipschitz: float

    def digest_text(self) -> str:
        return "|".join(
            [
                self.model.describe(),
                f"eta={self.dynamics.eta!r}",
                f"T={self.dynamics.horizon}",
                ";".join(f"{l.name}:{l.kind}:{l.eta1}" for l in self.learners),
                self.deciding,
                str(self.instances),
                str(self.seed),
            ]
        )


def build_config(kv: dict[str, str]) -> ExperimentConfig:
    """Build and validate an ExperimentConfig from parsed key/value pairs."""
    for key in _REQUIRED_KEYS:
        if key not in kv:
            raise ConfigError(f"missing required config key {key!r}")

    kind = kv["model.quality.kind"].lower()
    if kind == "discrete":
        if "model.quality.points" not in kv:
            raise ConfigError("missing required config key 'model.quality.points'")
        pts = [
            [float(x) for x in chunk.split()]
            for chunk in kv["model.quality.points"].split(",")
            if chunk.strip()
        ]
        space = QualitySpace.discrete(np.array(pts))
    elif kind == "hypercube":
        for need in ("model.quality.lo", "model.quality.hi", "model.quality.grid"):
            if need not in kv:
                raise ConfigError(f"missing required config key {need!r}")
        lo = _floats(kv["model.quality.lo"])
        hi = _floats(kv["model.quality.hi"])
        grid = [int(g) for g in kv["model.quality.grid"].split()]
        space = QualitySpace.hypercube(lo, hi, grid if len(grid) > 1 else grid[0])
    else:
        raise ConfigError(f"model.quality.kind must be discrete or hypercube, got {kind!r}")
    d = space.d

    price = float(kv.get("model.price", "0"))
    reward_name = kv["model.reward"].lower()
    weights = tuple(_floats(kv["model.owa_weights"])) if "model.owa_weights" in kv else None
    reward = RewardSpec(reward_name, price=price, weights=weights)

    thresholds = tuple(_floats(kv.get("model.thresholds", ""))) or (price,) * d
    if len(thresholds) == 1 and d > 1:
        thresholds = thresholds * d
    reveal = None
    if "model.reveal_prob" in kv:
        reveal = tuple(_floats(kv["model.reveal_prob"]))
        if len(reveal) == 1 and d > 1:
            reveal = reveal * d
    feedback = FeedbackSpec(kv["model.feedback"].lower(), thresholds=thresholds, reveal_prob=reveal)

    model = ModelSpec(
        quality=space,
        reward=reward,
        feedback=feedback,
        theta=parse_distribution(kv["model.theta"], d),
        epsilon=parse_distribution(kv["model.epsilon"], d),
    )
    dynamics = DynamicsSpec(eta=float(kv["dynamics.eta"]), horizon=int(kv["dynamics.horizon"]))

    eta1 = float(kv["learners.eta1"]) if "learners.eta1" in kv else None
    learner_kinds = [s.strip() for s in kv.get("learners.set", "dynamic").split(",") if s.strip()]
    learners = []
    for lk in learner_kinds:
        if lk not in BAYES_KINDS + ("estimator",):
            raise ConfigError(f"unknown learner kind {lk!r} in learners.set")
        learners.append(LearnerSpec(lk, lk, eta1 if lk == "estimator" else None))
    deciding = kv.get("learners.deciding", "dynamic")

    workers_default = os.environ.get("REVIEWLAB_WORKERS", "1")
    save = kv.get("experiment.save_traces", "false").lower() in ("1", "true", "yes")
    eta_list = tuple(_floats(kv["experiment.eta_list"])) if "experiment.eta_list" in kv else None
    eta1_list = tuple(_floats(kv["experiment.eta1_list"])) if "experiment.eta1_list" in kv else None
    return ExperimentConfig(
        model=model,
        dynamics=dynamics,
        learners=tuple(learners),
        deciding=deciding,
        instances=int(kv.get("experiment.instances", "1")),
        seed=int(kv.get("experiment.seed", "0")),
        workers=int(kv.get("experiment.workers", workers_default)),
        instance_offset=int(kv.get("experiment.instance_offset", "0")),
        save_traces=save,
        eta_list=eta_list,
        eta_t_product=float(kv["experiment.eta_t_product"]) if "experiment.eta_t_product" in kv else None,
        eta1_list=eta1_list,
        mc_eval_n=int(kv.get("experiment.mc_eval_n", "8192")),
        pinned_mean=float(kv.get("experiment.pinned_mean", "1.0")),
        lipschitz=float(kv.get("experiment.lipschitz", "1.0")),
    )


def load_config(path) -> ExperimentConfig:
    return build_config(parse_config_text(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Result tables


@dataclass(frozen=True)
class ResultRow:
    eta: float
    eta1: float | None
    learner: str
    metric: str
    mean: float
    se: float
    n: int


@dataclass
class ResultTable:
    rows: list[ResultRow]

    def lookup(self, metric: str, learner: str | None = None, eta: float | None = None,
               eta1: float | None = None) -> ResultRow:
        for row in self.rows:
            if row.metric != metric:
                continue
            if learner is not None and row.learner != learner:
                continue
            if eta is not None and row.eta != eta:
                continue
            if eta1 is not None and row.eta1 != eta1:
                continue
            return row
        raise KeyError(f"no row for metric={metric} learner={learner} eta={eta} eta1={eta1}")

    def to_csv(self, path) -> None:
        lines = [RESULTS_HEADER]
        for r in self.rows:
            eta1 = "" if r.eta1 is None else repr(r.eta1)
            lines.append(
                f"{r.eta!r},{eta1},{r.learner},{r.metric},{r.mean!r},{r.se!r},{r.n}"
            )
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Monte Carlo over instances


def _instance_metrics(config: ExperimentConfig, index: int) -> dict:
    """Simulate one instance and summarize it as plain JSON-able rows."""
    seed_i = seeds.instance_seed(config.seed, index)
    trace = simulate_run(
        config.model,
        config.dynamics,
        config.learners,
        seed_i,
        deciding=config.deciding,
        validate=False,
    )
    if config.dynamics.horizon == 0:
        rows = [
            {"run_id": index, "eta": config.dynamics.eta, "eta1": spec.eta1, "T": 0,
             "learner": spec.name, "loss_LT": 0.0, "n_blocks": 0, "mean_tau_minus_tk": 0.0}
            for spec in config.learners
        ]
        for row in rows:
            if row["learner"] == config.deciding:
                row["regret"] = 0.0
        return {"instance": index, "rows": rows}
    report = build_metrics_report(trace, lipschitz_k=config.lipschitz, learner=config.deciding)
    rows = []
    for spec in config.learners:
        row = {
            "run_id": index,
            "eta": config.dynamics.eta,
            "eta1": spec.eta1,
            "T": config.dynamics.horizon,
            "learner": spec.name,
            "n_blocks": int(report.blocks.count),
            "mean_tau_minus_tk": float(np.mean(report.taus - report.blocks.starts)),
        }
        if spec.kind in BAYES_KINDS:
            row["loss_LT"] = loss_LT(trace, spec.name)
            if spec.kind == "imperfect":
                row["imperfect_loss"] = row["loss_LT"]
            if spec.name == config.deciding:
                row["regret"] = report.regret
        else:
            diff = trace.est_plain - trace.quality
            row["loss_LT"] = float(np.sqrt((diff**2).sum(axis=1)).sum())
            row["eta1"] = spec.eta1 if spec.eta1 is not None else (
                math.sqrt(config.dynamics.eta) if config.dynamics.eta > 0 else 0.5
            )
        rows.append(row)
    return {"instance": index, "rows": rows}


def _instance_worker(args):
    config, index = args
    return _instance_metrics(config, index)


@dataclass
class MonteCarloResult:
    table: ResultTable
    metrics_rows: list[dict]


def run_monte_carlo(config: ExperimentConfig, out_dir=None) -> MonteCarloResult:
    """Run all instances, aggregate in index order, persist, and tabulate.

    With an output directory, per-instance summaries land in
    ``instances/instance_<i>.json`` and are reused on re-runs; traces are
    written per instance when requested.  Results are identical for any
    worker count.
    """
    validate_model(config.model)
    out = Path(out_dir) if out_dir is not None else None
    inst_dir = None
    if out is not None:
        inst_dir = out / "instances"
        inst_dir.mkdir(parents=True, exist_ok=True)

    indices = [config.instance_offset + i for i in range(config.instances)]
    results: dict[int, dict] = {}
    todo = []
    for idx in indices:
        path = inst_dir / f"instance_{idx}.json" if inst_dir is not None else None
        if path is not None and path.exists():
            results[idx] = json.loads(path.read_text())
        else:
            todo.append(idx)

    if todo and config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for res in pool.map(_instance_worker, [(config, i) for i in todo], chunksize=1):
                results[res["instance"]] = res
    else:
        for idx in todo:
            results[idx] = _instance_metrics(config, idx)

    for idx in indices:
        if inst_dir is not None:
            path = inst_dir / f"instance_{idx}.json"
            if not path.exists():
                path.write_text(json.dumps(results[idx], sort_keys=True))
        if out is not None and config.save_traces and idx in set(todo):
            seed_i = seeds.instance_seed(config.seed, idx)
            trace = simulate_run(
                config.model, config.dynamics, config.learners, seed_i,
                deciding=config.deciding, validate=False,
            )
            write_trace_csv(trace, out / f"trace_{idx}.csv")

    metrics_rows = [row for idx in indices for row in results[idx]["rows"]]
    table_rows = []
    for spec in config.learners:
        vals = [r["loss_LT"] for r in metrics_rows if r["learner"] == spec.name]
        m, se = mean_se(vals)
        eta1 = next((r["eta1"] for r in metrics_rows if r["learner"] == spec.name), None)
        table_rows.append(
            ResultRow(config.dynamics.eta, eta1, spec.name, "loss_LT", m, se, len(vals))
        )
    reg = [r["regret"] for r in metrics_rows if r.get("regret") is not None]
    if reg:
        m, se = mean_se(reg)
        table_rows.append(ResultRow(config.dynamics.eta, None, config.deciding, "regret", m, se, len(reg)))
    return MonteCarloResult(table=ResultTable(table_rows), metrics_rows=metrics_rows)


# ---------------------------------------------------------------------------
# Estimator tuning reproduction (discounted feedback distribution tracking)


def reproduce_eta1_table(
    instances: int,
    horizon: int = 100_000,
    *,
    eta: float = 1e-4,
    eta1_list=None,
    seed: int = 0,
    workers: int = 1,
    theta_std: float = 1.0,
    eps_std: float = 1.0,
    price: float = 0.0,
    pinned_mean: float = 1.0,
) -> tuple[ResultTable, TrackingResult]:
    """Tracking error of the discounted estimator for a list of discounts.

    Market: quality uniform on [0, 1] redrawn at rate eta, reward Q + theta,
    sign feedback on Q + theta + eps, Gaussian heterogeneity and noise, and
    the buyer population pinned to a fixed posterior mean.  The reported
    error is sum_t sqrt(mean_instances ||L^{eta1}_t - psi_bar_{t,eta1}(Q_t)||^2)
    over the purchase symbols.
    """
    if instances < 1:
        raise ConfigError("instances must be >= 1")
    if eta1_list is None:
        eta1_list = tuple(eta**p for p in CANONICAL_ETA1_EXPONENTS)
    tracking = run_tracking_batch(
        eta,
        eta1_list,
        horizon,
        instances,
        seed,
        theta_m=Marginal("normal", 0.0, theta_std),
        eps_m=Marginal("normal", 0.0, eps_std),
        price=price,
        threshold=price,
        pinned_mean=pinned_mean,
        workers=workers,
    )
    rows = [
        ResultRow(eta, e1, "estimator", "tracking_error", tracking.error_total(e1), 0.0, instances)
        for e1 in tracking.eta1_list
    ]
    return ResultTable(rows), tracking


# ---------------------------------------------------------------------------
# Rate fitting and the change-rate sweep


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float


def rate_fit(points) -> RateFit:
    """Ordinary least squares in log-log coordinates over (t, error) points."""
    pts = [(float(t), float(e)) for t, e in points]
    if len(pts) < 3:
        raise ConfigError("rate_fit needs at least 3 points")
    if any(t <= 0 or e <= 0 for t, e in pts):
        raise ConfigError("rate_fit needs positive coordinates")
    x = np.log([t for t, _ in pts])
    y = np.log([e for _, e in pts])
    slope, intercept = np.polyfit(x, y, 1)
    return RateFit(slope=float(slope), intercept=float(intercept))


def sweep_eta(config: ExperimentConfig, eta_list=None) -> ResultTable:
    """Normalized losses loss / (eta T ln(1/eta)) across change rates.

    eta T >= 1 is enforced per rate; the horizon per eta comes from
    experiment.eta_t_product when set, else dynamics.horizon.
    """
    eta_list = tuple(eta_list if eta_list is not None else (config.eta_list or ()))
    if not eta_list:
        raise ConfigError("sweep needs experiment.eta_list or an explicit eta list")
    validate_model(config.model)
    rows = []
    for eta in eta_list:
        if config.eta_t_product is not None:
            T = int(round(config.eta_t_product / eta))
        else:
            T = config.dynamics.horizon
        if eta * T < 1.0:
            raise ConfigError(f"eta*T must be >= 1 (got eta={eta}, T={T})")
        dyn = DynamicsSpec(eta=eta, horizon=T)
        norm = eta * T * math.log(1.0 / eta)
        try:
            batch = run_binary_batch(config.model, dyn, config.instances, config.seed,
                                     instance_offset=config.instance_offset)
            losses = batch.loss
        except UnsupportedModelError:
            losses = []
            for i in range(config.instances):
                seed_i = seeds.instance_seed(config.seed, config.instance_offset + i)
                trace = simulate_run(config.model, dyn, config.learners, seed_i,
                                     deciding=config.deciding, validate=False)
                losses.append(loss_LT(trace, config.deciding))
            losses = np.asarray(losses)
        m, se = mean_se(np.asarray(losses) / norm)
        rows.append(ResultRow(eta, None, config.deciding, "normalized_loss", m, se, config.instances))
    return ResultTable(rows)


# ---------------------------------------------------------------------------
# Model factories shared by tests, demos and the CLI


def binary_gaussian_model(theta_std: float = 1.0, eps_std: float = 0.5, price: float = 0.5,
                          q_low: float = 0.0, q_high: float = 1.0) -> ModelSpec:
    """The canonical two-quality additive market with Gaussian consumers."""
    return ModelSpec(
        quality=QualitySpace.discrete([q_low, q_high]),
        reward=RewardSpec("additive", price=price),
        feedback=FeedbackSpec("sign", thresholds=(price,)),
        theta=DistributionSpec.normal(0.0, theta_std),
        epsilon=DistributionSpec.normal(0.0, eps_std),
    )


def interval_gaussian_model(grid: int = 129, theta_std: float = 1.0, eps_std: float = 1.0,
                            price: float = 0.0) -> ModelSpec:
    """Quality uniform on [0, 1] with a grid posterior; the classical
    one-dimensional additive sign-feedback market."""
    return ModelSpec(
        quality=QualitySpace.hypercube([0.0], [1.0], grid),
        reward=RewardSpec("additive", price=price),
        feedback=FeedbackSpec("sign", thresholds=(price,)),
        theta=DistributionSpec.normal(0.0, theta_std),
        epsilon=DistributionSpec.normal(0.0, eps_std),
    )
