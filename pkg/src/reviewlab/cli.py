"""Command-line front door: simulate | bounds | sweep-eta | reproduce-eta1 | blocks.

Human-readable summaries go to stdout; machine-readable CSV goes to files
under --out.  Exit codes: 0 success, 2 configuration/assumption failure,
1 runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import seeds
from .dynamics import DynamicsSpec, simulate_run
from .errors import ConfigError, UnsupportedModelError
from .harness import (
    ExperimentConfig,
    build_config,
    parse_config_text,
    reproduce_eta1_table,
    run_monte_carlo,
    sweep_eta,
)
from .lockstep import run_binary_batch
from .metrics import (
    block_decompose,
    delta_gamma,
    mean_se,
    stationary_bound_curve,
    tau_times,
    write_metrics_csv,
)
from .model import validate_model

__all__ = ["dispatch", "main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reviewlab",
        description="Social learning from consumer reviews: simulations and bound audits.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="override experiment.seed")
        p.add_argument("--out", default="reviewlab-out", help="output directory")
        p.add_argument(
            "--workers",
            type=int,
            default=int(os.environ.get("REVIEWLAB_WORKERS", "1")),
            help="worker processes (default: REVIEWLAB_WORKERS or 1)",
        )
        p.add_argument("--eta", help="override dynamics.eta (comma list for sweep-eta)")
        p.add_argument("--eta1", help="override estimator discount(s), comma separated")
        p.add_argument("--horizon", type=int, help="override dynamics.horizon")
        p.add_argument("--instances", type=int, help="override experiment.instances")

    add_common(sub.add_parser("simulate", help="Monte Carlo runs with full metrics"))
    add_common(sub.add_parser("bounds", help="separation constants and the concentration bound curve"))
    add_common(sub.add_parser("sweep-eta", help="normalized losses across change rates"))
    add_common(sub.add_parser("reproduce-eta1", help="discounted-estimator tuning table"))
    add_common(sub.add_parser("blocks", help="constant-quality block statistics"))
    return parser


def _load(args: argparse.Namespace, parser: argparse.ArgumentParser) -> ExperimentConfig:
    if not args.config:
        parser.print_usage(sys.stderr)
        raise ConfigError("missing --config (a flat key=value file is required)")
    kv = parse_config_text(Path(args.config).read_text())
    if args.seed is not None:
        kv["experiment.seed"] = str(args.seed)
    if args.horizon is not None:
        kv["dynamics.horizon"] = str(args.horizon)
    if args.instances is not None:
        kv["experiment.instances"] = str(args.instances)
    if args.eta is not None and args.command != "sweep-eta":
        kv["dynamics.eta"] = args.eta
    if args.eta is not None and args.command == "sweep-eta":
        kv["experiment.eta_list"] = args.eta
    if args.eta1 is not None:
        if args.command == "reproduce-eta1":
            kv["experiment.eta1_list"] = args.eta1
        else:
            kv["learners.eta1"] = args.eta1
    kv["experiment.workers"] = str(args.workers)
    return build_config(kv)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_simulate(args, parser) -> int:
    config = _load(args, parser)
    out = _out_dir(args)
    result = run_monte_carlo(config, out_dir=out)
    result.table.to_csv(out / "results.csv")
    write_metrics_csv(result.metrics_rows, out / "metrics.csv")
    print(f"simulate: {config.instances} instance(s), T={config.dynamics.horizon}, "
          f"eta={config.dynamics.eta:g}")
    for row in result.table.rows:
        print(f"  {row.learner:12s} {row.metric:16s} mean={row.mean:.6g} se={row.se:.3g} n={row.n}")
    print(f"wrote {out / 'results.csv'} and {out / 'metrics.csv'}")
    return 0


def _cmd_bounds(args, parser) -> int:
    config = _load(args, parser)
    model = config.model
    if model.quality.size != 2:
        raise UnsupportedModelError("bounds needs a binary quality space")
    validate_model(model)
    out = _out_dir(args)
    stats = delta_gamma(model, model.quality.points[0], model.quality.points[1])
    t = np.arange(config.dynamics.horizon + 1)
    curve = stationary_bound_curve(stats, t)
    lines = ["t,bound,vacuous"]
    lines += [f"{int(ti)},{bi!r},{int(bi > 1.0)}" for ti, bi in zip(t, curve)]
    (out / "bound_curve.csv").write_text("\n".join(lines) + "\n")
    print(f"delta={stats.delta:.6g} gamma={stats.gamma:.6g} c={stats.c:.6g} "
          f"(coarse envelope delta={stats.delta_coarse:.6g} gamma={stats.gamma_coarse:.6g})")
    nonvac = np.flatnonzero(curve <= 1.0)
    if nonvac.size:
        print(f"bound becomes informative at t={int(nonvac[0])}")
    else:
        print(f"bound stays vacuous (> 1) up to t={int(t[-1])}")
    print(f"wrote {out / 'bound_curve.csv'}")
    return 0


def _cmd_sweep(args, parser) -> int:
    config = _load(args, parser)
    out = _out_dir(args)
    table = sweep_eta(config)
    table.to_csv(out / "results.csv")
    vals = [row.mean for row in table.rows]
    print("sweep-eta: loss / (eta T ln(1/eta))")
    for row in table.rows:
        print(f"  eta={row.eta:<10g} mean={row.mean:.6g} se={row.se:.3g} n={row.n}")
    if min(vals) > 0:
        print(f"max/min ratio: {max(vals) / min(vals):.3f}")
    print(f"wrote {out / 'results.csv'}")
    return 0


def _cmd_reproduce(args, parser) -> int:
    config = _load(args, parser)
    for marg, name in ((config.model.theta.marginals[0], "model.theta"),
                       (config.model.epsilon.marginals[0], "model.epsilon")):
        if marg.kind != "normal":
            raise UnsupportedModelError(f"reproduce-eta1 needs Gaussian {name}")
    out = _out_dir(args)
    table, _ = reproduce_eta1_table(
        config.instances,
        config.dynamics.horizon,
        eta=config.dynamics.eta,
        eta1_list=config.eta1_list,
        seed=config.seed,
        workers=config.workers,
        theta_std=config.model.theta.marginals[0].b,
        eps_std=config.model.epsilon.marginals[0].b,
        price=config.model.reward.price,
        pinned_mean=config.pinned_mean,
    )
    table.to_csv(out / "results.csv")
    print(f"reproduce-eta1: eta={config.dynamics.eta:g}, T={config.dynamics.horizon}, "
          f"{config.instances} instance(s)")
    for row in table.rows:
        print(f"  eta1={row.eta1:<12g} error={row.mean:.1f}")
    print(f"wrote {out / 'results.csv'}")
    return 0


def _cmd_blocks(args, parser) -> int:
    config = _load(args, parser)
    validate_model(config.model)
    out = _out_dir(args)
    eta = config.dynamics.eta
    rows = []
    taus_minus = []
    lengths = []
    changes = 0
    try:
        batch = run_binary_batch(
            config.model, config.dynamics, config.instances, config.seed,
            record_series=True, instance_offset=config.instance_offset,
        )
        for i in range(config.instances):
            blocks = block_decompose(batch.quality_idx[i])
            taus = tau_times(batch.pi_true[i].astype(float), blocks)
            for k in range(blocks.count):
                rows.append((i, k + 1, int(blocks.starts[k]), int(blocks.lengths[k]),
                             int(taus[k] - blocks.starts[k])))
            lengths.extend(blocks.lengths.tolist())
            taus_minus.extend((taus - blocks.starts).tolist())
        changes = float(batch.value_changes.sum())
    except UnsupportedModelError:
        for i in range(config.instances):
            seed_i = seeds.instance_seed(config.seed, config.instance_offset + i)
            trace = simulate_run(config.model, config.dynamics, config.learners, seed_i,
                                 deciding=config.deciding, validate=False)
            blocks = block_decompose(trace.quality)
            taus = tau_times(trace.post_true[config.deciding], blocks)
            for k in range(blocks.count):
                rows.append((i, k + 1, int(blocks.starts[k]), int(blocks.lengths[k]),
                             int(taus[k] - blocks.starts[k])))
            lengths.extend(blocks.lengths.tolist())
            taus_minus.extend((taus - blocks.starts).tolist())
            changes += blocks.count - 1
    lines = ["run_id,k,t_k,length,tau_minus_tk"]
    lines += [",".join(str(v) for v in row) for row in rows]
    (out / "blocks.csv").write_text("\n".join(lines) + "\n")
    mlen, selen = mean_se(lengths)
    mtau, _ = mean_se(taus_minus)
    T = config.dynamics.horizon
    print(f"blocks: {len(lengths)} block(s) over {config.instances} run(s), T={T}, eta={eta:g}")
    print(f"  mean block length {mlen:.1f} (se {selen:.1f}; 2/eta = {2 / eta:.1f})" if eta > 0
          else f"  mean block length {mlen:.1f} (stationary)")
    if T > 1 and config.instances > 0:
        print(f"  effective change rate {changes / (config.instances * (T - 1)):.6g} "
              f"(redraw rate eta/2 = {eta / 2:g})")
    print(f"  mean tau_k - t_k = {mtau:.2f}")
    print(f"wrote {out / 'blocks.csv'}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "bounds": _cmd_bounds,
    "sweep-eta": _cmd_sweep,
    "reproduce-eta1": _cmd_reproduce,
    "blocks": _cmd_blocks,
}


def dispatch(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage/help
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args, parser)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
