from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

from keeprate.core import KeepingSchedule
from keeprate.cost_model import schedule_cost
from keeprate.errors import KeeprateError
from keeprate.io import (
    atomic_write_text,
    build_meta,
    dumps_csv,
    dumps_json,
    load_dims,
    load_json,
    load_schedule,
    load_trace,
    resolve_input,
    schedule_payload,
)
from keeprate.rank_stats import tau_matrix, tau_series
from keeprate.reduction_sim import OracleEvaluator, SyntheticOracle, generate_trace, run_reduction
from keeprate.search import (
    BoConfig,
    GSearchConfig,
    PSigmoidParams,
    achieved_budget,
    default_rate_grid,
    fit_psigmoid,
    k_search,
    run_g_search,
    schedule_from_params,
)
from keeprate.search.g_search import AUTO, EXHAUSTIVE_GRID_LIMIT
from keeprate.search.p_sigmoid import K_MAX

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2
DEFAULT_OUT = "keeprate-out"
DEFAULT_LAYERS = 32


@dataclass(slots=True)
class RunConfig:
    subcommand: str
    seed: int
    out: Path
    options: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> RunConfig:
        options = {
            key: (str(value) if isinstance(value, Path) else value)
            for key, value in sorted(vars(args).items())
            if key not in {"handler", "out", "seed", "subcommand"}
        }
        return cls(subcommand=args.subcommand, seed=args.seed, out=Path(args.out), options=options)

    def meta(self) -> dict[str, Any]:
        return build_meta({"subcommand": self.subcommand, **self.options}, self.seed)

    def write(self, name: str, text: str) -> Path:
        return atomic_write_text(self.out / name, text)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_non_negative_int, default=0, help="seed for every random choice")
    common.add_argument("--out", default=DEFAULT_OUT, help="output directory")

    parser = _Parser(prog="keeprate", description="Layerwise vision-token keeping-rate schedules.")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    gsearch = sub.add_parser("gsearch", parents=[common], help="greedy per-layer schedule search on an oracle")
    gsearch.add_argument("--oracle", required=True, help="oracle spec JSON")
    gsearch.add_argument("--layers", type=_positive_int, help="layer count (must match the oracle)")
    gsearch.add_argument("--grid", type=_positive_int, default=21, help="number of rate grid points in [0, 1]")
    gsearch.add_argument("--stride", type=_positive_int, default=3)
    gsearch.add_argument("--lambda", dest="lam", type=float, default=0.01, help="rate penalty")
    gsearch.add_argument("--bo-iters", type=_non_negative_int, help="force BO per layer with this many iterations")
    gsearch.set_defaults(handler=_cmd_gsearch)

    psigmoid = sub.add_parser("psigmoid", parents=[common], help="evaluate or search a P-Sigmoid schedule")
    psigmoid.add_argument("--budget", type=float, required=True, help="budget b in (0, 1]")
    mode = psigmoid.add_mutually_exclusive_group(required=True)
    mode.add_argument("--k", type=float, help="steepness to evaluate")
    mode.add_argument("--search-k", action="store_true", help="search k with BO against --oracle")
    psigmoid.add_argument("--layers", type=_positive_int, help=f"layer count (default {DEFAULT_LAYERS} or the oracle's)")
    psigmoid.add_argument("--oracle", help="oracle spec JSON")
    psigmoid.add_argument("--bo-iters", type=_non_negative_int, default=15)
    psigmoid.add_argument("--dims", help="model dims JSON or preset name; adds a cost summary")
    psigmoid.set_defaults(handler=_cmd_psigmoid)

    cost = sub.add_parser("cost", parents=[common], help="FLOPs and memory of a schedule")
    cost.add_argument("--dims", default="llava7b", help="model dims JSON or preset name")
    cost.add_argument("--schedule", required=True, help="schedule JSON or preset name")
    cost.set_defaults(handler=_cmd_cost)

    tau = sub.add_parser("tau", parents=[common], help="Kendall's tau between layer rankings of a trace")
    tau.add_argument("--trace", required=True, help="attention trace JSON")
    tau.add_argument("--matrix", action="store_true", help="also write the all-pairs matrix")
    tau.set_defaults(handler=_cmd_tau)

    simulate = sub.add_parser("simulate", parents=[common], help="run Sort & Reduce on an oracle trace")
    simulate.add_argument("--oracle", required=True, help="oracle spec JSON")
    simulate.add_argument("--schedule", help="schedule JSON (default: keep everything)")
    simulate.set_defaults(handler=_cmd_simulate)

    fit = sub.add_parser("fit", parents=[common], help="least-squares P-Sigmoid fit of a schedule")
    fit.add_argument("--schedule", required=True, help="schedule JSON")
    fit.set_defaults(handler=_cmd_fit)

    return parser


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    config = RunConfig.from_args(args)
    handler: Callable[[RunConfig], None] = args.handler
    try:
        handler(config)
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        logger.error("I/O error: %s", exc)
        print(f"keeprate: {exc}", file=sys.stderr)
        return EXIT_IO
    except (KeeprateError, ValueError) as exc:
        logger.error("Invalid input: %s", exc)
        print(f"keeprate: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def _cmd_gsearch(config: RunConfig) -> None:
    opts = config.options
    oracle = _load_oracle(opts["oracle"])
    num_layers = _oracle_layers(oracle, opts.get("layers"))
    bo: BoConfig | str = AUTO
    if opts.get("bo_iters") is not None:
        bo = BoConfig(num_iterations=opts["bo_iters"], rng_seed=config.seed)
    elif opts["grid"] > EXHAUSTIVE_GRID_LIMIT:
        bo = BoConfig(rng_seed=config.seed)

    search = GSearchConfig(
        lam=opts["lam"],
        stride=opts["stride"],
        rate_grid=default_rate_grid(opts["grid"]),
        bo=bo,
    )
    result = run_g_search(OracleEvaluator(oracle), num_layers, search)
    meta = config.meta()
    score = OracleEvaluator(oracle)(result.schedule)
    config.write("schedule.json", dumps_json(schedule_payload(result.schedule, meta, score=score)))
    config.write(
        "gsearch_audit.csv",
        dumps_csv(["layer", "candidate_rate", "E", "f"], result.csv_rows(), meta),
    )


def _cmd_psigmoid(config: RunConfig) -> None:
    opts = config.options
    oracle = _load_oracle(opts["oracle"]) if opts.get("oracle") else None
    if opts["search_k"] and oracle is None:
        raise KeeprateError("--search-k needs --oracle")
    num_layers = _oracle_layers(oracle, opts.get("layers")) if oracle else opts.get("layers") or DEFAULT_LAYERS

    if opts["search_k"]:
        bo = BoConfig(num_iterations=opts["bo_iters"], rng_seed=config.seed)
        found = k_search(OracleEvaluator(oracle), opts["budget"], num_layers, bo, k_max=K_MAX)
        params = found.params
    else:
        params = PSigmoidParams(opts["budget"], opts["k"], num_layers)
    schedule = schedule_from_params(params)

    extra: dict[str, Any] = {"params": params.to_dict(), "achieved_budget": achieved_budget(params)}
    if oracle is not None:
        extra["score"] = OracleEvaluator(oracle)(schedule)
    if opts.get("dims"):
        extra["cost"] = schedule_cost(schedule, load_dims(opts["dims"])).summary()

    meta = config.meta()
    config.write("schedule.json", dumps_json(schedule_payload(schedule, meta, **extra)))
    config.write(
        "psigmoid_rates.csv",
        dumps_csv(["layer", "rate"], list(enumerate(schedule.rates, start=1)), meta),
    )


def _cmd_cost(config: RunConfig) -> None:
    opts = config.options
    dims = load_dims(opts["dims"])
    report = schedule_cost(load_schedule(opts["schedule"]), dims)
    meta = config.meta()
    rows = [
        (layer, layer - 1, kept, macs, flops)
        for layer, (kept, macs, flops) in enumerate(
            zip(report.kept_tokens, report.per_layer_macs, report.per_layer_flops), start=1
        )
    ]
    config.write("cost.json", dumps_json({**report.summary(), "dims": dims.to_dict(), "meta": meta}))
    config.write("cost_layers.csv", dumps_csv(["layer", "index", "kept_tokens", "macs", "flops"], rows, meta))


def _cmd_tau(config: RunConfig) -> None:
    trace = load_trace(config.options["trace"])
    series = tau_series(trace)
    meta = config.meta()
    rows = [(f"{a}-{b}", value) for (a, b), value in zip(series.pairs(), series.values)]
    config.write("tau.csv", dumps_csv(["pair", "tau"], rows, meta))
    if config.options["matrix"]:
        matrix = tau_matrix(trace)
        header = ["layer"] + [str(layer) for layer in range(1, trace.layer_count + 1)]
        body = [[layer] + [float(v) for v in row] for layer, row in enumerate(matrix, start=1)]
        config.write("tau_matrix.csv", dumps_csv(header, body, meta))


def _cmd_simulate(config: RunConfig) -> None:
    opts = config.options
    oracle = _load_oracle(opts["oracle"])
    num_layers = oracle.num_layers
    schedule = load_schedule(opts["schedule"]) if opts.get("schedule") else KeepingSchedule.full(num_layers)
    run = run_reduction(oracle, schedule, num_layers)
    meta = config.meta()
    config.write("report.json", dumps_json({**run.report(), "oracle": oracle.to_spec(), "meta": meta}))
    config.write("trace.json", dumps_json({**generate_trace(oracle, num_layers).to_dict(), "meta": meta}))


def _cmd_fit(config: RunConfig) -> None:
    schedule = load_schedule(config.options["schedule"])
    fitted = fit_psigmoid(schedule, require_monotone=schedule.monotone)
    config.write("fit.json", dumps_json({**fitted.to_dict(), "meta": config.meta()}))


def _load_oracle(path: str) -> SyntheticOracle:
    return SyntheticOracle.from_spec(load_json(resolve_input(path)))


def _oracle_layers(oracle: SyntheticOracle, requested: int | None) -> int:
    if requested is not None and requested != oracle.num_layers:
        raise KeeprateError(f"--layers {requested} does not match the oracle's {oracle.num_layers} layers")
    return oracle.num_layers


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value
