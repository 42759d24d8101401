import argparse
import logging
import os
import sys
import time
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from errors import HptError, VerificationFailure
from gevp_solver import HPT_VALIDATION_THRESHOLD, layer_residual
from models import BenchRow, CheckResult, CliConfig
from plan_io import deserialize, read_coefficients, serialize, write_coefficients
from skeleton_plan import (
    CoefficientBlock,
    TransformPlan,
    all_givens_transform,
    build_plan,
    cost_report,
    decomposition_count,
    execute,
    fit_growth,
    precompute,
)
from util import _args_to_config, error_response, format_error, relative_error, report

logger = logging.getLogger(__name__)

HPT_LOG_LEVEL = os.getenv("HPT_LOG_LEVEL", "WARNING")
HPT_THREADS = int(os.getenv("HPT_THREADS", str(os.cpu_count() or 1)))

ROUND_TRIP_TOLERANCE = 1e-9
ROUTE_TOLERANCE = 1e-9
NORM_TOLERANCE = 1e-10
ROUTE_CHECK_LIMIT = 128

# growth exponents of the direct backend with dense node payloads
PREDICTED_PRECOMPUTE_SLOPE = 3.0
PREDICTED_EXECUTE_SLOPE = 3.0


def _direction(config: CliConfig) -> str:
    return config.direction.replace("-", "_")


def _load_or_build(config: CliConfig) -> TransformPlan:
    if config.plan:
        return deserialize(config.plan)
    plan = build_plan(config.geometry, config.degree, config.block)
    return precompute(plan, threads=config.threads)


def cmd_plan(config: CliConfig) -> str:
    started = time.perf_counter()
    plan = precompute(build_plan(config.geometry, config.degree, config.block), threads=config.threads)
    size = serialize(plan, config.output)
    cost = cost_report(plan)
    pairs = {
        "kind": cost.kind,
        "degree": cost.degree,
        "block": cost.block,
        "decompositions": cost.decompositions,
        "decompositions_per_family": cost.decompositions_per_family,
        "givens_rotations": cost.givens_rotations,
        "all_givens_rotations": cost.all_givens_rotations,
        "storage_bytes": cost.storage_bytes,
        "max_path_length": cost.max_path_length,
        "path_bound": cost.path_bound,
        "file_bytes": size,
        "seconds": time.perf_counter() - started,
        "output": config.output,
    }
    rows = [node.model_dump() for node in cost.nodes]
    return report(pairs, rows, ["level", "family", "source_base", "target_base", "section", "buffer", "storage_bytes", "precompute_seconds", "residual", "condition"])


def cmd_apply(config: CliConfig) -> str:
    plan = deserialize(config.plan)
    direction = _direction(config)
    coeffs = read_coefficients(config.input, plan.kind, "native" if direction == "to_base" else "base", degree=plan.degree)
    started = time.perf_counter()
    result = execute(plan, coeffs, direction, threads=config.threads)
    write_coefficients(result, config.output)
    return report({
        "direction": direction,
        "degree": plan.degree,
        "input_norm": float(np.linalg.norm(coeffs.values)),
        "output_norm": float(np.linalg.norm(result.values)),
        "seconds": time.perf_counter() - started,
        "output": config.output,
    })


def _verify_checks(plan: TransformPlan, config: CliConfig) -> List[CheckResult]:
    checks: List[CheckResult] = []

    def check(name: str, value: float, threshold: float) -> None:
        checks.append(CheckResult(name=name, value=value, threshold=threshold, passed=bool(value <= threshold)))

    cost = cost_report(plan)
    expected = decomposition_count(plan.kind, plan.degree, plan.block)
    check("structure.decomposition_count", abs(cost.decompositions - expected), 0)
    check("structure.path_length", max(cost.max_path_length - cost.path_bound, 0), 0)

    x = CoefficientBlock.random(plan.kind, plan.degree, config.seed)
    forward = execute(plan, x, "to_base", threads=config.threads)
    back = execute(plan, forward, "from_base", threads=config.threads)
    check("round_trip", relative_error(back.values, x.values), ROUND_TRIP_TOLERANCE)
    if config.depth == "quick":
        return checks

    check("norm_preservation", abs(np.linalg.norm(forward.values) / np.linalg.norm(x.values) - 1), NORM_TOLERANCE)
    for node in plan.nodes:
        dec = node.decomposition
        U = dec.U
        arrow = f"{node.family}.{node.source_base}->{node.target_base}"
        # loaded plans carry no residual; recompute from the pencil
        residual, spectrum = layer_residual(plan.kind, dec)
        check(f"orthogonality.{arrow}", float(np.max(np.abs(U.T @ U - np.eye(U.shape[1])))), HPT_VALIDATION_THRESHOLD)
        check(f"residual.{arrow}", residual, HPT_VALIDATION_THRESHOLD)
        check(f"spectrum.{arrow}", spectrum, HPT_VALIDATION_THRESHOLD)
    if plan.degree <= ROUTE_CHECK_LIMIT:
        reference = all_givens_transform(plan.kind, x)
        check("route_equivalence", relative_error(forward.values, reference.values), ROUTE_TOLERANCE)
    return checks


def cmd_verify(config: CliConfig) -> str:
    plan = _load_or_build(config)
    checks = _verify_checks(plan, config)
    failed = [c.name for c in checks if not c.passed]
    pairs: Dict[str, object] = {"kind": plan.kind.kind, "degree": plan.degree, "block": plan.block, "depth": config.depth}
    for c in checks:
        pairs[f"check.{c.name}"] = c.value
    pairs["passed"] = not failed
    text = report(pairs, [c.model_dump() for c in checks], ["name", "value", "threshold", "passed"])
    if failed:
        raise VerificationFailure(f"{len(failed)} check(s) failed: {', '.join(failed)}\n{text}")
    return text


def cmd_bench(config: CliConfig) -> str:
    sweep = config.sweep or [config.degree]
    rows: List[BenchRow] = []
    for n in sweep:
        started = time.perf_counter()
        plan = precompute(build_plan(config.geometry, n, config.block), threads=config.threads)
        precompute_seconds = time.perf_counter() - started
        x = CoefficientBlock.random(config.geometry, n, config.seed)
        started = time.perf_counter()
        execute(plan, x, "to_base", threads=config.threads)
        rows.append(BenchRow(
            degree=n,
            block=plan.block,
            decompositions=len(plan.nodes),
            precompute_seconds=precompute_seconds,
            execute_seconds=time.perf_counter() - started,
        ))
    pairs: Dict[str, object] = {"kind": config.geometry.kind, "sizes": [r.degree for r in rows]}
    if len(rows) >= 2:
        ns = [r.degree for r in rows]
        for label, values, predicted in (
            ("precompute", [r.precompute_seconds for r in rows], PREDICTED_PRECOMPUTE_SLOPE),
            ("execute", [r.execute_seconds for r in rows], PREDICTED_EXECUTE_SLOPE),
        ):
            fit = fit_growth(ns, values)
            pairs[f"{label}_slope"] = fit.slope
            pairs[f"{label}_slope_ci"] = [fit.low, fit.high]
            pairs[f"{label}_predicted_slope"] = predicted
    return report(pairs, [r.model_dump() for r in rows], ["degree", "block", "decompositions", "precompute_seconds", "execute_seconds"])


COMMANDS: Dict[str, Callable[[CliConfig], str]] = {
    "plan": cmd_plan,
    "apply": cmd_apply,
    "verify": cmd_verify,
    "bench": cmd_bench,
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hpt", description="Fast connection transforms for harmonic polynomial expansions.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def geometry(p: argparse.ArgumentParser) -> None:
        p.add_argument("--kind", choices=["sphere", "disk", "triangle"])
        p.add_argument("--alpha", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--gamma", type=float)
        p.add_argument("--degree", type=int)
        p.add_argument("--block")
        p.add_argument("--threads", type=int, default=HPT_THREADS)

    p = sub.add_parser("plan")
    geometry(p)
    p.add_argument("--out", dest="output")

    p = sub.add_parser("apply")
    p.add_argument("--plan")
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--direction", choices=["to-base", "from-base"], default="to-base")
    p.add_argument("--threads", type=int, default=HPT_THREADS)

    p = sub.add_parser("verify")
    geometry(p)
    p.add_argument("--plan")
    p.add_argument("--depth", choices=["quick", "full"], default="full")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("bench")
    geometry(p)
    p.add_argument("--sweep")
    p.add_argument("--seed", type=int)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else HPT_LOG_LEVEL,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = _args_to_config(vars(args))
        print(COMMANDS[config.command](config))
        return 0
    except Exception as exc:
        if not isinstance(exc, (HptError, OSError)):
            logger.exception("unexpected failure")
        print(format_error(error_response(exc)), file=sys.stderr)
        return exc.exit_code if isinstance(exc, HptError) else 2


if __name__ == "__main__":
    sys.exit(main())
