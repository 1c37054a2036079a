"""Command-line interface.

Exit codes: 0 success, 2 validation error, 3 planning error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from .collisions import CollisionParams, QpuLayout, default_layout, wafer_collision_map, zero_spread_assessment
from .dose import DoseResponseModel
from .errors import EbtuneError, PlanningError, ValidationError
from .physics import Physics
from .planner import SCHEMA_VERSION, CampaignConfig, Strategy, TunePlan, plan_round
from .reports import emit_reports
from .simulate import WaferSpec, apply_plan, generate_wafer, run_campaign
from .wafer import group_by_design, normalized_spread_stats, parse_wafer, serialize_wafer, spread_stats

EXIT_OK, EXIT_VALIDATION, EXIT_PLANNING, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("ebtune")


def _load_json(path: str | None) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None


def _wafer_format(path: str) -> str:
    return "csv" if path.lower().endswith(".csv") else "json"


def _load_wafer(path: str):
    return parse_wafer(Path(path).read_bytes(), _wafer_format(path), groups=None)


def _write(path: str, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, indent=2, allow_nan=False) + "\n")


def _physics(path: str | None, fallback: dict | None = None) -> Physics:
    data = _load_json(path) if path else (fallback or {})
    return Physics.from_dict(data)


def _layout(path: str | None, fallback: dict | None = None) -> QpuLayout:
    data = _load_json(path) if path else fallback
    return QpuLayout.from_dict(data) if data else default_layout()


def _params(path: str | None, fallback: dict | None = None) -> CollisionParams:
    data = _load_json(path) if path else fallback
    return CollisionParams.from_dict(data) if data else CollisionParams()


def _model(path: str | None, fallback: dict | None = None) -> DoseResponseModel:
    data = _load_json(path) if path else fallback
    return DoseResponseModel.from_dict(data) if data else DoseResponseModel()


def cmd_gen(args) -> int:
    spec = WaferSpec.from_dict(_load_json(args.spec))
    wafer = generate_wafer(spec, _physics(args.physics))
    _write(args.out, serialize_wafer(wafer, _wafer_format(args.out)))
    print(f"wrote {len(wafer)} junctions to {args.out} (seed {spec.seed})", file=sys.stderr)
    return EXIT_OK


def cmd_stats(args) -> int:
    wafer = _load_wafer(args.wafer)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "wafer_id": wafer.wafer_id,
        "overall": normalized_spread_stats(wafer.junctions).to_dict(),
    }
    if args.by_group:
        payload["by_group"] = {
            str(g): spread_stats(members).to_dict() for g, members in group_by_design(wafer).items()
        }
    _emit(payload)
    return EXIT_OK


def cmd_collisions(args) -> int:
    wafer = _load_wafer(args.wafer)
    cmap = wafer_collision_map(
        wafer, _layout(args.layout), _params(args.params), _physics(args.physics), workers=args.workers
    )
    payload = cmap.to_dict()
    if args.include_s1:
        for entry, rep in zip(payload["dies"], cmap.reports.values()):
            entry["total_including_s1"] = rep.total
        counts = Counter(rep.total for rep in cmap.reports.values())
        payload["histogram_including_s1"] = {str(k): counts[k] for k in sorted(counts)}
    _emit(payload)
    return EXIT_OK


def _campaign_config(path: str | None) -> tuple[CampaignConfig, dict]:
    data = _load_json(path)
    return CampaignConfig.from_dict(data), data


def cmd_plan(args) -> int:
    wafer = _load_wafer(args.wafer)
    cfg, raw = _campaign_config(args.config)
    cfg = CampaignConfig.from_dict({**cfg.to_dict(), "strategy": Strategy.parse(args.strategy).value})
    plan = plan_round(
        wafer,
        cfg,
        _model(args.dose_model, raw.get("dose_model")),
        _layout(args.layout, raw.get("layout")),
        _params(args.params, raw.get("collision_params")),
        _physics(args.physics, raw.get("physics")),
        round_index=args.round,
        rounds_remaining=args.rounds_remaining,
    )
    _write(args.out, plan.to_json())
    print(f"planned {len(plan.entries)} junctions ({len(plan.partially_tunable)} partially tunable)",
          file=sys.stderr)
    return EXIT_OK


def cmd_apply(args) -> int:
    wafer = _load_wafer(args.wafer)
    plan = TunePlan.from_dict(_load_json(args.plan))
    tuned = apply_plan(wafer, plan, _model(args.dose_model), args.seed)
    _write(args.out, serialize_wafer(tuned, _wafer_format(args.out)))
    print(f"applied round {plan.round_index} with seed {args.seed}", file=sys.stderr)
    return EXIT_OK


def cmd_campaign(args) -> int:
    cfg, raw = _campaign_config(args.config)
    if args.workers is not None:
        cfg = CampaignConfig.from_dict({**cfg.to_dict(), "workers": args.workers})
    physics = _physics(args.physics, raw.get("physics"))
    layout = None
    if args.layout or raw.get("layout"):
        layout = _layout(args.layout, raw.get("layout"))
    if args.spec:
        source = WaferSpec.from_dict(_load_json(args.spec))
    else:
        source = _load_wafer(args.wafer)
    report, _, _ = run_campaign(
        source,
        cfg,
        _model(args.dose_model, raw.get("dose_model")),
        _params(args.params, raw.get("collision_params")),
        layout,
        physics,
    )
    emit_reports(report, args.out_dir)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "seed": report.seed,
        "rounds_run": report.rounds_run,
        "sigma_percent_initial": report.initial.sigma_percent,
        "sigma_percent_final": report.final.sigma_percent,
        "yield_delta_percent": report.yield_delta,
        "out_dir": str(args.out_dir),
    }
    _emit(summary)
    return EXIT_OK


def cmd_zero_spread(args) -> int:
    report = zero_spread_assessment(_layout(args.layout), _params(args.params))
    _emit({"schema_version": SCHEMA_VERSION, **report.to_dict()})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ebtune", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic as-fabricated wafer")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--physics")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("stats", help="spread and yield statistics")
    p.add_argument("--wafer", required=True)
    p.add_argument("--by-group", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("collisions", help="per-die frequency collisions")
    p.add_argument("--wafer", required=True)
    p.add_argument("--layout")
    p.add_argument("--params")
    p.add_argument("--physics")
    p.add_argument("--include-s1", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_collisions)

    p = sub.add_parser("plan", help="plan one tuning round")
    p.add_argument("--wafer", required=True)
    p.add_argument("--strategy", required=True, choices=["ensemble", "targeted", "collision-aware"])
    p.add_argument("--dose-model")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--layout")
    p.add_argument("--params", "--collision-params", dest="params")
    p.add_argument("--physics")
    p.add_argument("--round", type=int)
    p.add_argument("--rounds-remaining", type=int, default=1)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("apply", help="simulate annealing a plan onto a wafer")
    p.add_argument("--wafer", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--dose-model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("campaign", help="run a multi-round campaign and write reports")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec")
    src.add_argument("--wafer")
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dose-model")
    p.add_argument("--params", "--collision-params", dest="params")
    p.add_argument("--layout")
    p.add_argument("--physics")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("zero-spread", help="collisions with every qubit on target")
    p.add_argument("--layout")
    p.add_argument("--params", "--collision-params", dest="params")
    p.set_defaults(func=cmd_zero_spread)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PlanningError as exc:
        print(f"planning error: {exc}", file=sys.stderr)
        return EXIT_PLANNING
    except (ValueError, KeyError, TypeError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except EbtuneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
