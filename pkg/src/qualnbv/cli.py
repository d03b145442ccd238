"""Command-line entry point: single runs and planner x quality sweeps.

    qualnbv run --scene room --planner ours --d-star-m 4:5 --time-limit-s 120 --repeat 5
    qualnbv sweep --scene corridor-T --planners ours,closest,count --bands 1:2,4:5,8:9

Outputs (under --out):
    runs/<cell>-s<seed>/{mission.json, trajectory.csv, scores_round_*.csv}
    aggregate.json, aggregate.csv          (run)
    <cell>/..., comparison.json/.csv       (sweep)

Exit codes: 0 ok, 1 empty sweep matrix, 2 bad arguments or missing scene
file, 3 mission precondition failure (run) or some failed cells (sweep).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from qualnbv.metrics import PROBE_DISTANCES, MetricsReport, evaluate, mean_report
from qualnbv.mission import MissionConfig, MissionError, Planner, run_mission
from qualnbv.quality import QualityConfig
from qualnbv.scenes import SCENE_KINDS, GroundTruthScene, generate_scene, load_scene

log = logging.getLogger("qualnbv")

EXIT_OK, EXIT_EMPTY, EXIT_USAGE, EXIT_FAILED = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


@dataclass
class RunSpec:
    """Fully resolved description of one (scene, planner, quality) cell."""

    scene: str
    scene_params: dict
    planner: str
    z_star: float
    d_star: float
    eta: float
    band: tuple[float, float]
    alpha: float
    beta: float
    time_limit_s: float
    seed: int
    repeat: int

    @property
    def scene_name(self) -> str:
        return Path(self.scene).stem if _is_path(self.scene) else self.scene

    @property
    def cell(self) -> str:
        return f"{self.scene_name}_{self.planner}_d{self.band[0]:g}-{self.band[1]:g}"

    def quality(self) -> QualityConfig:
        return QualityConfig(self.z_star, self.d_star, self.eta)

    def mission_config(self, seed: int) -> MissionConfig:
        return MissionConfig(planner=Planner.parse(self.planner), time_limit=self.time_limit_s,
                             alpha=self.alpha, beta=self.beta, seed=seed)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["band"] = list(self.band)
        return d


def _is_path(scene: str) -> bool:
    return scene not in SCENE_KINDS


def parse_band(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI in metres, got {text!r}") from None
    if not 0 < lo < hi:
        raise argparse.ArgumentTypeError(f"need 0 < LO < HI, got {text!r}")
    return lo, hi


def parse_scene_params(items: list[str] | None) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise CliError(f"scene parameter {item!r} is not KEY=VALUE")
        try:
            out[key.replace("-", "_")] = float(value)
        except ValueError:
            raise CliError(f"scene parameter {item!r} needs a numeric value") from None
    return out


def resolve_quality(z_star=None, band=None, d_star_point=None) -> QualityConfig:
    given = [v is not None for v in (z_star, band, d_star_point)]
    if sum(given) != 1:
        raise CliError("give exactly one of --z-star, --d-star-m, --d-star-point-m")
    try:
        if z_star is not None:
            return QualityConfig.from_z_star(z_star)
        if band is not None:
            return QualityConfig.from_band(*band)
        return QualityConfig.from_d_star(d_star_point)
    except ValueError as e:
        raise CliError(str(e)) from None


def make_spec(scene: str, scene_params: dict, planner: str, q: QualityConfig, alpha: float,
              beta: float, time_limit: float, seed: int, repeat: int) -> RunSpec:
    try:
        planner = Planner.parse(planner).value
    except ValueError as e:
        raise CliError(str(e)) from None
    if repeat < 1:
        raise CliError("--repeat must be at least 1")
    if time_limit <= 0:
        raise CliError("--time-limit-s must be positive")
    if not (0 <= alpha <= 1 and 0 <= beta <= 1):
        raise CliError("--alpha and --beta must lie in [0, 1]")
    return RunSpec(scene, dict(sorted(scene_params.items())), planner, q.z_star, q.d_star, q.eta,
                   q.band, alpha, beta, time_limit, seed, repeat)


def load_ground_truth(scene: str, params: dict, fmt: str | None,
                      voxel_size: float) -> GroundTruthScene:
    """Procedural scene by kind, or a scene file. Raises CliError(2) when
    the file is missing or unreadable."""
    if not _is_path(scene):
        try:
            return generate_scene(scene, **params)
        except (TypeError, ValueError) as e:
            raise CliError(f"cannot build scene {scene!r}: {e}") from None
    path = Path(scene)
    if not path.is_file():
        raise CliError(f"scene file not found: {path}")
    try:
        return load_scene(path, fmt, voxel_size=voxel_size)
    except (OSError, ValueError) as e:
        raise CliError(f"cannot load scene {path}: {e}") from None


def execute(spec: RunSpec, gt: GroundTruthScene, out: Path,
            score_logs: bool = True) -> tuple[list[MetricsReport], list[dict]]:
    """Run all repeats of a cell; returns the metric reports and per-run rows."""
    reports, rows = [], []
    for seed in range(spec.seed, spec.seed + spec.repeat):
        run_dir = out / "runs" / f"{spec.cell}-s{seed}"
        cfg = spec.mission_config(seed)
        t0 = time.perf_counter()
        result = run_mission(gt, cfg, spec.quality(), log_dir=run_dir,
                             extra={"run_spec": spec.as_dict()})
        if not score_logs:
            for f in run_dir.glob("scores_round_*.csv"):
                f.unlink()
        rep = evaluate(result.map, gt, result.path_length, time.perf_counter() - t0)
        reports.append(rep)
        rows.append({"seed": seed, "status": result.status.value,
                     "sim_time_s": result.sim_time, "rounds": len(result.rounds),
                     **rep.as_dict(include_wall_time=False)})
        log.info("%s seed %d: %s, coverage %.3f, %.1f s simulated, %.1f s wall",
                 spec.cell, seed, result.status.value, rep.coverage_ratio, result.sim_time,
                 rep.wall_time_s)
    return reports, rows


def _flat_row(spec: RunSpec, rep: MetricsReport) -> dict:
    row = {"scene": spec.scene_name, "planner": spec.planner,
           "band_lo_m": spec.band[0], "band_hi_m": spec.band[1], "z_star": spec.z_star,
           "alpha": spec.alpha, "beta": spec.beta, "time_limit_s": spec.time_limit_s,
           "seeds": f"{spec.seed}..{spec.seed + spec.repeat - 1}",
           "covered_count": rep.covered_count, "surface_count": rep.surface_count,
           "coverage_ratio": rep.coverage_ratio, "path_length_m": rep.path_length_m,
           "mean_map_error_pct": rep.mean_map_error_pct, "z_post": rep.z_post}
    for d in PROBE_DISTANCES:
        row[f"short_of_z_at_{d:g}m_pct"] = rep.distance_to_z_star.get(float(d), float("nan"))
    return row


def write_table(path: Path, rows: list[dict]) -> None:
    fields = list(rows[0]) if rows else []
    for r in rows:
        fields += [k for k in r if k not in fields]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    q = resolve_quality(args.z_star, args.d_star_m, args.d_star_point_m)
    spec = make_spec(args.scene, parse_scene_params(args.scene_param), args.planner, q,
                     args.alpha, args.beta, args.time_limit_s, args.seed, args.repeat)
    gt = load_ground_truth(spec.scene, spec.scene_params, args.scene_format, args.voxel_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        reports, rows = execute(spec, gt, out, not args.no_score_logs)
    except MissionError as e:
        raise CliError(f"mission precondition failed: {e}", EXIT_FAILED) from None
    mean = mean_report(reports)
    write_json(out / "aggregate.json", {"run_spec": spec.as_dict(), "runs": rows,
                                        "mean": mean.as_dict(include_wall_time=False)})
    write_table(out / "aggregate.csv", [_flat_row(spec, mean)])
    print(f"{spec.cell}: coverage {mean.coverage_ratio:.3f}, path {mean.path_length_m:.1f} m, "
          f"map error {mean.mean_map_error_pct:.2f}% (mean of {len(reports)})")
    return EXIT_OK


def cmd_sweep(args) -> int:
    planners = [p for p in (args.planners or "").split(",") if p]
    bands = [parse_band(b) for b in (args.bands or "").split(",") if b]
    if not planners or not bands:
        print("qualnbv: empty sweep matrix", file=sys.stderr)
        return EXIT_EMPTY
    params = parse_scene_params(args.scene_param)
    gt = load_ground_truth(args.scene, params, args.scene_format, args.voxel_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table, cells, failed = [], [], 0
    for planner in planners:
        for band in bands:
            try:
                spec = make_spec(args.scene, params, planner, QualityConfig.from_band(*band),
                                 args.alpha, args.beta, args.time_limit_s, args.seed,
                                 args.repeat)
                reports, rows = execute(spec, gt, out / spec.cell, not args.no_score_logs)
            except (CliError, MissionError, ValueError) as e:
                failed += 1
                log.error("cell %s %s failed: %s", planner, band, e)
                cells.append({"planner": planner, "band": list(band), "error": str(e)})
                continue
            mean = mean_report(reports)
            write_json(out / spec.cell / "aggregate.json",
                       {"run_spec": spec.as_dict(), "runs": rows,
                        "mean": mean.as_dict(include_wall_time=False)})
            table.append(_flat_row(spec, mean))
            cells.append({"run_spec": spec.as_dict(),
                          "mean": mean.as_dict(include_wall_time=False)})
    if table:
        write_table(out / "comparison.csv", table)
    write_json(out / "comparison.json", {"cells": cells, "failed": failed})
    for row in table:
        print(f"{row['planner']:>8} [{row['band_lo_m']:g}, {row['band_hi_m']:g}] m: "
              f"coverage {row['coverage_ratio']:.3f}, path {row['path_length_m']:.1f} m")
    return EXIT_FAILED if failed else EXIT_OK


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scene", required=True,
                   help=f"procedural kind ({', '.join(SCENE_KINDS)}) or a scene file")
    p.add_argument("--scene-format", choices=("voxgrid", "mesh"), default=None,
                   help="file format; guessed from the suffix when omitted")
    p.add_argument("--scene-param", action="append", metavar="KEY=VALUE",
                   help="procedural scene parameter, e.g. width=4 (repeatable)")
    p.add_argument("--voxel-size", type=float, default=0.25, help="mesh voxelization (m)")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--time-limit-s", "--time-limit", dest="time_limit_s", type=float,
                   default=900.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeat", type=int, default=1, help="runs with seeds seed..seed+repeat-1")
    p.add_argument("--out", default="qualnbv_out")
    p.add_argument("--no-score-logs", action="store_true",
                   help="drop the per-round candidate score tables")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qualnbv", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one planner/quality cell, possibly repeated")
    _common(run)
    run.add_argument("--planner", default="ours", help="ours | closest | count")
    run.add_argument("--z-star", type=float, default=None, help="target weight Z*")
    run.add_argument("--d-star-m", "--d-star", dest="d_star_m", type=parse_band, default=None,
                     metavar="LO:HI", help="quality distance band in metres")
    run.add_argument("--d-star-point-m", "--d-star-point", dest="d_star_point_m", type=float,
                     default=None, help="optimal distance d* (band d* +- 0.5 m)")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="planners x quality bands comparison")
    _common(sweep)
    sweep.add_argument("--planners", default="ours,closest,count")
    sweep.add_argument("--bands", default="1:2,4:5,8:9", help="comma-separated LO:HI bands")
    sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as e:
        print(f"qualnbv: {e}", file=sys.stderr)
        return EXIT_USAGE
    except CliError as e:
        print(f"qualnbv: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
