"""Command-line front end.

Exit codes: 0 on success, 1 on invalid input (nothing is written), 2 on
file-system errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .engine import FORMAT_VERSION, RunResult, Simulation, SimulationError, dumps
from .network import GraphBuildError
from .scenario import (
    DistrictSpec,
    ScenarioConfig,
    ScenarioError,
    SyntheticParams,
    district_to_geojson,
    generate_synthetic,
    parse_synthetic,
    resolve_scenario,
)
from .world import District, DistrictError

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2
COMPARE_METRICS = ("victims", "totalExposedSeconds", "arrivedSafe", "outsideCity", "gaveUp")
THREADS_ENV = "QUAKE_EVAC_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # bad flags count as invalid input, not argparse's exit 2
        raise UsageError(f"{self.prog}: {message}")


def _district_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--district", metavar="PATH", help="district GeoJSON file")
    src.add_argument(
        "--synthetic",
        metavar="PARAMS",
        help="synthetic grid district, e.g. 'default' or 'blocks=5,spacing=80,seed=3'",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="quake-evac", description="Simulate pedestrian evacuation after an earthquake.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run one scenario with one seed")
    _district_args(run)
    run.add_argument("--scenario", required=True, help="preset name (survey, optimistic, night) or scenario file")
    run.add_argument("--seed", required=True, type=_seed)
    run.add_argument("--out", required=True, type=Path, help="output directory")
    run.add_argument("--max-cycles", type=int)

    cmp = sub.add_parser("compare", help="run several scenarios over several seeds")
    _district_args(cmp)
    cmp.add_argument("--scenarios", required=True, help="comma-separated presets or scenario files")
    cmp.add_argument("--seeds", required=True, type=_seeds, help="a count k (seeds 0..k-1) or a comma-separated list")
    cmp.add_argument("--out", required=True, type=Path, help="output directory")
    cmp.add_argument("--max-cycles", type=int)

    gen = sub.add_parser("gen-district", help="write a synthetic grid district as GeoJSON")
    defaults = SyntheticParams()
    gen.add_argument("--blocks", type=int, default=defaults.blocks)
    gen.add_argument("--spacing", type=float, default=defaults.street_spacing)
    gen.add_argument("--buildings-per-block", type=int, default=defaults.buildings_per_block)
    gen.add_argument("--green-fraction", type=float, default=defaults.green_space_fraction)
    gen.add_argument("--storeys", type=_range, default=defaults.storey_range, metavar="LO-HI")
    gen.add_argument("--apartments", type=_range, default=defaults.apartment_range, metavar="LO-HI")
    gen.add_argument("--seed", type=_seed, default=defaults.seed)
    gen.add_argument("--out", required=True, type=Path, help="output GeoJSON path")
    return parser


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2**64), got {value}")
    return value


def _seeds(text: str) -> list[int]:
    if "," in text:
        seeds = [_seed(t.strip()) for t in text.split(",") if t.strip()]
    else:
        k = _seed(text)
        seeds = list(range(k))
    if not seeds:
        raise argparse.ArgumentTypeError("need at least one seed")
    if len(set(seeds)) != len(seeds):
        raise argparse.ArgumentTypeError("seeds must be distinct")
    return seeds


def _range(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition("-")
    try:
        return int(lo), int(hi or lo)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO-HI, got {text!r}") from None


def _load_district(args: argparse.Namespace) -> tuple[District, DistrictSpec]:
    if args.district is not None:
        spec = DistrictSpec(geojson_path=args.district)
    else:
        spec = DistrictSpec(synthetic=parse_synthetic(args.synthetic))
    return spec.load(), spec


def _config(name: str, max_cycles: int | None) -> ScenarioConfig:
    config = resolve_scenario(name)
    if max_cycles is not None:
        config = config.replace(max_cycles=max_cycles)
    return config


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def run_meta(result: RunResult, config: ScenarioConfig, seed: int, scenario: str, spec: DistrictSpec) -> dict:
    return {
        "formatVersion": FORMAT_VERSION,
        "seed": seed,
        "scenario": scenario,
        "district": spec.describe(),
        "config": config.to_dict(),
        "terminationReason": result.termination_reason,
        "cycles": result.cycles,
    }


def cmd_run(args: argparse.Namespace) -> int:
    district, spec = _load_district(args)
    config = _config(args.scenario, args.max_cycles)
    result = Simulation.initialize(district, config, args.seed).run()
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "frames.csv", result.frames_csv())
    _write(out / "agents.json", dumps(result.agents_document()))
    _write(out / "histogram.json", dumps(result.histogram_document()))
    _write(out / "run_meta.json", dumps(run_meta(result, config, args.seed, args.scenario, spec)))
    print(
        f"{args.scenario} seed {args.seed}: {result.termination_reason} after {result.cycles} cycles, "
        f"{result.victims} victims, {result.arrived_safe} arrived safe, "
        f"{result.total_exposed_seconds} exposed person-seconds"
    )
    return EXIT_OK


@dataclass(frozen=True)
class CompareRow:
    scenario: str
    seed: int
    totals: dict[str, float]
    median_exposure: float
    cycles: int
    termination_reason: str


def _compare_job(job: tuple[str, ScenarioConfig, District, int]) -> CompareRow:
    name, config, district, seed = job
    result = Simulation.initialize(district, config, seed).run()
    return CompareRow(name, seed, result.totals(), result.median_exposure, result.cycles, result.termination_reason)


def compare_workers(jobs: int) -> int:
    cap = os.cpu_count() or 1
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise ScenarioError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
    return max(1, min(jobs, cap))


def run_compare(
    scenarios: Sequence[tuple[str, ScenarioConfig]], district: District, seeds: Sequence[int], workers: int = 1
) -> list[CompareRow]:
    jobs = [(name, config, district, seed) for name, config in scenarios for seed in seeds]
    if workers <= 1:
        return [_compare_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_compare_job, jobs))


def compare_summary(rows: Sequence[CompareRow], names: Sequence[str], seeds: Sequence[int]) -> dict:
    scenarios = {}
    for name in names:
        mine = [r for r in rows if r.scenario == name]
        stats = {}
        for metric in COMPARE_METRICS:
            values = [float(r.totals[metric]) for r in mine]
            stats[metric] = {
                "mean": statistics.fmean(values),
                "stddev": statistics.stdev(values) if len(values) > 1 else 0.0,
            }
        scenarios[name] = {"runs": len(mine), **stats}
    by_key = {(r.scenario, r.seed): r for r in rows}
    directions = []
    for seed in seeds:
        exposure = {name: by_key[(name, seed)].totals["totalExposedSeconds"] for name in names}
        low = min(exposure.values())
        lowest = [name for name in names if exposure[name] == low]
        directions.append({
            "seed": seed,
            "lowestExposure": lowest[0] if len(lowest) == 1 else None,
            "totalExposedSeconds": exposure,
        })
    return {"formatVersion": FORMAT_VERSION, "seeds": list(seeds), "scenarios": scenarios, "directions": directions}


def compare_csv(rows: Sequence[CompareRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("scenario", "seed", *COMPARE_METRICS, "medianExposureSeconds", "cycles", "terminationReason"))
    for r in rows:
        writer.writerow((r.scenario, r.seed, *(r.totals[m] for m in COMPARE_METRICS), r.median_exposure, r.cycles,
                         r.termination_reason))
    return buf.getvalue()


def cmd_compare(args: argparse.Namespace) -> int:
    names = [n.strip() for n in args.scenarios.split(",") if n.strip()]
    if not names:
        raise ScenarioError("--scenarios needs at least one scenario")
    if len(set(names)) != len(names):
        raise ScenarioError("--scenarios must not repeat a scenario")
    scenarios = [(name, _config(name, args.max_cycles)) for name in names]
    district, _ = _load_district(args)
    workers = compare_workers(len(names) * len(args.seeds))
    rows = run_compare(scenarios, district, args.seeds, workers)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "compare.csv", compare_csv(rows))
    _write(out / "summary.json", dumps(compare_summary(rows, names, args.seeds)))
    print(f"{len(rows)} runs written to {out}")
    return EXIT_OK


def cmd_gen_district(args: argparse.Namespace) -> int:
    params = SyntheticParams(
        blocks=args.blocks,
        street_spacing=args.spacing,
        buildings_per_block=args.buildings_per_block,
        storey_range=args.storeys,
        apartment_range=args.apartments,
        green_space_fraction=args.green_fraction,
        seed=args.seed,
    )
    district = generate_synthetic(params)
    text = dumps(district_to_geojson(district))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    _write(args.out, text)
    print(f"{len(district.streets)} streets, {len(district.buildings)} buildings written to {args.out}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "gen-district": cmd_gen_district}
VALIDATION_ERRORS = (UsageError, ScenarioError, DistrictError, GraphBuildError, SimulationError, ValueError)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except OSError as exc:
        print(f"quake-evac: {exc}", file=sys.stderr)
        return EXIT_IO
    except VALIDATION_ERRORS as exc:
        print(f"quake-evac: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
