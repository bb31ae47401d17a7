"""Command-line interface of the downwash-aware allocation simulator."""
import argparse
import asyncio
import csv
import logging
import sys
from pathlib import Path
from typing import List, NoReturn, Optional

import numpy as np

from allocation import efficiency_sweep
from config import RunConfig, config, load_platform, validate_file
from core_types import GRAVITY, Wrench
from downwash import axial_velocity
from exceptions import ConfigError, DownwashAllocError, IntegrationDiverged, InvalidGeometry
from service import ComparisonRunner, SimulationService, compare_summaries
from sim import AllocatorMode
from storage import NUMBER_FORMAT, SimLogRepository, format_value, load_summary, write_table
from utils import setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_USAGE = 64


class CliParser(argparse.ArgumentParser):
    """argparse with its own exit code for usage errors; 2 is taken by divergence."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(
        prog='downwash-alloc',
        description='Downwash-aware control allocation for over-actuated multirotors',
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='warnings and errors only')
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help='simulate one scenario')
    run.add_argument('--scenario', required=True, type=Path)
    run.add_argument('--platform', type=Path, help='override the platform named in the scenario')
    run.add_argument('--mode', choices=[m.value for m in AllocatorMode])
    run.add_argument('--o-min', type=float, dest='o_min')
    run.add_argument('--gamma', type=float)
    run.add_argument('--output-dir', type=Path)
    run.add_argument('--no-timestamp', action='store_true')

    compare = sub.add_parser('compare', help='compare two summaries or both modes of a scenario')
    compare.add_argument('summaries', nargs='*', type=Path)
    compare.add_argument('--scenario', type=Path, help='run both allocator modes and compare them')
    compare.add_argument('--platform', type=Path)
    compare.add_argument('--output-dir', type=Path)
    compare.add_argument('--no-timestamp', action='store_true')

    field = sub.add_parser('field', help='sample the wake velocity field on a (z, r) grid')
    field.add_argument('--platform', required=True, type=Path)
    field.add_argument('--z-min', type=float, help='axial distance, default 0.1 R0 past the efflux plane')
    field.add_argument('--z-max', type=float, help='default: end of the zone of flow establishment')
    field.add_argument('--z-steps', type=int, default=20)
    field.add_argument('--r-min', type=float, default=0.0)
    field.add_argument('--r-max', type=float, help='default: 3 R_m0')
    field.add_argument('--r-steps', type=int, default=20)
    field.add_argument('--output', type=Path)

    validate = sub.add_parser('validate-config', help='parse platform or scenario files')
    validate.add_argument('files', nargs='+', type=Path)

    sweep = sub.add_parser('sweep', help='thrust efficiency against wake clearance over the nullspace')
    sweep.add_argument('--platform', required=True, type=Path)
    sweep.add_argument('--o-min', type=float, dest='o_min', default=0.07)
    sweep.add_argument('--samples', type=int, default=1000)
    sweep.add_argument('--scale', type=float, default=1.0, help='std dev of the nullspace coordinates, N')
    sweep.add_argument('--seed', type=int, default=0)
    sweep.add_argument('--output', type=Path)
    return parser


def _output_dir(args) -> Path:
    return args.output_dir if args.output_dir is not None else Path(config.OUTPUT_DIR)


def cmd_run(run_config: RunConfig) -> int:
    scenario = run_config.load()
    service = SimulationService(SimLogRepository(run_config.output_dir), run_config.timestamp)
    try:
        service.run_scenario(scenario, run_config.run_name)
    except IntegrationDiverged:
        return EXIT_DIVERGED
    return EXIT_OK


def _emit_comparison(rows: List[List[str]], path: Path) -> None:
    sys.stdout.write(write_table(rows))
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        csv.writer(handle, lineterminator='\n').writerows(rows)
    logger.info(f"Wrote comparison to {path}")


def cmd_compare(args) -> int:
    output_dir = _output_dir(args)
    if args.scenario is not None:
        if args.summaries:
            raise ConfigError("give either two summaries or --scenario, not both")
        run_config = RunConfig(args.scenario, output_dir, args.platform, timestamp=not args.no_timestamp)
        scenario = run_config.load()
        runner = ComparisonRunner(SimulationService(SimLogRepository(output_dir), run_config.timestamp))
        first, second = asyncio.run(runner.compare(scenario, run_config.run_name))
        name = run_config.run_name
    else:
        if len(args.summaries) != 2:
            raise ConfigError("compare needs exactly two summary files")
        first, second = (load_summary(p) for p in args.summaries)
        name = f"{args.summaries[0].name.split('.')[0]}-vs-{args.summaries[1].name.split('.')[0]}"

    _emit_comparison(compare_summaries(first, second), output_dir / f"{name}.compare.csv")
    return EXIT_OK


def cmd_field(args) -> int:
    _, model = load_platform(args.platform)
    z_min = args.z_min if args.z_min is not None else model.z0 + 0.1 * model.r0
    z_max = args.z_max if args.z_max is not None else model.zfe_end
    r_max = args.r_max if args.r_max is not None else 3.0 * model.rm0
    if z_min <= model.z0 or z_max > model.zfe_end or z_max < z_min:
        raise InvalidGeometry(
            f"grid z in [{z_min:g}, {z_max:g}] m is outside the valid range ({model.z0:g}, {model.zfe_end:g}] m"
        )
    if args.z_steps < 1 or args.r_steps < 1 or not 0 <= args.r_min <= r_max:
        raise ConfigError("grid needs at least one step per axis and 0 <= r_min <= r_max")

    rows = [['z_m', 'r_m', 'v_mps']]
    for z in np.linspace(z_min, z_max, args.z_steps):
        for r in np.linspace(args.r_min, r_max, args.r_steps):
            rows.append([format(float(z), NUMBER_FORMAT), format(float(r), NUMBER_FORMAT),
                         format(axial_velocity(model, float(z), float(r)), NUMBER_FORMAT)])
    _write_csv(rows, args.output)
    return EXIT_OK


def cmd_validate(args) -> int:
    for path in args.files:
        kind = validate_file(path)
        print(f"{path}: ok ({kind})")
    return EXIT_OK


def cmd_sweep(args) -> int:
    platform, _ = load_platform(args.platform)
    if args.samples < 1:
        raise ConfigError("--samples must be at least 1")
    hover = Wrench(np.array([0.0, 0.0, platform.total_mass * GRAVITY]), np.zeros(3))
    samples = efficiency_sweep(platform, hover, args.o_min, args.samples, args.scale, args.seed)
    rows = [['efficiency', 'min_gated_o_m2', 'downwash_free', 'nullspace_norm_n']]
    for s in samples:
        rows.append([format_value(s.efficiency), format_value(s.min_gated_o), format_value(s.downwash_free),
                     format_value(s.nullspace_norm)])
    _write_csv(rows, args.output)
    return EXIT_OK


def _write_csv(rows: List[List[str]], output: Optional[Path]) -> None:
    if output is None:
        csv.writer(sys.stdout, lineterminator='\n').writerows(rows)
        return
    output.parent.mkdir(parents=True, exist_ok=True)
    with open(output, 'w', encoding='utf-8', newline='') as handle:
        csv.writer(handle, lineterminator='\n').writerows(rows)
    logger.info(f"Wrote {len(rows) - 1} rows to {output}")


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, dispatch the subcommand and map errors to exit codes."""
    args = build_parser().parse_args(argv)
    setup_logging(config.LOG_LEVEL, verbose=args.verbose, quiet=args.quiet)

    try:
        if args.command == 'run':
            run_config = RunConfig(
                scenario_path=args.scenario,
                output_dir=_output_dir(args),
                platform_path=args.platform,
                mode=AllocatorMode(args.mode) if args.mode else None,
                o_min=args.o_min,
                gamma=args.gamma,
                verbosity=1 if args.verbose else (-1 if args.quiet else 0),
                timestamp=not args.no_timestamp,
            )
            return cmd_run(run_config)
        if args.command == 'compare':
            return cmd_compare(args)
        if args.command == 'field':
            return cmd_field(args)
        if args.command == 'validate-config':
            return cmd_validate(args)
        return cmd_sweep(args)
    except IntegrationDiverged as e:
        logger.error(str(e))
        return EXIT_DIVERGED
    except (DownwashAllocError, FileNotFoundError) as e:
        logger.error(str(e))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
