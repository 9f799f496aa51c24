#!/usr/bin/env python3
"""
Main entry point for the mechanism solver: optimal menus for one additive buyer and two items.
"""
import argparse
import logging
import os
import sys

from dotenv import load_dotenv

from config import *
from numerics import Tolerance
from pipeline import STATUS_INCONCLUSIVE, run_problems
from problem_spec import get_problem_files
from report_writer import write_report

# Load environment variables from .env file
load_dotenv()

COMMANDS = ('validate', 'solve', 'certify-bundle', 'oracle', 'compare', 'plot')

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INCONCLUSIVE = 2


def _env_int(name, default):
    value = os.getenv(name)
    return int(value) if value else default


def parse_arguments(argv=None):
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(description='Revenue-optimal mechanisms for one additive buyer and two items')

    parser.add_argument('command', choices=COMMANDS, help='What to run on each problem')
    parser.add_argument('--spec', required=True, help='Problem file (.toml) or a directory of problem files')
    parser.add_argument('-o', '--out', default=os.getenv('OUTPUT_DIR', DEFAULT_OUTPUT_DIR),
                        help=f'Output directory for reports and plot data (default: {DEFAULT_OUTPUT_DIR})')

    # Numerics
    parser.add_argument('--tol', type=float, default=None,
                        help=f'Absolute quadrature/root tolerance (default: problem file or {DEFAULT_ABS_TOL})')
    parser.add_argument('--grid', type=int, default=None,
                        help=f'Oracle grid resolution per item (default: problem file or {DEFAULT_GRID})')
    parser.add_argument('--seed', type=int, default=_env_int('MECHANISM_SEED', None),
                        help=f'Random seed (default: problem file or {DEFAULT_SEED})')
    parser.add_argument('--probes', type=int, default=None,
                        help=f'Probe points per certificate check (default: problem file or {DEFAULT_PROBE_COUNT})')
    parser.add_argument('--mc-samples', type=int, default=None,
                        help=f'Monte Carlo revenue samples (default: problem file or {DEFAULT_MC_SAMPLES})')

    # Performance and output
    parser.add_argument('--workers', type=int, default=_env_int('MECHANISM_WORKERS', DEFAULT_NUM_WORKERS),
                        help=f'Number of worker processes (default: {DEFAULT_NUM_WORKERS})')
    parser.add_argument('--no-progress', action='store_true', help='Hide progress bars')
    parser.add_argument('--timings', action='store_true', help='Add wall-clock timings to reports')
    parser.add_argument('--svg', action='store_true', help='Also draw partition.svg when plotting')

    return parser.parse_args(argv)


def _overrides(args):
    return {
        'tol': Tolerance(abs_tol=args.tol) if args.tol is not None else None,
        'grid': args.grid,
        'seed': args.seed,
        'probe_count': args.probes,
        'mc_samples': args.mc_samples,
        'num_workers': args.workers,
        'progress': not args.no_progress,
        'timings': args.timings,
    }


def main(argv=None):
    """Main function."""
    args = parse_arguments(argv)

    try:
        problem_files = get_problem_files(args.spec)
        print(f"Found {len(problem_files)} problem file(s)")

        results = run_problems(problem_files, args.command, out_dir=args.out, svg=args.svg, **_overrides(args))

        status = EXIT_OK
        for result in results:
            name = result.get('problem', {}).get('name') or os.path.splitext(os.path.basename(result['source']))[0]
            report_path = write_report(result, os.path.join(args.out, name, f"{args.command}.json"))
            if 'error' in result:
                print(f"  - {name}: error ({result['error']})")
                status = EXIT_ERROR
                continue
            print(f"  - {name}: {result['status']} -> {report_path}")
            for f in result.get('plot_files', []):
                print(f"      {f}")
            if result['status'] == STATUS_INCONCLUSIVE and status == EXIT_OK:
                status = EXIT_INCONCLUSIVE

        successful = sum(1 for r in results if 'error' not in r)
        print(f"\nProcessing completed: {successful}/{len(results)} problems ran successfully")

    except Exception as e:
        print(f"Error: {e}")
        record = {'source': args.spec, 'command': args.command, 'error': str(e), 'error_type': type(e).__name__,
                  'success': False}
        try:
            write_report(record, os.path.join(args.out, 'error.json'))
        except Exception as write_error:
            logging.error(f"Could not write the error record: {write_error}")
        sys.exit(EXIT_ERROR)

    sys.exit(status)


if __name__ == '__main__':
    main()
