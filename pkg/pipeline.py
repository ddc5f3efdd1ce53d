#!/usr/bin/env python3.8

"""
Central project pipeline, controlled by a config.ini file.

Subcommands:

    generate   build the reference K, h and C fields and write them to <out>/reference
    train      run the methods of one experiment over all seeds
    sweep      run one experiment per value of a sweep axis
    eval       relative errors of the networks saved under <out>/networks
    fit        power law n_params = a * lambda^b through several optimal_size.json files

Example usage:

    $ python3 pipeline.py train --config config.ini --out results/example1 --seeds 1,2,3
    $ python3 pipeline.py sweep --config config.ini --axis N --values 16,32,64,128

Exit codes: 0 success, 1 configuration error, 2 runtime failure, 3 some seeds failed.
"""

import argparse
import json
import sys

from harness.analysis import fit_optimal_sizes
from harness.config import ConfigError, load_config, with_overrides
from harness.experiment import evaluate_saved, generate, run_experiment, sweep
from harness.logs import change_log_file_path, logger

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3


def _comma_list(text: str):
    return [part.strip() for part in text.split(',') if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(epilog=__doc__, formatter_class=argparse.RawTextHelpFormatter)
    parser.add_argument('command', choices=['generate', 'train', 'sweep', 'eval', 'fit'])
    parser.add_argument('files', nargs='*', help='optimal_size.json files (fit only)')
    parser.add_argument('--config', default='config.ini', help='Path to the config file')
    parser.add_argument('--out', help='Output directory (overrides [Experiment] output_dir)')
    parser.add_argument('--seeds', type=_comma_list,
                        help='Comma-separated seeds (overrides [Experiment] seeds)')
    parser.add_argument('--threads', type=int,
                        help='Worker processes for the seeds (overrides [Experiment] threads)')
    parser.add_argument('--axis', help='Sweep axis (overrides [Sweep] axis)')
    parser.add_argument('--values', type=_comma_list,
                        help='Comma-separated sweep values (overrides [Sweep] values)')
    parser.add_argument('--method', default='data_driven', help='Method to fit (fit only)')
    parser.add_argument('--log-path', default='/tmp/pinn.log',
                        help='Path to log file (default: /tmp/pinn.log)')
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    change_log_file_path(args.log_path)

    if args.command == 'fit':
        try:
            result = fit_optimal_sizes(args.files, args.method)
        except (OSError, KeyError, ValueError) as e:
            logger.error(f'fit failed: {e}')
            return EXIT_RUNTIME
        print(json.dumps(result, indent=2))
        return EXIT_OK

    try:
        cfg = load_config(args.config)
        cfg = with_overrides(cfg, output_dir=args.out, seeds=args.seeds, threads=args.threads)
    except ConfigError as e:
        logger.error(f'Configuration error: {e}')
        return EXIT_CONFIG

    try:
        if args.command == 'generate':
            generate(cfg)
            return EXIT_OK
        if args.command == 'train':
            report = run_experiment(cfg)
            return EXIT_PARTIAL if report.partial else EXIT_OK
        if args.command == 'sweep':
            reports, _ = sweep(cfg, args.axis, args.values)
            return EXIT_PARTIAL if any(r.partial for r in reports) else EXIT_OK
        frame = evaluate_saved(cfg)
        print(frame.to_string(index=False))
        return EXIT_OK
    except ConfigError as e:
        logger.error(f'Configuration error: {e}')
        return EXIT_CONFIG
    except Exception:
        logger.exception(f'{args.command} failed')
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
