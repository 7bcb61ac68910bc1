"""Command line interface.

::

  dfl-sentinel run EXPERIMENT.json [--out DIR] [--force]
  dfl-sentinel plot SUMMARY.json [SUMMARY.json ...] --out DIR
  dfl-sentinel validate EXPERIMENT.json

Exit codes are listed in :py:mod:`dfl_sentinel.error_codes`.
"""

import argparse
import logging
import os
import sys

from ._version import __version__
from .config import parse_config, dumps_config
from .error_codes import DFL_OK, DFL_ERROR_UNKNOWN, DFL_ERROR_USAGE, exit_code_for
from .exceptions import DFLSentinelError, ConfigError
from .plot import plot_summaries
from .report import prepare_output, repeat_dir, write_checkpoints, write_repeat, \
    write_json, pooled_summary, CONFIG_FILE, SUMMARY_FILE, CHECKPOINT_DIR
from .sim import run_experiment
from .utils import enable_logging

logger = logging.getLogger(__name__)


def run(cfg, out_dir, force=False, dataset=None):
    """Run every repeat of ``cfg`` and write results under ``out_dir``.

    :returns: The pooled summary.
    :rtype: dict
    :raises: :py:class:`dfl_sentinel.exceptions.OutputExistsError` when
      ``out_dir`` holds files and ``force`` is not set."""
    prepare_output(out_dir, force=force)
    with open(os.path.join(out_dir, CONFIG_FILE), 'w') as fh:
        fh.write(dumps_config(cfg))
    reports = []
    for repeat in range(cfg.repeats):
        directory = repeat_dir(out_dir, repeat)
        on_round = None
        if cfg.output.checkpoints:
            checkpoints = os.path.join(directory, CHECKPOINT_DIR)

            def on_round(federation, round_report, checkpoints=checkpoints):
                write_checkpoints(checkpoints, round_report.round, federation.nodes)
        logger.info("Experiment %s repeat %s/%s", cfg.name, repeat + 1, cfg.repeats)
        report = run_experiment(cfg, dataset=dataset, repeat=repeat, on_round=on_round)
        write_repeat(directory, cfg, report)
        reports.append(report)
    summary = pooled_summary(cfg, reports)
    write_json(os.path.join(out_dir, SUMMARY_FILE), summary)
    return summary


def _run(args):
    cfg = parse_config(args.config)
    out_dir = args.out or cfg.output.dir
    if not out_dir:
        logger.error("No output directory: pass --out or set output.dir")
        return DFL_ERROR_USAGE
    summary = run(cfg, out_dir, force=args.force)
    for metric, stats in sorted(summary['metrics'].items()):
        if stats['mean'] is not None:
            logger.info("%s: %.4f +- %.4f (n=%s)", metric, stats['mean'], stats['std'],
                        stats['n'])
    return DFL_OK


def _plot(args):
    for path in plot_summaries(args.summaries, args.out):
        print(path)
    return DFL_OK


def _validate(args):
    cfg = parse_config(args.config)
    sys.stdout.write(dumps_config(cfg))
    return DFL_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog='dfl-sentinel',
        description="Simulate decentralized federated learning under poisoning attacks")
    parser.add_argument('--version', action='version', version=__version__)
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help="Debug output")
    verbosity.add_argument('-q', '--quiet', action='store_true', help="Warnings and errors only")
    commands = parser.add_subparsers(dest='command', metavar='COMMAND')
    commands.required = True

    run_parser = commands.add_parser('run', help="Run an experiment")
    run_parser.add_argument('config', help="Experiment JSON file")
    run_parser.add_argument('--out', help="Output directory, overrides output.dir")
    run_parser.add_argument('--force', action='store_true',
                            help="Overwrite results in a non-empty output directory")
    run_parser.set_defaults(func=_run)

    plot_parser = commands.add_parser('plot', help="Chart summary files")
    plot_parser.add_argument('summaries', nargs='+', help="summary.json files")
    plot_parser.add_argument('--out', required=True, help="Directory for SVG charts")
    plot_parser.set_defaults(func=_plot)

    validate_parser = commands.add_parser(
        'validate', help="Check an experiment file and print it with defaults filled in")
    validate_parser.add_argument('config', help="Experiment JSON file")
    validate_parser.set_defaults(func=_validate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    enable_logging(level)
    try:
        return args.func(args)
    except ConfigError as ex:
        for message in ex.errors:
            logger.error("%s", message)
        return exit_code_for(ex)
    except DFLSentinelError as ex:
        logger.error("%s: %s", ex.__class__.__name__, ex)
        return exit_code_for(ex)
    except ValueError as ex:
        logger.error("Invalid value: %s", ex)
        logger.debug("Traceback", exc_info=True)
        return DFL_ERROR_UNKNOWN

