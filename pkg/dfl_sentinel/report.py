"""Result files of experiment runs.

Layout of an output directory::

  config.json                 fully-defaulted configuration
  summary.json                summary pooled over repeats
  repeat-K/rounds.csv         one row per round and node
  repeat-K/summary.json       final-round summary of repeat K
  repeat-K/trace.jsonl        one aggregation record per round and node
  repeat-K/partition.json     node -> split -> sample indices
  repeat-K/checkpoints/       per-round parameter files, when enabled

Every file is a deterministic function of the configuration.
"""

import csv
import json
import logging
import os
import shutil
from dataclasses import dataclass

from .exceptions import OutputError, OutputExistsError
from .params import save
from .sim import summary_metrics

logger = logging.getLogger(__name__)

CSV_COLUMNS = ('round', 'node', 'benign', 'f1', 'test_loss', 'asr_lf', 'ba', 'n_filtered')
CONFIG_FILE = 'config.json'
SUMMARY_FILE = 'summary.json'
ROUNDS_FILE = 'rounds.csv'
TRACE_FILE = 'trace.jsonl'
PARTITION_FILE = 'partition.json'
CHECKPOINT_DIR = 'checkpoints'
REPEAT_PREFIX = 'repeat-'


@dataclass(frozen=True)
class OutputConfig:
    dir: str = None
    checkpoints: bool = False


def repeat_dir(out_dir, repeat):
    return os.path.join(out_dir, '%s%s' % (REPEAT_PREFIX, repeat))


def _ours(name):
    return name in (CONFIG_FILE, SUMMARY_FILE) or name.startswith(REPEAT_PREFIX)


def prepare_output(out_dir, force=False):
    """Create ``out_dir``, refusing to reuse a non-empty one unless ``force``
    is set.

    With ``force`` only files and directories a previous run wrote are
    removed.

    :raises: :py:class:`dfl_sentinel.exceptions.OutputExistsError`"""
    if os.path.isdir(out_dir) and os.listdir(out_dir):
        if not force:
            raise OutputExistsError("Output directory %s is not empty, use --force to "
                                    "overwrite" % (out_dir,))
        for name in sorted(os.listdir(out_dir)):
            if not _ours(name):
                continue
            path = os.path.join(out_dir, name)
            logger.debug("Removing previous output %s", path)
            if os.path.isdir(path):
                shutil.rmtree(path)
            else:
                os.remove(path)
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as ex:
        raise OutputError("Cannot create output directory %s: %s" % (out_dir, ex))


def write_json(path, obj):
    with open(path, 'w') as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write('\n')


def _cell(value):
    if value is None:
        return ''
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float):
        return repr(value)
    return value


def rounds_rows(report):
    """CSV rows of every trained round; the initial evaluation is left
    out."""
    for round_report in report.rounds[1:]:
        for record in round_report.records:
            yield [_cell(getattr(record, column)) for column in CSV_COLUMNS]


def write_rounds_csv(path, report):
    with open(path, 'w', newline='') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(CSV_COLUMNS)
        writer.writerows(rounds_rows(report))


def write_trace(path, report):
    with open(path, 'w') as fh:
        for round_report in report.rounds[1:]:
            for trace in sorted(round_report.traces, key=lambda t: t.node):
                fh.write(json.dumps(trace.to_dict(), sort_keys=True))
                fh.write('\n')


def checkpoint_path(directory, round_idx, node):
    return os.path.join(directory, 'round-%03d-node-%02d.lprm' % (round_idx, node))


def write_checkpoints(directory, round_idx, nodes):
    """Save every node's current parameters for ``round_idx``."""
    os.makedirs(directory, exist_ok=True)
    for node in nodes:
        save(node.params, checkpoint_path(directory, round_idx, node.id))


def write_repeat(directory, cfg, report):
    """Write the per-repeat files of ``report``.

    :returns: The repeat summary.
    :rtype: dict"""
    os.makedirs(directory, exist_ok=True)
    summary = report.summary(cfg)
    write_rounds_csv(os.path.join(directory, ROUNDS_FILE), report)
    write_trace(os.path.join(directory, TRACE_FILE), report)
    write_json(os.path.join(directory, PARTITION_FILE), report.partition)
    write_json(os.path.join(directory, SUMMARY_FILE), summary)
    return summary


def pooled_summary(cfg, reports):
    """Summary over the final-round benign nodes of every repeat, with the
    per-repeat metric blocks under ``repeats``.

    :rtype: dict"""
    if not reports:
        raise ValueError("Need at least one experiment report")
    records = [r for report in reports for r in report.final.benign()]
    first = reports[0]
    return {'name': first.name, 'dataset': cfg.dataset.kind, 'attack': cfg.attack.kind,
            'aggregator': cfg.aggregator.kind, 'pnr': cfg.attack.pnr,
            'round': first.final.round, 'seed': cfg.seed,
            'metrics': summary_metrics(records, first.metric_names),
            'repeats': [{'repeat': report.repeat, 'seed': report.seed,
                         'metrics': summary_metrics(report.final.benign(), report.metric_names)}
                        for report in reports]}
