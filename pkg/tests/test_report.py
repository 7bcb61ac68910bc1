import csv
import json
import os
from types import SimpleNamespace

from dfl_sentinel.aggregate import AggregationTrace, SENTINEL
from dfl_sentinel.config import ExperimentConfig
from dfl_sentinel.exceptions import OutputExistsError
from dfl_sentinel.params import load
from dfl_sentinel.report import prepare_output, write_json, rounds_rows, write_rounds_csv, \
    write_trace, checkpoint_path, write_checkpoints, write_repeat, pooled_summary, repeat_dir, \
    CSV_COLUMNS, CONFIG_FILE, SUMMARY_FILE, ROUNDS_FILE, TRACE_FILE, PARTITION_FILE
from dfl_sentinel.sim import ExperimentReport, NodeRecord, RoundReport

from .base_test import DFLSentinelTestCase


def _report(repeat=0, f1=(0.5, 0.25)):
    initial = RoundReport(0, [NodeRecord(0, 0, True, 0.1, 2.0), NodeRecord(0, 1, False, 0.1, 2.0)])
    trace = AggregationTrace(1, 1, SENTINEL, local_loss=0.75)
    trace.neighbor(0).filtered = True
    final = RoundReport(1, [NodeRecord(1, 0, True, f1[0], 1.25, n_filtered=0),
                            NodeRecord(1, 1, False, f1[1], 3.5, n_filtered=1)],
                        [trace, AggregationTrace(0, 1, SENTINEL, local_loss=0.5)])
    return ExperimentReport('report', 11 + repeat, repeat, ('f1', 'test_loss'), frozenset([1]),
                            {'nodes': {'0': {'train': [1, 2]}}}, [initial, final])


class PrepareOutputTest(DFLSentinelTestCase):

    def test_creates(self):
        out = os.path.join(self.make_tmpdir(), 'a', 'b')
        prepare_output(out)
        self.assertTrue(os.path.isdir(out))
        prepare_output(out)

    def test_refuses_non_empty(self):
        out = self.make_tmpdir()
        write_json(os.path.join(out, SUMMARY_FILE), {})
        self.assertRaises(OutputExistsError, prepare_output, out)

    def test_force_removes_own_files_only(self):
        out = self.make_tmpdir()
        write_json(os.path.join(out, CONFIG_FILE), {})
        write_json(os.path.join(out, SUMMARY_FILE), {})
        os.makedirs(repeat_dir(out, 3))
        with open(os.path.join(out, 'notes.txt'), 'w') as fh:
            fh.write('keep')
        prepare_output(out, force=True)
        self.assertEqual(os.listdir(out), ['notes.txt'])


class FilesTest(DFLSentinelTestCase):

    def setUp(self):
        super(FilesTest, self).setUp()
        self.dir = self.make_tmpdir()

    def test_write_json(self):
        path = os.path.join(self.dir, 'x.json')
        write_json(path, {'b': 1, 'a': [1.5]})
        with open(path) as fh:
            self.assertEqual(fh.read(), '{\n  "a": [\n    1.5\n  ],\n  "b": 1\n}\n')

    def test_rounds_rows_skip_initial_evaluation(self):
        rows = list(rounds_rows(_report()))
        self.assertEqual(rows, [[1, 0, 1, '0.5', '1.25', '', '', 0],
                                [1, 1, 0, '0.25', '3.5', '', '', 1]])

    def test_rounds_csv(self):
        path = os.path.join(self.dir, ROUNDS_FILE)
        write_rounds_csv(path, _report())
        with open(path) as fh:
            text = fh.read()
        self.assertEqual(text.splitlines()[0], ','.join(CSV_COLUMNS))
        self.assertEqual(text.splitlines()[1], '1,0,1,0.5,1.25,,,0')
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        self.assertEqual(len(rows), 2)
        self.assertEqual(rows[1]['benign'], '0')

    def test_trace(self):
        path = os.path.join(self.dir, TRACE_FILE)
        write_trace(path, _report())
        with open(path) as fh:
            records = [json.loads(line) for line in fh]
        self.assertEqual([r['node'] for r in records], [0, 1])
        self.assertEqual(records[1]['n_filtered'], 1)
        self.assertEqual(records[1]['neighbors'][0]['filtered'], True)
        self.assertEqual(records[0]['local_loss'], 0.5)

    def test_checkpoints(self):
        params = self.random_params()
        nodes = [SimpleNamespace(id=0, params=params),
                 SimpleNamespace(id=7, params=params.map(lambda v: v * 2))]
        directory = os.path.join(self.dir, 'checkpoints')
        write_checkpoints(directory, 4, nodes)
        self.assertEqual(sorted(os.listdir(directory)),
                         ['round-004-node-00.lprm', 'round-004-node-07.lprm'])
        self.assertParamsEqual(load(checkpoint_path(directory, 4, 7)), nodes[1].params)

    def test_write_repeat(self):
        cfg = ExperimentConfig(seed=11)
        directory = repeat_dir(self.dir, 0)
        summary = write_repeat(directory, cfg, _report())
        self.assertEqual(sorted(os.listdir(directory)),
                         sorted([ROUNDS_FILE, TRACE_FILE, PARTITION_FILE, SUMMARY_FILE]))
        with open(os.path.join(directory, SUMMARY_FILE)) as fh:
            self.assertEqual(json.load(fh), summary)
        self.assertEqual(summary['metrics']['f1'], {'mean': 0.5, 'std': 0.0, 'n': 1})
        with open(os.path.join(directory, PARTITION_FILE)) as fh:
            self.assertEqual(json.load(fh), {'nodes': {'0': {'train': [1, 2]}}})


class PooledSummaryTest(DFLSentinelTestCase):

    def test_pooled(self):
        cfg = ExperimentConfig(seed=11, repeats=2)
        summary = pooled_summary(cfg, [_report(0, f1=(0.5, 0.0)), _report(1, f1=(0.75, 0.0))])
        self.assertEqual(summary['metrics']['f1'], {'mean': 0.625, 'std': 0.125, 'n': 2})
        self.assertEqual(summary['seed'], 11)
        self.assertEqual(summary['round'], 1)
        self.assertEqual([r['seed'] for r in summary['repeats']], [11, 12])
        self.assertEqual(summary['repeats'][1]['metrics']['f1']['mean'], 0.75)

    def test_no_reports(self):
        self.assertRaises(ValueError, pooled_summary, ExperimentConfig(seed=1), [])
