import json
import os

from dfl_sentinel.exceptions import PlotError
from dfl_sentinel.plot import load_summary, collect_series, render_chart, chart_filename, \
    plot_summaries

from .base_test import DFLSentinelTestCase


def _summary(aggregator, pnr, f1, asr=None, attack='label_flip_targeted'):
    return {'name': 'x', 'dataset': 'mnist', 'attack': attack, 'aggregator': aggregator,
            'pnr': pnr, 'round': 10, 'seed': 1,
            'metrics': {'f1': {'mean': f1, 'std': 0.01, 'n': 8},
                        'asr_lf': {'mean': asr, 'std': None if asr is None else 0.02,
                                   'n': 0 if asr is None else 8}}}


class PlotTestCase(DFLSentinelTestCase):

    def setUp(self):
        super(PlotTestCase, self).setUp()
        self.dir = self.make_tmpdir()

    def _write(self, name, summary):
        path = os.path.join(self.dir, name)
        with open(path, 'w') as fh:
            json.dump(summary, fh)
        return path


class LoadSummaryTest(PlotTestCase):

    def test_load(self):
        path = self._write('s.json', _summary('fedavg', 0.1, 0.9))
        self.assertEqual(load_summary(path)['aggregator'], 'fedavg')

    def test_errors(self):
        self.assertRaises(PlotError, load_summary, os.path.join(self.dir, 'missing.json'))
        broken = os.path.join(self.dir, 'broken.json')
        with open(broken, 'w') as fh:
            fh.write('{')
        self.assertRaises(PlotError, load_summary, broken)
        summary = _summary('fedavg', 0.1, 0.9)
        del summary['pnr']
        self.assertRaises(PlotError, load_summary, self._write('nopnr.json', summary))


class CollectSeriesTest(PlotTestCase):

    def test_grouping(self):
        charts = collect_series([_summary('sentinel', 0.3, 0.8, 0.1),
                                 _summary('fedavg', 0.3, 0.6, 0.5),
                                 _summary('sentinel', 0.1, 0.9, 0.05),
                                 _summary('fedavg', 0.0, 0.95)])
        self.assertEqual(sorted(charts), [('mnist', 'label_flip_targeted', 'asr_lf'),
                                          ('mnist', 'label_flip_targeted', 'f1')])
        f1 = charts['mnist', 'label_flip_targeted', 'f1']
        self.assertEqual(f1['sentinel'], [(0.1, 0.9, 0.01), (0.3, 0.8, 0.01)])
        self.assertEqual(f1['fedavg'], [(0.0, 0.95, 0.01), (0.3, 0.6, 0.01)])
        asr = charts['mnist', 'label_flip_targeted', 'asr_lf']
        self.assertEqual(asr['fedavg'], [(0.3, 0.5, 0.02)])

    def test_mismatched_metrics(self):
        other = _summary('fedavg', 0.1, 0.9)
        del other['metrics']['asr_lf']
        self.assertRaises(PlotError, collect_series, [_summary('sentinel', 0.1, 0.9), other])

    def test_duplicate_point(self):
        self.assertRaises(PlotError, collect_series,
                          [_summary('sentinel', 0.1, 0.9), _summary('sentinel', 0.1, 0.8)])

    def test_empty(self):
        self.assertRaises(PlotError, collect_series, [])


class RenderTest(PlotTestCase):

    def test_svg(self):
        series = {'sentinel': [(0.1, 0.9123, 0.01), (0.3, 0.8, 0.02)],
                  'fedavg': [(0.1, 0.7, 0.05)]}
        svg = render_chart('mnist, model_poison', 'f1', series)
        self.assertIn('<svg', svg)
        self.assertIn('0.9123', svg)
        self.assertIn('0.8000', svg)
        self.assertIn('F1-score', svg)
        self.assertIn('mnist, model_poison', svg)
        self.assertEqual(svg, render_chart('mnist, model_poison', 'f1', series))

    def test_filename(self):
        self.assertEqual(chart_filename('mnist', 'backdoor', 'ba'), 'mnist-backdoor-ba.svg')

    def test_plot_summaries(self):
        paths = [self._write('a.json', _summary('sentinel', 0.1, 0.9, 0.1)),
                 self._write('b.json', _summary('fedavg', 0.1, 0.7, 0.4))]
        out = os.path.join(self.dir, 'charts')
        written = plot_summaries(paths, out)
        self.assertEqual([os.path.basename(p) for p in written],
                         ['mnist-label_flip_targeted-asr_lf.svg',
                          'mnist-label_flip_targeted-f1.svg'])
        with open(written[1]) as fh:
            self.assertIn('0.7000', fh.read())
