"""SVG charts of summary files.

One chart is drawn per dataset, attack and metric: the poisoned node ratio
on the x axis and one error-bar series per aggregator. Every point is
labelled with its mean so chart values can be read back from the SVG.
"""

import io
import json
import logging
import os
from collections import defaultdict

import matplotlib
from matplotlib.figure import Figure

from .exceptions import PlotError

logger = logging.getLogger(__name__)

VALUE_FORMAT = '%.4f'

params = {
    'svg.fonttype': 'none',
    'svg.hashsalt': 'dfl-sentinel',
    'font.family': 'sans-serif',
    'font.size': 9,
    'axes.labelsize': 10,
    'legend.fontsize': 8,
    'lines.linewidth': 1.2,
    'lines.markersize': 4,
    'errorbar.capsize': 3,
    'figure.figsize': (5.0, 3.5),
}

LABELS = {
    'f1': 'F1-score',
    'test_loss': 'Test loss',
    'asr_lf': 'Attack success rate',
    'ba': 'Backdoor accuracy',
}


def load_summary(path):
    try:
        with open(path) as fh:
            summary = json.load(fh)
    except (OSError, ValueError) as ex:
        raise PlotError("Cannot read summary %s: %s" % (path, ex))
    for key in ('dataset', 'attack', 'aggregator', 'pnr', 'metrics'):
        if key not in summary:
            raise PlotError("Summary %s has no %s" % (path, key))
    return summary


def collect_series(summaries):
    """Group summary points by chart.

    :returns: ``{(dataset, attack, metric): {aggregator: [(pnr, mean, std)]}}``
      with points sorted by ``pnr``.
    :raises: :py:class:`dfl_sentinel.exceptions.PlotError` when the
      summaries do not all report the same metrics or repeat a point."""
    if not summaries:
        raise PlotError("Need at least one summary to plot")
    metric_set = set(summaries[0]['metrics'])
    charts = defaultdict(lambda: defaultdict(list))
    seen = set()
    for summary in summaries:
        if set(summary['metrics']) != metric_set:
            raise PlotError("Summary metrics %s do not match %s" % (
                sorted(summary['metrics']), sorted(metric_set)))
        point = (summary['dataset'], summary['attack'], summary['aggregator'], summary['pnr'])
        if point in seen:
            raise PlotError("More than one summary for %s/%s/%s at pnr %s" % point)
        seen.add(point)
        for metric, stats in summary['metrics'].items():
            if stats['mean'] is None:
                continue
            charts[summary['dataset'], summary['attack'], metric][summary['aggregator']].append(
                (float(summary['pnr']), stats['mean'], stats['std'] or 0.0))
    return dict((key, dict((agg, sorted(points)) for agg, points in series.items()))
                for key, series in charts.items())


def render_chart(title, metric, series):
    """SVG text of one chart.

    :param series: ``{aggregator: [(pnr, mean, std)]}``
    :rtype: str"""
    with matplotlib.rc_context(params):
        fig = Figure()
        ax = fig.add_subplot(1, 1, 1)
        for aggregator in sorted(series):
            points = series[aggregator]
            xs = [p[0] for p in points]
            means = [p[1] for p in points]
            ax.errorbar(xs, means, yerr=[p[2] for p in points], marker='o', label=aggregator,
                        gid='series-%s' % (aggregator,))
            for x, mean in zip(xs, means):
                ax.annotate(VALUE_FORMAT % (mean,), (x, mean), textcoords='offset points',
                            xytext=(0, 5), ha='center', fontsize=7)
        ax.set_title(title)
        ax.set_xlabel('Poisoned node ratio')
        ax.set_ylabel(LABELS.get(metric, metric))
        ax.grid(True, linewidth=0.3)
        ax.legend(loc='best')
        fig.tight_layout()
        out = io.StringIO()
        fig.savefig(out, format='svg', metadata={'Date': None})
    return out.getvalue()


def chart_filename(dataset, attack, metric):
    return '%s-%s-%s.svg' % (dataset, attack, metric)


def plot_summaries(paths, out_dir):
    """Render every chart of the summaries at ``paths`` into ``out_dir``.

    :returns: Written file paths, sorted.
    :rtype: list(str)"""
    charts = collect_series([load_summary(path) for path in paths])
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as ex:
        raise PlotError("Cannot create %s: %s" % (out_dir, ex))
    written = []
    for (dataset, attack, metric), series in sorted(charts.items()):
        path = os.path.join(out_dir, chart_filename(dataset, attack, metric))
        svg = render_chart('%s, %s' % (dataset, attack), metric, series)
        with open(path, 'w') as fh:
            fh.write(svg)
        logger.info("Wrote %s", path)
        written.append(path)
    return written
