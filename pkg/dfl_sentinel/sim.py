"""Synchronous round-based federation.

Every round runs four barrier-separated phases over all nodes - local
training, model poisoning, exchange with adjacent nodes and aggregation -
followed by evaluation. Node work inside a phase may run on a thread pool;
results are always merged in node id order, so serial and parallel runs
produce identical reports.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .aggregate import AggregationInput, make_aggregator
from .attacks import AttackConfig, ATTACK_MODEL_POISON, ATTACK_LABEL_FLIP_TARGETED, \
    ATTACK_BACKDOOR, select_malicious, poison_model, poison_training_data, \
    build_backdoor_eval_set
from .data import load_dataset, partition, partition_manifest
from .exceptions import ConfigError, NumericalError
from .metrics import f1_score, asr_label_flip, backdoor_accuracy, summarize
from .model import init_params, train_local, evaluate
from .utils import derive_seed, STREAM_MALICIOUS, STREAM_ATTACK_DATA, STREAM_INIT, \
    STREAM_TRAIN, STREAM_POISON, STREAM_REPEAT

logger = logging.getLogger(__name__)

TOPOLOGIES = ('full', 'ring', 'custom')


@dataclass(frozen=True)
class FederationConfig:
    """Node count, topology and round count.

    ``bandwidth_mbps``, ``delay_ms`` and ``loss_percent`` are recorded with
    the experiment but have no effect on a synchronous simulation.
    ``aggregator_overrides`` maps node ids to the
    :py:class:`dfl_sentinel.aggregate.AggregatorConfig` they run instead of
    the experiment-wide one."""
    n_nodes: int = 10
    topology: str = 'full'
    adjacency: tuple = None
    rounds: int = 10
    workers: int = 1
    bandwidth_mbps: float = 1.0
    delay_ms: float = 0.0
    loss_percent: float = 0.0
    observer: int = None
    aggregator_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.adjacency is not None:
            object.__setattr__(self, 'adjacency',
                               tuple(tuple(int(v) for v in row) for row in self.adjacency))
        errors = self.validate()
        if errors:
            raise ConfigError(errors)

    def validate(self):
        errors = []
        if self.n_nodes < 1:
            errors.append("n_nodes: must be at least 1, got %s" % (self.n_nodes,))
        if self.topology not in TOPOLOGIES:
            errors.append("topology: must be one of %s, got %r" % (', '.join(TOPOLOGIES),
                                                                  self.topology))
        if self.topology == 'custom':
            errors.extend(self._adjacency_errors())
        elif self.adjacency is not None:
            errors.append("adjacency: only allowed with the custom topology")
        if self.rounds < 0:
            errors.append("rounds: must be non-negative, got %s" % (self.rounds,))
        if self.workers < 1:
            errors.append("workers: must be at least 1, got %s" % (self.workers,))
        if not self.bandwidth_mbps > 0:
            errors.append("bandwidth_mbps: must be positive, got %s" % (self.bandwidth_mbps,))
        if not self.delay_ms >= 0:
            errors.append("delay_ms: must be non-negative, got %s" % (self.delay_ms,))
        if not 0 <= self.loss_percent <= 100:
            errors.append("loss_percent: must be in [0, 100], got %s" % (self.loss_percent,))
        if self.observer is not None and not 0 <= self.observer < self.n_nodes:
            errors.append("observer: must be a node id below %s, got %s" % (
                self.n_nodes, self.observer))
        for node in self.aggregator_overrides:
            if not 0 <= node < self.n_nodes:
                errors.append("aggregator_overrides: no node %s in a %s node federation" % (
                    node, self.n_nodes))
        return errors

    def _adjacency_errors(self):
        if self.adjacency is None:
            return ["adjacency: required for the custom topology"]
        matrix = np.array(self.adjacency)
        if matrix.shape != (self.n_nodes, self.n_nodes):
            return ["adjacency: must be %sx%s, got shape %s" % (
                self.n_nodes, self.n_nodes, matrix.shape)]
        errors = []
        if not np.isin(matrix, (0, 1)).all():
            errors.append("adjacency: entries must be 0 or 1")
        if not (matrix == matrix.T).all():
            errors.append("adjacency: must be symmetric")
        if np.diag(matrix).any():
            errors.append("adjacency: self-loops are not allowed")
        return errors

    def neighbors(self, node):
        """Ids adjacent to ``node`` in ascending order."""
        n = self.n_nodes
        if self.topology == 'full':
            return [j for j in range(n) if j != node]
        if self.topology == 'ring':
            return sorted({(node - 1) % n, (node + 1) % n} - {node})
        return [j for j in range(n) if self.adjacency[node][j]]

    def aggregator_for(self, node, default):
        return self.aggregator_overrides.get(node, default)


@dataclass
class NodeState:
    """A node, its data and the aggregator state it carries across rounds.

    ``data.train`` already holds the poisoned training set on malicious data
    poisoners."""
    id: int
    params: object
    data: object
    aggregator: object
    malicious: bool = False
    attack: AttackConfig = field(default_factory=AttackConfig)
    backdoor_set: object = None

    @property
    def loss_history(self):
        return self.aggregator.history


@dataclass
class NodeRecord:
    round: int
    node: int
    benign: bool
    f1: float
    test_loss: float
    asr_lf: float = None
    ba: float = None
    n_filtered: int = 0
    skipped: bool = False


@dataclass
class RoundReport:
    round: int
    records: list
    traces: list = field(default_factory=list)

    def benign(self):
        return [r for r in self.records if r.benign]


def repeat_seed(seed, repeat):
    """Seed of repeat ``repeat``; the first repeat runs on ``seed`` itself."""
    if repeat == 0:
        return int(seed)
    return derive_seed(seed, repeat, STREAM_REPEAT)


def summary_metrics(records, names):
    """Mean, standard deviation and count of every metric in ``names`` over
    ``records``."""
    return {name: summarize([getattr(r, name) for r in records]) for name in names}


@dataclass
class ExperimentReport:
    name: str
    seed: int
    repeat: int
    metric_names: tuple
    malicious: frozenset
    partition: dict
    rounds: list = field(default_factory=list)

    @property
    def final(self):
        return self.rounds[-1]

    def summary(self, cfg):
        """Final-round metrics over benign nodes.

        :rtype: dict"""
        return {'name': self.name, 'dataset': cfg.dataset.kind, 'attack': cfg.attack.kind,
                'aggregator': cfg.aggregator.kind, 'pnr': cfg.attack.pnr,
                'round': self.final.round, 'seed': self.seed,
                'metrics': summary_metrics(self.final.benign(), self.metric_names)}


class Federation(object):
    """All nodes of one experiment run.

    :param cfg: Experiment configuration.
    :type cfg: :py:class:`dfl_sentinel.config.ExperimentConfig`
    :param dataset: Loaded dataset to partition.
    :type dataset: :py:class:`dfl_sentinel.data.Dataset`
    :param seed: Seed of this run.
    :type seed: int
    """

    def __init__(self, cfg, dataset, seed):
        self.cfg = cfg
        self.seed = int(seed)
        fed = cfg.federation
        attack = cfg.attack
        part_cfg = replace(cfg.partition, nodes=fed.n_nodes, seed=self.seed)
        node_data = partition(dataset, part_cfg)
        self.manifest = partition_manifest(node_data)
        if attack.active:
            self.malicious = select_malicious(fed.n_nodes, attack.pnr,
                                              derive_seed(self.seed, STREAM_MALICIOUS),
                                              observer=fed.observer)
        else:
            self.malicious = frozenset()
        logger.info("Malicious nodes: %s", sorted(self.malicious) or 'none')
        spec = cfg.model.spec(dataset.dims, dataset.num_classes)
        initial = init_params(spec, derive_seed(self.seed, STREAM_INIT))
        self.nodes = []
        for node, data in enumerate(node_data):
            malicious = node in self.malicious
            if malicious:
                data = replace(data, train=poison_training_data(
                    data.train, attack, derive_seed(self.seed, node, STREAM_ATTACK_DATA)))
            backdoor_set = None
            if attack.kind == ATTACK_BACKDOOR:
                backdoor_set = build_backdoor_eval_set(data.test, attack.trigger, attack.target)
            self.nodes.append(NodeState(
                id=node, params=initial, data=data,
                aggregator=make_aggregator(fed.aggregator_for(node, cfg.aggregator)),
                malicious=malicious, attack=attack if malicious else AttackConfig(),
                backdoor_set=backdoor_set))

    @property
    def metric_names(self):
        names = ['f1', 'test_loss']
        if self.cfg.attack.kind == ATTACK_LABEL_FLIP_TARGETED:
            names.append('asr_lf')
        if self.cfg.attack.kind == ATTACK_BACKDOOR:
            names.append('ba')
        return tuple(names)

    def map(self, func, items):
        """Apply ``func`` to every item, results in item order."""
        items = list(items)
        workers = self.cfg.federation.workers
        if workers == 1 or len(items) < 2:
            return [func(item) for item in items]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(func, items))

    def train_config(self, node):
        return replace(self.cfg.train, seed=derive_seed(self.seed, node.id, STREAM_TRAIN))

    def evaluate_node(self, node, round_idx, n_filtered=0, skipped=False):
        attack = self.cfg.attack
        loss, cm = evaluate(node.params, node.data.test)
        record = NodeRecord(round=round_idx, node=node.id, benign=not node.malicious,
                            f1=f1_score(cm, self.cfg.metrics.f1_average), test_loss=loss,
                            n_filtered=n_filtered, skipped=skipped)
        if attack.kind == ATTACK_LABEL_FLIP_TARGETED:
            record.asr_lf = asr_label_flip(cm, attack.source, attack.target)
        if node.backdoor_set is not None:
            _, cm_b = evaluate(node.params, node.backdoor_set)
            record.ba = backdoor_accuracy(cm_b, attack.target)
        return record

    def evaluate(self, round_idx):
        """Round report of the current parameters without training."""
        records = self.map(lambda node: self.evaluate_node(node, round_idx), self.nodes)
        return RoundReport(round_idx, records)


def _train(federation, node, round_idx):
    try:
        return train_local(node.params, node.data.train, federation.train_config(node),
                           round_idx)
    except NumericalError as ex:
        logger.warning("Node %s training failed in round %s, keeping its parameters: %s",
                       node.id, round_idx, ex)
        return None


def _poison(federation, node, params, round_idx):
    attack = node.attack
    if not node.malicious or attack.kind != ATTACK_MODEL_POISON:
        return params
    return poison_model(params, attack.nr, attack.amplitude,
                        derive_seed(federation.seed, node.id, round_idx, STREAM_POISON))


def _aggregate(node, local, inbox, round_idx):
    inputs = AggregationInput(local=local, neighbors=inbox, bootstrap=node.data.bootstrap,
                              round=round_idx, node_id=node.id)
    try:
        params, trace = node.aggregator(inputs)
    except NumericalError as ex:
        logger.warning("Node %s aggregation failed in round %s: %s", node.id, round_idx, ex)
        return None, None
    if not params.all_finite():
        logger.warning("Node %s aggregated non-finite parameters in round %s",
                       node.id, round_idx)
        return None, trace
    return params, trace


def run_round(federation, round_idx):
    """Run one synchronous round and evaluate every node.

    A node whose training or aggregation produces non-finite parameters
    keeps its pre-round parameters and is reported as skipped.

    :rtype: :py:class:`RoundReport`"""
    nodes = federation.nodes
    trained = federation.map(lambda node: _train(federation, node, round_idx), nodes)
    local = [node.params if params is None else params for node, params in zip(nodes, trained)]
    outgoing = federation.map(
        lambda pair: _poison(federation, pair[0], pair[1], round_idx), zip(nodes, local))
    fed = federation.cfg.federation
    inboxes = [{j: outgoing[j] for j in fed.neighbors(node.id)} for node in nodes]
    results = federation.map(
        lambda args: _aggregate(*args, round_idx=round_idx), zip(nodes, local, inboxes))
    skipped = []
    traces = []
    for node, params, (aggregated, trace) in zip(nodes, trained, results):
        if params is None or aggregated is None:
            skipped.append(node.id)
        else:
            node.params = aggregated
        if trace is not None:
            traces.append(trace)
    n_filtered = {t.node: t.n_filtered for t in traces}
    records = federation.map(
        lambda node: federation.evaluate_node(node, round_idx, n_filtered.get(node.id, 0),
                                              node.id in skipped), nodes)
    benign = [r.f1 for r in records if r.benign]
    logger.info("Round %s: mean benign F1 %s", round_idx,
                '%.4f' % (np.mean(benign),) if benign else 'n/a')
    return RoundReport(round_idx, records, traces)


def run_experiment(cfg, dataset=None, repeat=0, on_round=None):
    """Run every round of one repeat of ``cfg``.

    :param dataset: Preloaded dataset; loaded from ``cfg.dataset`` when not
      given.
    :param on_round: Called as ``on_round(federation, round_report)`` after
      every round including the initial evaluation.
    :rtype: :py:class:`ExperimentReport`"""
    seed = repeat_seed(cfg.seed, repeat)
    if dataset is None:
        dataset = load_dataset(cfg.dataset, seed)
    federation = Federation(cfg, dataset, seed)
    report = ExperimentReport(name=cfg.name, seed=seed, repeat=repeat,
                              metric_names=federation.metric_names,
                              malicious=federation.malicious, partition=federation.manifest)
    initial = federation.evaluate(0)
    report.rounds.append(initial)
    if on_round is not None:
        on_round(federation, initial)
    for round_idx in range(1, cfg.federation.rounds + 1):
        round_report = run_round(federation, round_idx)
        report.rounds.append(round_report)
        if on_round is not None:
            on_round(federation, round_report)
    return report
