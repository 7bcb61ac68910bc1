"""Aggregation functions.

Every aggregator combines a node's locally trained model with the models
received from its neighbors. Sentinel runs three phases:

1. Similarity filtering - neighbors whose layer-wise cosine similarity to
   the local model is below ``tau_s`` are dropped.
2. Bootstrap validation - surviving neighbors are scored by their loss on
   the node's bootstrap set; the running mean of each neighbor's losses is
   mapped to a weight by a decay damped with the local mean loss.
3. Layer normalization - layers of surviving neighbors whose norm exceeds
   the local layer norm are scaled down to it.

The local model takes part in the final weighted average with weight 1.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, InsufficientModels, InsufficientSamples, \
    NumericalError, EmptyHistory
from .model import mean_loss
from .params import cosine_similarity, layer_norms, weighted_average, \
    stack, unflatten

logger = logging.getLogger(__name__)

FEDAVG = 'fedavg'
MEDIAN = 'median'
TRIMMED_MEAN = 'trimmed_mean'
KRUM = 'krum'
FLTRUST = 'fltrust'
SENTINEL = 'sentinel'
AGGREGATOR_KINDS = (FEDAVG, MEDIAN, TRIMMED_MEAN, KRUM, FLTRUST, SENTINEL)

DEFAULT_TRIM_RATIO = 0.2


def _threshold_errors(tau_s, tau_l, l_min):
    errors = []
    if not (math.isfinite(tau_s) and tau_s >= -1):
        errors.append("tau_s: must be a finite value >= -1, got %s" % (tau_s,))
    if not 0 <= tau_l <= 1:
        errors.append("tau_l: must be in [0, 1], got %s" % (tau_l,))
    if not l_min > 0:
        errors.append("l_min: must be positive, got %s" % (l_min,))
    return errors


@dataclass(frozen=True)
class SentinelConfig:
    """Sentinel thresholds.

    ``tau_s`` above 1 filters every neighbor. ``literal_norm_ratio`` scales
    neighbor layers by ``min(1, |P[l]| / |M[l]|)`` instead of clipping them
    to the local norm."""
    tau_s: float = 0.5
    tau_l: float = 0.1
    l_min: float = 0.001
    literal_norm_ratio: bool = False

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ConfigError(errors)

    def validate(self):
        return _threshold_errors(self.tau_s, self.tau_l, self.l_min)


@dataclass(frozen=True)
class AggregatorConfig:
    """Aggregator choice plus the options of every kind.

    Sentinel thresholds have no defaults here - experiment files must state
    them."""
    kind: str = FEDAVG
    tau_s: float = None
    tau_l: float = None
    l_min: float = 0.001
    literal_norm_ratio: bool = False
    trim_k: int = None
    krum_f: int = None
    krum_m: int = 1

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ConfigError(errors)

    def validate(self):
        errors = []
        if self.kind not in AGGREGATOR_KINDS:
            errors.append("kind: must be one of %s, got %r" % (', '.join(AGGREGATOR_KINDS),
                                                              self.kind))
        if self.kind == SENTINEL:
            for name in ('tau_s', 'tau_l'):
                if getattr(self, name) is None:
                    errors.append("%s: required when kind is sentinel" % (name,))
            if not errors:
                errors.extend(_threshold_errors(self.tau_s, self.tau_l, self.l_min))
        if self.trim_k is not None and self.trim_k < 0:
            errors.append("trim_k: must be non-negative, got %s" % (self.trim_k,))
        if self.krum_f is not None and self.krum_f < 0:
            errors.append("krum_f: must be non-negative, got %s" % (self.krum_f,))
        if self.krum_m < 1:
            errors.append("krum_m: must be at least 1, got %s" % (self.krum_m,))
        return errors

    def sentinel_config(self):
        return SentinelConfig(tau_s=self.tau_s, tau_l=self.tau_l, l_min=self.l_min,
                              literal_norm_ratio=self.literal_norm_ratio)


class LossHistory(object):
    """Bootstrap losses per node id and round, as recorded by one node.

    Owned by a single node; entries exist only for rounds in which a
    neighbor passed similarity filtering."""

    def __init__(self):
        self._losses = {}

    def record(self, node, round_idx, loss):
        self._losses.setdefault(int(node), {})[int(round_idx)] = float(loss)

    def losses(self, node):
        entries = self._losses.get(int(node), {})
        return [entries[r] for r in sorted(entries)]

    def mean(self, node):
        losses = self.losses(node)
        return float(np.mean(losses)) if losses else None

    def __contains__(self, node):
        return int(node) in self._losses

    def to_dict(self):
        return {str(node): {str(r): loss for r, loss in sorted(rounds.items())}
                for node, rounds in sorted(self._losses.items())}


@dataclass
class AggregationInput:
    local: object
    neighbors: dict
    bootstrap: object = None
    round: int = 0
    node_id: int = 0

    def check(self):
        for other in self.neighbors.values():
            self.local.check_compatible(other)


@dataclass
class NeighborTrace:
    node: int
    similarity: float = None
    bootstrap_loss: float = None
    weight: float = None
    norm_scales: list = None
    filtered: bool = False

    def to_dict(self):
        return {'node': self.node, 'similarity': self.similarity,
                'bootstrap_loss': self.bootstrap_loss, 'weight': self.weight,
                'norm_scales': self.norm_scales, 'filtered': self.filtered}


@dataclass
class AggregationTrace:
    """Per-neighbor record of one aggregation call."""
    node: int
    round: int
    aggregator: str
    local_loss: float = None
    fallback: str = None
    neighbors: list = field(default_factory=list)

    def neighbor(self, node):
        for entry in self.neighbors:
            if entry.node == node:
                return entry
        entry = NeighborTrace(node)
        self.neighbors.append(entry)
        return entry

    @property
    def n_filtered(self):
        """Neighbors that did not contribute to the aggregate."""
        return sum(1 for n in self.neighbors if n.filtered or n.weight == 0)

    def to_dict(self):
        return {'node': self.node, 'round': self.round, 'aggregator': self.aggregator,
                'local_loss': self.local_loss, 'fallback': self.fallback,
                'n_filtered': self.n_filtered,
                'neighbors': [n.to_dict() for n in sorted(self.neighbors, key=lambda n: n.node)]}


def _finite_neighbors(inputs, trace):
    if not inputs.local.all_finite():
        raise NumericalError("Local model of node %s has non-finite parameters" % (
            inputs.node_id,))
    inputs.check()
    kept = {}
    for node in sorted(inputs.neighbors):
        params = inputs.neighbors[node]
        if params.all_finite():
            kept[node] = params
            continue
        logger.warning("Node %s dropping non-finite model from neighbor %s",
                       inputs.node_id, node)
        if trace is not None:
            entry = trace.neighbor(node)
            entry.filtered = True
            entry.weight = 0.0
    return kept


def _models_by_id(inputs, neighbors):
    """Node ids and models including the local one, ordered by id."""
    models = dict(neighbors)
    models[inputs.node_id] = inputs.local
    ids = sorted(models)
    return ids, [models[i] for i in ids]


def _uniform_trace(trace, neighbors, weight=1.0):
    if trace is not None:
        for node in neighbors:
            trace.neighbor(node).weight = weight


def fedavg(inputs, trace=None):
    """Unweighted mean of the local model and every neighbor model."""
    neighbors = _finite_neighbors(inputs, trace)
    _uniform_trace(trace, neighbors)
    models = [inputs.local] + [neighbors[n] for n in sorted(neighbors)]
    return weighted_average(models, np.ones(len(models)))


def coordinate_median(inputs, trace=None):
    """Per-coordinate median; even counts take the mean of the two middle
    values."""
    neighbors = _finite_neighbors(inputs, trace)
    _uniform_trace(trace, neighbors)
    _, models = _models_by_id(inputs, neighbors)
    return unflatten(np.median(stack(models), axis=0), inputs.local.schema)


def trimmed_mean(inputs, trim_k=None, trace=None):
    """Per-coordinate mean after dropping the ``trim_k`` smallest and
    largest values. ``trim_k`` defaults to ``floor(0.2 * count)``.

    :raises: :py:class:`dfl_sentinel.exceptions.InsufficientModels` unless
      more than ``2 * trim_k`` models are available."""
    neighbors = _finite_neighbors(inputs, trace)
    _uniform_trace(trace, neighbors)
    _, models = _models_by_id(inputs, neighbors)
    count = len(models)
    if trim_k is None:
        trim_k = int(math.floor(count * DEFAULT_TRIM_RATIO))
    if count <= 2 * trim_k:
        raise InsufficientModels("Trimming %s from each end needs more than %s models, got %s" % (
            trim_k, 2 * trim_k, count))
    ordered = np.sort(stack(models), axis=0)
    return unflatten(ordered[trim_k:count - trim_k].mean(axis=0), inputs.local.schema)


def default_krum_f(n):
    """Largest tolerated attacker count keeping ``n - f - 2 >= 1``."""
    return max(0, min((n - 2) // 2, n - 3))


def krum_scores(vectors, f):
    """Krum score of every row: the sum of squared Euclidean distances to
    its ``n - f - 2`` nearest other rows."""
    n = vectors.shape[0]
    distances = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            distances[i, j] = distances[j, i] = np.sum((vectors[i] - vectors[j]) ** 2)
    closest = n - f - 2
    scores = np.empty(n, dtype=np.float64)
    for i in range(n):
        others = np.sort(np.delete(distances[i], i))
        scores[i] = others[:closest].sum()
    return scores


def krum(inputs, f=None, m=1, trace=None):
    """Krum, or Multi-Krum when ``m > 1``.

    Models are ordered by node id, so ties go to the lowest id. Falls back to
    :py:func:`fedavg` when fewer than ``f + 3`` models are available."""
    neighbors = _finite_neighbors(inputs, trace)
    ids, models = _models_by_id(inputs, neighbors)
    n = len(models)
    if f is None:
        f = default_krum_f(n)
    if n < f + 3:
        logger.warning("Krum needs at least %s models for f=%s, got %s - using fedavg",
                       f + 3, f, n)
        if trace is not None:
            trace.fallback = FEDAVG
        return fedavg(inputs, trace)
    scores = krum_scores(stack(models), f)
    best = np.argsort(scores, kind='stable')[:min(m, n)]
    selected = set(ids[i] for i in best)
    if trace is not None:
        for node in neighbors:
            trace.neighbor(node).weight = 1.0 if node in selected else 0.0
    chosen = [models[i] for i in sorted(best)]
    return weighted_average(chosen, np.ones(len(chosen)))


def _rescale_layers(params, scales):
    return type(params)((layer.name, layer.values.astype(np.float64) * scale)
                        for layer, scale in zip(params, scales))


def fltrust(inputs, trace=None):
    """Trust-weighted mean with the local model as the trusted reference.

    Each neighbor's trust is its ReLU-clipped cosine similarity to the local
    model; neighbor layers are rescaled to the local layer norms. The local
    model joins with trust 1."""
    neighbors = _finite_neighbors(inputs, trace)
    local_norms = layer_norms(inputs.local)
    models = [inputs.local]
    weights = [1.0]
    for node in sorted(neighbors):
        params = neighbors[node]
        similarity = cosine_similarity(params, inputs.local)
        trust = max(0.0, similarity)
        scales = [m_norm / p_norm if p_norm > 0 else 1.0
                  for m_norm, p_norm in zip(local_norms, layer_norms(params))]
        models.append(_rescale_layers(params, scales))
        weights.append(trust)
        if trace is not None:
            entry = trace.neighbor(node)
            entry.similarity = similarity
            entry.weight = trust
            entry.norm_scales = scales
    return weighted_average(models, weights)


def similarity_filter(local, neighbors, tau_s):
    """Keep neighbors whose cosine similarity to ``local`` is at least
    ``tau_s``.

    :returns: ``(survivors, similarities)`` - surviving ``{id: params}`` and
      the similarity of every neighbor."""
    survivors = {}
    similarities = {}
    for node in sorted(neighbors):
        similarity = cosine_similarity(neighbors[node], local)
        similarities[node] = similarity
        if not similarity < tau_s:
            survivors[node] = neighbors[node]
    return survivors, similarities


def map_loss_distance(hist_local, hist_neighbor, tau_l, l_min, current_loss=None):
    """Map the distance between mean bootstrap losses to a weight in
    ``[0, 1]``.

    ``w = exp(-kappa * max(mean_j - mean_i, 0))`` with damping
    ``kappa = 1 / max(mean_i, l_min)``; weights below ``tau_l`` become 0.
    An empty neighbor history uses ``current_loss``."""
    if not len(hist_local):
        raise EmptyHistory("Local loss history is empty")
    mean_local = float(np.mean(hist_local))
    if len(hist_neighbor):
        mean_neighbor = float(np.mean(hist_neighbor))
    elif current_loss is not None:
        mean_neighbor = float(current_loss)
    else:
        raise EmptyHistory("Neighbor loss history is empty and no current loss given")
    kappa = 1.0 / max(mean_local, l_min)
    distance = max(mean_neighbor - mean_local, 0.0)
    weight = math.exp(-kappa * distance)
    if weight < tau_l:
        return 0.0
    return weight


def norm_scales(local, neighbor, literal=False):
    """Per-layer scale factors of :py:func:`normalize_model`."""
    scales = []
    for m_norm, p_norm in zip(layer_norms(local), layer_norms(neighbor)):
        if literal:
            scales.append(min(1.0, p_norm / m_norm) if m_norm > 0 else 1.0)
        else:
            scales.append(min(1.0, m_norm / p_norm) if p_norm > 0 else 1.0)
    return scales


def normalize_model(local, neighbor, literal=False):
    """Scale every neighbor layer whose norm exceeds the local layer norm
    down to it. Other layers pass through unchanged."""
    local.check_compatible(neighbor)
    scales = norm_scales(local, neighbor, literal)
    if all(s == 1.0 for s in scales):
        return neighbor
    return _rescale_layers(neighbor, scales)


def sentinel(inputs, cfg, state, trace=None):
    """Sentinel aggregation.

    Records this round's bootstrap losses of the local model and every
    surviving neighbor in ``state``.

    :type inputs: :py:class:`AggregationInput`
    :type cfg: :py:class:`SentinelConfig`
    :type state: :py:class:`LossHistory`
    :rtype: :py:class:`dfl_sentinel.params.LayeredParams`"""
    if inputs.bootstrap is None or len(inputs.bootstrap) == 0:
        raise InsufficientSamples("Sentinel needs a non-empty bootstrap dataset")
    neighbors = _finite_neighbors(inputs, trace)
    survivors, similarities = similarity_filter(inputs.local, neighbors, cfg.tau_s)
    local_loss = mean_loss(inputs.local, inputs.bootstrap)
    state.record(inputs.node_id, inputs.round, local_loss)
    own_history = state.losses(inputs.node_id)
    models = [inputs.local]
    weights = [1.0]
    for node in sorted(neighbors):
        entry = trace.neighbor(node) if trace is not None else NeighborTrace(node)
        entry.similarity = similarities[node]
        if node not in survivors:
            entry.filtered = True
            entry.weight = 0.0
            continue
        loss = mean_loss(survivors[node], inputs.bootstrap)
        entry.bootstrap_loss = loss
        if not math.isfinite(loss):
            entry.weight = 0.0
            continue
        state.record(node, inputs.round, loss)
        weight = map_loss_distance(own_history, state.losses(node), cfg.tau_l, cfg.l_min)
        entry.weight = weight
        entry.norm_scales = norm_scales(inputs.local, survivors[node], cfg.literal_norm_ratio)
        if weight > 0:
            models.append(normalize_model(inputs.local, survivors[node],
                                          cfg.literal_norm_ratio))
            weights.append(weight)
    if trace is not None:
        trace.local_loss = local_loss
    return weighted_average(models, weights)


class Aggregator(object):
    """A node's aggregation rule together with the state it keeps across
    rounds.

    :param config: Aggregator selection and options.
    :type config: :py:class:`AggregatorConfig`
    """

    def __init__(self, config):
        self.config = config
        self.history = LossHistory() if config.kind == SENTINEL else None
        self._sentinel = config.sentinel_config() if config.kind == SENTINEL else None

    @property
    def kind(self):
        return self.config.kind

    def __call__(self, inputs):
        """Aggregate ``inputs``.

        :returns: ``(params, trace)``
        :rtype: tuple(:py:class:`dfl_sentinel.params.LayeredParams`,
          :py:class:`AggregationTrace`)"""
        trace = AggregationTrace(node=inputs.node_id, round=inputs.round, aggregator=self.kind)
        kind = self.kind
        if kind == FEDAVG:
            result = fedavg(inputs, trace)
        elif kind == MEDIAN:
            result = coordinate_median(inputs, trace)
        elif kind == TRIMMED_MEAN:
            result = trimmed_mean(inputs, self.config.trim_k, trace)
        elif kind == KRUM:
            result = krum(inputs, self.config.krum_f, self.config.krum_m, trace)
        elif kind == FLTRUST:
            result = fltrust(inputs, trace)
        else:
            result = sentinel(inputs, self._sentinel, self.history, trace)
        return result, trace


def make_aggregator(config):
    return Aggregator(config)
