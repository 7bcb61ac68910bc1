"""Experiment configuration files.

An experiment is described by one JSON object. Unknown keys are rejected
and every error names the dotted path of the offending field, e.g.
``attack.pnr: must be in [0, 1], got 1.5``. Files and strings parsed with
:py:func:`loads_config` also get the line and column of the key.
:py:func:`dump_config` gives the fully-defaulted form, which parses back to
an equal configuration.

Sentinel thresholds and the experiment ``seed`` have no defaults and must be
given explicitly.
"""

import json
import logging
import re
from dataclasses import dataclass, field, fields, is_dataclass

from .aggregate import AggregatorConfig
from .attacks import AttackConfig, TriggerConfig, TRIGGER_IMAGE_X, ATTACK_BACKDOOR
from .data import DatasetSpec, PartitionConfig
from .exceptions import ConfigError
from .metrics import MetricsConfig
from .model import ModelConfig, TrainConfig
from .report import OutputConfig
from .sim import FederationConfig

logger = logging.getLogger(__name__)

IMAGE_HIDDEN_DIMS = (256, 128)
TABULAR_HIDDEN_DIMS = (256,)
IDX_KINDS = ('mnist', 'fashion_mnist')
IDX_CLASSES = 10
IDX_SIDE = 28

# Section name -> (type, fields filled in at run time)
SECTIONS = (
    ('dataset', DatasetSpec, ()),
    ('partition', PartitionConfig, ('nodes', 'seed')),
    ('federation', FederationConfig, ()),
    ('model', ModelConfig, ()),
    ('train', TrainConfig, ('seed',)),
    ('attack', AttackConfig, ()),
    ('aggregator', AggregatorConfig, ()),
    ('metrics', MetricsConfig, ()),
    ('output', OutputConfig, ()),
)
TOP_LEVEL_KEYS = ('name', 'seed', 'repeats') + tuple(name for name, _, _ in SECTIONS)


@dataclass(frozen=True)
class ExperimentConfig:
    """A complete experiment.

    ``partition.nodes`` and ``partition.seed`` as well as ``train.seed`` are
    replaced per run from ``federation.n_nodes`` and the run seed."""
    seed: int
    name: str = 'experiment'
    repeats: int = 1
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    federation: FederationConfig = field(default_factory=FederationConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    aggregator: AggregatorConfig = field(default_factory=AggregatorConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ConfigError(errors)

    @property
    def num_classes(self):
        if self.dataset.kind in IDX_KINDS:
            return IDX_CLASSES
        return self.dataset.classes

    @property
    def image_side(self):
        return IDX_SIDE if self.dataset.kind in IDX_KINDS else self.dataset.side

    def validate(self):
        errors = []
        if self.seed < 0:
            errors.append("seed: must be non-negative, got %s" % (self.seed,))
        if self.repeats < 1:
            errors.append("repeats: must be at least 1, got %s" % (self.repeats,))
        attack = self.attack
        for name in ('source', 'target'):
            label = getattr(attack, name)
            if label is not None and not 0 <= label < self.num_classes:
                errors.append("attack.%s: must be a label below %s, got %s" % (
                    name, self.num_classes, label))
        trigger = attack.trigger
        if trigger is not None:
            if trigger.kind == TRIGGER_IMAGE_X:
                side = self.image_side
                if not self.dataset.is_image:
                    errors.append("attack.trigger.kind: image trigger needs an image dataset")
                elif trigger.size > side:
                    errors.append("attack.trigger.size: %s does not fit %sx%s images" % (
                        trigger.size, side, side))
            elif self.dataset.is_image:
                errors.append("attack.trigger.kind: tabular trigger needs a tabular dataset")
            elif trigger.k > self.dataset.dims:
                errors.append("attack.trigger.k: %s exceeds %s features" % (
                    trigger.k, self.dataset.dims))
        return errors


def _coerce(value, kind, default, path, errors):
    if value is None:
        if default is None:
            return None
        errors.append("%s: must not be null" % (path,))
    elif kind is bool:
        if isinstance(value, bool):
            return value
        errors.append("%s: must be true or false, got %r" % (path, value))
    elif kind is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        errors.append("%s: must be an integer, got %r" % (path, value))
    elif kind is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        errors.append("%s: must be a number, got %r" % (path, value))
    elif kind is str:
        if isinstance(value, str):
            return value
        errors.append("%s: must be a string, got %r" % (path, value))
    elif kind is tuple:
        if isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool)
                                           for v in value):
            return tuple(value)
        errors.append("%s: must be a list of integers, got %r" % (path, value))
    else:
        raise TypeError("No parser for %s values" % (kind,))
    return None


def _adjacency(value, path, errors):
    if value is None:
        return None
    if not isinstance(value, list) or not all(
            isinstance(row, list) and all(isinstance(v, int) and not isinstance(v, bool)
                                          for v in row) for row in value):
        errors.append("%s: must be a list of lists of integers" % (path,))
        return None
    return tuple(tuple(row) for row in value)


def _overrides(value, path, errors):
    if not isinstance(value, dict):
        errors.append("%s: must be an object" % (path,))
        return {}
    overrides = {}
    for key in sorted(value, key=lambda k: (len(k), k)):
        if not key.isdigit():
            errors.append("%s.%s: keys must be node ids" % (path, key))
            continue
        built = _build(AggregatorConfig, value[key], '%s.%s' % (path, key), errors)
        if built is not None:
            overrides[int(key)] = built
    return overrides


_SPECIAL = {
    (FederationConfig, 'adjacency'): _adjacency,
    (FederationConfig, 'aggregator_overrides'): _overrides,
}


def _build(cls, data, path, errors, exclude=()):
    """Instantiate dataclass ``cls`` from the JSON object ``data``, adding
    any problems to ``errors``."""
    if not isinstance(data, dict):
        errors.append("%s: must be an object" % (path,))
        return None
    known = [f for f in fields(cls) if f.name not in exclude]
    names = set(f.name for f in known)
    before = len(errors)
    for key in sorted(data):
        if key not in names:
            errors.append("%s.%s: unknown key" % (path, key))
    kwargs = {}
    for f in known:
        if f.name not in data:
            continue
        sub_path = '%s.%s' % (path, f.name)
        value = data[f.name]
        if (cls, f.name) in _SPECIAL:
            kwargs[f.name] = _SPECIAL[cls, f.name](value, sub_path, errors)
        elif is_dataclass(f.type):
            kwargs[f.name] = None if value is None and f.default is None else \
                _build(f.type, value, sub_path, errors)
        else:
            kwargs[f.name] = _coerce(value, f.type, f.default, sub_path, errors)
    if len(errors) > before:
        return None
    try:
        return cls(**kwargs)
    except ConfigError as ex:
        errors.extend('%s.%s' % (path, message) for message in ex.errors)
    return None


def _with_defaults(data, dataset):
    """Fill the defaults that depend on the dataset kind."""
    sections = dict((name, dict(data[name])) for name in ('model', 'attack')
                    if isinstance(data.get(name), dict))
    if 'model' not in data:
        sections['model'] = {}
    model = sections.get('model')
    if dataset is not None and model is not None and 'hidden_dims' not in model:
        model['hidden_dims'] = list(IMAGE_HIDDEN_DIMS if dataset.is_image
                                    else TABULAR_HIDDEN_DIMS)
    attack = sections.get('attack')
    if dataset is not None and attack is not None and attack.get('kind') == ATTACK_BACKDOOR \
            and 'trigger' not in attack:
        attack['trigger'] = _dump(TriggerConfig.default_for(dataset.is_image))
    merged = dict(data)
    merged.update(sections)
    return merged


def load_config(data):
    """Build an :py:class:`ExperimentConfig` from a parsed JSON object.

    :raises: :py:class:`dfl_sentinel.exceptions.ConfigError` listing every
      problem found."""
    if not isinstance(data, dict):
        raise ConfigError(["configuration must be a JSON object"])
    errors = []
    for key in sorted(data):
        if key not in TOP_LEVEL_KEYS:
            errors.append("%s: unknown key" % (key,))
    kwargs = {}
    if 'seed' not in data:
        errors.append("seed: required")
    else:
        kwargs['seed'] = _coerce(data['seed'], int, 0, 'seed', errors)
    if 'name' in data:
        kwargs['name'] = _coerce(data['name'], str, 'experiment', 'name', errors)
    if 'repeats' in data:
        kwargs['repeats'] = _coerce(data['repeats'], int, 1, 'repeats', errors)
    dataset = _build(DatasetSpec, data.get('dataset', {}), 'dataset', errors)
    if dataset is not None:
        kwargs['dataset'] = dataset
    data = _with_defaults(data, dataset)
    for name, cls, exclude in SECTIONS[1:]:
        if name in data:
            kwargs[name] = _build(cls, data[name], name, errors, exclude)
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(**kwargs)


def _reject_duplicates(pairs):
    keys = [key for key, _ in pairs]
    duplicates = sorted(set(key for key in keys if keys.count(key) > 1))
    if duplicates:
        raise ConfigError(["duplicate key %s" % (', '.join(duplicates),)])
    return dict(pairs)


_DECODER = json.JSONDecoder()
_PATH_RE = re.compile(r'[A-Za-z_][\w.]*')


def _key_position(text, path):
    """1-based line and column of the deepest key along dotted ``path`` that
    appears in ``text``, or ``None``. Each key is looked up inside the
    value of its parent."""
    start, end, found = 0, len(text), None
    for key in path.split('.'):
        match = re.compile(r'"%s"\s*:\s*' % (re.escape(key),)).search(text, start, end)
        if match is None:
            break
        found = match.start()
        try:
            _, end = _DECODER.raw_decode(text, match.end())
        except ValueError:
            break
        start = match.end()
    if found is None:
        return None
    return text.count('\n', 0, found) + 1, found - text.rfind('\n', 0, found)


def _locate(text, source, messages):
    located = []
    for message in messages:
        match = _PATH_RE.match(message)
        position = _key_position(text, match.group(0)) if match else None
        if position is None:
            located.append("%s: %s" % (source, message))
        else:
            located.append("%s: line %s column %s: %s" % (source, position[0], position[1],
                                                           message))
    return located


def loads_config(text, source='<string>'):
    """Parse and validate experiment JSON ``text``.

    Errors are prefixed with ``source`` and the line and column of the
    offending key, or of its closest enclosing key when it is missing."""
    try:
        data = json.loads(text, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as ex:
        raise ConfigError(["%s: line %s column %s: %s" % (source, ex.lineno, ex.colno, ex.msg)])
    try:
        return load_config(data)
    except ConfigError as ex:
        raise ConfigError(_locate(text, source, ex.errors))


def parse_config(path):
    """Read and validate the experiment file at ``path``.

    :rtype: :py:class:`ExperimentConfig`
    :raises: :py:class:`dfl_sentinel.exceptions.ConfigError`"""
    try:
        with open(path) as fh:
            text = fh.read()
    except (OSError, UnicodeDecodeError) as ex:
        raise ConfigError(["%s: cannot read configuration: %s" % (path, ex)])
    cfg = loads_config(text, source=path)
    logger.debug("Loaded experiment %s from %s", cfg.name, path)
    return cfg


def _value(value):
    if is_dataclass(value):
        return _dump(value)
    if isinstance(value, tuple):
        return [_value(v) for v in value]
    if isinstance(value, dict):
        return dict((str(k), _value(v)) for k, v in sorted(value.items()))
    return value


def _dump(obj, exclude=()):
    return dict((f.name, _value(getattr(obj, f.name)))
                for f in fields(obj) if f.name not in exclude)


def dump_config(cfg):
    """Fully-defaulted JSON-ready form of ``cfg``.

    :rtype: dict"""
    out = {'name': cfg.name, 'seed': cfg.seed, 'repeats': cfg.repeats}
    for name, _, exclude in SECTIONS:
        out[name] = _dump(getattr(cfg, name), exclude)
    return out


def dumps_config(cfg):
    return json.dumps(dump_config(cfg), sort_keys=True, indent=2) + '\n'

