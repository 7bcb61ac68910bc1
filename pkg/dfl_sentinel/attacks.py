"""Poisoning behaviors of malicious nodes.

Model poisoning corrupts the parameters a node shares; label flipping and
backdoor implanting corrupt the node's own training data. Benign nodes are
never touched."""

import logging
from dataclasses import dataclass

import numpy as np

from .data import KIND_IMAGE, KIND_TABULAR
from .exceptions import TriggerError, ConfigError
from .params import flatten, unflatten

logger = logging.getLogger(__name__)

ATTACK_NONE = 'none'
ATTACK_MODEL_POISON = 'model_poison'
ATTACK_LABEL_FLIP_UNTARGETED = 'label_flip_untargeted'
ATTACK_LABEL_FLIP_TARGETED = 'label_flip_targeted'
ATTACK_BACKDOOR = 'backdoor'
ATTACK_KINDS = (ATTACK_NONE, ATTACK_MODEL_POISON, ATTACK_LABEL_FLIP_UNTARGETED,
                ATTACK_LABEL_FLIP_TARGETED, ATTACK_BACKDOOR)

TRIGGER_IMAGE_X = 'image_x'
TRIGGER_TABULAR_ONES = 'tabular_ones'
TRIGGER_KINDS = (TRIGGER_IMAGE_X, TRIGGER_TABULAR_ONES)
CORNERS = ('top_left', 'top_right', 'bottom_left', 'bottom_right', 'center')


@dataclass(frozen=True)
class TriggerConfig:
    """Backdoor trigger geometry.

    ``image_x`` draws both diagonals of a ``size`` x ``size`` square at
    ``corner``; ``tabular_ones`` sets the first ``k`` features to 1."""
    kind: str = TRIGGER_IMAGE_X
    size: int = 5
    corner: str = 'top_left'
    k: int = 7

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ConfigError(errors)

    def validate(self):
        errors = []
        if self.kind not in TRIGGER_KINDS:
            errors.append("kind: must be one of %s, got %r" % (', '.join(TRIGGER_KINDS), self.kind))
        if self.size < 1:
            errors.append("size: must be positive, got %s" % (self.size,))
        if self.corner not in CORNERS:
            errors.append("corner: must be one of %s, got %r" % (', '.join(CORNERS), self.corner))
        if self.k < 1:
            errors.append("k: must be positive, got %s" % (self.k,))
        return errors

    @classmethod
    def default_for(cls, image):
        return cls(kind=TRIGGER_IMAGE_X) if image else cls(kind=TRIGGER_TABULAR_ONES)


@dataclass(frozen=True)
class AttackConfig:
    kind: str = ATTACK_NONE
    pnr: float = 0.0
    nr: float = 0.8
    amplitude: float = 1.0
    source: int = None
    target: int = None
    fraction: float = 0.2
    trigger: TriggerConfig = None

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ConfigError(errors)

    def validate(self):
        errors = []
        if self.kind not in ATTACK_KINDS:
            errors.append("kind: must be one of %s, got %r" % (', '.join(ATTACK_KINDS), self.kind))
        for name in ('pnr', 'nr', 'fraction'):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                errors.append("%s: must be in [0, 1], got %s" % (name, value))
        if not self.amplitude > 0:
            errors.append("amplitude: must be positive, got %s" % (self.amplitude,))
        if self.kind in (ATTACK_LABEL_FLIP_TARGETED, ATTACK_BACKDOOR) and self.target is None:
            errors.append("target: required for %s attacks" % (self.kind,))
        if self.kind == ATTACK_LABEL_FLIP_TARGETED:
            if self.source is None:
                errors.append("source: required for %s attacks" % (self.kind,))
            elif self.source == self.target:
                errors.append("source: must differ from target, both are %s" % (self.source,))
        if self.kind == ATTACK_BACKDOOR and self.trigger is None:
            errors.append("trigger: required for %s attacks" % (self.kind,))
        return errors

    @property
    def active(self):
        return self.kind != ATTACK_NONE and self.pnr > 0


def _round_half_up(value):
    return int(np.floor(value + 0.5))


def select_malicious(n_nodes, pnr, seed, observer=None):
    """Uniformly random set of ``round(pnr * n_nodes)`` node ids.

    The ``observer`` node, when given, is never selected.

    :rtype: frozenset(int)"""
    if not 0 <= pnr <= 1:
        raise ValueError("pnr must be in [0, 1], got %s" % (pnr,))
    candidates = np.array([n for n in range(n_nodes) if n != observer], dtype=np.int64)
    count = min(_round_half_up(pnr * n_nodes), candidates.size)
    rng = np.random.default_rng(seed)
    return frozenset(int(n) for n in rng.choice(candidates, count, replace=False))


def poison_model(params, nr, amplitude, seed):
    """Salt noise: replace ``round(nr * size)`` randomly chosen parameters
    with ``±amplitude``, signs drawn uniformly."""
    flat = flatten(params).copy()
    count = _round_half_up(nr * flat.size)
    if count == 0:
        return params
    rng = np.random.default_rng(seed)
    positions = rng.choice(flat.size, count, replace=False)
    signs = rng.choice(np.array([-1.0, 1.0], dtype=np.float32), count)
    flat[positions] = signs * np.float32(amplitude)
    return unflatten(flat, params.schema)


def flip_labels_untargeted(ds, seed):
    """Replace every label with a uniform draw among the other labels."""
    if ds.num_classes < 2:
        raise ValueError("Need at least two classes to flip labels")
    rng = np.random.default_rng(seed)
    shift = rng.integers(1, ds.num_classes, size=len(ds))
    return ds.with_data(labels=(ds.labels + shift) % ds.num_classes)


def flip_labels_targeted(ds, source, target):
    """Relabel every ``source`` sample as ``target``."""
    if source == target:
        raise ValueError("Source and target labels must differ, both are %s" % (source,))
    hits = ds.labels == source
    if not hits.any():
        logger.warning("Source label %s not present, labels left unchanged", source)
        return ds
    labels = ds.labels.copy()
    labels[hits] = target
    return ds.with_data(labels=labels)


def _x_cells(size, corner, height, width):
    if size > height or size > width:
        raise TriggerError("Trigger of size %s does not fit a %sx%s image" % (size, height, width))
    if corner == 'center':
        top, left = (height - size) // 2, (width - size) // 2
    else:
        top = 0 if corner.startswith('top') else height - size
        left = 0 if corner.endswith('left') else width - size
    steps = np.arange(size)
    rows = np.concatenate([top + steps, top + steps])
    cols = np.concatenate([left + steps, left + size - 1 - steps])
    return rows * width + cols


def apply_trigger(features, trigger, kind, image_shape=None):
    """Copy of ``features`` with ``trigger`` stamped onto every row."""
    features = np.array(features, dtype=np.float32, copy=True)
    if trigger.kind == TRIGGER_IMAGE_X:
        if kind != KIND_IMAGE:
            raise TriggerError("Image trigger needs image data, got %s" % (kind,))
        features[:, _x_cells(trigger.size, trigger.corner, *image_shape)] = 1.0
    else:
        if kind != KIND_TABULAR:
            raise TriggerError("Tabular trigger needs tabular data, got %s" % (kind,))
        if trigger.k > features.shape[1]:
            raise TriggerError("Trigger sets %s features of %s" % (trigger.k, features.shape[1]))
        features[:, :trigger.k] = 1.0
    return features


def implant_backdoor(ds, trigger, target, fraction=0.2, seed=0):
    """Stamp ``trigger`` onto a random ``fraction`` of samples and relabel
    them as ``target``."""
    count = _round_half_up(fraction * len(ds))
    if count == 0:
        return ds
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(len(ds), count, replace=False))
    features = ds.features.copy()
    features[chosen] = apply_trigger(ds.features[chosen], trigger, ds.kind, ds.image_shape)
    labels = ds.labels.copy()
    labels[chosen] = target
    return ds.with_data(features=features, labels=labels)


def build_backdoor_eval_set(test, trigger, target):
    """Triggered copy of every test sample with the original labels kept.

    Samples already labelled ``target`` stay in the set; backdoor accuracy
    discounts them."""
    if len(test) == 0:
        raise ValueError("Cannot build a backdoor set from an empty test set")
    logger.debug("Backdoor evaluation set of %s samples, %s already of target class %s",
                  len(test), int((test.labels == target).sum()), target)
    return test.with_data(features=apply_trigger(test.features, trigger, test.kind,
                                                 test.image_shape))


def poison_training_data(ds, attack, seed):
    """Apply the data side of ``attack`` to a malicious node's training
    set. Model poisoning leaves data untouched."""
    if attack.kind == ATTACK_LABEL_FLIP_UNTARGETED:
        return flip_labels_untargeted(ds, seed)
    if attack.kind == ATTACK_LABEL_FLIP_TARGETED:
        return flip_labels_targeted(ds, attack.source, attack.target)
    if attack.kind == ATTACK_BACKDOOR:
        return implant_backdoor(ds, attack.trigger, attack.target, attack.fraction, seed)
    return ds
