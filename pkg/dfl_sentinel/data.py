"""Datasets, federated partitioning and bootstrap sampling."""

import gzip
import logging
import os
import struct
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import FormatError, InsufficientSamples, DatasetNotFound, \
    ConfigError
from .utils import derive_seed, make_rng, STREAM_SUBSET, STREAM_SYNTH, \
    STREAM_PARTITION, STREAM_BOOTSTRAP

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

KIND_IMAGE = 'image'
KIND_TABULAR = 'tabular'

DATA_DIR_ENV = 'DFL_SENTINEL_DATA'

DATASET_KINDS = ('mnist', 'fashion_mnist', 'synthetic_tabular', 'synthetic_image')
IDX_TRAIN_FILES = ('train-images-idx3-ubyte', 'train-labels-idx1-ubyte')

PARTITION_MODES = ('iid', 'dirichlet')


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix and integer labels.

    ``index`` holds every row's position in the originally loaded data, so
    partitions can be exported and audited."""
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    kind: str = KIND_TABULAR
    image_shape: tuple = None
    index: np.ndarray = None

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or features.shape[0] != labels.shape[0]:
            raise ValueError("Features %s and labels %s do not line up" % (
                features.shape, labels.shape))
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError("Labels must be in [0, %s)" % (self.num_classes,))
        if self.kind == KIND_IMAGE:
            if self.image_shape is None or \
                    int(np.prod(self.image_shape)) != features.shape[1]:
                raise ValueError("Image shape %s does not match %s features" % (
                    self.image_shape, features.shape[1]))
        index = np.arange(labels.size) if self.index is None \
            else np.asarray(self.index, dtype=np.int64)
        for arr in (features, labels, index):
            arr.setflags(write=False)
        object.__setattr__(self, 'features', features)
        object.__setattr__(self, 'labels', labels)
        object.__setattr__(self, 'index', index)
        if self.image_shape is not None:
            object.__setattr__(self, 'image_shape', tuple(self.image_shape))

    def __len__(self):
        return int(self.labels.size)

    @property
    def dims(self):
        return int(self.features.shape[1])

    def subset(self, positions):
        positions = np.asarray(positions, dtype=np.int64)
        return replace(self, features=self.features[positions],
                       labels=self.labels[positions], index=self.index[positions])

    def with_data(self, features=None, labels=None):
        """Copy with replaced features and/or labels; index is kept."""
        return replace(self,
                       features=self.features if features is None else features,
                       labels=self.labels if labels is None else labels)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True, eq=False)
class NodeData:
    train: Dataset
    val: Dataset
    test: Dataset
    bootstrap: Dataset

    def manifest(self):
        return {split: getattr(self, split).index.tolist()
                for split in ('train', 'val', 'test', 'bootstrap')}


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = 'mnist'
    path: str = None
    subset: int = None
    classes: int = 10
    dims: int = 32
    samples: int = 13000
    separation: float = 1.0
    noise: float = 1.0
    side: int = 28

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ConfigError(errors)

    def validate(self):
        errors = []
        if self.kind not in DATASET_KINDS:
            errors.append("kind: must be one of %s, got %r" % (', '.join(DATASET_KINDS), self.kind))
        if self.subset is not None and self.subset < 1:
            errors.append("subset: must be positive, got %s" % (self.subset,))
        if self.classes < 2:
            errors.append("classes: must be at least 2, got %s" % (self.classes,))
        for name in ('dims', 'samples', 'side'):
            if getattr(self, name) < 1:
                errors.append("%s: must be positive, got %s" % (name, getattr(self, name)))
        for name in ('separation', 'noise'):
            if not getattr(self, name) >= 0:
                errors.append("%s: must be non-negative, got %s" % (name, getattr(self, name)))
        return errors

    @property
    def is_image(self):
        return self.kind in ('mnist', 'fashion_mnist', 'synthetic_image')


@dataclass(frozen=True)
class PartitionConfig:
    mode: str = 'iid'
    alpha: float = 0.5
    nodes: int = 10
    seed: int = 0
    test_fraction: float = 1.0 / 7
    val_fraction: float = 0.1

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ConfigError(errors)

    def validate(self):
        errors = []
        if self.mode not in PARTITION_MODES:
            errors.append("mode: must be one of %s, got %r" % (', '.join(PARTITION_MODES),
                                                              self.mode))
        if not self.alpha > 0:
            errors.append("alpha: must be positive, got %s" % (self.alpha,))
        if self.nodes < 1:
            errors.append("nodes: must be at least 1, got %s" % (self.nodes,))
        for name in ('test_fraction', 'val_fraction'):
            if not 0 < getattr(self, name) < 1:
                errors.append("%s: must be in (0, 1), got %s" % (name, getattr(self, name)))
        return errors


def _open(path):
    if str(path).endswith('.gz'):
        return gzip.open(path, 'rb')
    return open(path, 'rb')


def _read_idx(path, magic):
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise FormatError("%s: truncated IDX header" % (path,))
    found, = struct.unpack('>I', raw[:4])
    if found != magic:
        raise FormatError("%s: bad IDX magic number 0x%08x, expected 0x%08x" % (
            path, found, magic))
    ndim = magic & 0xff
    header_size = 4 + 4 * ndim
    if len(raw) < header_size:
        raise FormatError("%s: truncated IDX header" % (path,))
    dims = struct.unpack('>%sI' % (ndim,), raw[4:header_size])
    expected = int(np.prod(dims))
    if len(raw) - header_size < expected:
        raise FormatError("%s: truncated IDX data, expected %s bytes, found %s" % (
            path, expected, len(raw) - header_size))
    data = np.frombuffer(raw, dtype=np.uint8, count=expected, offset=header_size)
    return data.reshape(dims)


def load_idx_images(images_path, labels_path, num_classes=None):
    """Load an IDX image/label file pair, scaling pixels to ``[0, 1]``.

    Files ending in ``.gz`` are decompressed transparently.

    :raises: :py:class:`dfl_sentinel.exceptions.FormatError` on bad magic
      number, truncated file or image/label count mismatch."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise FormatError("%s images but %s labels" % (images.shape[0], labels.shape[0]))
    count, rows, cols = images.shape
    if num_classes is None:
        num_classes = max(int(labels.max()) + 1 if count else 0, 2)
    features = images.reshape(count, rows * cols).astype(np.float32) / np.float32(255.0)
    return Dataset(features, labels.astype(np.int64), num_classes,
                   kind=KIND_IMAGE, image_shape=(rows, cols))


def _balanced_labels(classes, samples, rng):
    per_class = np.full(classes, samples // classes)
    per_class[:samples % classes] += 1
    labels = np.repeat(np.arange(classes), per_class)
    return labels[rng.permutation(samples)]


def synth_tabular(classes, dims, samples, seed, separation=1.0, noise=1.0):
    """Gaussian class clusters around fixed per-class means, balanced
    across classes."""
    if classes < 2:
        raise ValueError("Need at least two classes, got %s" % (classes,))
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, separation, size=(classes, dims))
    labels = _balanced_labels(classes, samples, rng)
    features = means[labels] + rng.normal(0.0, noise, size=(samples, dims))
    return Dataset(features, labels, classes, kind=KIND_TABULAR)


def synth_images(classes, side, samples, seed, noise=0.15):
    """Square grey-scale images in ``[0, 1]``: a fixed random binary
    template per class plus Gaussian pixel noise."""
    if classes < 2:
        raise ValueError("Need at least two classes, got %s" % (classes,))
    rng = np.random.default_rng(seed)
    templates = (rng.random((classes, side * side)) > 0.7).astype(np.float64) * 0.9
    labels = _balanced_labels(classes, samples, rng)
    features = np.clip(templates[labels] + rng.normal(0.0, noise, size=(samples, side * side)),
                       0.0, 1.0)
    return Dataset(features, labels, classes, kind=KIND_IMAGE, image_shape=(side, side))


def _find_idx_files(spec):
    base = spec.path
    if base is None:
        cache = os.environ.get(DATA_DIR_ENV)
        if not cache:
            raise DatasetNotFound("No path given for %s and %s is not set" % (
                spec.kind, DATA_DIR_ENV))
        base = os.path.join(cache, spec.kind)
    found = []
    for name in IDX_TRAIN_FILES:
        for candidate in (name, name + '.gz'):
            path = os.path.join(base, candidate)
            if os.path.isfile(path):
                found.append(path)
                break
        else:
            raise DatasetNotFound("%s not found in %s" % (name, base))
    return found


def load_dataset(spec, seed):
    """Load or generate the dataset described by ``spec``.

    A ``subset`` keeps that many rows, chosen by a seeded draw and kept in
    file order.

    :type spec: :py:class:`DatasetSpec`
    :rtype: :py:class:`Dataset`"""
    if spec.kind in ('mnist', 'fashion_mnist'):
        images_path, labels_path = _find_idx_files(spec)
        logger.info("Loading %s from %s", spec.kind, images_path)
        ds = load_idx_images(images_path, labels_path, num_classes=10)
    elif spec.kind == 'synthetic_tabular':
        ds = synth_tabular(spec.classes, spec.dims, spec.samples,
                           derive_seed(seed, STREAM_SYNTH),
                           separation=spec.separation, noise=spec.noise)
    else:
        ds = synth_images(spec.classes, spec.side, spec.samples,
                          derive_seed(seed, STREAM_SYNTH))
    if spec.subset is not None and spec.subset < len(ds):
        rng = make_rng(seed, STREAM_SUBSET)
        ds = ds.subset(np.sort(rng.choice(len(ds), spec.subset, replace=False)))
    return ds


def _iid_allocations(ds, nodes, rng):
    order = np.concatenate([rng.permutation(np.flatnonzero(ds.labels == c))
                            for c in range(ds.num_classes)])
    return [order[node::nodes] for node in range(nodes)]


def _largest_remainder(proportions, total):
    raw = proportions * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        counts[np.argsort(-(raw - counts), kind='stable')[:short]] += 1
    return counts


def _capped_deal(proportions, total, room):
    """Largest-remainder split of ``total`` samples that never exceeds
    ``room``. Overflow goes to the nodes with room left, in proportion."""
    counts = np.zeros(room.size, dtype=np.int64)
    remaining = total
    while remaining > 0:
        left = room - counts
        weights = proportions * (left > 0)
        if weights.sum() <= 0:
            weights = left.astype(np.float64)
        share = np.minimum(_largest_remainder(weights / weights.sum(), remaining), left)
        counts += share
        remaining -= int(share.sum())
    return counts


def _dirichlet_allocations(ds, nodes, alpha, rng):
    # Equal sizes up to one sample, label mix drawn per class
    room = np.full(nodes, len(ds) // nodes, dtype=np.int64)
    room[:len(ds) % nodes] += 1
    allocations = [[] for _ in range(nodes)]
    for c in rng.permutation(ds.num_classes):
        members = rng.permutation(np.flatnonzero(ds.labels == c))
        proportions = rng.dirichlet(np.full(nodes, alpha))
        counts = _capped_deal(proportions, members.size, room)
        room -= counts
        for node, chunk in enumerate(np.split(members, np.cumsum(counts)[:-1])):
            allocations[node].append(chunk)
    logger.debug("Dirichlet(%s) partition dealt %s classes over %s nodes",
                 alpha, ds.num_classes, nodes)
    return [np.concatenate(chunks) for chunks in allocations]


def sample_bootstrap(val, seed, divisor=3, minimum=300):
    """Draw the bootstrap set - a third of ``val`` or at least ``minimum``
    samples, never more than ``val`` holds - without replacement."""
    if len(val) == 0:
        raise InsufficientSamples("Cannot sample a bootstrap set from an empty dataset")
    size = min(len(val), max(-(-len(val) // divisor), minimum))
    rng = np.random.default_rng(seed)
    return val.subset(np.sort(rng.choice(len(val), size, replace=False)))


def partition(ds, cfg):
    """Split ``ds`` into per-node train/val/test/bootstrap sets.

    Node allocations are disjoint. Each allocation is split into a test
    part (``test_fraction``) and a training part, from which
    ``val_fraction`` is held out as validation data.

    :type ds: :py:class:`Dataset`
    :type cfg: :py:class:`PartitionConfig`
    :rtype: list(:py:class:`NodeData`)
    :raises: :py:class:`dfl_sentinel.exceptions.InsufficientSamples`"""
    if len(ds) < cfg.nodes * ds.num_classes:
        raise InsufficientSamples("%s samples cannot give %s nodes %s samples each" % (
            len(ds), cfg.nodes, ds.num_classes))
    rng = make_rng(cfg.seed, STREAM_PARTITION)
    if cfg.mode == 'iid':
        allocations = _iid_allocations(ds, cfg.nodes, rng)
    else:
        allocations = _dirichlet_allocations(ds, cfg.nodes, cfg.alpha, rng)
    nodes = []
    for node, positions in enumerate(allocations):
        positions = rng.permutation(positions)
        n_test = int(round(positions.size * cfg.test_fraction))
        n_val = int(round((positions.size - n_test) * cfg.val_fraction))
        n_train = positions.size - n_test - n_val
        if min(n_test, n_val, n_train) < 1:
            raise InsufficientSamples("Node %s allocation of %s samples is too small to split" % (
                node, positions.size))
        test = ds.subset(positions[:n_test])
        val = ds.subset(positions[n_test:n_test + n_val])
        train = ds.subset(positions[n_test + n_val:])
        bootstrap = sample_bootstrap(val, derive_seed(cfg.seed, node, STREAM_BOOTSTRAP))
        nodes.append(NodeData(train=train, val=val, test=test, bootstrap=bootstrap))
        logger.debug("Node %s: %s train, %s val, %s test, %s bootstrap",
                     node, len(train), len(val), len(test), len(bootstrap))
    return nodes


def partition_manifest(nodes):
    """JSON-ready mapping of node id to split to original sample indices."""
    return {'nodes': {str(node): data.manifest() for node, data in enumerate(nodes)}}
