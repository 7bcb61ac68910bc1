"""Layered model parameters and the algebra aggregators are built on.

A :py:class:`LayeredParams` is an ordered, immutable sequence of named
layers, each either a matrix (weights, one row per output unit) or a vector
(biases). Values are stored as 32-bit floats; every reduction accumulates
in 64-bit."""

import struct
from collections import namedtuple

import numpy as np

from .exceptions import ShapeError, WeightsError, FormatError, DegenerateAggregation

LPRM_MAGIC = b'LPRM'
LPRM_VERSION = 1

KIND_VECTOR = 0
KIND_MATRIX = 1

_HEADER = struct.Struct('<4sHI')
_U16 = struct.Struct('<H')
_U8 = struct.Struct('<B')
_U32 = struct.Struct('<I')


class Layer(namedtuple('Layer', ('name', 'values'))):
    """One named layer. ``values`` is a read-only float32 array of one or
    two dimensions."""

    __slots__ = ()

    @property
    def kind(self):
        return KIND_MATRIX if self.values.ndim == 2 else KIND_VECTOR

    @property
    def shape(self):
        return self.values.shape

    def rows(self):
        """Values as a 2-D float64 array - vectors are a single row."""
        return np.atleast_2d(self.values).astype(np.float64)


def _freeze(values):
    arr = np.array(values, dtype=np.float32, copy=True)
    if arr.ndim not in (1, 2):
        raise ShapeError("Layers must be vectors or matrices, got %s dimensions" % (arr.ndim,))
    arr.setflags(write=False)
    return arr


class LayeredParams(object):
    """Ordered list of named layers holding one model's parameters.

    :param layers: Iterable of ``(name, values)`` pairs in model order.
    """

    __slots__ = ('_layers',)

    def __init__(self, layers):
        frozen = []
        for name, values in layers:
            frozen.append(Layer(str(name), _freeze(values)))
        self._layers = tuple(frozen)

    def __iter__(self):
        return iter(self._layers)

    def __len__(self):
        return len(self._layers)

    def __getitem__(self, idx):
        return self._layers[idx]

    def __repr__(self):
        return "LayeredParams(%s)" % (
            ', '.join('%s%s' % (l.name, list(l.shape)) for l in self._layers),)

    @property
    def names(self):
        return tuple(l.name for l in self._layers)

    @property
    def schema(self):
        """Tuple of ``(name, shape)`` pairs; the inverse of
        :py:func:`flatten` needs it."""
        return tuple((l.name, l.shape) for l in self._layers)

    @property
    def size(self):
        """Total number of scalar parameters."""
        return int(sum(l.values.size for l in self._layers))

    def arrays(self):
        return [l.values for l in self._layers]

    def is_compatible(self, other):
        return self.schema == other.schema

    def check_compatible(self, other):
        if not self.is_compatible(other):
            raise ShapeError("Parameter sets are not shape-compatible: %r vs %r" % (self, other))

    def all_finite(self):
        return all(np.isfinite(l.values).all() for l in self._layers)

    def map(self, func):
        """New params with ``func(values)`` applied to every layer."""
        return LayeredParams((l.name, func(l.values)) for l in self._layers)

    def equals(self, other):
        """Bit-exact equality of names, shapes and values."""
        if not self.is_compatible(other):
            return False
        return all(np.array_equal(a.values, b.values) for a, b in zip(self, other))

    def to_bytes(self):
        return dumps(self)

    @classmethod
    def from_bytes(cls, blob):
        return loads(blob)


def cosine_similarity(p, m):
    """Layer-wise average of row-wise average cosine similarity.

    Each matrix row of ``p`` is compared to the corresponding row of ``m``;
    vector layers count as a single row. Rows with zero norm on either side
    contribute 0 to their layer's average.

    :param p: Neighbor parameters.
    :type p: :py:class:`LayeredParams`
    :param m: Local parameters.
    :type m: :py:class:`LayeredParams`
    :rtype: float
    :raises: :py:class:`dfl_sentinel.exceptions.ShapeError` on mismatch."""
    p.check_compatible(m)
    if len(m) == 0:
        raise ShapeError("Cannot compare empty parameter sets")
    layer_sims = []
    for lp, lm in zip(p, m):
        a = lp.rows()
        b = lm.rows()
        dots = np.einsum('ij,ij->i', a, b)
        norms = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
        valid = norms > 0
        cos = np.zeros_like(dots)
        cos[valid] = dots[valid] / norms[valid]
        layer_sims.append(cos.mean())
    return float(np.clip(np.mean(layer_sims), -1.0, 1.0))


def layer_norms(p):
    """Frobenius norm of every layer, in layer order.

    :rtype: list(float)"""
    return [float(np.linalg.norm(l.values.astype(np.float64))) for l in p]


def weighted_average(params, weights):
    """Element-wise convex combination of compatible parameter sets.

    Weights are normalised to sum to one.

    :raises: :py:class:`dfl_sentinel.exceptions.DegenerateAggregation` when
      weights sum to zero."""
    params = list(params)
    w = np.asarray(weights, dtype=np.float64)
    if not params or w.shape != (len(params),):
        raise ShapeError("Need one weight per parameter set, got %s weights for %s sets" % (
            w.size, len(params)))
    if (w < 0).any() or not np.isfinite(w).all():
        raise WeightsError("Weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise DegenerateAggregation("Aggregation weights sum to zero")
    first = params[0]
    for other in params[1:]:
        first.check_compatible(other)
    w = w / total
    layers = []
    for idx, layer in enumerate(first):
        acc = np.zeros(layer.shape, dtype=np.float64)
        for weight, p in zip(w, params):
            if weight:
                acc += weight * p[idx].values.astype(np.float64)
        layers.append((layer.name, acc))
    return LayeredParams(layers)


def flatten(p):
    """Concatenate all layers in order, row-major within each layer.

    :rtype: :py:class:`numpy.ndarray` of float32"""
    if len(p) == 0:
        return np.zeros(0, dtype=np.float32)
    return np.concatenate([l.values.ravel() for l in p])


def unflatten(vector, schema):
    """Inverse of :py:func:`flatten` for a ``(name, shape)`` schema."""
    vector = np.asarray(vector)
    expected = sum(int(np.prod(shape)) for _, shape in schema)
    if vector.ndim != 1 or vector.size != expected:
        raise ShapeError("Vector of size %s does not match schema of size %s" % (
            vector.size, expected))
    layers = []
    offset = 0
    for name, shape in schema:
        count = int(np.prod(shape))
        layers.append((name, vector[offset:offset + count].reshape(shape)))
        offset += count
    return LayeredParams(layers)


def stack(params):
    """Flattened parameter sets as the rows of one float64 matrix."""
    params = list(params)
    for other in params[1:]:
        params[0].check_compatible(other)
    return np.vstack([flatten(p).astype(np.float64) for p in params])


def dumps(p):
    """Serialise to the self-describing ``LPRM`` binary format.

    Header is magic, u16 version and u32 layer count. Each layer is a u16
    name length, UTF-8 name, u8 kind tag, one u32 per dimension and a
    little-endian float32 payload.

    :rtype: bytes"""
    chunks = [_HEADER.pack(LPRM_MAGIC, LPRM_VERSION, len(p))]
    for layer in p:
        name = layer.name.encode('utf-8')
        chunks.append(_U16.pack(len(name)))
        chunks.append(name)
        chunks.append(_U8.pack(layer.kind))
        for dim in layer.shape:
            chunks.append(_U32.pack(dim))
        chunks.append(layer.values.astype('<f4').tobytes())
    return b''.join(chunks)


class _Reader(object):

    def __init__(self, blob):
        self.blob = memoryview(blob)
        self.pos = 0

    def take(self, size):
        if self.pos + size > len(self.blob):
            raise FormatError("Truncated LPRM data at offset %s" % (self.pos,))
        chunk = self.blob[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt):
        return fmt.unpack(self.take(fmt.size))


def loads(blob):
    """Parse ``LPRM`` bytes produced by :py:func:`dumps`.

    :raises: :py:class:`dfl_sentinel.exceptions.FormatError` on bad magic,
      unknown version, unknown kind tag, truncation or trailing bytes."""
    reader = _Reader(blob)
    magic, version, count = reader.unpack(_HEADER)
    if magic != LPRM_MAGIC:
        raise FormatError("Bad LPRM magic %r" % (bytes(magic),))
    if version != LPRM_VERSION:
        raise FormatError("Unsupported LPRM version %s" % (version,))
    layers = []
    for _ in range(count):
        name_len, = reader.unpack(_U16)
        name = bytes(reader.take(name_len)).decode('utf-8')
        kind, = reader.unpack(_U8)
        if kind == KIND_MATRIX:
            shape = (reader.unpack(_U32)[0], reader.unpack(_U32)[0])
        elif kind == KIND_VECTOR:
            shape = (reader.unpack(_U32)[0],)
        else:
            raise FormatError("Unknown layer kind tag %s for layer %s" % (kind, name))
        size = int(np.prod(shape))
        values = np.frombuffer(reader.take(4 * size), dtype='<f4').reshape(shape)
        layers.append((name, values))
    if reader.pos != len(reader.blob):
        raise FormatError("%s trailing bytes after LPRM data" % (len(reader.blob) - reader.pos,))
    return LayeredParams(layers)


def save(p, path):
    with open(path, 'wb') as fh:
        fh.write(dumps(p))


def load(path):
    with open(path, 'rb') as fh:
        return loads(fh.read())
