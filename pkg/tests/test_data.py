import gzip
import os
import struct
from unittest import mock

import numpy as np

from dfl_sentinel.data import Dataset, DatasetSpec, PartitionConfig, load_idx_images, \
    load_dataset, synth_tabular, synth_images, partition, partition_manifest, \
    sample_bootstrap, DATA_DIR_ENV, KIND_IMAGE, KIND_TABULAR
from dfl_sentinel.exceptions import ConfigError, FormatError, DatasetNotFound, \
    InsufficientSamples

from .base_test import DFLSentinelTestCase


def _idx_images(images):
    count, rows, cols = images.shape
    return struct.pack('>IIII', 0x803, count, rows, cols) + images.astype(np.uint8).tobytes()


def _idx_labels(labels):
    return struct.pack('>II', 0x801, len(labels)) + np.asarray(labels, dtype=np.uint8).tobytes()


class IDXTest(DFLSentinelTestCase):

    def setUp(self):
        super(IDXTest, self).setUp()
        self.dir = self.make_tmpdir()
        self.images = self.rng.integers(0, 256, size=(6, 3, 2))
        self.labels = [0, 1, 2, 1, 0, 9]

    def _write(self, name, blob, compress=False):
        path = os.path.join(self.dir, name + ('.gz' if compress else ''))
        opener = gzip.open if compress else open
        with opener(path, 'wb') as fh:
            fh.write(blob)
        return path

    def test_load(self):
        images = self._write('images', _idx_images(self.images))
        labels = self._write('labels', _idx_labels(self.labels))
        ds = load_idx_images(images, labels, num_classes=10)
        self.assertEqual(len(ds), 6)
        self.assertEqual(ds.kind, KIND_IMAGE)
        self.assertEqual(ds.image_shape, (3, 2))
        self.assertEqual(ds.features.dtype, np.float32)
        np.testing.assert_allclose(ds.features, self.images.reshape(6, 6) / 255.0, rtol=1e-6)
        self.assertEqual(ds.labels.tolist(), self.labels)

    def test_load_gzip(self):
        images = self._write('images', _idx_images(self.images), compress=True)
        labels = self._write('labels', _idx_labels(self.labels), compress=True)
        self.assertEqual(len(load_idx_images(images, labels, num_classes=10)), 6)

    def test_bad_magic(self):
        images = self._write('images', _idx_labels(self.labels))
        labels = self._write('labels', _idx_labels(self.labels))
        self.assertRaises(FormatError, load_idx_images, images, labels)

    def test_truncated(self):
        images = self._write('images', _idx_images(self.images)[:-1])
        labels = self._write('labels', _idx_labels(self.labels))
        self.assertRaises(FormatError, load_idx_images, images, labels)
        short = self._write('short', b'\x00\x00')
        self.assertRaises(FormatError, load_idx_images, short, labels)

    def test_count_mismatch(self):
        images = self._write('images', _idx_images(self.images))
        labels = self._write('labels', _idx_labels(self.labels[:-1]))
        self.assertRaises(FormatError, load_idx_images, images, labels)

    def test_load_dataset_from_cache_dir(self):
        base = os.path.join(self.dir, 'mnist')
        os.makedirs(base)
        with open(os.path.join(base, 'train-images-idx3-ubyte'), 'wb') as fh:
            fh.write(_idx_images(self.images))
        with gzip.open(os.path.join(base, 'train-labels-idx1-ubyte.gz'), 'wb') as fh:
            fh.write(_idx_labels(self.labels))
        with mock.patch.dict(os.environ, {DATA_DIR_ENV: self.dir}):
            ds = load_dataset(DatasetSpec(kind='mnist'), seed=0)
        self.assertEqual(len(ds), 6)
        self.assertEqual(ds.num_classes, 10)

    def test_not_found(self):
        env = dict((k, v) for k, v in os.environ.items() if k != DATA_DIR_ENV)
        with mock.patch.dict(os.environ, env, clear=True):
            self.assertRaises(DatasetNotFound, load_dataset, DatasetSpec(kind='mnist'), 0)
        self.assertRaises(DatasetNotFound, load_dataset,
                          DatasetSpec(kind='fashion_mnist', path=self.dir), 0)


class DatasetTest(DFLSentinelTestCase):

    def test_validation(self):
        self.assertRaises(ValueError, Dataset, np.zeros((3, 2)), [0, 1], 2)
        self.assertRaises(ValueError, Dataset, np.zeros((2, 2)), [0, 2], 2)
        self.assertRaises(ValueError, Dataset, np.zeros((2, 5)), [0, 1], 2,
                          kind=KIND_IMAGE, image_shape=(2, 2))

    def test_subset_keeps_index(self):
        ds = self.blobs()
        part = ds.subset([5, 1]).subset([1])
        self.assertEqual(part.index.tolist(), [1])
        np.testing.assert_array_equal(part.features[0], ds.features[1])

    def test_with_data(self):
        ds = self.blobs()
        flipped = ds.with_data(labels=np.zeros(len(ds), dtype=np.int64))
        self.assertFalse(flipped.labels.any())
        np.testing.assert_array_equal(flipped.index, ds.index)
        self.assertTrue(ds.labels.any())

    def test_spec_validation(self):
        self.assertRaises(ConfigError, DatasetSpec, kind='cifar')
        self.assertRaises(ConfigError, DatasetSpec, kind='synthetic_tabular', classes=1)
        self.assertRaises(ConfigError, DatasetSpec, subset=0)
        self.assertTrue(DatasetSpec(kind='synthetic_image').is_image)
        self.assertFalse(DatasetSpec(kind='synthetic_tabular').is_image)


class SyntheticTest(DFLSentinelTestCase):

    def test_tabular(self):
        ds = synth_tabular(4, 8, 402, seed=3)
        self.assertEqual(ds.features.shape, (402, 8))
        self.assertEqual(ds.kind, KIND_TABULAR)
        counts = ds.class_counts()
        self.assertLessEqual(counts.max() - counts.min(), 1)
        self.assertTrue(np.array_equal(ds.features, synth_tabular(4, 8, 402, seed=3).features))

    def test_images(self):
        ds = synth_images(3, 10, 90, seed=1)
        self.assertEqual(ds.image_shape, (10, 10))
        self.assertGreaterEqual(ds.features.min(), 0.0)
        self.assertLessEqual(ds.features.max(), 1.0)

    def test_load_subset(self):
        spec = DatasetSpec(kind='synthetic_tabular', classes=3, dims=5, samples=500, subset=120)
        first = load_dataset(spec, seed=4)
        self.assertEqual(len(first), 120)
        self.assertEqual(first.index.tolist(), sorted(first.index.tolist()))
        np.testing.assert_array_equal(first.index, load_dataset(spec, seed=4).index)


class PartitionTest(DFLSentinelTestCase):

    def setUp(self):
        super(PartitionTest, self).setUp()
        self.ds = synth_tabular(5, 6, 700, seed=2)
        self.wide = synth_tabular(10, 6, 2000, seed=2)

    def _check_disjoint(self, nodes):
        seen = []
        for node in nodes:
            for split in (node.train, node.val, node.test):
                seen.extend(split.index.tolist())
            self.assertTrue(set(node.bootstrap.index) <= set(node.val.index))
        self.assertEqual(len(seen), len(set(seen)))
        return seen

    def test_iid(self):
        nodes = partition(self.ds, PartitionConfig(nodes=5, seed=1))
        self.assertEqual(len(nodes), 5)
        seen = self._check_disjoint(nodes)
        self.assertEqual(sorted(seen), list(range(700)))
        for node in nodes:
            self.assertEqual(len(node.test), 20)
            self.assertEqual(len(node.val), 12)
            self.assertEqual(len(node.train), 108)
            self.assertEqual(len(node.bootstrap), 12)
        totals = np.array([(n.train.class_counts() + n.val.class_counts() +
                            n.test.class_counts()) for n in nodes])
        self.assertLessEqual((totals.max(axis=0) - totals.min(axis=0)).max(), 1)

    def test_seeded(self):
        cfg = PartitionConfig(mode='dirichlet', alpha=0.5, nodes=4, seed=8)
        first = partition_manifest(partition(self.wide, cfg))
        second = partition_manifest(partition(self.wide, cfg))
        self.assertEqual(first, second)

    def test_dirichlet(self):
        nodes = partition(self.wide, PartitionConfig(mode='dirichlet', alpha=0.5, nodes=4,
                                                     seed=3))
        seen = self._check_disjoint(nodes)
        self.assertEqual(sorted(seen), list(range(2000)))
        for node in nodes:
            self.assertGreaterEqual(len(node.train) + len(node.val) + len(node.test), 10)

    def test_dirichlet_sizes_near_equal(self):
        ds = synth_tabular(10, 4, 10000, seed=5)
        for seed in range(5):
            nodes = partition(ds, PartitionConfig(mode='dirichlet', alpha=0.5, nodes=10,
                                                  seed=seed))
            sizes = [len(n.train) + len(n.val) + len(n.test) for n in nodes]
            self.assertEqual(sum(sizes), 10000)
            self.assertLessEqual(max(sizes) - min(sizes), 1, sizes)
            self.assertLessEqual(max(sizes) / float(min(sizes)), 1.01)

    def test_dirichlet_skews_labels(self):
        ds = synth_tabular(10, 4, 10000, seed=5)
        global_share = ds.class_counts() / float(len(ds))
        for seed in range(5):
            nodes = partition(ds, PartitionConfig(mode='dirichlet', alpha=0.5, nodes=10,
                                                  seed=seed))
            counts = np.array([n.train.class_counts() + n.val.class_counts() +
                               n.test.class_counts() for n in nodes], dtype=np.float64)
            shares = counts / counts.sum(axis=1, keepdims=True)
            self.assertTrue((shares > 2 * global_share).any(), seed)

    def test_dirichlet_more_skewed_than_iid(self):
        iid = partition(self.wide, PartitionConfig(nodes=4, seed=3))
        skewed = partition(self.wide, PartitionConfig(mode='dirichlet', alpha=0.5, nodes=4,
                                                      seed=3))

        def spread(nodes):
            counts = np.array([n.train.class_counts() for n in nodes], dtype=np.float64)
            shares = counts / counts.sum(axis=1, keepdims=True)
            return shares.std(axis=0).mean()

        self.assertGreater(spread(skewed), spread(iid))

    def test_too_small(self):
        self.assertRaises(InsufficientSamples, partition, self.ds.subset(range(20)),
                          PartitionConfig(nodes=5))

    def test_config_validation(self):
        self.assertRaises(ConfigError, PartitionConfig, mode='shards')
        self.assertRaises(ConfigError, PartitionConfig, alpha=0)
        self.assertRaises(ConfigError, PartitionConfig, test_fraction=1.0)

    def test_manifest(self):
        nodes = partition(self.ds, PartitionConfig(nodes=5, seed=1))
        manifest = partition_manifest(nodes)
        self.assertEqual(sorted(manifest['nodes']), ['0', '1', '2', '3', '4'])
        self.assertEqual(sorted(manifest['nodes']['0']), ['bootstrap', 'test', 'train', 'val'])
        self.assertEqual(manifest['nodes']['2']['test'], nodes[2].test.index.tolist())


class BootstrapTest(DFLSentinelTestCase):

    def test_sizes(self):
        for size, expected in ((30, 30), (600, 300), (1200, 400), (1201, 401)):
            val = synth_tabular(2, 2, size, seed=0)
            sample = sample_bootstrap(val, seed=1)
            self.assertEqual(len(sample), expected)
            self.assertEqual(len(set(sample.index.tolist())), expected)

    def test_empty(self):
        val = synth_tabular(2, 2, 10, seed=0).subset([])
        self.assertRaises(InsufficientSamples, sample_bootstrap, val, 1)
