import io
import logging
import unittest

import numpy as np

from dfl_sentinel.utils import derive_seed, make_rng, enable_logging, STREAM_TRAIN, \
    STREAM_POISON


class SeedTest(unittest.TestCase):

    def test_derive_seed(self):
        self.assertEqual(derive_seed(1, 2, STREAM_TRAIN), derive_seed(1, 2, STREAM_TRAIN))
        self.assertNotEqual(derive_seed(1, 2, STREAM_TRAIN), derive_seed(1, 2, STREAM_POISON))
        self.assertNotEqual(derive_seed(1, 2, STREAM_TRAIN), derive_seed(2, 1, STREAM_TRAIN))
        self.assertGreaterEqual(derive_seed(0), 0)
        self.assertLess(derive_seed(0), 1 << 64)

    def test_make_rng(self):
        first = make_rng(5, STREAM_TRAIN).random(4)
        second = make_rng(5, STREAM_TRAIN).random(4)
        np.testing.assert_array_equal(first, second)
        self.assertFalse(np.array_equal(first, make_rng(6, STREAM_TRAIN).random(4)))


class LoggingTest(unittest.TestCase):

    def setUp(self):
        self.logger = logging.getLogger('dfl_sentinel')
        self.handlers = list(self.logger.handlers)
        self.level = self.logger.level

    def tearDown(self):
        self.logger.handlers = self.handlers
        self.logger.setLevel(self.level)

    def test_enable_logging_once(self):
        stream = io.StringIO()
        self.logger.handlers = []
        enable_logging(logging.INFO, stream)
        enable_logging(logging.DEBUG, stream)
        self.assertEqual(len(self.logger.handlers), 1)
        self.assertEqual(self.logger.level, logging.DEBUG)
        logging.getLogger('dfl_sentinel.sim').debug("Round %s", 1)
        self.assertIn('DEBUG dfl_sentinel.sim: Round 1', stream.getvalue())
