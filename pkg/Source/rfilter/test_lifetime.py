import threading
import unittest
from unittest.mock import Mock

from .lifetime import Lifetime, SamplePool, chunk_ranges

class TestLifetime(unittest.TestCase):

    def test_explicit_dispose(self):
        lt = Lifetime()
        self.assertTrue(lt.is_alive())
        lt.dispose()
        self.assertFalse(lt.is_alive())

    def test_context_dispose(self):
        lt = Lifetime()
        with lt:
            self.assertTrue(lt.is_alive())
        self.assertFalse(lt.is_alive())

    def test_dispose_twice(self):
        lt = Lifetime()
        lt.dispose()
        lt.dispose()
        self.assertFalse(lt.is_alive())

class TestSamplePool(unittest.TestCase):

    def test_rejects_zero_workers(self):
        with self.assertRaises(ValueError):
            SamplePool(0)

    def test_inline_map_in_order(self):
        with SamplePool(1) as pool:
            self.assertEqual(pool.map(lambda x: x * x, range(5)), [0, 1, 4, 9, 16])

    def test_threaded_map_in_order(self):
        with SamplePool(4) as pool:
            self.assertEqual(pool.workers, 4)
            self.assertEqual(pool.map(lambda x: 2 * x, range(20)), [2 * x for x in range(20)])

    def test_on_result_runs_on_calling_thread_in_order(self):
        caller = threading.get_ident()
        seen: list[tuple[int, int]] = []

        def record(index: int, result: int):
            self.assertEqual(threading.get_ident(), caller)
            seen.append((index, result))

        with SamplePool(3) as pool:
            pool.map(lambda x: x + 1, range(6), on_result=record)
        self.assertEqual(seen, [(i, i + 1) for i in range(6)])

    def test_dispose_shuts_down_executor(self):
        pool = SamplePool(2)
        pool.dispose()
        self.assertFalse(pool.is_alive())
        with self.assertRaises(AssertionError):
            pool.map(Mock(), [1])

class TestChunkRanges(unittest.TestCase):

    def test_boundaries(self):
        chunks = chunk_ranges(10, 4)
        self.assertEqual([list(c) for c in chunks], [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9]])

    def test_empty(self):
        self.assertEqual(chunk_ranges(0, 4), [])

    def test_rejects_bad_size(self):
        with self.assertRaises(ValueError):
            chunk_ranges(10, 0)

if __name__ == '__main__':
    unittest.main()
