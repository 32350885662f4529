import os
import tempfile
import unittest

import numpy as np

from .path_csv import path_header, read_path_csv, write_path_csv
from .rough_path import PathError, brownian_rough_path, lift_piecewise_linear

class TestPathCsv(unittest.TestCase):

    def setUp(self):
        self._dir = tempfile.TemporaryDirectory()
        self.dir = self._dir.name

    def tearDown(self):
        self._dir.cleanup()

    def _write(self, name: str, text: str) -> str:
        target = os.path.join(self.dir, name)
        with open(target, 'w', encoding='utf-8') as stream:
            stream.write(text)
        return target

    def test_header(self):
        self.assertEqual(path_header(3), ["t", "y1", "y2", "y3", "a12", "a13", "a23"])
        self.assertEqual(path_header(2, areas=False), ["t", "y1", "y2"])

    def test_round_trip_is_bit_exact(self):
        path = brownian_rough_path(32, 3, np.random.default_rng(0))
        target = os.path.join(self.dir, "path.csv")
        write_path_csv(target, path)
        back = read_path_csv(target, alpha=path.alpha)
        np.testing.assert_array_equal(back.times, path.times)
        np.testing.assert_array_equal(back.values, path.values)
        np.testing.assert_array_equal(back.areas, path.areas)

    def test_values_only_are_lifted(self):
        source = self._write("l.csv", "t,y1,y2\n0,0,0\n0.5,1,0\n1,1,1\n")
        path = read_path_csv(source)
        self.assertEqual(path.areas[-1, 0, 1], 0.5)

    def test_extra_columns_are_ignored(self):
        source = self._write("x.csv", "t,x1,y1,y2,a12\n0,3,0,0,0\n1,4,1,2,0.25\n")
        path = read_path_csv(source)
        np.testing.assert_array_equal(path.values[-1], [1.0, 2.0])
        self.assertEqual(path.areas[-1, 0, 1], 0.25)

    def test_comment_lines_are_skipped(self):
        source = self._write("c.csv", '# config: {"grid": 2}\nt,y1,y2\n0,0,0\n# note\n1,1,1\n')
        path = read_path_csv(source)
        self.assertEqual(path.size, 2)
        np.testing.assert_array_equal(path.values[-1], [1.0, 1.0])

    def test_extra_columns_written(self):
        path = lift_piecewise_linear([0.0, 1.0], [[0.0], [1.0]])
        target = os.path.join(self.dir, "with_x.csv")
        write_path_csv(target, path, {"x1": np.array([0.5, 0.25])})
        with open(target, encoding='utf-8') as stream:
            self.assertEqual(stream.read(), "t,y1,x1\n0,0,0.5\n1,1,0.25\n")

    def test_malformed(self):
        with self.assertRaises(PathError):
            read_path_csv(self._write("bad.csv", "t,y1\n0,0\n1,abc\n"))
        with self.assertRaises(PathError):
            read_path_csv(self._write("noy.csv", "t,z1\n0,0\n1,1\n"))
        with self.assertRaises(PathError):
            read_path_csv(self._write("empty.csv", ""))
        with self.assertRaises(PathError):
            read_path_csv(self._write("start.csv", "t,y1\n0,1\n1,1\n"))

if __name__ == '__main__':
    unittest.main()
