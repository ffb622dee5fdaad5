import tempfile
import unittest
from pathlib import Path

import numpy as np

from geometry import holed_square, l_shape, signed_area, square
from io_utils import (
    PolygonFormatError,
    format_polygon,
    parse_pieces,
    parse_polygon,
    read_csv,
    read_pieces,
    read_polygon,
    write_csv,
    write_pieces,
    write_polygon,
)


L_SHAPE_TEXT = """\
# L-shaped domain
2 1
6
0 0
2 0
2 1
1 1   # reflex corner
1 2
0 2
"""


class PolygonTextTests(unittest.TestCase):
    def test_parse_with_comments(self):
        poly = parse_polygon(L_SHAPE_TEXT)
        np.testing.assert_array_equal(poly.vertices, l_shape().vertices)
        self.assertEqual(poly.holes, ())

    def test_holes_survive_format_and_parse(self):
        poly = parse_polygon(format_polygon(holed_square()))
        self.assertEqual(len(poly.holes), 1)
        self.assertAlmostEqual(signed_area(poly), 3.0)

    def test_malformed_text_is_reported_with_line(self):
        cases = {
            "3 1\n3\n0 0\n1 0\n0 1\n": "only d = 2",
            "2 1\n4\n0 0\n1 0\n": "Unexpected end",
            "2 1\n3\n0 0\n1 x\n0 1\n": "Line 4",
            "2 1\n3\n0 0\n1 0\n0 1\n7\n": "trailing",
            "2 0\n": "at least one loop",
            "2 1\nthree\n": "integer",
            "2 1\n3\n0 0\n0 1\n1 0\n": "Invalid polygon",
        }
        for text, fragment in cases.items():
            with self.subTest(fragment=fragment):
                with self.assertRaises(PolygonFormatError) as captured:
                    parse_polygon(text)
                self.assertIn(fragment, str(captured.exception))

    def test_pieces_text(self):
        text = "2\n" + format_polygon(square()) + format_polygon(l_shape())
        pieces = parse_pieces(text)
        self.assertEqual([len(p) for p in pieces], [4, 6])
        with self.assertRaises(PolygonFormatError):
            parse_pieces("")
        with self.assertRaises(PolygonFormatError):
            parse_pieces("3\n" + format_polygon(square()))


class PolygonFileTests(unittest.TestCase):
    def test_write_and_read_files(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "domain.poly"
            write_polygon(path, l_shape())
            np.testing.assert_array_equal(read_polygon(path).vertices, l_shape().vertices)

            pieces_path = Path(temp_dir) / "pieces.txt"
            write_pieces(pieces_path, [square(), holed_square()])
            self.assertEqual(len(read_pieces(pieces_path)), 2)
            self.assertTrue(pieces_path.read_text(encoding="utf-8").startswith("2\n2 1\n"))

    def test_missing_file_is_a_format_error(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            with self.assertRaises(PolygonFormatError):
                read_polygon(Path(temp_dir) / "absent.poly")

    def test_coordinates_keep_full_precision(self):
        text = format_polygon(square(1.0 / 3.0))
        self.assertIn("0.33333333333333331", text)


class CsvTests(unittest.TestCase):
    def test_csv_round_trip(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "out.csv"
            count = write_csv(path, ["x", "y", "flag"], [(0.1, 2, True), (np.float64(1e-20), np.int64(3), False)])

            self.assertEqual(count, 2)
            self.assertEqual(path.read_text(encoding="utf-8").splitlines()[1], "0.10000000000000001,2,1")
            data = read_csv(path, ["x", "flag"])
            np.testing.assert_array_equal(data["x"], [0.1, 1e-20])
            np.testing.assert_array_equal(data["flag"], [1.0, 0.0])

    def test_bad_csv_is_rejected(self):
        cases = {
            "empty.csv": "",
            "ragged.csv": "x,y\n1,2\n3\n",
            "text.csv": "x,y\n1,abc\n",
            "columns.csv": "x,y\n1,2\n",
        }
        with tempfile.TemporaryDirectory() as temp_dir:
            for name, text in cases.items():
                with self.subTest(name=name):
                    path = Path(temp_dir) / name
                    path.write_text(text, encoding="utf-8")
                    with self.assertRaises(PolygonFormatError):
                        read_csv(path, ["x", "w"] if name == "columns.csv" else ["x"])

    def test_header_only_csv_gives_empty_columns(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "empty.csv"
            write_csv(path, ["x", "y"], [])
            data = read_csv(path)
            self.assertEqual(data["x"].shape, (0,))


if __name__ == "__main__":
    unittest.main()
