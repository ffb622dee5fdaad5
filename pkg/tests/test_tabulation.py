import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from basis import build_basis, eval_nodal, eval_orthonormal
from candidates import fill_to_count
from fekete import approximate_fekete
from geometry import GeometryError, holed_square, normalize_hull
from moments import MonomialSpec
from tabulation import (
    TableError,
    TableRecord,
    UnsupportedTableVersionError,
    basis_from_record,
    build_master_record,
    load_basis,
    load_table,
    lookup,
    master_hull,
    record_from_basis,
    write_table,
)
from version import TABLE_VERSION


class MasterHullTests(unittest.TestCase):
    def test_master_hull_is_inscribed_regular_polygon(self):
        hull = master_hull(5)
        self.assertEqual(len(hull), 5)
        np.testing.assert_allclose(np.linalg.norm(hull.vertices, axis=1), 1.0, atol=1e-15)
        np.testing.assert_allclose(hull.vertices[0], [1.0, 0.0], atol=1e-15)

    def test_invalid_side_counts(self):
        for sides in (2, 0, 4.0, True):
            with self.subTest(sides=sides), self.assertRaises(TableError):
                master_hull(sides)


class RecordTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.record = build_master_record(6, "P", 3)

    def test_record_key_and_shapes(self):
        record = self.record
        self.assertEqual(record.key, (2, 6, 3, "P", "direct"))
        self.assertEqual(record.points.shape, (10, 2))
        self.assertEqual(record.a.shape, (10, 10))
        self.assertAlmostEqual(float(record.weights.sum()) / record.scale ** 2, 1.5 * np.sqrt(3.0), places=8)

    def test_dict_round_trip_preserves_basis(self):
        restored = TableRecord.from_dict(json.loads(json.dumps(self.record.to_dict())))
        b = basis_from_record(restored)
        original = basis_from_record(self.record)
        pts = original.nodes

        np.testing.assert_allclose(eval_nodal(b, pts), np.eye(10), atol=1e-8)
        np.testing.assert_allclose(eval_orthonormal(b, pts), eval_orthonormal(original, pts), atol=1e-14)
        self.assertEqual(restored.amap, self.record.amap)

    def test_malformed_records_are_rejected(self):
        good = self.record.to_dict()
        broken = (
            {"d": 3},
            {"sides": 2},
            {"p": -1},
            {"space": "R"},
            {"route": "lu"},
            {"scale": 0.0},
            {"fnorm": True},
            {"weights": [1.0, 2.0]},
            {"a": [[float("nan")] * 10] * 10},
            {"points": "oops"},
        )
        for change in broken:
            with self.subTest(change=sorted(change)):
                data = dict(good, **change)
                with self.assertRaises(TableError):
                    TableRecord.from_dict(data)
        missing = dict(good)
        del missing["U"]
        with self.assertRaises(TableError):
            TableRecord.from_dict(missing)

    def test_holed_hull_cannot_be_tabulated(self):
        normalized, amap = normalize_hull(holed_square())
        spec = MonomialSpec("P", 1)
        fek = approximate_fekete(normalized, spec, fill_to_count(normalized, 30))
        with self.assertRaises(TableError):
            record_from_basis(build_basis(fek), amap)


class TableFileTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.records = [
            build_master_record(4, "Q", 2),
            build_master_record(4, "Q", 2, "reusable"),
            build_master_record(5, "P", 2, relax_iters=4),
        ]

    def test_written_table_loads_back(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "table.json"
            write_table(path, self.records)

            loaded = load_table(path)
            self.assertEqual([r.key for r in loaded], [r.key for r in self.records])
            found = lookup(loaded, 2, 4, 2, "Q", "reusable")
            np.testing.assert_allclose(found.a, self.records[1].a)

            payload = json.loads(path.read_text(encoding="utf-8"))
            self.assertEqual(payload["version"], TABLE_VERSION)

    def test_lookup_miss_names_the_key(self):
        with self.assertRaises(TableError) as captured:
            lookup(self.records, 2, 7, 2, "Q", "direct")
        self.assertIn("sides=7", str(captured.exception))

    def test_duplicate_keys_are_refused(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            with self.assertRaises(TableError):
                write_table(Path(temp_dir) / "table.json", [self.records[0], self.records[0]])

    def test_rewriting_a_table_keeps_a_backup(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "table.json"
            write_table(path, self.records[:1])
            write_table(path, self.records)

            self.assertEqual(len(list((path.parent / "backups").glob("*.json"))), 1)
            self.assertEqual(len(load_table(path)), 3)

    def test_load_basis_filters_by_key(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "table.json"
            write_table(path, self.records)

            b, amap = load_basis(path, sides=5)
            self.assertEqual(b.spec.space, "P")
            self.assertEqual(amap, self.records[2].amap)
            with self.assertRaises(TableError):
                load_basis(path, sides=4)

    def test_newer_or_invalid_tables_are_refused(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "table.json"
            path.write_text(json.dumps({"version": TABLE_VERSION + 1, "records": []}), encoding="utf-8")
            with self.assertRaises(UnsupportedTableVersionError):
                load_table(path)

            for payload in ({"version": "1", "records": []}, {"version": 1}, [1]):
                with self.subTest(payload=payload):
                    path.write_text(json.dumps(payload), encoding="utf-8")
                    with self.assertRaises(TableError):
                        load_table(path)

            path.write_text("{", encoding="utf-8")
            with self.assertRaises(TableError):
                load_table(path)

    def test_invalid_hull_in_record_is_reported(self):
        record = self.records[0]
        flipped = TableRecord.from_dict(dict(record.to_dict(), vertices=record.vertices[::-1].tolist()))
        with self.assertRaises(TableError) as captured:
            basis_from_record(flipped)
        self.assertIsInstance(captured.exception.__cause__, GeometryError)


if __name__ == "__main__":
    unittest.main()
