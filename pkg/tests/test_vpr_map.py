"""Reference-map tests: retrieval exactness, tie-breaking, file round trips."""

import math
import struct

import numpy as np
import pytest

from copr.errors import (
    BadMagic,
    CountMismatch,
    DimMismatch,
    EmptyMap,
    ParseError,
    RefusedNonFinite,
    VersionUnsupported,
)
from copr.geometry import Pose
from copr.vpr_map import (
    Origin,
    ReferenceMap,
    load_map,
    oracle_retrieve,
    retrieve,
    save_map,
)


def _pose(x=0.0, y=0.0, z=0.0):
    return Pose(t=[x, y, z], q=[1, 0, 0, 0])


def _map_of(descriptors, translations=None, ids=None):
    descriptors = np.asarray(descriptors, dtype=np.float64)
    n = descriptors.shape[0]
    if translations is None:
        translations = [(float(i), 0.0, 0.0) for i in range(n)]
    entries = [
        (
            ids[i] if ids else f"r{i}",
            descriptors[i],
            _pose(*translations[i]),
            Origin.ANCHOR,
        )
        for i in range(n)
    ]
    return ReferenceMap.from_entries(entries)


class TestRetrieve:
    def test_exact_match_is_rank_one(self):
        m = _map_of([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        out = retrieve([3.0, 4.0], m, k=1)
        assert out[0].ref_index == 1
        assert out[0].feature_distance == 0.0

    def test_hand_euclidean_distances(self):
        m = _map_of([[0.0, 0.0], [3.0, 4.0]])
        out = retrieve([0.0, 1.0], m, k=2)
        assert out[0].ref_index == 0
        np.testing.assert_allclose(out[0].feature_distance, 1.0, atol=1e-15)
        # ||(3,4) - (0,1)|| = sqrt(9 + 9)
        np.testing.assert_allclose(out[1].feature_distance, math.sqrt(18.0), atol=1e-12)

    def test_k_larger_than_map(self):
        m = _map_of([[0.0], [1.0], [2.0]])
        out = retrieve([0.4], m, k=10)
        assert len(out) == 3
        dists = [o.feature_distance for o in out]
        assert dists == sorted(dists)

    def test_tie_broken_by_index(self):
        m = _map_of([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        out = retrieve([1.0, 0.0], m, k=3)
        assert [o.ref_index for o in out] == [0, 2, 1]

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            retrieve([1.0, 2.0, 3.0], _map_of([[0.0, 0.0]]), k=1)

    def test_empty_map(self):
        empty = ReferenceMap.from_entries([])
        with pytest.raises(EmptyMap):
            retrieve([1.0], empty, k=1)

    def test_matches_brute_force_scan(self):
        # Independent oracle: per-entry linalg.norm loop with first-min.
        rng = np.random.default_rng(42)
        for _ in range(200):
            n = int(rng.integers(1, 60))
            d = int(rng.integers(1, 16))
            m = _map_of(rng.standard_normal((n, d)))
            q = rng.standard_normal(d)
            best, best_d = 0, np.linalg.norm(m.descriptors[0] - q)
            for i in range(1, n):
                di = np.linalg.norm(m.descriptors[i] - q)
                if di < best_d:
                    best, best_d = i, di
            assert retrieve(q, m, k=1)[0].ref_index == best

    def test_monotone_distances(self):
        rng = np.random.default_rng(9)
        m = _map_of(rng.standard_normal((50, 8)))
        out = retrieve(rng.standard_normal(8), m, k=50)
        d = [o.feature_distance for o in out]
        assert all(d[i] <= d[i + 1] for i in range(len(d) - 1))

    def test_pose_fills_errors(self):
        m = _map_of([[0.0], [1.0]], translations=[(0, 0, 0), (2, 0, 0)])
        out = retrieve([0.9], m, k=1, query_pose=_pose(1.0))
        assert out[0].ref_index == 1
        np.testing.assert_allclose(out[0].translation_error, 1.0)
        assert out[0].rotation_error == 0.0

    def test_without_pose_errors_are_nan(self):
        m = _map_of([[0.0]])
        out = retrieve([0.0], m, k=1)
        assert math.isnan(out[0].translation_error)


class TestOracleRetrieve:
    def test_coincident_pose(self):
        m = _map_of([[0.0], [1.0]], translations=[(0, 0, 0), (5, 0, 0)])
        match = oracle_retrieve(_pose(5.0), m)
        assert match.ref_index == 1
        assert match.translation_error == 0.0

    def test_hand_distance(self):
        m = _map_of([[0.0], [1.0]], translations=[(0, 0, 0), (1, 0, 0)])
        match = oracle_retrieve(_pose(0.4), m)
        assert match.ref_index == 0
        np.testing.assert_allclose(match.translation_error, 0.4)

    def test_equidistant_tie_lower_index(self):
        m = _map_of([[0.0], [1.0]], translations=[(0, 0, 0), (1, 0, 0)])
        assert oracle_retrieve(_pose(0.5), m).ref_index == 0

    def test_empty_map(self):
        with pytest.raises(EmptyMap):
            oracle_retrieve(_pose(), ReferenceMap.from_entries([]))

    def test_lower_bounds_vpr_translation_error(self):
        rng = np.random.default_rng(77)
        for _ in range(100):
            n = int(rng.integers(2, 40))
            m = _map_of(rng.standard_normal((n, 4)), translations=rng.standard_normal((n, 3)))
            pose = Pose(t=rng.standard_normal(3), q=[1, 0, 0, 0])
            vpr = retrieve(rng.standard_normal(4), m, k=1, query_pose=pose)[0]
            assert oracle_retrieve(pose, m).translation_error <= vpr.translation_error + 1e-15


class TestMapType:
    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            _map_of([[0.0], [1.0]], ids=["a", "a"])

    def test_non_finite_descriptor_rejected(self):
        with pytest.raises(ValueError):
            _map_of([[math.inf]])

    def test_extended_leaves_original_untouched(self):
        m = _map_of([[0.0], [1.0]])
        before = m.descriptors.copy()
        bigger = m.extended([("x#1", np.array([2.0]), _pose(9.0), Origin.REGRESSED)])
        assert len(m) == 2 and len(bigger) == 3
        np.testing.assert_array_equal(m.descriptors, before)
        assert bigger.origins[-1] is Origin.REGRESSED


class TestMapIo:
    def _roundtrip(self, m, tmp_path):
        save_map(m, tmp_path / "p.csv", tmp_path / "d.bin")
        return load_map(tmp_path / "p.csv", tmp_path / "d.bin")

    def test_empty_map_roundtrip(self, tmp_path):
        m = ReferenceMap.from_entries([])
        save_map(m, tmp_path / "p.csv", tmp_path / "d.bin")
        assert (tmp_path / "d.bin").stat().st_size == 16
        assert (tmp_path / "p.csv").read_text() == "id,tx,ty,tz,qw,qx,qy,qz\n"
        loaded = load_map(tmp_path / "p.csv", tmp_path / "d.bin")
        assert len(loaded) == 0

    def test_binary_size_arithmetic(self, tmp_path):
        m = _map_of(np.arange(8, dtype=float).reshape(2, 4))
        save_map(m, tmp_path / "p.csv", tmp_path / "d.bin")
        assert (tmp_path / "d.bin").stat().st_size == 16 + 2 * 4 * 4

    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(101)
        m = _map_of(
            rng.standard_normal((7, 5)),
            translations=rng.standard_normal((7, 3)),
            ids=[f"ref/{i}" for i in range(7)],
        )
        loaded = self._roundtrip(m, tmp_path)
        assert loaded.ids == m.ids
        np.testing.assert_array_equal(
            loaded.descriptors.astype("<f4").tobytes(), m.descriptors.astype("<f4").tobytes()
        )
        np.testing.assert_allclose(loaded.translations, m.translations, atol=1e-12)
        np.testing.assert_allclose(loaded.quaternions, m.quaternions, atol=1e-12)
        # A second save reproduces identical bytes once values are f32.
        save_map(loaded, tmp_path / "p2.csv", tmp_path / "d2.bin")
        assert (tmp_path / "d2.bin").read_bytes() == (tmp_path / "d.bin").read_bytes()

    def test_count_mismatch(self, tmp_path):
        m3 = _map_of(np.zeros((3, 2)))
        m2 = _map_of(np.zeros((2, 2)))
        save_map(m3, tmp_path / "p3.csv", tmp_path / "d3.bin")
        save_map(m2, tmp_path / "p2.csv", tmp_path / "d2.bin")
        with pytest.raises(CountMismatch):
            load_map(tmp_path / "p3.csv", tmp_path / "d2.bin")

    def test_bad_magic(self, tmp_path):
        m = _map_of([[0.0]])
        save_map(m, tmp_path / "p.csv", tmp_path / "d.bin")
        blob = bytearray((tmp_path / "d.bin").read_bytes())
        blob[:4] = b"NOPE"
        (tmp_path / "d.bin").write_bytes(bytes(blob))
        with pytest.raises(BadMagic):
            load_map(tmp_path / "p.csv", tmp_path / "d.bin")

    def test_bad_version(self, tmp_path):
        m = _map_of([[0.0]])
        save_map(m, tmp_path / "p.csv", tmp_path / "d.bin")
        blob = bytearray((tmp_path / "d.bin").read_bytes())
        blob[4:8] = struct.pack("<I", 9)
        (tmp_path / "d.bin").write_bytes(bytes(blob))
        with pytest.raises(VersionUnsupported):
            load_map(tmp_path / "p.csv", tmp_path / "d.bin")

    def test_truncated_payload(self, tmp_path):
        m = _map_of([[0.0, 1.0]])
        save_map(m, tmp_path / "p.csv", tmp_path / "d.bin")
        blob = (tmp_path / "d.bin").read_bytes()
        (tmp_path / "d.bin").write_bytes(blob[:-2])
        with pytest.raises(ParseError):
            load_map(tmp_path / "p.csv", tmp_path / "d.bin")

    def test_bad_header_line(self, tmp_path):
        m = _map_of([[0.0]])
        save_map(m, tmp_path / "p.csv", tmp_path / "d.bin")
        (tmp_path / "p.csv").write_text("wrong,header\n")
        with pytest.raises(ParseError) as info:
            load_map(tmp_path / "p.csv", tmp_path / "d.bin")
        assert info.value.line == 1

    def test_bad_float_reports_line(self, tmp_path):
        m = _map_of([[0.0], [1.0]])
        save_map(m, tmp_path / "p.csv", tmp_path / "d.bin")
        lines = (tmp_path / "p.csv").read_text().splitlines()
        lines[2] = "r1,not_a_float,0,0,1,0,0,0"
        (tmp_path / "p.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError) as info:
            load_map(tmp_path / "p.csv", tmp_path / "d.bin")
        assert info.value.line == 3

    def test_refuses_non_finite_before_writing(self, tmp_path):
        # Corrupt a valid map in place to exercise the save-side guard.
        m = _map_of([[0.0, 1.0]])
        bad = np.array([[math.nan, 1.0]])
        object.__setattr__(m, "descriptors", bad)
        with pytest.raises(RefusedNonFinite):
            save_map(m, tmp_path / "p.csv", tmp_path / "d.bin")
        assert not (tmp_path / "p.csv").exists()
        assert not (tmp_path / "d.bin").exists()

    def test_l2_normalize_flag(self, tmp_path):
        m = _map_of([[3.0, 4.0], [0.0, 2.0]])
        save_map(m, tmp_path / "p.csv", tmp_path / "d.bin")
        loaded = load_map(tmp_path / "p.csv", tmp_path / "d.bin", l2_normalize=True)
        np.testing.assert_allclose(np.linalg.norm(loaded.descriptors, axis=1), 1.0, atol=1e-12)

    def test_origin_inferred_from_id_marker(self, tmp_path):
        m = _map_of([[0.0], [1.0]], ids=["a0", "a0#gx1y0"])
        m = ReferenceMap(
            ids=m.ids,
            descriptors=m.descriptors,
            translations=m.translations,
            quaternions=m.quaternions,
            origins=(Origin.ANCHOR, Origin.REGRESSED),
        )
        loaded = self._roundtrip(m, tmp_path)
        assert loaded.origins == (Origin.ANCHOR, Origin.REGRESSED)
