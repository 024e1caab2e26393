import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rs_synthgen import imgio, ingest
from rs_synthgen.errors import RecordError, SchemaError

from conftest import make_record, make_recordset, write_parquet_dataset


class TestIngestColumnar:
    def test_round_trip(self, tmp_path):
        path = write_parquet_dataset(tmp_path / "data.parquet", 5)
        rs = ingest.ingest_columnar(path)
        assert len(rs) == 5
        assert rs.split_tag == "unsplit"
        assert rs.source_ids() == [f"img{i:04d}" for i in range(5)]
        assert all(r.image.shape == (16, 16, 3) for r in rs.records)
        assert all(len(r.captions) == 2 for r in rs.records)

    def test_missing_column(self, tmp_path):
        path = write_parquet_dataset(tmp_path / "data.parquet", 3)
        with pytest.raises(SchemaError):
            ingest.ingest_columnar(path, image_column="nope")

    def test_bad_image_bytes_names_record(self, tmp_path):
        from rs_synthgen.columnar import write_columns

        write_columns(
            {"image": [b"not a png"], "captions": [["c"]], "source_id": ["bad01"]},
            tmp_path / "bad.parquet",
        )
        with pytest.raises(RecordError, match="bad01"):
            ingest.ingest_columnar(tmp_path / "bad.parquet")

    def test_synthetic_ids_when_column_absent(self, tmp_path):
        from rs_synthgen.columnar import write_columns

        img = imgio.encode_png(np.zeros((4, 4, 3), dtype=np.uint8))
        write_columns({"image": [img, img], "captions": ["one", "two"]}, tmp_path / "noid.parquet")
        rs = ingest.ingest_columnar(tmp_path / "noid.parquet")
        assert rs.source_ids() == ["row000000", "row000001"]
        # bare-string caption cells become single-item lists
        assert rs.records[0].captions == ["one"]


class TestSplitHoldout:
    def test_sizes_and_determinism(self):
        rs = make_recordset(20)
        train_a, hold_a = ingest.split_holdout(rs, 6, seed=11)
        train_b, hold_b = ingest.split_holdout(rs, 6, seed=11)
        assert len(train_a) == 14 and len(hold_a) == 6
        assert train_a.source_ids() == train_b.source_ids()
        assert hold_a.source_ids() == hold_b.source_ids()
        assert train_a.split_tag == "train" and hold_a.split_tag == "holdout"

    def test_partition_preserves_order(self):
        rs = make_recordset(15)
        train, hold = ingest.split_holdout(rs, 5, seed=3)
        combined = sorted(train.source_ids() + hold.source_ids())
        assert combined == rs.source_ids()
        # each side keeps the input's relative order
        order = {sid: i for i, sid in enumerate(rs.source_ids())}
        assert [order[s] for s in train.source_ids()] == sorted(order[s] for s in train.source_ids())

    def test_different_seed_different_split(self):
        rs = make_recordset(30)
        _, hold_a = ingest.split_holdout(rs, 10, seed=1)
        _, hold_b = ingest.split_holdout(rs, 10, seed=2)
        assert hold_a.source_ids() != hold_b.source_ids()

    def test_rejects_out_of_range_and_resplit(self):
        rs = make_recordset(4)
        with pytest.raises(ValueError):
            ingest.split_holdout(rs, 5, seed=0)
        train, _ = ingest.split_holdout(rs, 1, seed=0)
        with pytest.raises(ValueError):
            ingest.split_holdout(train, 1, seed=0)


class TestComputeStats:
    def test_against_two_pass_oracle(self):
        # oracle: concatenate every pixel and use numpy's population moments
        rs = make_recordset(7, shape=(9, 13))
        stats = ingest.compute_stats(rs)
        pixels = np.concatenate([r.image.reshape(-1, 3) for r in rs.records]).astype(np.float64)
        assert np.allclose(stats.mean, pixels.mean(axis=0), atol=1e-9)
        assert np.allclose(stats.std, pixels.std(axis=0), atol=1e-9)

    def test_constant_channel_hits_floor(self):
        rs = ingest.RecordSet([make_record("c", value=77)], "train")
        stats = ingest.compute_stats(rs)
        assert np.allclose(stats.mean, 77.0)
        assert np.all(stats.std == ingest.STD_FLOOR)

    def test_whole_dataset_not_per_image(self):
        # two images with different constant values: per-image std would be 0,
        # dataset-level std must not be
        rs = ingest.RecordSet([make_record("a", value=0), make_record("b", value=100)], "train")
        stats = ingest.compute_stats(rs)
        assert np.allclose(stats.mean, 50.0)
        assert np.allclose(stats.std, 50.0)

    def test_normalize_round_trip(self):
        rs = make_recordset(3)
        stats = ingest.compute_stats(rs)
        img = rs.records[0].image
        normed = ingest.normalize(img, stats)
        assert normed.dtype == np.float64
        assert np.allclose(normed * stats.std + stats.mean, img.astype(np.float64))

    def test_normalize_channel_mismatch(self):
        stats = ingest.ChannelStats(mean=np.zeros(4), std=np.ones(4))
        with pytest.raises(ValueError):
            ingest.normalize(np.zeros((4, 4, 3)), stats)


def resize_oracle(image: np.ndarray, side: int) -> np.ndarray:
    """Independent scalar-loop bilinear resize: half-pixel centers, edge clamp."""
    h, w = image.shape[:2]
    src = image.astype(np.float64)
    out = np.zeros((side, side, image.shape[2]), dtype=np.float64)
    for oy in range(side):
        # coordinate convention under test: (i + 0.5) * (n_in / n_out) - 0.5
        sy = min(max((oy + 0.5) * (h / side) - 0.5, 0.0), h - 1.0)
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for ox in range(side):
            sx = min(max((ox + 0.5) * (w / side) - 0.5, 0.0), w - 1.0)
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
            bot = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
            out[oy, ox] = top * (1 - fy) + bot * fy
    return out


class TestResize:
    @pytest.mark.parametrize("shape,side", [((10, 14), 7), ((8, 8), 16), ((5, 9), 5), ((21, 13), 8)])
    def test_matches_scalar_oracle(self, shape, side):
        rng = np.random.default_rng(42)
        img = rng.integers(0, 256, size=(*shape, 3), dtype=np.uint8)
        got = ingest.resize_to(img, side)
        want = np.clip(np.rint(resize_oracle(img, side)), 0, 255).astype(np.uint8)
        assert got.dtype == np.uint8
        np.testing.assert_array_equal(got, want)

    def test_float_matches_oracle(self):
        rng = np.random.default_rng(1)
        img = rng.normal(size=(12, 7, 3))
        assert np.allclose(ingest.resize_to(img, 5), resize_oracle(img, 5), atol=1e-12)

    def test_same_size_is_exact(self):
        rng = np.random.default_rng(2)
        img = rng.integers(0, 256, size=(11, 11, 3), dtype=np.uint8)
        np.testing.assert_array_equal(ingest.resize_to(img, 11), img)

    def test_constant_image_stays_constant(self):
        img = np.full((6, 6, 3), 123, dtype=np.uint8)
        assert np.all(ingest.resize_to(img, 17) == 123)

    @given(st.integers(2, 12), st.integers(2, 12), st.integers(1, 15))
    @settings(max_examples=25, deadline=None)
    def test_output_range_bounded_by_input(self, h, w, side):
        rng = np.random.default_rng(h * 100 + w)
        img = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
        out = ingest.resize_to(img, side)
        assert out.shape == (side, side, 3)
        assert out.min() >= img.min() and out.max() <= img.max()


class TestDihedral:
    def test_seven_distinct_outputs(self):
        img = np.arange(25, dtype=np.uint8).reshape(5, 5)
        outs = ingest.augment_dihedral(img)
        assert len(outs) == 7
        for i in range(7):
            assert not np.array_equal(outs[i], img)
            for j in range(i + 1, 7):
                assert not np.array_equal(outs[i], outs[j])

    def test_known_identities(self):
        img = np.arange(75, dtype=np.uint8).reshape(5, 5, 3)
        rot90, rot180, rot270, hflip, vflip, transpose, anti = ingest.augment_dihedral(img)
        np.testing.assert_array_equal(np.rot90(rot90, 1, axes=(0, 1)), rot180)
        np.testing.assert_array_equal(np.rot90(rot270, 1, axes=(0, 1)), img)  # rot270 then rot90 = id
        np.testing.assert_array_equal(hflip[::-1, :], rot180)  # vflip(hflip) = rot180
        np.testing.assert_array_equal(transpose[::-1, ::-1], anti)

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            ingest.augment_dihedral(np.zeros((4, 5, 3), dtype=np.uint8))

    @given(st.integers(2, 8))
    @settings(max_examples=15, deadline=None)
    def test_transforms_preserve_pixel_multiset(self, n):
        rng = np.random.default_rng(n)
        img = rng.integers(0, 256, size=(n, n, 3), dtype=np.uint8)
        for out in ingest.augment_dihedral(img):
            assert sorted(out.ravel().tolist()) == sorted(img.ravel().tolist())


class TestExportLayout:
    def test_layout_files_and_metadata(self, tmp_path):
        rs = ingest.RecordSet(make_recordset(4).records, "train")
        manifest = ingest.export_layout(rs, tmp_path / "out")
        assert manifest.image_count == 4
        lines = [json.loads(ln) for ln in (tmp_path / "out" / "metadata.jsonl").read_text().splitlines()]
        assert [set(d) for d in lines] == [{"file_name", "text"}] * 4
        for d in lines:
            assert (tmp_path / "out" / d["file_name"]).exists()
        manifest.verify()

    def test_caption_policies(self, tmp_path):
        recs = [make_record(f"r{i}", captions=["first", "second", "third"]) for i in range(6)]
        rs = ingest.RecordSet(recs, "train")
        m_first = ingest.export_layout(rs, tmp_path / "first", caption_policy="first")
        texts_first = [t for _, t in ingest.read_layout_entries(m_first)]
        assert texts_first == ["first"] * 6
        m_rand_a = ingest.export_layout(rs, tmp_path / "ra", caption_policy="random", seed=5)
        m_rand_b = ingest.export_layout(rs, tmp_path / "rb", caption_policy="random", seed=5)
        assert [t for _, t in ingest.read_layout_entries(m_rand_a)] == [
            t for _, t in ingest.read_layout_entries(m_rand_b)
        ]

    def test_verify_detects_tamper(self, tmp_path):
        rs = ingest.RecordSet(make_recordset(3).records, "train")
        manifest = ingest.export_layout(rs, tmp_path / "out")
        meta = tmp_path / "out" / "metadata.jsonl"
        meta.write_text(meta.read_text().replace("caption", "altered"))
        with pytest.raises(SchemaError):
            manifest.verify()

    def test_verify_detects_missing_image(self, tmp_path):
        rs = ingest.RecordSet(make_recordset(3).records, "train")
        manifest = ingest.export_layout(rs, tmp_path / "out")
        next((tmp_path / "out" / "images").iterdir()).unlink()
        with pytest.raises(SchemaError):
            manifest.verify()

    def test_manifest_round_trip(self, tmp_path):
        rs = ingest.RecordSet(make_recordset(2).records, "train")
        manifest = ingest.export_layout(rs, tmp_path / "out")
        loaded = ingest.LayoutManifest.load(tmp_path / "out" / "manifest.json")
        assert loaded == manifest


class TestRecordValidation:
    def test_record_requires_three_channels(self):
        with pytest.raises(RecordError):
            ingest.ImageCaptionRecord(image=np.zeros((4, 4)), captions=["c"], source_id="x")

    def test_record_requires_captions(self):
        with pytest.raises(RecordError):
            ingest.ImageCaptionRecord(image=np.zeros((4, 4, 3), dtype=np.uint8), captions=[], source_id="x")

    def test_recordset_rejects_duplicate_ids(self):
        recs = [make_record("same"), make_record("same")]
        with pytest.raises(SchemaError):
            ingest.RecordSet(recs, "train")
