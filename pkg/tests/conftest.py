import numpy as np
import pytest

from rs_synthgen import imgio, ingest
from rs_synthgen.columnar import write_columns


def make_record(source_id: str, shape=(16, 16), value=None, seed=0, captions=None) -> ingest.ImageCaptionRecord:
    rng = np.random.default_rng(seed)
    if value is not None:
        image = np.full((*shape, 3), value, dtype=np.uint8)
    else:
        image = rng.integers(0, 256, size=(*shape, 3), dtype=np.uint8)
    return ingest.ImageCaptionRecord(
        image=image,
        captions=captions or [f"caption for {source_id}"],
        source_id=source_id,
    )


def make_recordset(n: int, shape=(16, 16), seed=0) -> ingest.RecordSet:
    return ingest.RecordSet(
        [make_record(f"rec{i:04d}", shape=shape, seed=seed + i) for i in range(n)],
        "unsplit",
    )


@pytest.fixture
def tiny_layout(tmp_path):
    """An exported 6-image layout, the minimum a training run needs."""
    rs = ingest.RecordSet(make_recordset(6).records, "train")
    return ingest.export_layout(rs, tmp_path / "layout")


def write_parquet_dataset(path, n: int, shape=(16, 16), seed=0, n_captions=2):
    """Columnar image-caption file in the shape `prepare` ingests."""
    rng = np.random.default_rng(seed)
    images, captions, ids = [], [], []
    for i in range(n):
        img = rng.integers(0, 256, size=(*shape, 3), dtype=np.uint8)
        images.append(imgio.encode_png(img))
        captions.append([f"caption {i} variant {j}" for j in range(n_captions)])
        ids.append(f"img{i:04d}")
    write_columns({"image": images, "captions": captions, "source_id": ids}, path)
    return path
