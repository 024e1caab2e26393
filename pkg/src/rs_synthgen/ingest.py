"""Image-caption dataset ingestion and fine-tuning layout export.

Converts a columnar image-caption dataset (parquet with an image-bytes column
and a caption-list column) into the image-folder + metadata.jsonl layout that
diffusion fine-tuning consumes, carves out an evaluation holdout, and provides
the preprocessing kernels: whole-dataset channel statistics, normalization,
bilinear resize, and the seven non-identity dihedral augmentations.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imgio
from .columnar import read_columns
from .errors import RecordError, SchemaError

STD_FLOOR = 1e-6

_SAFE_NAME = re.compile(r"[^A-Za-z0-9._-]+")


@dataclass
class ImageCaptionRecord:
    """One image with its caption list; the unit of ingestion."""

    image: np.ndarray  # (H, W, 3) uint8
    captions: list[str]
    source_id: str
    class_name: str | None = None

    def __post_init__(self):
        arr = np.asarray(self.image)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise RecordError(f"record {self.source_id!r}: image must be (H, W, 3), got {arr.shape}")
        if not self.captions:
            raise RecordError(f"record {self.source_id!r}: captions must be non-empty")


@dataclass
class RecordSet:
    """Ordered collection of records with a split tag."""

    records: list[ImageCaptionRecord] = field(default_factory=list)
    split_tag: str = "unsplit"  # train | holdout | unsplit

    def __post_init__(self):
        if self.split_tag not in ("train", "holdout", "unsplit"):
            raise ValueError(f"invalid split_tag {self.split_tag!r}")
        ids = [r.source_id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise SchemaError(f"duplicate source_id(s): {dupes[:5]}")

    def __len__(self) -> int:
        return len(self.records)

    def source_ids(self) -> list[str]:
        return [r.source_id for r in self.records]


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean/std over every pixel of a dataset; std floored at STD_FLOOR."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        if self.mean.shape != self.std.shape:
            raise ValueError("mean/std length mismatch")
        if np.any(self.std < STD_FLOOR):
            raise ValueError(f"std below floor {STD_FLOOR}")

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelStats":
        return cls(mean=np.asarray(d["mean"]), std=np.asarray(d["std"]))


@dataclass(frozen=True)
class LayoutManifest:
    """Checksummed description of an exported fine-tuning layout."""

    root_dir: Path
    image_count: int
    metadata_path: Path
    checksum: str

    def to_dict(self) -> dict:
        return {
            "root_dir": str(self.root_dir),
            "image_count": self.image_count,
            "metadata_path": str(self.metadata_path),
            "checksum": self.checksum,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayoutManifest":
        return cls(
            root_dir=Path(d["root_dir"]),
            image_count=int(d["image_count"]),
            metadata_path=Path(d["metadata_path"]),
            checksum=str(d["checksum"]),
        )

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "LayoutManifest":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def verify(self) -> None:
        """Check the manifest still matches the files on disk."""
        meta = self.root_dir / self.metadata_path
        if not meta.exists():
            raise SchemaError(f"metadata file missing: {meta}")
        data = meta.read_bytes()
        if hashlib.sha256(data).hexdigest() != self.checksum:
            raise SchemaError(f"metadata checksum mismatch for {meta}")
        lines = [ln for ln in data.decode("utf-8").splitlines() if ln]
        if len(lines) != self.image_count:
            raise SchemaError(f"image_count {self.image_count} != {len(lines)} metadata lines")
        for ln in lines:
            rel = json.loads(ln)["file_name"]
            if not (self.root_dir / rel).exists():
                raise SchemaError(f"referenced image missing: {rel}")


def _image_bytes_from_cell(cell) -> bytes:
    # Accept raw bytes or the common {bytes, path} struct used by hub-style parquet.
    if isinstance(cell, (bytes, bytearray)):
        return bytes(cell)
    if isinstance(cell, dict) and isinstance(cell.get("bytes"), (bytes, bytearray)):
        return bytes(cell["bytes"])
    raise ValueError(f"unsupported image cell type {type(cell).__name__}")


def _captions_from_cell(cell) -> list[str]:
    if isinstance(cell, str):
        return [cell]
    if isinstance(cell, (list, tuple)):
        return [str(c) for c in cell]
    raise ValueError(f"unsupported caption cell type {type(cell).__name__}")


def ingest_columnar(
    path: Path | str,
    image_column: str = "image",
    caption_column: str = "captions",
    class_column: str | None = None,
    id_column: str | None = None,
) -> RecordSet:
    """Read a columnar image-caption dataset into a RecordSet (split_tag=unsplit).

    Column names are configurable; `class_column`/`id_column` default to
    `class_name`/`source_id` when those columns are present. Rows whose image
    bytes cannot be decoded raise RecordError naming the source_id.
    """
    cols = read_columns(path, required=(image_column, caption_column))
    n = len(cols[image_column])

    if class_column is None and "class_name" in cols:
        class_column = "class_name"
    if id_column is None and "source_id" in cols:
        id_column = "source_id"
    if class_column is not None and class_column not in cols:
        raise SchemaError(f"{path}: missing class column {class_column!r}")
    if id_column is not None and id_column not in cols:
        raise SchemaError(f"{path}: missing id column {id_column!r}")

    records = []
    for i in range(n):
        source_id = str(cols[id_column][i]) if id_column else f"row{i:06d}"
        try:
            captions = _captions_from_cell(cols[caption_column][i])
            image = imgio.decode_image(_image_bytes_from_cell(cols[image_column][i]))
        except RecordError:
            raise
        except Exception as exc:
            raise RecordError(f"record {source_id!r}: {exc}") from exc
        class_name = str(cols[class_column][i]) if class_column and cols[class_column][i] is not None else None
        records.append(ImageCaptionRecord(image=image, captions=captions, source_id=source_id, class_name=class_name))
    return RecordSet(records=records, split_tag="unsplit")


def split_holdout(rs: RecordSet, holdout_n: int, seed: int) -> tuple[RecordSet, RecordSet]:
    """Uniformly sample `holdout_n` records out of an unsplit set, deterministically.

    Record order within each side follows the input order. Unstratified.
    """
    if rs.split_tag != "unsplit":
        raise ValueError(f"record set already split (tag={rs.split_tag!r})")
    if not 0 <= holdout_n <= len(rs):
        raise ValueError(f"holdout_n={holdout_n} out of range for {len(rs)} records")
    rng = np.random.default_rng(seed)
    picked = set(rng.permutation(len(rs))[:holdout_n].tolist())
    train = [r for i, r in enumerate(rs.records) if i not in picked]
    holdout = [r for i, r in enumerate(rs.records) if i in picked]
    return RecordSet(train, "train"), RecordSet(holdout, "holdout")


def compute_stats(rs: RecordSet) -> ChannelStats:
    """Per-channel mean and population std over all pixels of all images."""
    if len(rs) == 0:
        raise ValueError("cannot compute stats of an empty record set")
    return stats_from_images(rec.image for rec in rs.records)


def stats_from_images(images) -> ChannelStats:
    """compute_stats over bare image arrays.

    Sequential float64 accumulation keeps the reduction order fixed.
    """
    total = total_sq = None
    count = 0
    for img in images:
        arr = np.asarray(img)
        channels = arr.shape[2]
        if total is None:
            total = np.zeros(channels, dtype=np.float64)
            total_sq = np.zeros(channels, dtype=np.float64)
        pix = arr.reshape(-1, channels).astype(np.float64)
        total += pix.sum(axis=0)
        total_sq += (pix * pix).sum(axis=0)
        count += pix.shape[0]
    if count == 0:
        raise ValueError("cannot compute stats of an empty image collection")
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    std = np.maximum(np.sqrt(var), STD_FLOOR)
    return ChannelStats(mean=mean, std=std)


def normalize(image: np.ndarray, stats: ChannelStats) -> np.ndarray:
    """(image - mean) / std per channel; returns float64."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != stats.mean.shape[0]:
        raise ValueError(f"channel mismatch: image {arr.shape} vs stats dim {stats.mean.shape[0]}")
    return (arr - stats.mean) / stats.std


def resize_to(image: np.ndarray, side: int) -> np.ndarray:
    """Bilinear resize to side x side (half-pixel sample centers, edge clamp).

    uint8 inputs come back as uint8 (rounded); float inputs stay float.
    A same-size resize is exact.
    """
    if side < 1:
        raise ValueError(f"side must be >= 1, got {side}")
    arr = np.asarray(image)
    if arr.ndim not in (2, 3):
        raise ValueError(f"expected 2-D or 3-D raster, got shape {arr.shape}")
    h, w = arr.shape[:2]

    def axis_coords(n_in: int, n_out: int):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = src - lo
        return lo, hi, frac

    y0, y1, fy = axis_coords(h, side)
    x0, x1, fx = axis_coords(w, side)
    src = arr.astype(np.float64)
    fy = fy[:, None] if arr.ndim == 2 else fy[:, None, None]
    fx = fx[None, :] if arr.ndim == 2 else fx[None, :, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    if arr.dtype == np.uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out.astype(arr.dtype, copy=False)


def augment_dihedral(image: np.ndarray) -> list[np.ndarray]:
    """The 7 non-identity symmetries of a square image, in a fixed order.

    Order: rot90, rot180, rot270 (counter-clockwise), hflip (left-right),
    vflip (top-bottom), transpose (main diagonal), anti-transpose
    (anti-diagonal). With the identity these form the dihedral group of the
    square.
    """
    arr = np.asarray(image)
    if arr.ndim not in (2, 3) or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"expected a square image, got shape {arr.shape}")
    transpose = np.swapaxes(arr, 0, 1)
    out = [
        np.rot90(arr, 1, axes=(0, 1)),
        np.rot90(arr, 2, axes=(0, 1)),
        np.rot90(arr, 3, axes=(0, 1)),
        arr[:, ::-1],
        arr[::-1, :],
        transpose,
        transpose[::-1, ::-1],
    ]
    return [np.ascontiguousarray(a) for a in out]


def export_layout(
    rs: RecordSet,
    out_dir: Path | str,
    caption_policy: str = "first",
    seed: int = 0,
) -> LayoutManifest:
    """Write a record set as image files plus metadata.jsonl, and checksum it.

    Each metadata line is exactly {"file_name": <relpath>, "text": <caption>}.
    caption_policy `first` takes captions[0]; `random` draws one per record
    deterministically from `seed`.
    """
    if len(rs) == 0:
        raise ValueError("cannot export an empty record set")
    if caption_policy not in ("first", "random"):
        raise ValueError(f"unknown caption_policy {caption_policy!r}")
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    lines = []
    seen_names: set[str] = set()
    for rec in rs.records:
        name = _SAFE_NAME.sub("_", rec.source_id) + ".png"
        if name in seen_names:
            raise RuntimeError(f"duplicate layout file_name {name!r}")
        seen_names.add(name)
        rel = f"images/{name}"
        imgio.save_png(rec.image, root / "images" / name)
        if caption_policy == "first":
            text = rec.captions[0]
        else:
            text = rec.captions[int(rng.integers(0, len(rec.captions)))]
        lines.append(json.dumps({"file_name": rel, "text": text}, ensure_ascii=False))

    metadata = "\n".join(lines) + "\n"
    meta_path = root / "metadata.jsonl"
    meta_path.write_text(metadata, encoding="utf-8")
    manifest = LayoutManifest(
        root_dir=root,
        image_count=len(rs),
        metadata_path=Path("metadata.jsonl"),
        checksum=hashlib.sha256(metadata.encode("utf-8")).hexdigest(),
    )
    manifest.save(root / "manifest.json")
    return manifest


def read_layout_entries(manifest: LayoutManifest) -> list[tuple[Path, str]]:
    """(absolute image path, caption) pairs from a layout, in metadata order."""
    meta = manifest.root_dir / manifest.metadata_path
    entries = []
    for ln in meta.read_text(encoding="utf-8").splitlines():
        if not ln:
            continue
        d = json.loads(ln)
        entries.append((manifest.root_dir / d["file_name"], d["text"]))
    return entries
