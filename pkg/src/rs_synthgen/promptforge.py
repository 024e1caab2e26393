"""Caption-corpus preparation, retrieval index, and prompt assembly.

The corpus side turns many short caption rows into training-sized chunks for
a language-model fine-tune and emits the job spec for it. The retrieval side
embeds chunk segments into a small vector index so prompt assembly can pull
grounded context for each land-cover class. The embedder is an adapter: the
in-repo reference is a hashed bag-of-words, which is deterministic and needs
no model weights.
"""

from __future__ import annotations

import math
import re
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from . import columnar
from .classes import DEFAULT_CLASS_PHRASES, LULC_CLASSES
from .errors import BackendError, StateError, ValidationError

DEFAULT_EOS_MARKER = "<|endoftext|>"

# Fixed negative prompt applied to every generation task.
NEGATIVE_PROMPT_CUES = "wrapped, repeating, blurry, deformed, low quality"

PROMPT_TEMPLATES = {
    "default": "satellite image, aerial view, realistic, high resolution",
    "aerial-photo": "aerial photograph, top-down view, detailed, natural colors",
}

_STOPWORDS = frozenset(
    "a an and are as at be by for from in is it its of on or that the there this to was were with".split()
)


@dataclass(frozen=True)
class CorpusChunk:
    """One contiguous piece of the corpus.

    `text` holds the raw characters; the EOS marker is tracked out of band in
    `ends_with_eos` so concatenating chunk texts reproduces the corpus exactly.
    """

    text: str
    char_len: int
    ends_with_eos: bool
    ordinal: int

    def __post_init__(self):
        if self.char_len != len(self.text):
            raise ValueError(f"char_len {self.char_len} does not match text length {len(self.text)}")
        if self.ordinal < 0:
            raise ValueError(f"ordinal must be >= 0, got {self.ordinal}")


def build_corpus(documents: Sequence[str]) -> str:
    """Collapse whitespace runs in each document and join them with newlines."""
    if not documents:
        raise ValueError("no documents given")
    cleaned = [re.sub(r"\s+", " ", doc).strip() for doc in documents]
    cleaned = [doc for doc in cleaned if doc]
    if not cleaned:
        raise ValueError("all documents are empty after whitespace cleanup")
    return "\n".join(cleaned)


def chunk_corpus(text: str, min_chars: int = 500) -> list[CorpusChunk]:
    """Greedy chunker: accumulate at least min_chars, then cut after the next full stop.

    A trailing remainder shorter than min_chars becomes a final short chunk.
    Concatenating the chunk texts reproduces `text` exactly.
    """
    if min_chars < 1:
        raise ValueError(f"min_chars must be >= 1, got {min_chars}")
    chunks: list[CorpusChunk] = []
    start = 0
    pos = 0
    while True:
        cut = text.find(".", pos)
        if cut == -1:
            break
        if cut + 1 - start >= min_chars:
            piece = text[start : cut + 1]
            chunks.append(CorpusChunk(piece, len(piece), True, len(chunks)))
            start = cut + 1
        pos = cut + 1
    if start < len(text):
        piece = text[start:]
        chunks.append(CorpusChunk(piece, len(piece), True, len(chunks)))
    return chunks


def render_chunk(chunk: CorpusChunk, eos_marker: str = DEFAULT_EOS_MARKER) -> str:
    """Chunk text as fed to a language-model trainer, with the EOS marker applied."""
    return chunk.text + (eos_marker if chunk.ends_with_eos else "")


def split_corpus(
    chunks: Sequence[CorpusChunk], test_fraction: float = 0.05, seed: int = 0
) -> tuple[list[CorpusChunk], list[CorpusChunk]]:
    """Random train/test split of chunks; both halves keep ordinal order."""
    if not 0 <= test_fraction < 1:
        raise ValueError(f"test_fraction must be in [0, 1), got {test_fraction}")
    n = len(chunks)
    n_test = int(math.floor(test_fraction * n + 0.5))
    perm = np.random.default_rng(seed).permutation(n)
    test_idx = set(int(i) for i in perm[:n_test])
    train = [c for i, c in enumerate(chunks) if i not in test_idx]
    test = [c for i, c in enumerate(chunks) if i in test_idx]
    return train, test


def write_corpus(
    chunks: Sequence[CorpusChunk], test_ordinals: set[int], path: Path | str
) -> None:
    """Persist chunks plus their train/test assignment as a columnar file."""
    columnar.write_columns(
        {
            "ordinal": [c.ordinal for c in chunks],
            "text": [c.text for c in chunks],
            "char_len": [c.char_len for c in chunks],
            "ends_with_eos": [c.ends_with_eos for c in chunks],
            "split": ["test" if c.ordinal in test_ordinals else "train" for c in chunks],
        },
        path,
    )


def read_corpus(path: Path | str) -> tuple[list[CorpusChunk], set[int]]:
    cols = columnar.read_columns(path, required=("ordinal", "text", "char_len", "ends_with_eos", "split"))
    chunks = [
        CorpusChunk(text=t, char_len=int(n), ends_with_eos=bool(e), ordinal=int(o))
        for o, t, n, e in zip(cols["ordinal"], cols["text"], cols["char_len"], cols["ends_with_eos"])
    ]
    test_ordinals = {c.ordinal for c, s in zip(chunks, cols["split"]) if s == "test"}
    return chunks, test_ordinals


@runtime_checkable
class TextEmbedder(Protocol):
    """Adapter contract for text embedding models."""

    @property
    def embedder_id(self) -> str: ...

    @property
    def dim(self) -> int: ...

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


class HashedBowEmbedder:
    """Hashed bag-of-words embedding: crc32 token buckets, unit-normalized.

    No weights, fully deterministic, and overlapping vocabularies still score
    high cosine similarity, which is all retrieval needs at reference scale.
    """

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self._dim = int(dim)

    @property
    def embedder_id(self) -> str:
        return f"hashed-bow-{self._dim}"

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self._dim), dtype=np.float64)
        for i, text in enumerate(texts):
            tokens = re.findall(r"[a-z0-9]+", text.lower())
            if not tokens:
                out[i, 0] = 1.0
                continue
            for tok in tokens:
                out[i, zlib.crc32(tok.encode("utf-8")) % self._dim] += 1.0
            out[i] /= np.linalg.norm(out[i])
        return out


@dataclass
class VectorIndex:
    """Embedded corpus segments: parallel arrays of source ordinal and unit vector."""

    ordinals: np.ndarray
    vectors: np.ndarray
    embedder_id: str
    index_chunk_size: int

    def __post_init__(self):
        self.ordinals = np.asarray(self.ordinals, dtype=np.int64)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.ordinals.shape[0] != self.vectors.shape[0]:
            raise ValueError("ordinals and vectors must be parallel arrays")
        if len(self.vectors):
            norms = np.linalg.norm(self.vectors, axis=1)
            if not np.allclose(norms, 1.0, atol=1e-6):
                raise ValueError("index vectors must be unit-normalized")

    def __len__(self) -> int:
        return len(self.ordinals)

    def save(self, path: Path | str) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(
            path,
            ordinals=self.ordinals,
            vectors=self.vectors,
            embedder_id=np.array(self.embedder_id),
            index_chunk_size=np.array(self.index_chunk_size),
        )

    @classmethod
    def load(cls, path: Path | str) -> "VectorIndex":
        data = np.load(Path(path), allow_pickle=False)
        return cls(
            ordinals=data["ordinals"],
            vectors=data["vectors"],
            embedder_id=str(data["embedder_id"]),
            index_chunk_size=int(data["index_chunk_size"]),
        )


def index_corpus(
    chunks: Sequence[CorpusChunk], embedder: TextEmbedder, index_chunk_size: int = 256
) -> VectorIndex:
    """Slice chunk texts into fixed-size segments and embed every segment.

    Each segment keeps the ordinal of the chunk it came from, so retrieval
    resolves back to whole chunks.
    """
    if index_chunk_size < 1:
        raise ValueError(f"index_chunk_size must be >= 1, got {index_chunk_size}")
    ordinals: list[int] = []
    segments: list[str] = []
    for chunk in chunks:
        for off in range(0, len(chunk.text), index_chunk_size):
            ordinals.append(chunk.ordinal)
            segments.append(chunk.text[off : off + index_chunk_size])
    if segments:
        try:
            vectors = np.asarray(embedder.embed(segments), dtype=np.float64)
        except Exception as exc:
            raise BackendError(f"embedder {embedder.embedder_id} failed: {exc}") from exc
        if vectors.shape != (len(segments), embedder.dim):
            raise BackendError(
                f"embedder returned shape {vectors.shape}, expected {(len(segments), embedder.dim)}"
            )
    else:
        vectors = np.zeros((0, embedder.dim), dtype=np.float64)
    return VectorIndex(
        ordinals=np.array(ordinals, dtype=np.int64),
        vectors=vectors,
        embedder_id=embedder.embedder_id,
        index_chunk_size=index_chunk_size,
    )


def retrieve(index: VectorIndex, query: str, k: int, embedder: TextEmbedder) -> list[tuple[int, float]]:
    """Top-k segments by cosine similarity as (chunk ordinal, score); ties favor lower ordinals."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(index) == 0:
        raise StateError("cannot retrieve from an empty index")
    if embedder.embedder_id != index.embedder_id:
        raise ValueError(
            f"index was built with {index.embedder_id!r}, queried with {embedder.embedder_id!r}"
        )
    q = np.asarray(embedder.embed([query]), dtype=np.float64)[0]
    scores = index.vectors @ q
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], int(index.ordinals[i]), i))
    return [(int(index.ordinals[i]), float(scores[i])) for i in order[:k]]


@dataclass(frozen=True)
class PromptSpec:
    """One generation task: prompts plus sampler settings."""

    class_name: str
    positive: str
    negative: str = NEGATIVE_PROMPT_CUES
    seed: int = 0
    steps: int = 50
    scheduler: str = "PNDM"
    width: int = 512
    height: int = 512

    def __post_init__(self):
        if not self.positive:
            raise ValueError("positive prompt must be non-empty")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"width and height must be >= 1, got {self.width}x{self.height}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PromptSpec":
        return cls(**d)


def _context_keywords(context: Sequence[str], cap: int = 20) -> str:
    seen: list[str] = []
    for text in context:
        for tok in re.findall(r"[a-z0-9]+", text.lower()):
            if tok in _STOPWORDS or len(tok) < 3 or tok in seen:
                continue
            seen.append(tok)
            if len(seen) >= cap:
                return ", ".join(seen)
    return ", ".join(seen)


def assemble_prompt(
    class_name: str,
    context: Sequence[str] = (),
    template_id: str = "default",
    seed: int = 0,
    phrase_bank: dict[str, Sequence[str]] | None = None,
) -> PromptSpec:
    """Build the PromptSpec for one class: class phrase, retrieved-context keywords, realism cues."""
    phrase_bank = phrase_bank if phrase_bank is not None else DEFAULT_CLASS_PHRASES
    if class_name not in phrase_bank:
        raise ValueError(f"unknown class {class_name!r}")
    if template_id not in PROMPT_TEMPLATES:
        raise ValueError(f"unknown template_id {template_id!r}; known: {sorted(PROMPT_TEMPLATES)}")
    phrases = list(phrase_bank[class_name])
    if not phrases:
        raise ValueError(f"class {class_name!r} has an empty phrase bank")
    rng = np.random.default_rng(seed)
    phrase = phrases[int(rng.integers(0, len(phrases)))]
    keywords = _context_keywords(context)
    positive = ", ".join(part for part in (phrase, keywords, PROMPT_TEMPLATES[template_id]) if part)
    return PromptSpec(class_name=class_name, positive=positive, seed=seed)


_QLORA_FIELDS = (
    "lora_alpha",
    "rank",
    "target_modules",
    "dropout",
    "learning_rate",
    "weight_decay",
    "epochs",
    "batch_size",
    "context_length",
)

_VALID_TARGET_MODULES = frozenset({"k", "q", "v"})


@dataclass(frozen=True)
class QLoraJobSpec:
    """Quantized low-rank-adapter fine-tune job for the caption language model."""

    lora_alpha: int = 8
    rank: int = 16
    target_modules: tuple[str, ...] = ("k", "q", "v")
    dropout: float = 0.05
    learning_rate: float = 2e-5
    weight_decay: float = 0.01
    epochs: int = 3
    batch_size: int = 8
    context_length: int = 512

    def to_dict(self) -> dict:
        return asdict(self)


def build_qlora_spec(overrides: dict | None = None) -> QLoraJobSpec:
    overrides = dict(overrides or {})
    unknown = set(overrides) - set(_QLORA_FIELDS)
    if unknown:
        raise ValidationError(f"unknown qlora spec field(s): {sorted(unknown)}")
    if "target_modules" in overrides:
        overrides["target_modules"] = tuple(overrides["target_modules"])
    spec = QLoraJobSpec(**overrides)
    if spec.lora_alpha < 1:
        raise ValidationError(f"lora_alpha must be >= 1, got {spec.lora_alpha}")
    if spec.rank < 1:
        raise ValidationError(f"rank must be >= 1, got {spec.rank}")
    bad = set(spec.target_modules) - _VALID_TARGET_MODULES
    if bad or not spec.target_modules:
        raise ValidationError(f"target_modules must be a non-empty subset of {sorted(_VALID_TARGET_MODULES)}")
    if not 0 <= spec.dropout < 1:
        raise ValidationError(f"dropout must be in [0, 1), got {spec.dropout}")
    if not spec.learning_rate > 0:
        raise ValidationError(f"learning_rate must be > 0, got {spec.learning_rate}")
    if spec.weight_decay < 0:
        raise ValidationError(f"weight_decay must be >= 0, got {spec.weight_decay}")
    if spec.epochs < 1:
        raise ValidationError(f"epochs must be >= 1, got {spec.epochs}")
    if spec.batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {spec.batch_size}")
    if spec.context_length < 1:
        raise ValidationError(f"context_length must be >= 1, got {spec.context_length}")
    return spec


def perplexity(nll_values: Sequence[float]) -> float:
    """exp(mean negative log-likelihood).

    Note: exp(3.3855) is about 29.53. The reference fine-tune these defaults
    mirror reports 30.5 at that loss, a gap consistent with the perplexity
    being computed over a different token stream than the reported loss; this
    function applies no correction.
    """
    values = np.asarray(list(nll_values), dtype=np.float64)
    if values.size == 0:
        raise ValueError("nll_values must be non-empty")
    if not np.all(np.isfinite(values)):
        raise ValueError("nll_values must all be finite")
    return float(np.exp(values.mean()))
