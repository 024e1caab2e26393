"""Fine-tuning job orchestration: config, ledger, checkpoint selection.

The training loop itself lives behind a backend adapter so production
diffusion stacks can plug in; the in-repo reference backend is a small linear
denoiser over downscaled images that is fast enough to exercise the loop,
checkpointing, and loss-curve logic on a CPU.

Per-step RNG and batch selection are pure functions of (seed, step), which is
what makes runs bit-for-bit reproducible and lets a resumed job replay state
deterministically instead of trusting mutable backend state.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Protocol, runtime_checkable

import numpy as np

from . import imgio
from .classes import class_color
from .errors import JobError, StateError, ValidationError
from .ingest import LayoutManifest, read_layout_entries, resize_to

if TYPE_CHECKING:
    from .promptforge import PromptSpec

_CONFIG_FIELDS = (
    "epochs",
    "batch_size",
    "learning_rate",
    "grad_accum_steps",
    "mixed_precision",
    "checkpoint_interval_steps",
    "seed",
)


@dataclass(frozen=True)
class FinetuneConfig:
    """Declarative fine-tuning job; defaults are the reference recipe."""

    epochs: int = 5
    batch_size: int = 4
    learning_rate: float = 1e-6
    grad_accum_steps: int = 4
    mixed_precision: bool = True
    checkpoint_interval_steps: int = 500
    seed: int = 0

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def build_finetune_config(overrides: dict | None = None) -> FinetuneConfig:
    """Apply overrides to the default recipe and validate the result.

    Training beyond 5 epochs is allowed but warned about: long fine-tunes tend
    to overfit the target imagery and erode the base model's general output.
    """
    overrides = dict(overrides or {})
    unknown = set(overrides) - set(_CONFIG_FIELDS)
    if unknown:
        raise ValidationError(f"unknown finetune config field(s): {sorted(unknown)}")
    cfg = FinetuneConfig(**overrides)
    if cfg.epochs < 1:
        raise ValidationError(f"epochs must be >= 1, got {cfg.epochs}")
    if cfg.batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {cfg.batch_size}")
    if not cfg.learning_rate > 0:
        raise ValidationError(f"learning_rate must be > 0, got {cfg.learning_rate}")
    if cfg.grad_accum_steps < 1:
        raise ValidationError(f"grad_accum_steps must be >= 1, got {cfg.grad_accum_steps}")
    if cfg.checkpoint_interval_steps < 1:
        raise ValidationError(f"checkpoint_interval_steps must be >= 1, got {cfg.checkpoint_interval_steps}")
    if cfg.seed < 0:
        raise ValidationError(f"seed must be >= 0, got {cfg.seed}")
    if cfg.epochs > 5:
        warnings.warn(
            f"epochs={cfg.epochs}: fine-tuning past 5 epochs tends to overfit the "
            "target imagery and degrade general generation quality",
            stacklevel=2,
        )
    return cfg


@dataclass(frozen=True)
class LedgerEntry:
    step: int
    loss: float
    checkpoint_ref: str | None = None


@dataclass
class TrainLedger:
    """Append-only (step, loss, checkpoint) history for one training job.

    Steps strictly increase. Entries at checkpoint-interval multiples must
    carry a checkpoint_ref; other entries must not, except the final step of a
    completed run, which carries the end-of-run checkpoint.
    """

    config_hash: str
    checkpoint_interval: int
    total_steps: int
    entries: list[LedgerEntry] = field(default_factory=list)

    @property
    def last_step(self) -> int:
        return self.entries[-1].step if self.entries else 0

    def append(self, step: int, loss: float, checkpoint_ref: str | None = None) -> LedgerEntry:
        if step <= self.last_step:
            raise ValueError(f"ledger steps must strictly increase ({step} after {self.last_step})")
        on_interval = step % self.checkpoint_interval == 0
        if on_interval and checkpoint_ref is None:
            raise ValueError(f"step {step} is a checkpoint interval but has no checkpoint_ref")
        if not on_interval and checkpoint_ref is not None and step != self.total_steps:
            raise ValueError(f"step {step} is off-interval and not final; checkpoint_ref not allowed")
        entry = LedgerEntry(step=step, loss=float(loss), checkpoint_ref=checkpoint_ref)
        self.entries.append(entry)
        return entry

    def checkpointed(self) -> list[LedgerEntry]:
        return [e for e in self.entries if e.checkpoint_ref is not None]

    def save(self, path: Path | str) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            fh.write(self._header_line())
            for e in self.entries:
                fh.write(_entry_line(e))

    def _header_line(self) -> str:
        header = {
            "config_hash": self.config_hash,
            "checkpoint_interval": self.checkpoint_interval,
            "total_steps": self.total_steps,
        }
        return json.dumps(header) + "\n"

    @classmethod
    def load(cls, path: Path | str) -> "TrainLedger":
        lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln]
        if not lines:
            raise StateError(f"empty ledger file: {path}")
        header = json.loads(lines[0])
        ledger = cls(
            config_hash=str(header["config_hash"]),
            checkpoint_interval=int(header["checkpoint_interval"]),
            total_steps=int(header["total_steps"]),
        )
        for ln in lines[1:]:
            d = json.loads(ln)
            ledger.append(int(d["step"]), float(d["loss"]), d.get("checkpoint_ref"))
        return ledger


def _entry_line(entry: LedgerEntry) -> str:
    return json.dumps({"step": entry.step, "loss": entry.loss, "checkpoint_ref": entry.checkpoint_ref}) + "\n"


def toy_denoise_loss(predicted_noise: np.ndarray, true_noise: np.ndarray) -> float:
    """Mean squared error between predicted and true noise."""
    p = np.asarray(predicted_noise, dtype=np.float64)
    t = np.asarray(true_noise, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    return float(np.mean((p - t) ** 2))


def select_best_checkpoint(ledger: TrainLedger, smoothing_window: int = 1) -> tuple[int, Path]:
    """Checkpointed step whose windowed-mean loss is minimal; ties go to the earliest step.

    The window covers the `smoothing_window` most recent ledger entries ending
    at the checkpointed one. The returned path is the checkpoint_ref as stored
    (relative to the training output directory).
    """
    if smoothing_window < 1:
        raise ValueError(f"smoothing_window must be >= 1, got {smoothing_window}")
    candidates = []
    for i, entry in enumerate(ledger.entries):
        if entry.checkpoint_ref is None:
            continue
        window = ledger.entries[max(0, i - smoothing_window + 1) : i + 1]
        score = float(np.mean([e.loss for e in window]))
        candidates.append((score, entry.step, entry.checkpoint_ref))
    if not candidates:
        raise StateError("ledger has no checkpointed entries")
    score, step, ref = min(candidates, key=lambda c: (c[0], c[1]))
    return step, Path(ref)


@runtime_checkable
class DiffusionBackend(Protocol):
    """Adapter contract around a text-to-image diffusion stack.

    train_step consumes one optimizer step's worth of images (batch_size x
    grad_accum_steps of them; accumulation is the backend's concern) and must
    be deterministic given the passed RNG. generate honors the prompt spec's
    width/height/steps.
    """

    def train_step(self, batch: np.ndarray, rng: np.random.Generator) -> float: ...

    def save_checkpoint(self, path: Path) -> None: ...

    def load_checkpoint(self, path: Path) -> None: ...

    def generate(self, spec: "PromptSpec") -> np.ndarray: ...


class ReferenceDiffusionBackend:
    """Desk-scale stand-in for a diffusion model.

    Training: a single linear layer predicts the noise added to downscaled
    images; gradient descent on MSE. Generation: procedural per-seed block
    noise around a class-dependent mean color, so stub datasets are learnable
    by the downstream reference classifier. Both sides are deterministic.
    """

    def __init__(self, learning_rate: float = 1e-2, train_side: int = 8, noise_range: tuple[float, float] = (0.2, 1.0)):
        if not learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {learning_rate}")
        self.learning_rate = float(learning_rate)
        self.train_side = int(train_side)
        self.noise_lo, self.noise_hi = float(noise_range[0]), float(noise_range[1])
        dim = self.train_side * self.train_side * 3
        self._w = np.zeros((dim, dim), dtype=np.float64)
        self._b = np.zeros(dim, dtype=np.float64)

    def _flatten(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 4 or batch.shape[3] != 3:
            raise ValueError(f"expected batch of (B, H, W, 3), got {batch.shape}")
        small = np.stack([resize_to(img, self.train_side) for img in batch])
        return small.reshape(batch.shape[0], -1)

    def train_step(self, batch: np.ndarray, rng: np.random.Generator) -> float:
        x = self._flatten(batch)
        sigma = float(rng.uniform(self.noise_lo, self.noise_hi))
        eps = rng.standard_normal(x.shape)
        noisy = x + sigma * eps
        pred = noisy @ self._w + self._b
        loss = toy_denoise_loss(pred, eps)
        residual = 2.0 * (pred - eps) / pred.size
        self._w -= self.learning_rate * (noisy.T @ residual)
        self._b -= self.learning_rate * residual.sum(axis=0)
        return loss

    def save_checkpoint(self, path: Path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        np.savez(path / "weights.npz", w=self._w, b=self._b)

    def load_checkpoint(self, path: Path) -> None:
        data = np.load(Path(path) / "weights.npz")
        self._w = data["w"].astype(np.float64)
        self._b = data["b"].astype(np.float64)

    def generate(self, spec: "PromptSpec") -> np.ndarray:
        rng = np.random.default_rng(spec.seed)
        base = np.array(class_color(spec.class_name), dtype=np.float64)
        coarse = rng.normal(0.0, 1.0, size=(8, 8, 3))
        ry = math.ceil(spec.height / 8)
        rx = math.ceil(spec.width / 8)
        blocks = np.repeat(np.repeat(coarse, ry, axis=0), rx, axis=1)[: spec.height, : spec.width]
        img = base[None, None, :] + 20.0 * blocks
        return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _load_layout_images(manifest: LayoutManifest) -> np.ndarray:
    entries = read_layout_entries(manifest)
    images = [imgio.load_image(p).astype(np.float64) / 255.0 for p, _ in entries]
    ref_shape = images[0].shape
    images = [img if img.shape == ref_shape else resize_to(img, ref_shape[0]) for img in images]
    return np.stack(images)


def _epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, 1000003 + epoch]).permutation(n)


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


def run_finetune(
    config: FinetuneConfig,
    data: LayoutManifest,
    backend: DiffusionBackend,
    out_dir: Path | str,
) -> TrainLedger:
    """Run (or resume) a fine-tuning job and return its ledger.

    Executes exactly epochs x ceil(N / (batch_size x grad_accum_steps))
    optimizer steps, logging loss per step and checkpointing at interval
    multiples plus the final step. If a ledger already exists in `out_dir`,
    the job resumes after its last step: the newest checkpoint at or below it
    is loaded, the gap replayed silently, and only new entries appended.
    """
    data.verify()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ledger_path = out_dir / "train_ledger.jsonl"
    ckpt_root = out_dir / "ckpt"

    n = data.image_count
    group = config.batch_size * config.grad_accum_steps
    steps_per_epoch = math.ceil(n / group)
    total_steps = config.epochs * steps_per_epoch
    cfg_hash = config.config_hash()

    if ledger_path.exists():
        ledger = TrainLedger.load(ledger_path)
        if ledger.config_hash != cfg_hash:
            raise StateError("existing ledger was produced by a different config; refusing to resume")
        if ledger.total_steps != total_steps or ledger.checkpoint_interval != config.checkpoint_interval_steps:
            raise StateError("existing ledger shape does not match this job")
        if ledger.last_step >= total_steps:
            return ledger
    else:
        ledger = TrainLedger(
            config_hash=cfg_hash,
            checkpoint_interval=config.checkpoint_interval_steps,
            total_steps=total_steps,
        )
        ledger_path.write_text(ledger._header_line(), encoding="utf-8")

    images = _load_layout_images(data)
    start_step = ledger.last_step + 1

    def batch_for(step: int) -> np.ndarray:
        epoch = (step - 1) // steps_per_epoch
        pos = (step - 1) % steps_per_epoch
        perm = _epoch_permutation(config.seed, epoch, n)
        idx = perm[pos * group : (pos + 1) * group]
        return images[idx]

    # Restore state for a resumed job: load the newest checkpoint at or below
    # the ledger tip, then replay the remaining gap without logging.
    replay_from = 1
    if start_step > 1:
        done_ckpts = [e for e in ledger.checkpointed() if (ckpt_root / f"step-{e.step}").exists()]
        if done_ckpts:
            latest = done_ckpts[-1]
            backend.load_checkpoint(ckpt_root / f"step-{latest.step}")
            replay_from = latest.step + 1
        for step in range(replay_from, start_step):
            backend.train_step(batch_for(step), _step_rng(config.seed, step))

    with ledger_path.open("a", encoding="utf-8") as fh:
        for step in range(start_step, total_steps + 1):
            try:
                loss = backend.train_step(batch_for(step), _step_rng(config.seed, step))
            except Exception as exc:
                raise JobError(f"backend failed at step {step}: {exc}", last_completed_step=step - 1) from exc
            ref = None
            if step % config.checkpoint_interval_steps == 0 or step == total_steps:
                ckpt_dir = ckpt_root / f"step-{step}"
                backend.save_checkpoint(ckpt_dir)
                ref = f"ckpt/step-{step}"
            entry = ledger.append(step, loss, ref)
            fh.write(_entry_line(entry))
            fh.flush()
    return ledger
