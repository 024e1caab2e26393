"""Class-labeled synthetic dataset generation.

Planning expands per-class target counts into concrete generation tasks with
unique seeds; execution runs them through a diffusion backend and journals
each finished task to an append-only manifest so an interrupted run resumes
without regenerating or duplicating images.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import columnar, imgio
from .classes import LULC_CLASSES
from .errors import JobError
from .promptforge import PromptSpec
from .trainctl import DiffusionBackend


@dataclass(frozen=True)
class GenerationPlan:
    """Ordered generation tasks plus the per-class counts they satisfy."""

    tasks: tuple[tuple[str, PromptSpec], ...]
    target_counts: dict[str, int]

    def __post_init__(self):
        per_class: dict[str, int] = {}
        for class_name, spec in self.tasks:
            if spec.class_name != class_name:
                raise ValueError(f"task class {class_name!r} does not match spec class {spec.class_name!r}")
            per_class[class_name] = per_class.get(class_name, 0) + 1
        if per_class != {c: n for c, n in self.target_counts.items() if n > 0}:
            raise ValueError("task counts do not match target_counts")
        seeds = [spec.seed for _, spec in self.tasks]
        if len(set(seeds)) != len(seeds):
            raise ValueError("task seeds must be unique within a plan")


def plan_generation(
    counts: dict[str, int],
    prompt_bank: list[PromptSpec],
    seed: int = 0,
) -> GenerationPlan:
    """Expand per-class counts into tasks, cycling each class's prompt bank.

    Task seeds are seed + running ordinal, so every task is distinct and the
    plan is a pure function of its inputs.
    """
    for class_name, n in counts.items():
        if n < 0:
            raise ValueError(f"count for {class_name!r} must be >= 0, got {n}")
    bank_by_class: dict[str, list[PromptSpec]] = {}
    for spec in prompt_bank:
        bank_by_class.setdefault(spec.class_name, []).append(spec)
    tasks: list[tuple[str, PromptSpec]] = []
    ordinal = 0
    for class_name in sorted(counts):
        n = counts[class_name]
        if n == 0:
            continue
        bank = bank_by_class.get(class_name)
        if not bank:
            raise ValueError(f"prompt bank has no entries for class {class_name!r}")
        for j in range(n):
            spec = replace(bank[j % len(bank)], seed=seed + ordinal)
            tasks.append((class_name, spec))
            ordinal += 1
    return GenerationPlan(tasks=tuple(tasks), target_counts=dict(counts))


@dataclass(frozen=True)
class SynthRecord:
    """One generated image with its label and full generation settings."""

    image: np.ndarray
    class_name: str
    label_index: int
    prompt: str
    negative_prompt: str
    seed: int
    scheduler: str
    steps: int

    def __post_init__(self):
        img = self.image
        if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
            raise ValueError(f"image must be (H, W, 3) uint8, got {img.shape} {img.dtype}")
        if img.shape[0] != img.shape[1]:
            raise ValueError(f"image must be square, got {img.shape[0]}x{img.shape[1]}")
        if self.label_index < 0:
            raise ValueError(f"label_index must be >= 0, got {self.label_index}")


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_").lower()


def _catalog_for(class_names: set[str]) -> tuple[str, ...]:
    if class_names <= set(LULC_CLASSES):
        return LULC_CLASSES
    return tuple(sorted(class_names))


def run_generation(
    plan: GenerationPlan,
    backend: DiffusionBackend,
    manifest_path: Path | str,
) -> list[SynthRecord]:
    """Execute a plan, journaling per-task progress for safe resumption.

    Completed tasks are keyed by (class_name, seed) in the manifest; re-running
    with the same manifest skips them. Images land next to the manifest under
    images/. Records come back sorted by (label_index, seed). On a backend
    failure the manifest keeps everything finished so far and the error names
    the failed task.
    """
    manifest_path = Path(manifest_path)
    if not plan.tasks:
        return []
    images_dir = manifest_path.parent / "images"
    done: dict[tuple[str, int], dict] = {}
    if manifest_path.exists():
        for line in manifest_path.read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            row = json.loads(line)
            done[(row["class_name"], int(row["seed"]))] = row

    catalog = _catalog_for({c for c, _ in plan.tasks} | {row["class_name"] for row in done.values()})
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    images_dir.mkdir(parents=True, exist_ok=True)

    with manifest_path.open("a", encoding="utf-8") as fh:
        for class_name, spec in plan.tasks:
            key = (class_name, spec.seed)
            if key in done:
                continue
            try:
                image = np.asarray(backend.generate(spec))
            except Exception as exc:
                raise JobError(
                    f"generation failed for class {class_name!r} seed {spec.seed}: {exc}",
                    last_completed_step=len(done),
                ) from exc
            if image.shape[:2] != (spec.height, spec.width):
                raise JobError(
                    f"backend returned {image.shape[1]}x{image.shape[0]} for class {class_name!r} "
                    f"seed {spec.seed}, expected {spec.width}x{spec.height}"
                )
            rel_path = f"images/{_slug(class_name)}-s{spec.seed}.png"
            imgio.save_png(image.astype(np.uint8), manifest_path.parent / rel_path)
            row = {
                "class_name": class_name,
                "label_index": catalog.index(class_name),
                "seed": spec.seed,
                "prompt": spec.positive,
                "negative_prompt": spec.negative,
                "scheduler": spec.scheduler,
                "steps": spec.steps,
                "image_path": rel_path,
            }
            fh.write(json.dumps(row) + "\n")
            fh.flush()
            done[key] = row

    wanted = {(c, s.seed) for c, s in plan.tasks}
    records = []
    for key in wanted:
        row = done[key]
        image = imgio.load_image(manifest_path.parent / row["image_path"])
        records.append(
            SynthRecord(
                image=image,
                class_name=row["class_name"],
                label_index=int(row["label_index"]),
                prompt=row["prompt"],
                negative_prompt=row["negative_prompt"],
                seed=int(row["seed"]),
                scheduler=row["scheduler"],
                steps=int(row["steps"]),
            )
        )
    records.sort(key=lambda r: (r.label_index, r.seed))
    return records


def write_synth_dataset(records: list[SynthRecord], path: Path | str) -> None:
    """Persist records as one columnar file with embedded PNG image bytes."""
    if not records:
        raise ValueError("no records to write")
    shape = records[0].image.shape
    for r in records:
        if r.image.shape != shape:
            raise ValueError(f"mixed image shapes: {shape} vs {r.image.shape}")
    columnar.write_columns(
        {
            "image": [imgio.encode_png(r.image) for r in records],
            "class_name": [r.class_name for r in records],
            "label_index": [r.label_index for r in records],
            "prompt": [r.prompt for r in records],
            "negative_prompt": [r.negative_prompt for r in records],
            "seed": [r.seed for r in records],
            "scheduler": [r.scheduler for r in records],
            "steps": [r.steps for r in records],
        },
        path,
    )


def read_synth_dataset(path: Path | str) -> list[SynthRecord]:
    cols = columnar.read_columns(
        path,
        required=(
            "image",
            "class_name",
            "label_index",
            "prompt",
            "negative_prompt",
            "seed",
            "scheduler",
            "steps",
        ),
    )
    records = []
    for i in range(len(cols["image"])):
        records.append(
            SynthRecord(
                image=imgio.decode_image(cols["image"][i]),
                class_name=cols["class_name"][i],
                label_index=int(cols["label_index"][i]),
                prompt=cols["prompt"][i],
                negative_prompt=cols["negative_prompt"][i],
                seed=int(cols["seed"][i]),
                scheduler=cols["scheduler"][i],
                steps=int(cols["steps"][i]),
            )
        )
    return records
