"""Command-line pipeline driver.

Each subcommand is one pipeline stage operating on a shared workspace
directory. Stages read their predecessors' artifacts from fixed locations,
write their own, and append a provenance record with checksums; the report
stage refuses artifacts whose checksums no longer match. A lock file keeps
concurrent commands out of the same workspace.

Exit codes: 0 success, 1 stage failure, 2 configuration error, 3 missing
prerequisite artifact.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import benchdown, fidlab, genfarm, imgio, ingest, promptforge, provenance, report, trainctl
from .classes import LULC_CLASSES
from .config import PipelineConfig, load_config, parse_counts, parse_fractions
from .errors import ConfigError, MissingArtifactError, PipelineError, ValidationError

WORKSPACE_ENV_VAR = "RS_SYNTHGEN_WORKSPACE"
LOCK_FILE = ".lock"

# Workspace layout, relative to the workspace root.
LAYOUT_DIR = "layout"
HOLDOUT_DIR = "holdout"
STATS_FILE = "stats.json"
FINETUNE_DIR = "finetune"
CORPUS_FILE = "corpus/corpus_chunks.parquet"
QLORA_FILE = "corpus/qlora_job.json"
INDEX_FILE = "index/corpus_index.npz"
PROMPT_BANK_FILE = "prompts/prompt_bank.jsonl"
GEN_MANIFEST_FILE = "generate/gen_manifest.jsonl"
SYNTH_FILE = "generate/synth.parquet"
FID_REPORT_FILE = "fid/fid_report.json"
METRICS_FILE = "downstream/metrics.json"
EPOCH_LOG_FILE = "downstream/epochs.csv"
REPORT_FILE = "report/report.html"


@contextlib.contextmanager
def workspace_lock(workspace: Path):
    """Exclusive-create lock file; a second command on the workspace fails fast."""
    workspace.mkdir(parents=True, exist_ok=True)
    lock_path = workspace / LOCK_FILE
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise PipelineError(
            f"workspace {workspace} is locked by another command (remove {lock_path} if stale)"
        ) from None
    try:
        os.write(fd, f"pid={os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            lock_path.unlink()


def _resolve_workspace(args, cfg: PipelineConfig) -> Path:
    if getattr(args, "workspace", None):
        return Path(args.workspace)
    if cfg["pipeline"]["workspace"]:
        return Path(cfg["pipeline"]["workspace"])
    if os.environ.get(WORKSPACE_ENV_VAR):
        return Path(os.environ[WORKSPACE_ENV_VAR])
    return Path("workspace")


def _require(workspace: Path, rel: str, hint: str) -> Path:
    path = workspace / rel
    if not path.exists():
        raise MissingArtifactError(f"missing {rel} in workspace; run `{hint}` first")
    return path


def _apply_flag_overrides(cfg: PipelineConfig, args, mapping: dict[str, tuple[str, str]]) -> None:
    for attr, (section, key) in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            cfg.set(section, key, value)


def _load_stats(workspace: Path) -> ingest.ChannelStats:
    path = _require(workspace, STATS_FILE, "rs-synthgen stats")
    return ingest.ChannelStats.from_dict(json.loads(path.read_text(encoding="utf-8")))


# ---------------------------------------------------------------- stages


def stage_prepare(args, cfg: PipelineConfig, workspace: Path) -> dict:
    _apply_flag_overrides(
        cfg,
        args,
        {
            "holdout": ("ingest", "holdout"),
            "caption_policy": ("ingest", "caption_policy"),
            "resize_side": ("ingest", "resize_side"),
            "image_column": ("ingest", "image_column"),
            "caption_column": ("ingest", "caption_column"),
        },
    )
    if getattr(args, "augment", None) is not None:
        cfg.set("ingest", "augment", args.augment)
    ing = cfg["ingest"]
    seed = cfg["pipeline"]["seed"]
    in_path = Path(args.input)
    if not in_path.exists():
        raise MissingArtifactError(f"input dataset not found: {in_path}")

    rs = ingest.ingest_columnar(
        in_path,
        image_column=ing["image_column"],
        caption_column=ing["caption_column"],
        class_column=ing["class_column"] or None,
        id_column=ing["id_column"] or None,
    )
    holdout_n = int(ing["holdout"])
    if not 0 <= holdout_n < len(rs):
        raise ValidationError(
            f"holdout={holdout_n} leaves no training images for a dataset of {len(rs)} records"
        )
    train, holdout = ingest.split_holdout(rs, holdout_n, seed)

    side = int(ing["resize_side"])
    resized_train = []
    for rec in train.records:
        resized_train.append(dataclasses.replace(rec, image=ingest.resize_to(rec.image, side)))
    if ing["augment"]:
        augmented = []
        suffixes = ("rot90", "rot180", "rot270", "hflip", "vflip", "transpose", "antitranspose")
        for rec in resized_train:
            augmented.append(rec)
            for suffix, img in zip(suffixes, ingest.augment_dihedral(rec.image)):
                augmented.append(dataclasses.replace(rec, image=img, source_id=f"{rec.source_id}__{suffix}"))
        resized_train = augmented
    train = ingest.RecordSet(resized_train, "train")
    holdout = ingest.RecordSet(
        [dataclasses.replace(r, image=ingest.resize_to(r.image, side)) for r in holdout.records],
        "holdout",
    )

    train_manifest = ingest.export_layout(train, workspace / LAYOUT_DIR, ing["caption_policy"], seed)
    outputs = {"layout_manifest": workspace / LAYOUT_DIR / "manifest.json"}
    if len(holdout):
        ingest.export_layout(holdout, workspace / HOLDOUT_DIR, ing["caption_policy"], seed)
        outputs["holdout_manifest"] = workspace / HOLDOUT_DIR / "manifest.json"
    print(f"prepared {train_manifest.image_count} training images, {len(holdout)} holdout images")
    return {"inputs": {"dataset": in_path}, "outputs": outputs}


def stage_stats(args, cfg: PipelineConfig, workspace: Path) -> dict:
    manifest_path = _require(workspace, f"{LAYOUT_DIR}/manifest.json", "rs-synthgen prepare")
    manifest = ingest.LayoutManifest.load(manifest_path)
    manifest.verify()
    images = (imgio.load_image(p) for p, _ in ingest.read_layout_entries(manifest))
    stats = ingest.stats_from_images(images)
    out = workspace / STATS_FILE
    out.write_text(json.dumps(stats.to_dict(), indent=2) + "\n", encoding="utf-8")
    print(f"channel mean {np.round(stats.mean, 3).tolist()} std {np.round(stats.std, 3).tolist()}")
    return {"inputs": {"layout_manifest": manifest_path}, "outputs": {"stats": out}}


def stage_finetune(args, cfg: PipelineConfig, workspace: Path) -> dict:
    _apply_flag_overrides(
        cfg,
        args,
        {
            "epochs": ("finetune", "epochs"),
            "batch_size": ("finetune", "batch_size"),
            "learning_rate": ("finetune", "learning_rate"),
            "grad_accum_steps": ("finetune", "grad_accum_steps"),
            "checkpoint_interval": ("finetune", "checkpoint_interval_steps"),
        },
    )
    manifest_path = _require(workspace, f"{LAYOUT_DIR}/manifest.json", "rs-synthgen prepare")
    manifest = ingest.LayoutManifest.load(manifest_path)
    ft = dict(cfg["finetune"])
    ft["seed"] = cfg["pipeline"]["seed"]
    config = trainctl.build_finetune_config(ft)
    backend = trainctl.ReferenceDiffusionBackend()
    out_dir = workspace / FINETUNE_DIR
    ledger = trainctl.run_finetune(config, manifest, backend, out_dir)
    step, ref = trainctl.select_best_checkpoint(ledger)
    best_path = out_dir / "best.json"
    best_path.write_text(json.dumps({"step": step, "path": str(ref)}, indent=2) + "\n", encoding="utf-8")
    print(f"trained {ledger.last_step} steps; best checkpoint at step {step} ({ref})")
    return {
        "inputs": {"layout_manifest": manifest_path},
        "outputs": {"train_ledger": out_dir / "train_ledger.jsonl", "best_checkpoint": best_path},
    }


def stage_corpus(args, cfg: PipelineConfig, workspace: Path) -> dict:
    _apply_flag_overrides(
        cfg, args, {"min_chars": ("prompts", "min_chars"), "test_fraction": ("prompts", "test_fraction")}
    )
    docs: list[str] = []
    doc_files: list[Path] = []
    for given in args.docs:
        p = Path(given)
        if p.is_dir():
            doc_files.extend(sorted(q for q in p.rglob("*") if q.suffix in (".txt", ".md") and q.is_file()))
        elif p.is_file():
            doc_files.append(p)
        else:
            raise MissingArtifactError(f"corpus document not found: {p}")
    if not doc_files:
        raise MissingArtifactError("no corpus documents found under the given paths")
    for f in doc_files:
        docs.append(f.read_text(encoding="utf-8"))

    text = promptforge.build_corpus(docs)
    chunks = promptforge.chunk_corpus(text, int(cfg["prompts"]["min_chars"]))
    _, test = promptforge.split_corpus(chunks, float(cfg["prompts"]["test_fraction"]), cfg["pipeline"]["seed"])
    corpus_path = workspace / CORPUS_FILE
    corpus_path.parent.mkdir(parents=True, exist_ok=True)
    promptforge.write_corpus(chunks, {c.ordinal for c in test}, corpus_path)
    qlora_path = workspace / QLORA_FILE
    qlora_path.write_text(
        json.dumps(promptforge.build_qlora_spec().to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    print(f"chunked {len(docs)} documents into {len(chunks)} chunks ({len(test)} held out)")
    return {
        "inputs": {f"doc{i}": f for i, f in enumerate(doc_files)},
        "outputs": {"corpus": corpus_path, "qlora_job": qlora_path},
    }


def stage_index(args, cfg: PipelineConfig, workspace: Path) -> dict:
    _apply_flag_overrides(cfg, args, {"chunk_size": ("prompts", "index_chunk_size")})
    corpus_path = _require(workspace, CORPUS_FILE, "rs-synthgen corpus")
    chunks, _ = promptforge.read_corpus(corpus_path)
    embedder = promptforge.HashedBowEmbedder(int(cfg["prompts"]["embedder_dim"]))
    index = promptforge.index_corpus(chunks, embedder, int(cfg["prompts"]["index_chunk_size"]))
    index_path = workspace / INDEX_FILE
    index.save(index_path)
    print(f"indexed {len(index)} segments from {len(chunks)} chunks with {embedder.embedder_id}")
    return {"inputs": {"corpus": corpus_path}, "outputs": {"index": index_path}}


def stage_prompts(args, cfg: PipelineConfig, workspace: Path) -> dict:
    _apply_flag_overrides(cfg, args, {"context_k": ("prompts", "context_k"), "template": ("prompts", "template_id")})
    seed = cfg["pipeline"]["seed"]
    k = int(cfg["prompts"]["context_k"])
    inputs: dict[str, Path] = {}

    context_by_class: dict[str, list[str]] = {c: [] for c in LULC_CLASSES}
    index_path = workspace / INDEX_FILE
    corpus_path = workspace / CORPUS_FILE
    if index_path.exists() and corpus_path.exists():
        index = promptforge.VectorIndex.load(index_path)
        chunks, _ = promptforge.read_corpus(corpus_path)
        by_ordinal = {c.ordinal: c.text for c in chunks}
        embedder = promptforge.HashedBowEmbedder(int(cfg["prompts"]["embedder_dim"]))
        for class_name in LULC_CLASSES:
            hits = promptforge.retrieve(index, class_name, k, embedder)
            seen: list[str] = []
            for ordinal, _ in hits:
                text = by_ordinal[ordinal]
                if text not in seen:
                    seen.append(text)
            context_by_class[class_name] = seen
        inputs = {"index": index_path, "corpus": corpus_path}

    bank_path = workspace / PROMPT_BANK_FILE
    bank_path.parent.mkdir(parents=True, exist_ok=True)
    with bank_path.open("w", encoding="utf-8") as fh:
        for i, class_name in enumerate(LULC_CLASSES):
            spec = promptforge.assemble_prompt(
                class_name,
                context=context_by_class[class_name],
                template_id=cfg["prompts"]["template_id"],
                seed=seed + i,
            )
            fh.write(json.dumps(spec.to_dict()) + "\n")
    grounded = "retrieval-grounded" if inputs else "ungrounded (no index in workspace)"
    print(f"wrote {len(LULC_CLASSES)} {grounded} prompts")
    return {"inputs": inputs, "outputs": {"prompt_bank": bank_path}}


def _read_prompt_bank(path: Path) -> list[promptforge.PromptSpec]:
    specs = []
    for ln in path.read_text(encoding="utf-8").splitlines():
        if ln:
            specs.append(promptforge.PromptSpec.from_dict(json.loads(ln)))
    return specs


def stage_generate(args, cfg: PipelineConfig, workspace: Path) -> dict:
    _apply_flag_overrides(
        cfg,
        args,
        {
            "counts": ("generate", "counts"),
            "steps": ("generate", "steps"),
            "width": ("generate", "width"),
            "height": ("generate", "height"),
            "scheduler": ("generate", "scheduler"),
        },
    )
    gen = cfg["generate"]
    bank_path = _require(workspace, PROMPT_BANK_FILE, "rs-synthgen prompts")
    bank = [
        dataclasses.replace(
            spec,
            steps=int(gen["steps"]),
            width=int(gen["width"]),
            height=int(gen["height"]),
            scheduler=gen["scheduler"],
        )
        for spec in _read_prompt_bank(bank_path)
    ]
    counts = parse_counts(gen["counts"])
    plan = genfarm.plan_generation(counts, bank, cfg["pipeline"]["seed"])
    backend = trainctl.ReferenceDiffusionBackend()
    best_path = workspace / FINETUNE_DIR / "best.json"
    if best_path.exists():
        best = json.loads(best_path.read_text(encoding="utf-8"))
        backend.load_checkpoint(workspace / FINETUNE_DIR / best["path"])
    records = genfarm.run_generation(plan, backend, workspace / GEN_MANIFEST_FILE)
    synth_path = workspace / SYNTH_FILE
    genfarm.write_synth_dataset(records, synth_path)
    per_class = {c: sum(1 for r in records if r.class_name == c) for c in sorted(counts)}
    print(f"generated {len(records)} images: {per_class}")
    return {"inputs": {"prompt_bank": bank_path}, "outputs": {"synth_dataset": synth_path}}


def _load_image_pool(path: Path) -> list[np.ndarray]:
    """Images from a synth dataset file, a layout directory, or a bare directory of PNGs."""
    if path.is_file():
        return [r.image for r in genfarm.read_synth_dataset(path)]
    manifest_path = path / "manifest.json"
    if manifest_path.exists():
        manifest = ingest.LayoutManifest.load(manifest_path)
        return [imgio.load_image(p) for p, _ in ingest.read_layout_entries(manifest)]
    files = sorted(p for p in path.rglob("*.png"))
    if not files:
        raise MissingArtifactError(f"no images found under {path}")
    return [imgio.load_image(p) for p in files]


def stage_fid(args, cfg: PipelineConfig, workspace: Path) -> dict:
    _apply_flag_overrides(cfg, args, {"sample_size": ("fid", "sample_size"), "runs": ("fid", "runs")})
    real_path = Path(args.real) if args.real else _require(workspace, HOLDOUT_DIR, "rs-synthgen prepare")
    gen_path = Path(args.gen) if args.gen else _require(workspace, SYNTH_FILE, "rs-synthgen generate")
    if not real_path.exists():
        raise MissingArtifactError(f"real image source not found: {real_path}")
    if not gen_path.exists():
        raise MissingArtifactError(f"generated image source not found: {gen_path}")
    real = _load_image_pool(real_path)
    gen = _load_image_pool(gen_path)
    extractor = fidlab.RandomProjectionExtractor()
    mean_fid, per_run = fidlab.sampled_fid(
        real,
        gen,
        extractor,
        sample_size=int(cfg["fid"]["sample_size"]),
        runs=int(cfg["fid"]["runs"]),
        seed=cfg["pipeline"]["seed"],
    )
    out = workspace / FID_REPORT_FILE
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "mean_fid": mean_fid,
        "per_run": per_run,
        "sample_size": int(cfg["fid"]["sample_size"]),
        "runs": int(cfg["fid"]["runs"]),
        "seed": cfg["pipeline"]["seed"],
        "extractor_id": extractor.extractor_id,
        "n_real": len(real),
        "n_gen": len(gen),
    }
    out.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    print(f"mean score {mean_fid:.4f} over {len(per_run)} runs: {[round(s, 4) for s in per_run]}")
    return {"inputs": {"real": real_path, "gen": gen_path}, "outputs": {"fid_report": out}}


def stage_train_downstream(args, cfg: PipelineConfig, workspace: Path) -> dict:
    _apply_flag_overrides(
        cfg,
        args,
        {
            "learning_rate": ("downstream", "learning_rate"),
            "epochs": ("downstream", "epochs"),
            "batch_size": ("downstream", "batch_size"),
            "crop_side": ("downstream", "crop_side"),
            "split": ("downstream", "split"),
        },
    )
    ds = cfg["downstream"]
    synth_path = _require(workspace, SYNTH_FILE, "rs-synthgen generate")
    fractions = parse_fractions(ds["split"])
    seed = cfg["pipeline"]["seed"]
    train, val, test = benchdown.load_synth(synth_path, fractions, seed)

    crop = min(int(ds["crop_side"]), train.images[0].shape[0])
    stats = ingest.stats_from_images(train.images)
    train_tf, eval_tf = benchdown.build_transforms(stats, crop)
    config = benchdown.build_classify_config(
        {
            "learning_rate": float(ds["learning_rate"]),
            "epochs": int(ds["epochs"]),
            "batch_size": int(ds["batch_size"]),
            "crop_side": crop,
            "seed": seed,
        }
    )
    backend = benchdown.SoftmaxRegressionBackend(n_classes=len(train.class_names))
    bundle = benchdown.DataBundle(train=train, val=val, train_transform=train_tf, eval_transform=eval_tf)
    model, epoch_log = benchdown.train_classifier(config, bundle, backend)
    metrics = benchdown.evaluate_classifier(model, test, eval_tf)

    metrics_path = workspace / METRICS_FILE
    metrics_path.parent.mkdir(parents=True, exist_ok=True)
    metrics_path.write_text(json.dumps(metrics.to_dict(), indent=2) + "\n", encoding="utf-8")
    log_path = workspace / EPOCH_LOG_FILE
    with log_path.open("w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n")
        for e in epoch_log:
            fh.write(f"{e.epoch},{e.train_loss:.6f},{e.train_accuracy:.6f},{e.val_loss:.6f},{e.val_accuracy:.6f}\n")
    print(
        f"test metrics: overall {metrics.overall_accuracy:.4f}, average {metrics.average_accuracy:.4f}, "
        f"macro F1 {metrics.macro_f1:.4f}, jaccard {metrics.jaccard:.4f}"
    )
    return {
        "inputs": {"synth_dataset": synth_path},
        "outputs": {"metrics": metrics_path, "epoch_log": log_path},
    }


def stage_report(args, cfg: PipelineConfig, workspace: Path) -> dict:
    tracked = provenance.latest_checksums(workspace)
    inputs: dict[str, Path] = {}

    def checked(rel: str) -> Path | None:
        path = workspace / rel
        if not path.exists():
            return None
        if rel in tracked:
            provenance.verify_artifact(workspace, rel)
        else:
            raise PipelineError(f"{rel} exists but has no provenance record; refusing to report on it")
        inputs[rel] = path
        return path

    fid_path = checked(FID_REPORT_FILE)
    metrics_path = checked(METRICS_FILE)
    fid_payload = report.load_json_if_exists(fid_path) if fid_path else None
    metrics_payload = report.load_json_if_exists(metrics_path) if metrics_path else None

    ledger_tail = None
    best = None
    ledger_path = checked(f"{FINETUNE_DIR}/train_ledger.jsonl")
    if ledger_path:
        ledger = trainctl.TrainLedger.load(ledger_path)
        ledger_tail = [{"step": e.step, "loss": e.loss} for e in ledger.entries[-5:]]
        best_path = workspace / FINETUNE_DIR / "best.json"
        if best_path.exists():
            best = json.loads(best_path.read_text(encoding="utf-8"))

    samples: list[tuple[str, bytes]] = []
    synth_path = checked(SYNTH_FILE)
    if synth_path:
        per_class_seen: dict[str, int] = {}
        for rec in genfarm.read_synth_dataset(synth_path):
            if per_class_seen.get(rec.class_name, 0) >= 2:
                continue
            per_class_seen[rec.class_name] = per_class_seen.get(rec.class_name, 0) + 1
            samples.append((rec.class_name, imgio.encode_png(ingest.resize_to(rec.image, 96))))

    html_text = report.render_report(
        fid_payload, metrics_payload, ledger_tail, best, samples, provenance.read_records(workspace)
    )
    out = workspace / REPORT_FILE
    report.write_report(out, html_text)
    print(f"report written to {out}")
    return {"inputs": inputs, "outputs": {"report": out}}


# ---------------------------------------------------------------- parser

_STAGES = {
    "prepare": stage_prepare,
    "stats": stage_stats,
    "finetune": stage_finetune,
    "corpus": stage_corpus,
    "index": stage_index,
    "prompts": stage_prompts,
    "generate": stage_generate,
    "fid": stage_fid,
    "train-downstream": stage_train_downstream,
    "report": stage_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rs-synthgen", description="Synthetic remote-sensing data pipeline")
    parser.add_argument("--config", "-c", help="INI config file")
    parser.add_argument("--workspace", "-w", help=f"workspace directory (or ${WORKSPACE_ENV_VAR})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="ingest a columnar dataset into a training layout + holdout")
    p.add_argument("--in", dest="input", required=True, help="input parquet dataset")
    p.add_argument("--holdout", type=int, help="number of images reserved for evaluation")
    p.add_argument("--caption-policy", dest="caption_policy", choices=("first", "random"))
    p.add_argument("--resize-side", dest="resize_side", type=int)
    p.add_argument("--image-column", dest="image_column")
    p.add_argument("--caption-column", dest="caption_column")
    p.add_argument("--augment", dest="augment", action="store_true", default=None)

    sub.add_parser("stats", help="per-channel statistics over the training layout")

    p = sub.add_parser("finetune", help="run the diffusion fine-tuning loop on the layout")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--grad-accum-steps", dest="grad_accum_steps", type=int)
    p.add_argument("--checkpoint-interval", dest="checkpoint_interval", type=int)

    p = sub.add_parser("corpus", help="chunk caption documents into a training corpus")
    p.add_argument("--docs", nargs="+", required=True, help="text files or directories of .txt/.md")
    p.add_argument("--min-chars", dest="min_chars", type=int)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)

    p = sub.add_parser("index", help="embed corpus chunks into a vector index")
    p.add_argument("--chunk-size", dest="chunk_size", type=int)

    p = sub.add_parser("prompts", help="assemble per-class prompts, grounded by the index when present")
    p.add_argument("--context-k", dest="context_k", type=int)
    p.add_argument("--template", dest="template")

    p = sub.add_parser("generate", help="generate the class-labeled synthetic dataset")
    p.add_argument("--counts", help="per-class counts, e.g. 'Water Body:52,Bare Land:52'")
    p.add_argument("--steps", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--scheduler")

    p = sub.add_parser("fid", help="distribution score between real and generated images")
    p.add_argument("--real", help="real image source (layout dir or parquet); default holdout/")
    p.add_argument("--gen", help="generated image source; default generate/synth.parquet")
    p.add_argument("--sample-size", dest="sample_size", type=int)
    p.add_argument("--runs", type=int)

    p = sub.add_parser("train-downstream", help="train and evaluate the downstream classifier")
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--crop-side", dest="crop_side", type=int)
    p.add_argument("--split", help="train,val,test fractions, e.g. '0.7,0.15,0.15'")

    sub.add_parser("report", help="render the static HTML run report")
    return parser


def run_command(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage; our config-error code is also 2.
        return int(exc.code) if exc.code else 0
    try:
        cfg = load_config(args.config)
        workspace = _resolve_workspace(args, cfg)
        stage = _STAGES[args.command]
        with workspace_lock(workspace):
            artifacts = stage(args, cfg, workspace)
            provenance.append_record(
                workspace,
                args.command,
                cfg.config_hash(),
                inputs=artifacts.get("inputs", {}),
                outputs=artifacts.get("outputs", {}),
            )
        return 0
    except (ConfigError, ValidationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except MissingArtifactError as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return 3
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - last-resort guard
        print(f"unexpected error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
