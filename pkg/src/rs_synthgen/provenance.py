"""Workspace provenance journal.

Every successful pipeline command appends one record with its name, resolved
config hash, and sha256 checksums of the artifacts it read and wrote. The
report stage replays these checksums to refuse rendering from artifacts that
were modified outside the pipeline.
"""

from __future__ import annotations

import datetime
import hashlib
import json
from pathlib import Path

PROVENANCE_FILE = "provenance.jsonl"


def sha256_file(path: Path | str) -> str:
    """Checksum of a file, or of a directory's sorted (relpath, file hash) pairs."""
    path = Path(path)
    if path.is_dir():
        digest = hashlib.sha256()
        for sub in sorted(p for p in path.rglob("*") if p.is_file()):
            digest.update(str(sub.relative_to(path)).encode("utf-8"))
            digest.update(sha256_file(sub).encode("ascii"))
        return digest.hexdigest()
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def append_record(
    workspace: Path | str,
    command: str,
    config_hash: str,
    inputs: dict[str, Path | str],
    outputs: dict[str, Path | str],
) -> dict:
    """Append one command record; file paths are stored relative to the workspace when inside it."""
    workspace = Path(workspace)

    def entry(paths: dict[str, Path | str]) -> dict[str, dict]:
        out = {}
        for name, p in paths.items():
            p = Path(p)
            try:
                shown = str(p.resolve().relative_to(workspace.resolve()))
            except ValueError:
                shown = str(p)
            out[name] = {"path": shown, "sha256": sha256_file(p)}
        return out

    record = {
        "command": command,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "config_hash": config_hash,
        "inputs": entry(inputs),
        "outputs": entry(outputs),
    }
    path = workspace / PROVENANCE_FILE
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(record) + "\n")
    return record


def read_records(workspace: Path | str) -> list[dict]:
    path = Path(workspace) / PROVENANCE_FILE
    if not path.exists():
        return []
    return [json.loads(ln) for ln in path.read_text(encoding="utf-8").splitlines() if ln]


def latest_checksums(workspace: Path | str) -> dict[str, str]:
    """Most recent recorded checksum per workspace-relative output path."""
    checksums: dict[str, str] = {}
    for record in read_records(workspace):
        for info in record.get("outputs", {}).values():
            checksums[info["path"]] = info["sha256"]
    return checksums


def verify_artifact(workspace: Path | str, rel_path: str) -> None:
    """Raise if `rel_path` has no provenance record or its checksum changed."""
    workspace = Path(workspace)
    recorded = latest_checksums(workspace).get(rel_path)
    if recorded is None:
        raise ValueError(f"no provenance record for {rel_path}")
    actual = sha256_file(workspace / rel_path)
    if actual != recorded:
        raise ValueError(
            f"checksum mismatch for {rel_path}: recorded {recorded[:12]}..., found {actual[:12]}..."
        )
