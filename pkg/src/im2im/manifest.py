"""Run manifests: resolved configuration, dataset fingerprint, emitted files."""

from __future__ import annotations

import hashlib
from datetime import datetime, timezone
from pathlib import Path

ARTIFACT_VERSION = "0.1.0"


def dataset_fingerprint(path) -> str:
    """sha256 over sorted relative paths and file contents under ``path``."""
    root = Path(path)
    digest = hashlib.sha256()
    if root.is_file():
        files = [root]
        root = root.parent
    else:
        files = sorted(p for p in root.rglob("*") if p.is_file())
    for file in files:
        digest.update(str(file.relative_to(root)).encode())
        digest.update(b"\0")
        digest.update(file.read_bytes())
    return f"sha256:{digest.hexdigest()}"


def utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def write_manifest(
    out_dir,
    command: str,
    config: dict,
    files: list,
    started: str,
    finished: str,
    fingerprint: str = "",
) -> Path:
    """Write manifest.txt into ``out_dir``; returns its path.

    ``files`` are the run's emitted files; they are recorded relative to the
    output directory when possible.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [
        f"artifact_version={ARTIFACT_VERSION}",
        f"command={command}",
        f"started={started}",
        f"finished={finished}",
    ]
    if fingerprint:
        lines.append(f"dataset_fingerprint={fingerprint}")
    for key in sorted(config):
        lines.append(f"config.{key}={config[key]}")
    for i, file in enumerate(files):
        file = Path(file)
        try:
            rel = file.resolve().relative_to(out_dir.resolve())
        except ValueError:
            rel = file
        lines.append(f"file.{i}={rel}")
    path = out_dir / "manifest.txt"
    path.write_text("\n".join(lines) + "\n")
    return path
