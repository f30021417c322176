"""Structured-record files, atomic writes, and provenance stamps."""

import contextlib
import hashlib
import json
import os
import tempfile
from pathlib import Path

from . import __version__

TOOL = "empadetox"
META_KEY = "_meta"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def digest_obj(obj) -> str:
    return digest_bytes(canonical_json(obj).encode("utf-8"))


def provenance(config=None, inputs=None, **extra) -> dict:
    """Provenance block embedded in every output file. No timestamps, so reruns are byte-identical."""
    meta = {"tool": TOOL, "version": __version__}
    if config is not None:
        meta["config_digest"] = digest_obj(config)
    if inputs:
        meta["inputs"] = {k: digest_file(v) for k, v in sorted(inputs.items())}
    meta.update(extra)
    return meta


@contextlib.contextmanager
def atomic_open(path, mode="w"):
    """Write to a temp file next to ``path`` and rename it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        kwargs = {} if "b" in mode else {"encoding": "utf-8", "newline": "\n"}
        with os.fdopen(fd, mode, **kwargs) as f:
            yield f
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_text(path, text: str) -> None:
    with atomic_open(path) as f:
        f.write(text)


def write_json(path, obj) -> None:
    with atomic_open(path) as f:
        json.dump(obj, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


def write_jsonl(path, records, meta=None) -> None:
    """One JSON object per line; an optional ``{"_meta": ...}`` header line carries provenance."""
    with atomic_open(path) as f:
        if meta is not None:
            f.write(canonical_json({META_KEY: meta}) + "\n")
        for rec in records:
            f.write(canonical_json(rec) + "\n")


def read_jsonl(path):
    """Return ``(meta, records)``. Each record is paired with its 1-based line number."""
    meta = None
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: malformed record ({e.msg})") from None
            if not isinstance(obj, dict):
                raise ValueError(f"{path}:{lineno}: expected a JSON object")
            if META_KEY in obj and len(obj) == 1:
                meta = obj[META_KEY]
                continue
            records.append((lineno, obj))
    return meta, records


def read_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f if line.strip()]
