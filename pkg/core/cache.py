"""Prepared dataset cache.

KEY PRINCIPLES:
1. One line-delimited JSON file per cache directory: header, vocab, stats, then one line per window
2. The header carries a format tag, the package version and a sha256 of every line below it
3. Reads verify the hash; a cache built under different split or window settings is refused
4. File locking prevents a reader from seeing a half-written cache
"""

import fcntl
import hashlib
import json
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from core import __version__
from core.config import RunConfig
from core.console import log_info
from core.data import Vocab
from core.dataset import Dataset, EncodedWindow
from core.errors import CacheMismatchError, DataError
from core.total_term import CountStats

CACHE_FORMAT = "sfkt-cache/1"
CACHE_FILE = "dataset.jsonl"


@contextmanager
def cache_lock(cache_dir: Path, mode: str = "r"):
    """
    File lock around cache reads and writes.

    Usage:
        with cache_lock(cache_dir, 'w'):
            path.write_text(...)
    """
    lock_path = Path(cache_dir) / ".lock"
    lock_file = open(lock_path, "w")
    try:
        lock_type = fcntl.LOCK_EX if mode == "w" else fcntl.LOCK_SH
        fcntl.flock(lock_file.fileno(), lock_type)
        yield
    finally:
        fcntl.flock(lock_file.fileno(), fcntl.LOCK_UN)
        lock_file.close()


def _dumps(record: Dict[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def _window_record(w: EncodedWindow) -> Dict[str, Any]:
    return {
        "type": "window",
        "student": w.student,
        "start": w.start,
        "total_length": w.total_length,
        "questions": w.questions.tolist(),
        "concepts": [list(c) for c in w.concepts],
        "responses": w.responses.tolist(),
        "splits": list(w.splits),
        "success": [s.tolist() for s in w.success],
        "failure": [f.tolist() for f in w.failure],
    }


def _window_from_record(r: Dict[str, Any]) -> EncodedWindow:
    return EncodedWindow(
        student=int(r["student"]),
        start=int(r["start"]),
        total_length=int(r["total_length"]),
        questions=np.asarray(r["questions"], dtype=np.int64),
        concepts=tuple(tuple(int(k) for k in c) for c in r["concepts"]),
        responses=np.asarray(r["responses"], dtype=np.int64),
        splits=tuple(r["splits"]),
        success=tuple(np.asarray(s, dtype=np.int64) for s in r["success"]),
        failure=tuple(np.asarray(f, dtype=np.int64) for f in r["failure"]),
    )


def body_lines(dataset: Dataset) -> List[str]:
    lines = [
        _dumps({"type": "vocab", **dataset.vocab.to_dict()}),
        _dumps({"type": "stats", "students": dataset.students, "max_len": dataset.max_len, **dataset.stats.to_dict()}),
    ]
    lines.extend(_dumps(_window_record(w)) for w in dataset.windows)
    return lines


def content_hash(lines: List[str]) -> str:
    digest = hashlib.sha256()
    for line in lines:
        digest.update(line.encode("utf-8"))
        digest.update(b"\n")
    return digest.hexdigest()


def cache_path(cache_dir: Path) -> Path:
    return Path(cache_dir) / CACHE_FILE


def write_cache(dataset: Dataset, cache_dir: Path, config: RunConfig, source: Optional[Dict[str, Any]] = None) -> Tuple[Path, str]:
    """
    Persist a prepared dataset.

    Returns:
        (cache file path, content hash)
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    lines = body_lines(dataset)
    digest = content_hash(lines)
    header = {
        "type": "header",
        "format": CACHE_FORMAT,
        "version": __version__,
        "content_hash": digest,
        "data": config.data_fingerprint(),
        "config": config.to_dict(),
        "source": source or {},
        "counts": dataset.counts(),
    }
    path = cache_path(cache_dir)
    with cache_lock(cache_dir, "w"):
        path.write_text("\n".join([_dumps(header)] + lines) + "\n", encoding="utf-8")
    log_info("Cache", f"wrote {len(dataset.windows)} windows to {path} ({digest[:12]})")
    return path, digest


def _parse_line(path: Path, number: int, line: str) -> Dict[str, Any]:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: line {number} is not valid JSON ({e.msg}); the cache is corrupted")
    if not isinstance(record, dict):
        raise DataError(f"{path}: line {number} is not a record; the cache is corrupted")
    return record


def read_cache(cache_dir: Path, config: Optional[RunConfig] = None) -> Tuple[Dataset, Dict[str, Any]]:
    """
    Load a prepared dataset.

    Args:
        cache_dir: directory holding the cache file
        config: when given, its split/window settings must match the cache's

    Raises:
        FileNotFoundError: no cache in the directory
        DataError: unreadable or corrupted cache
        CacheMismatchError: the cache was prepared under different data settings
    """
    path = cache_path(cache_dir)
    if not path.exists():
        raise FileNotFoundError(f"no prepared cache at {path}; run `prepare` first")
    with cache_lock(Path(cache_dir), "r"):
        raw = path.read_text(encoding="utf-8").splitlines()
    if not raw:
        raise DataError(f"{path} is empty")

    header = _parse_line(path, 1, raw[0])
    if header.get("format") != CACHE_FORMAT:
        raise DataError(f"{path}: unsupported cache format {header.get('format')!r}")
    lines = [line for line in raw[1:] if line]
    if content_hash(lines) != header.get("content_hash"):
        raise DataError(f"{path}: content hash does not match; the cache is corrupted")
    if config is not None and header.get("data") != config.data_fingerprint():
        raise CacheMismatchError(
            f"cache was prepared with {header.get('data')}, current config needs {config.data_fingerprint()}; "
            "re-run `prepare`"
        )

    vocab: Optional[Vocab] = None
    stats_record: Dict[str, Any] = {}
    windows: List[EncodedWindow] = []
    for number, line in enumerate(lines, start=2):
        record = _parse_line(path, number, line)
        kind = record.pop("type", None)
        if kind == "vocab":
            vocab = Vocab.from_dict(record)
        elif kind == "stats":
            stats_record = record
        elif kind == "window":
            windows.append(_window_from_record(record))
    if vocab is None:
        raise DataError(f"{path}: cache holds no vocabulary")

    dataset = Dataset(
        vocab=vocab,
        windows=windows,
        stats=CountStats.from_dict({k: stats_record[k] for k in CountStats().to_dict()}),
        max_len=int(stats_record.get("max_len", header["data"]["max_len"])),
        students=int(stats_record.get("students", 0)),
    )
    return dataset, header
