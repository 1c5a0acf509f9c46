"""Corpus monitor: turns new files in a fuzzer's directories into bitmap updates."""

from __future__ import annotations

import hashlib
import json
import os
import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from trendfuzz.bitmap import BitmapAccumulator, CoverageBitmap, bucketize
from trendfuzz.oracle import ExecutionOracle, OracleFailure

log = logging.getLogger(__name__)


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def iter_corpus(dirs: Iterable[Path]) -> Iterator[Path]:
    """Regular files under ``dirs`` in a stable order, skipping dotfiles."""
    for d in dirs:
        try:
            entries = sorted(os.scandir(d), key=lambda e: e.name)
        except (FileNotFoundError, NotADirectoryError):
            continue
        for e in entries:
            if e.name.startswith("."):
                continue
            if e.is_dir(follow_symlinks=False):
                yield from iter_corpus([Path(e.path)])
            elif e.is_file():
                yield Path(e.path)


@dataclass(frozen=True)
class BitmapUpdate:
    fuzzer: str
    path: Path
    sha256: str
    new_entries: int
    failed: bool = False


class ExecutionCache:
    """Content hash -> bucketized bitmap, shared by every monitor of a campaign.

    Guarantees each distinct input is run through the oracle once, even when
    seed sync puts copies of it in several fuzzers' directories.
    """

    def __init__(self, oracle: ExecutionOracle):
        self.oracle = oracle
        self._lock = threading.Lock()
        self._results: dict[str, CoverageBitmap | None] = {}
        self.executions = 0

    def get(self, digest: str, path: Path) -> CoverageBitmap | None:
        with self._lock:
            if digest in self._results:
                return self._results[digest]
        try:
            bitmap = bucketize(self.oracle.execute(path), self.oracle.map_size)
        except OracleFailure as exc:
            log.warning("oracle failed: %s", exc)
            bitmap = None
        with self._lock:
            self.executions += 1
            self._results.setdefault(digest, bitmap)
            return self._results[digest]


class CorpusMonitor:
    """Watches one fuzzer's corpus directories.

    Files are tracked by (path, content hash) and the record is appended to
    ``log_path`` so a resumed campaign skips what it already processed.
    """

    def __init__(self, name: str, dirs: list[Path], cache: ExecutionCache,
                 accumulator: BitmapAccumulator, log_path: Path | None = None):
        self.name = name
        self.dirs = list(dirs)
        self.cache = cache
        self.accumulator = accumulator
        self.log_path = log_path
        self._seen: dict[str, str] = {}
        self._stat: dict[str, tuple[int, int]] = {}
        self._lock = threading.Lock()
        self._thread: threading.Thread | None = None
        self._stop = threading.Event()
        if log_path is not None and log_path.exists():
            for line in log_path.read_text().splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self._seen[rec["path"]] = rec["sha256"]

    @property
    def processed(self) -> dict[str, str]:
        return dict(self._seen)

    def poll(self) -> list[BitmapUpdate]:
        with self._lock:
            return self._poll()

    def _poll(self) -> list[BitmapUpdate]:
        updates = []
        for path in iter_corpus(self.dirs):
            key = str(path)
            try:
                st = path.stat()
            except FileNotFoundError:
                continue
            sig = (st.st_size, st.st_mtime_ns)
            if self._stat.get(key) == sig and key in self._seen:
                continue
            try:
                digest = sha256_file(path)
            except OSError as exc:
                log.warning("[%s] unreadable corpus file %s: %s", self.name, path, exc)
                continue
            self._stat[key] = sig
            if self._seen.get(key) == digest:
                continue
            self._seen[key] = digest
            bitmap = self.cache.get(digest, path)
            new = 0 if bitmap is None else self.accumulator.add(bitmap)
            updates.append(BitmapUpdate(self.name, path, digest, new, failed=bitmap is None))
            if self.log_path is not None:
                self.log_path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.log_path, "a") as fh:
                    fh.write(json.dumps({"path": key, "sha256": digest, "ok": bitmap is not None}) + "\n")
        return updates

    def start_background(self, interval: float = 1.0) -> None:
        if self._thread is not None:
            return
        self._stop.clear()

        def loop():
            while not self._stop.wait(interval):
                try:
                    self.poll()
                except Exception:  # keep harvesting; one bad scan must not kill the monitor
                    log.exception("[%s] monitor poll failed", self.name)

        self._thread = threading.Thread(target=loop, name=f"monitor-{self.name}", daemon=True)
        self._thread.start()

    def stop_background(self) -> None:
        if self._thread is None:
            return
        self._stop.set()
        self._thread.join()
        self._thread = None
