"""Seed synchronization between baseline fuzzers.

Every distinct input found by any fuzzer is copied into every other
fuzzer's sync directory, deduplicated by SHA-256 of the content. Imported
files are named ``<first 16 hex chars of hash>_<origin fuzzer>``.
"""

from __future__ import annotations

import errno
import json
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from trendfuzz.errors import TrendfuzzError
from trendfuzz.monitor import iter_corpus, sha256_file

log = logging.getLogger(__name__)

HASH_PREFIX = 16


class SyncFatal(TrendfuzzError):
    """Seed sync cannot continue (e.g. the disk is full)."""


@dataclass(frozen=True)
class SeedRecord:
    sha256: str
    origin: str
    first_round: int
    size: int


class SeedIndex:
    """Content hash -> first-seen record, appended to a JSON-lines file."""

    def __init__(self, path: Path | None = None):
        self.path = path
        self.seen: dict[str, SeedRecord] = {}
        if path is not None and path.exists():
            for line in path.read_text().splitlines():
                if line.strip():
                    rec = SeedRecord(**json.loads(line))
                    self.seen.setdefault(rec.sha256, rec)

    def __contains__(self, digest: str) -> bool:
        return digest in self.seen

    def __len__(self) -> int:
        return len(self.seen)

    def add(self, rec: SeedRecord) -> bool:
        if rec.sha256 in self.seen:
            return False
        self.seen[rec.sha256] = rec
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a") as fh:
                fh.write(json.dumps(rec.__dict__) + "\n")
        return True


@dataclass
class SyncReport:
    kind: str
    imported: dict[str, int] = field(default_factory=dict)
    skipped: int = 0

    @property
    def total(self) -> int:
        return sum(self.imported.values())


def sync_name(digest: str, origin: str) -> str:
    return f"{digest[:HASH_PREFIX]}_{origin}"


class SeedSync:
    def __init__(self, index: SeedIndex | None = None):
        self.index = index if index is not None else SeedIndex()
        self._hash_cache: dict[str, tuple[tuple[int, int], str]] = {}
        self.round = 0

    def _hash(self, path: Path) -> str | None:
        try:
            st = path.stat()
            sig = (st.st_size, st.st_mtime_ns)
            hit = self._hash_cache.get(str(path))
            if hit is not None and hit[0] == sig:
                return hit[1]
            digest = sha256_file(path)
        except OSError as exc:
            log.warning("skipping unreadable seed %s: %s", path, exc)
            return None
        self._hash_cache[str(path)] = (sig, digest)
        return digest

    def _scan(self, dirs: Sequence[Path]) -> dict[str, Path]:
        found: dict[str, Path] = {}
        for p in iter_corpus(dirs):
            digest = self._hash(p)
            if digest is not None:
                found.setdefault(digest, p)
        return found

    def sync_all(self, fuzzers: Sequence, kind: str = "round") -> SyncReport:
        """Make every fuzzer see the union of all fuzzers' interesting inputs."""
        report = SyncReport(kind, {f.name: 0 for f in fuzzers})
        own = {f.name: self._scan(f.interesting_paths) for f in fuzzers}
        imported = {f.name: self._scan([f.sync_path]) for f in fuzzers}

        union: dict[str, tuple[str, Path]] = {}
        for f in fuzzers:
            for digest, path in own[f.name].items():
                if digest not in union:
                    union[digest] = (f.name, path)
                    try:
                        size = path.stat().st_size
                    except OSError:
                        size = 0
                    self.index.add(SeedRecord(digest, f.name, self.round, size))

        for f in fuzzers:
            visible = own[f.name].keys() | imported[f.name].keys()
            missing = [d for d in union if d not in visible]
            if not missing:
                continue
            f.sync_path.mkdir(parents=True, exist_ok=True)
            for digest in missing:
                origin, src = union[digest]
                dst = f.sync_path / sync_name(digest, origin)
                try:
                    shutil.copyfile(src, dst)
                except OSError as exc:
                    if exc.errno == errno.ENOSPC:
                        raise SyncFatal(f"disk full while syncing into {f.sync_path}") from exc
                    log.warning("could not sync %s into %s: %s", src, f.name, exc)
                    report.skipped += 1
                    continue
                report.imported[f.name] += 1
        return report

    def sync_after_focus_run(self, just_ran, others: Sequence) -> SyncReport:
        fuzzers = list(others)
        if just_ran not in fuzzers:
            fuzzers.insert(0, just_ran)
        return self.sync_all(fuzzers, kind=f"focus:{just_ran.name}")
