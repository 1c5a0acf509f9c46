"""Execution oracles: one input in, one raw hit map out."""

from __future__ import annotations

import logging
import os
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from trendfuzz.bitmap import DEFAULT_MAP_SIZE
from trendfuzz.errors import ConfigError

log = logging.getLogger(__name__)

BITMAP_ENV = "TRENDFUZZ_BITMAP_OUT"
INPUT_PLACEHOLDERS = ("@@", "{input}")


class OracleFailure(Exception):
    """The target timed out or produced no usable hit map for an input."""


class ExecutionOracle:
    map_size: int

    def execute(self, path: Path) -> np.ndarray:
        """Return the raw hit-count map (uint8, ``map_size`` long) for one input file."""
        raise NotImplementedError


@dataclass
class InstrumentedBinaryOracle(ExecutionOracle):
    """Runs an instrumented target on one input.

    The input path replaces ``@@`` or ``{input}`` in ``argv``; with neither
    present, or with ``stdin=True``, the file is fed on stdin. The target
    must write ``map_size`` raw hit counters to the file named by the
    ``TRENDFUZZ_BITMAP_OUT`` environment variable.
    """

    argv: list[str]
    timeout: float = 1.0
    map_size: int = DEFAULT_MAP_SIZE
    stdin: bool = False
    env: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.argv:
            raise ConfigError("instrumented target argv is empty")

    def _argv_for(self, path: Path) -> tuple[list[str], bool]:
        argv, substituted = [], False
        for arg in self.argv:
            for ph in INPUT_PLACEHOLDERS:
                if ph in arg:
                    arg = arg.replace(ph, str(path))
                    substituted = True
            argv.append(arg)
        return argv, self.stdin or not substituted

    def execute(self, path: Path) -> np.ndarray:
        argv, use_stdin = self._argv_for(Path(path))
        fd, out_path = tempfile.mkstemp(prefix="trendfuzz-map-")
        os.close(fd)
        env = {**os.environ, **self.env, BITMAP_ENV: out_path}
        try:
            stdin = open(path, "rb") if use_stdin else subprocess.DEVNULL
            try:
                subprocess.run(argv, stdin=stdin, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL,
                               env=env, timeout=self.timeout, check=False)
            finally:
                if use_stdin:
                    stdin.close()
            data = Path(out_path).read_bytes()
        except subprocess.TimeoutExpired as exc:
            raise OracleFailure(f"timeout after {self.timeout}s on {path}") from exc
        except OSError as exc:
            raise OracleFailure(f"cannot execute target on {path}: {exc}") from exc
        finally:
            try:
                os.unlink(out_path)
            except FileNotFoundError:
                pass
        if len(data) != self.map_size:
            raise OracleFailure(f"target wrote {len(data)} map bytes for {path}, expected {self.map_size}")
        return np.frombuffer(data, dtype=np.uint8).copy()
