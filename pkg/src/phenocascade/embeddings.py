"""Word and concept vector tables with a total, deterministic lookup.

Tables load from the standard word2vec text export. Out-of-vocabulary keys
get a pseudo-random vector derived from a stable hash of the key and the
table's seed, so the same unknown token maps to the same vector in every
process on every platform.
"""

from __future__ import annotations

import gzip
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Mapping

import numpy as np

from .errors import DataFormatError

OOV_RANGE = 0.25


@dataclass(frozen=True)
class EmbeddingTable:
    """Immutable key -> vector map of one dimension, with seeded OOV fallback."""

    dim: int
    vectors: Mapping[str, np.ndarray]
    oov_seed: int = 0
    _oov_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise DataFormatError("embedding dimension must be positive")
        for key, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise DataFormatError(f"vector for {key!r} has shape {vec.shape}, expected ({self.dim},)")

    def __contains__(self, key: str) -> bool:
        return key in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def lookup(self, key: str) -> np.ndarray:
        """The stored vector, or the key's deterministic OOV vector."""
        vec = self.vectors.get(key)
        if vec is not None:
            return vec
        cached = self._oov_cache.get(key)
        if cached is None:
            cached = oov_vector(key, self.dim, self.oov_seed)
            self._oov_cache[key] = cached
        return cached


def oov_vector(key: str, dim: int, seed: int) -> np.ndarray:
    """Pseudo-random vector for an unknown key, uniform in [-0.25, 0.25].

    The generator seed comes from a cryptographic hash of `seed` and the key,
    not Python's process-randomized `hash`, so results are stable across runs.
    """
    digest = hashlib.blake2b(f"{seed}:{key}".encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "big"))
    return rng.uniform(-OOV_RANGE, OOV_RANGE, size=dim)


def _open_maybe_gzip(path: str | Path) -> IO[str]:
    if str(path).endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def load_word2vec_text(path: str | Path, oov_seed: int = 0) -> EmbeddingTable:
    """Load a word2vec text export: header `<count> <dim>`, then one entry per line.

    Enforces the header count, per-line dimension, and key uniqueness, naming
    the offending line on failure. Gzip-compressed files are accepted when the
    name ends ".gz".
    """
    source = str(path)
    vectors: dict[str, np.ndarray] = {}
    with _open_maybe_gzip(path) as handle:
        header = handle.readline()
        parts = header.split()
        if len(parts) != 2:
            raise DataFormatError("expected header '<count> <dim>'", source=source, line=1)
        try:
            count, dim = int(parts[0]), int(parts[1])
        except ValueError:
            raise DataFormatError("expected header '<count> <dim>'", source=source, line=1) from None
        if count < 0 or dim < 1:
            raise DataFormatError(f"invalid header counts {count} {dim}", source=source, line=1)
        for lineno, raw in enumerate(handle, start=2):
            if not raw.strip():
                continue
            fields = raw.split()
            if len(fields) != dim + 1:
                raise DataFormatError(
                    f"expected 1 key + {dim} values, got {len(fields)} fields", source=source, line=lineno
                )
            key = fields[0]
            if key in vectors:
                raise DataFormatError(f"duplicate key {key!r}", source=source, line=lineno)
            try:
                vec = np.array([float(v) for v in fields[1:]], dtype=np.float64)
            except ValueError:
                raise DataFormatError("non-numeric vector component", source=source, line=lineno) from None
            vectors[key] = vec
    if len(vectors) != count:
        raise DataFormatError(f"header promised {count} entries, file has {len(vectors)}", source=source)
    return EmbeddingTable(dim=dim, vectors=vectors, oov_seed=oov_seed)


def write_word2vec_text(path: str | Path, table: EmbeddingTable, fmt: str = "%.6f") -> None:
    """Write a table in the word2vec text format `load_word2vec_text` reads."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(f"{len(table.vectors)} {table.dim}\n")
        for key, vec in table.vectors.items():
            values = " ".join(fmt % v for v in vec)
            handle.write(f"{key} {values}\n")
