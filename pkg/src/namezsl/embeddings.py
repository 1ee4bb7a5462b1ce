"""Word-embedding tables: text-format parsing, name lookup, random baselines.

A table maps lowercase tokens to fixed-width float64 vectors. Multi-word
names ("killer+whale", "blue whale shark") embed as the mean of their
token vectors. The random table replaces every token vector with a seeded
uniform draw, for ablations against pretrained vectors.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import CodedError

# '+', '_', '-' and whitespace all separate tokens inside a name.
_SEPARATORS = re.compile(r"[+_\-\s]+")


def normalize_name(name: str) -> tuple[str, ...]:
    """Lowercase a name and split it into its constituent tokens."""
    return tuple(tok for tok in _SEPARATORS.split(name.lower()) if tok)


@dataclass(frozen=True)
class EmbeddingTable:
    """Immutable token -> vector map with a fixed dimension."""

    dim: int
    entries: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError(f"dim must be positive, got {self.dim}")
        for tok, vec in self.entries.items():
            if not tok or tok != tok.lower() or len(tok.split()) != 1:
                raise ValueError(f"bad token {tok!r}: must be non-empty, lowercase, whitespace-free")
            if vec.shape != (self.dim,):
                raise ValueError(f"vector for {tok!r} has shape {vec.shape}, expected ({self.dim},)")
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"vector for {tok!r} contains non-finite values")
            vec.flags.writeable = False

    def __contains__(self, token: str) -> bool:
        return token in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def vector(self, token: str) -> np.ndarray:
        try:
            return self.entries[token]
        except KeyError:
            raise CodedError("E_UNKNOWN_TOKEN", f"token {token!r} not in embedding table") from None

    def tokens(self) -> list[str]:
        return list(self.entries)


def parse_embedding_text(lines: Iterable[str], expected_dim: int | None = None) -> EmbeddingTable:
    """Parse the plain-text vector format: ``token v1 v2 ... vD``, one entry per line.

    Fields are single-space separated, no header. Blank lines are skipped.
    Duplicate tokens keep the first occurrence and emit a warning. Tokens
    are lowercased on ingest.
    """
    if expected_dim is not None and expected_dim <= 0:
        raise ValueError(f"expected_dim must be positive, got {expected_dim}")
    dim = expected_dim
    entries: dict[str, np.ndarray] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split(" ")
        token = fields[0].lower()
        values = fields[1:]
        if dim is None:
            if not values:
                raise CodedError("E_BAD_LINE", f"line {lineno}: no numeric fields")
            dim = len(values)
        if len(values) != dim:
            raise CodedError(
                "E_BAD_LINE", f"line {lineno}: expected {dim} numeric fields, found {len(values)}"
            )
        try:
            vec = np.array([float(v) for v in values], dtype=np.float64)
        except ValueError:
            raise CodedError("E_BAD_LINE", f"line {lineno}: non-numeric field") from None
        if not np.all(np.isfinite(vec)):
            raise CodedError("E_NONFINITE", f"line {lineno}: value parses to inf/NaN")
        if token in entries:
            warnings.warn(f"duplicate token {token!r} at line {lineno}; keeping first occurrence")
            continue
        entries[token] = vec
    if not entries:
        raise CodedError("E_EMPTY", "no valid embedding entries in stream")
    assert dim is not None
    return EmbeddingTable(dim=dim, entries=entries)


def load_embedding_file(path, expected_dim: int | None = None) -> EmbeddingTable:
    with open(path, encoding="utf-8") as fh:
        return parse_embedding_text(fh, expected_dim)


def format_embedding_text(table: EmbeddingTable) -> str:
    """Inverse of :func:`parse_embedding_text`; round-trips values exactly."""
    lines = []
    for tok, vec in table.entries.items():
        lines.append(tok + " " + " ".join(repr(float(x)) for x in vec))
    return "\n".join(lines) + "\n"


def embed_name(table: EmbeddingTable, name: str) -> np.ndarray:
    """Embed a (possibly multi-word) name as the mean of its token vectors."""
    tokens = normalize_name(name)
    if not tokens:
        raise ValueError(f"name {name!r} is empty after normalization")
    vecs = [table.vector(tok) for tok in tokens]
    if len(vecs) == 1:
        return vecs[0]
    return np.mean(vecs, axis=0)


def random_embedding_table(names: Sequence[str], dim: int, seed: int) -> EmbeddingTable:
    """Assign every token of every name an i.i.d. uniform [-1, 1] vector.

    Deterministic for a fixed seed; tokens shared between names get a
    single vector, assigned on first encounter.
    """
    if dim <= 0:
        raise ValueError(f"dim must be positive, got {dim}")
    if not names:
        raise ValueError("names must be non-empty")
    seen: set[tuple[str, ...]] = set()
    token_order: dict[str, None] = {}
    for name in names:
        tokens = normalize_name(name)
        if not tokens:
            raise ValueError(f"name {name!r} is empty after normalization")
        if tokens in seen:
            raise CodedError("E_DUP_NAME", f"duplicate name {name!r} (normalizes to {tokens})")
        seen.add(tokens)
        for tok in tokens:
            token_order.setdefault(tok)
    rng = np.random.default_rng(seed)
    entries = {tok: rng.uniform(-1.0, 1.0, size=dim) for tok in token_order}
    return EmbeddingTable(dim=dim, entries=entries)


def component_mean(table: EmbeddingTable) -> float:
    """Mean over all stored vector components (diagnostic for random tables)."""
    total = sum(float(v.sum()) for v in table.entries.values())
    count = sum(v.size for v in table.entries.values())
    return total / count
