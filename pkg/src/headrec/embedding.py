"""Word-vector tables and the lift of review documents onto the hyperboloid."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import geometry

log = logging.getLogger(__name__)

DEFAULT_DIM = 100
POINCARE_CLAMP = 0.999
GEOMETRIES = ("euclidean", "poincare")


class EmbeddingFormatError(ValueError):
    pass


@dataclass
class EmbeddingTable:
    """Frozen word vectors.  Row 0 is the all-zero row for padding and OOV tokens."""

    vocab: dict[str, int]
    matrix: np.ndarray
    geometry: str = "euclidean"
    rescaled: int = 0

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"geometry must be one of {GEOMETRIES}, got {self.geometry!r}")
        if not np.all(np.isfinite(self.matrix)):
            raise EmbeddingFormatError("embedding rows must be finite")
        # rows as tangent vectors lifted to the hyperboloid, computed once
        self.hyperbolic = geometry.lift(self.matrix)
        # log_o of every lifted row, so batches can index it instead of mapping back
        self.tangent = geometry.unlift(self.hyperbolic)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.vocab)

    def ids(self, tokens, length: int) -> np.ndarray:
        """Row indices for ``tokens``, truncated or zero-padded to ``length``."""
        out = np.zeros(length, dtype=np.int64)
        get = self.vocab.get
        for k, tok in enumerate(tokens[:length]):
            out[k] = get(tok, 0)
        return out

    def row(self, token: str) -> np.ndarray:
        return self.matrix[self.vocab.get(token, 0)]

    @classmethod
    def from_rows(cls, tokens, rows, geometry: str = "euclidean") -> "EmbeddingTable":
        rows = np.asarray(rows, dtype=np.float64)
        rescaled = 0
        if geometry == "poincare":
            norms = np.linalg.norm(rows, axis=1)
            over = norms >= 1.0
            rescaled = int(over.sum())
            if rescaled:
                rows = rows.copy()
                rows[over] *= (POINCARE_CLAMP / norms[over])[:, None]
                log.warning("rescaled %d out-of-ball rows to norm %.3f", rescaled, POINCARE_CLAMP)
        matrix = np.vstack([np.zeros((1, rows.shape[1])), rows])
        vocab = {t: k + 1 for k, t in enumerate(tokens)}
        return cls(vocab, matrix, geometry, rescaled)

    @classmethod
    def synthetic(cls, tokens, dim: int = DEFAULT_DIM, seed: int = 0, sigma: float = 0.1,
                  geometry: str = "euclidean") -> "EmbeddingTable":
        """Seeded Gaussian rows, for tests and desk-scale runs without pretrained files."""
        rng = np.random.default_rng(seed)
        tokens = list(tokens)
        return cls.from_rows(tokens, rng.normal(0.0, sigma, size=(len(tokens), dim)), geometry)


def load_table(path, geometry: str = "euclidean") -> EmbeddingTable:
    """Read ``token v1 ... vd`` lines (UTF-8, space separated)."""
    tokens, rows, dim = [], [], None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if not parts or not parts[0]:
                continue
            try:
                vec = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise EmbeddingFormatError(f"{path}:{lineno}: {exc}") from None
            if dim is None:
                dim = len(vec)
            if len(vec) != dim or dim == 0:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: expected {dim} values, found {len(vec)}")
            tokens.append(parts[0])
            rows.append(vec)
    if not rows:
        raise EmbeddingFormatError(f"{path}: no embedding rows")
    return EmbeddingTable.from_rows(tokens, rows, geometry)


@dataclass
class DocumentEmbedding:
    euclidean: np.ndarray   # (n, d)
    hyperbolic: np.ndarray  # (n, d+1), rows on the hyperboloid

    @property
    def length(self) -> int:
        return self.euclidean.shape[0]


def embed_document(tokens, table: EmbeddingTable, doc_len: int) -> DocumentEmbedding:
    """Look up rows (zeros for OOV/padding) and lift each one with exp_o."""
    ids = table.ids(tokens, doc_len)
    return DocumentEmbedding(table.matrix[ids], table.hyperbolic[ids])


def embed_batch(id_matrix: np.ndarray, table: EmbeddingTable) -> np.ndarray:
    """Hyperbolic rows for a (batch, doc_len) matrix of token ids."""
    return table.hyperbolic[id_matrix]
