"""Dense, model-ready views of the two graphs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# node and edge relation ids shared by the code graph and the model
NODE_TYPES = ("critical", "invocation", "normal")
EDGE_TYPES = ("critical", "dependent", "normal")

VOCAB_SIZE = 258
UNK = 256
EMPTY = 257
MAX_LEN = 256


def sym_norm(adj: np.ndarray) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 for a square 0/1 matrix ``adj``."""
    a = adj + np.eye(adj.shape[0])
    d = a.sum(axis=1)
    inv = 1.0 / np.sqrt(d)
    return a * inv[:, None] * inv[None, :]


@dataclass
class CodeInput:
    """Block token sequences plus per-relation normalised adjacency."""

    seqs: np.ndarray  # (U, L) int, padded with 0
    lengths: np.ndarray  # (U,) int >= 1
    node_seq: np.ndarray  # (n,) index into seqs
    node_type: np.ndarray  # (n,) index into NODE_TYPES
    adj: np.ndarray  # (3, n, n) normalised, one slice per EDGE_TYPES entry
    edges: np.ndarray  # (k, 3) int rows (src, dst, relation)

    @property
    def n(self) -> int:
        return int(self.node_seq.shape[0])


@dataclass
class TxInput:
    node_x: np.ndarray  # (n, 14)
    edge_x: np.ndarray  # (m, 14)
    src: np.ndarray  # (m,) int
    dst: np.ndarray  # (m,) int
    adj: np.ndarray  # (n, n) normalised undirected adjacency with self-loops
    mask_mean: np.ndarray  # (m, m): row e averages the edges in its temporal mask

    @property
    def n(self) -> int:
        return int(self.node_x.shape[0])

    @property
    def m(self) -> int:
        return int(self.edge_x.shape[0])


def relation_adjacency(n: int, edges: list[tuple[int, int, int]]) -> np.ndarray:
    """Normalised symmetric adjacency per relation from (src, dst, relation) index triples."""
    raw = np.zeros((len(EDGE_TYPES), n, n))
    for a, b, r in edges:
        raw[r, a, b] = 1.0
        raw[r, b, a] = 1.0
    return np.stack([sym_norm(raw[r]) for r in range(len(EDGE_TYPES))])
