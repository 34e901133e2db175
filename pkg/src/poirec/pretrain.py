"""node2vec pretraining of spatial/temporal POI embeddings and their fusion."""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

TABLE_MAGIC = b"PEMB"
TABLE_VERSION = 1


@dataclass
class EmbeddingTable:
    ids: list  # row index -> poi_id
    vectors: np.ndarray  # (rows, d) float32

    @property
    def dim(self):
        return self.vectors.shape[1]

    def row(self, poi_id):
        return self.vectors[self.index[poi_id]]

    def __post_init__(self):
        self.index = {pid: i for i, pid in enumerate(self.ids)}


def random_walks(adjacency, walks_per_node, walk_len, p, q, rng):
    """Second-order biased walks per the node2vec transition rule.

    adjacency: {node: sorted list of neighbors}. Isolated nodes yield
    length-1 walks. Return-parameter p and in-out parameter q reweight
    transitions by the previous step: 1/p back to it, 1 to its neighbors,
    1/q elsewhere.
    """
    if walk_len < 2:
        raise ValueError("walk_len must be >= 2")
    if p <= 0 or q <= 0:
        raise ValueError("p and q must be > 0")
    neighbor_sets = {v: set(nbrs) for v, nbrs in adjacency.items()}
    walks = []
    for _ in range(walks_per_node):
        for start in sorted(adjacency):
            walk = [start]
            while len(walk) < walk_len:
                cur = walk[-1]
                nbrs = adjacency[cur]
                if not nbrs:
                    break
                if len(walk) == 1:
                    nxt = nbrs[rng.integers(len(nbrs))]
                else:
                    prev = walk[-2]
                    prev_nbrs = neighbor_sets[prev]
                    weights = np.empty(len(nbrs))
                    for i, x in enumerate(nbrs):
                        if x == prev:
                            weights[i] = 1.0 / p
                        elif x in prev_nbrs:
                            weights[i] = 1.0
                        else:
                            weights[i] = 1.0 / q
                    weights /= weights.sum()
                    nxt = nbrs[rng.choice(len(nbrs), p=weights)]
                walk.append(nxt)
            walks.append(walk)
    return walks


def train_skipgram(walks, all_nodes, dim, window=5, negatives=5, epochs=5,
                   lr=0.025, rng=None):
    """Skip-gram with negative sampling over walk corpora.

    Negative distribution is the unigram count over walk tokens raised to
    0.75. Nodes absent from every walk keep their random initialization.
    """
    if dim < 1 or window < 1:
        raise ValueError("dim and window must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    ids = sorted(all_nodes)
    index = {v: i for i, v in enumerate(ids)}
    n = len(ids)
    w_in = ((rng.random((n, dim)) - 0.5) / dim).astype(np.float32)
    w_out = np.zeros((n, dim), dtype=np.float32)

    counts = np.zeros(n)
    encoded = []
    for walk in walks:
        enc = np.array([index[v] for v in walk], dtype=np.int64)
        encoded.append(enc)
        np.add.at(counts, enc, 1)
    if counts.sum() == 0:
        log.warning("empty walk corpus; returning zero-initialized table")
        return EmbeddingTable(ids, np.zeros((n, dim), dtype=np.float32))

    noise = counts**0.75
    noise /= noise.sum()

    total_steps = max(1, epochs * sum(len(e) for e in encoded))
    step = 0
    for _ in range(epochs):
        for enc in encoded:
            for pos, center in enumerate(enc):
                cur_lr = lr * max(1e-4, 1.0 - step / total_steps)
                step += 1
                lo = max(0, pos - window)
                hi = min(len(enc), pos + window + 1)
                for cpos in range(lo, hi):
                    if cpos == pos:
                        continue
                    context = enc[cpos]
                    targets = np.empty(negatives + 1, dtype=np.int64)
                    targets[0] = context
                    targets[1:] = rng.choice(n, size=negatives, p=noise)
                    labels = np.zeros(negatives + 1, dtype=np.float32)
                    labels[0] = 1.0
                    vc = w_in[center]
                    vt = w_out[targets]
                    scores = 1.0 / (1.0 + np.exp(-vt @ vc))
                    err = (labels - scores) * cur_lr
                    grad_c = err @ vt
                    np.add.at(w_out, targets, err[:, None] * vc[None, :])
                    w_in[center] += grad_c
    return EmbeddingTable(ids, w_in)


def node2vec_embed(adjacency, all_nodes, dim, walks_per_node=10, walk_len=40,
                   p=1.0, q=1.0, window=5, negatives=5, epochs=5, lr=0.025,
                   rng=None):
    """Walks + skip-gram in one call."""
    rng = rng if rng is not None else np.random.default_rng(0)
    walks = random_walks(adjacency, walks_per_node, walk_len, p, q, rng)
    return train_skipgram(walks, all_nodes, dim, window=window,
                          negatives=negatives, epochs=epochs, lr=lr, rng=rng)


def fuse_embeddings(spatial, temporal):
    """Element-wise sum of the two pretrained tables."""
    if spatial.dim != temporal.dim:
        raise ValueError(f"dimension mismatch: {spatial.dim} vs {temporal.dim}")
    if spatial.ids != temporal.ids:
        raise ValueError("embedding tables cover different POI sets")
    return EmbeddingTable(list(spatial.ids), spatial.vectors + temporal.vectors)


def temporal_adjacency(gt_graph):
    """Undirected adjacency induced by the top-N filtered neighbor lists."""
    adj = {v: set() for v in gt_graph.nodes}
    for v, nbrs in gt_graph.neighbors.items():
        for u in nbrs:
            adj[v].add(u)
            adj[u].add(v)
    return {v: sorted(nbrs) for v, nbrs in adj.items()}


def spatial_adjacency(gs_graph):
    adj = {v: set() for v in gs_graph.nodes}
    for (a, b) in gs_graph.edges:
        adj[a].add(b)
        adj[b].add(a)
    return {v: sorted(nbrs) for v, nbrs in adj.items()}


# -- persistence -----------------------------------------------------------


def save_table(table, path):
    """Binary layout: magic, u32 version, u32 rows, u32 dim, then rows of
    little-endian float32; row->poi_id mapping in a sidecar text file."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(TABLE_MAGIC)
        fh.write(struct.pack("<III", TABLE_VERSION, len(table.ids), table.dim))
        fh.write(np.ascontiguousarray(table.vectors, dtype="<f4").tobytes())
    with path.with_suffix(path.suffix + ".ids").open("w", encoding="utf-8") as fh:
        for i, pid in enumerate(table.ids):
            fh.write(f"{i}\t{pid}\n")


def load_table(path):
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.read(4)
        if magic != TABLE_MAGIC:
            raise ValueError(f"bad embedding table magic: {magic!r}")
        version, rows, dim = struct.unpack("<III", fh.read(12))
        if version != TABLE_VERSION:
            raise ValueError(f"embedding table version {version}, expected {TABLE_VERSION}")
        vectors = np.frombuffer(fh.read(rows * dim * 4), dtype="<f4").reshape(rows, dim).copy()
    ids = [None] * rows
    with path.with_suffix(path.suffix + ".ids").open("r", encoding="utf-8") as fh:
        for line in fh:
            i, pid = line.rstrip("\n").split("\t", 1)
            ids[int(i)] = pid
    return EmbeddingTable(ids, vectors)
