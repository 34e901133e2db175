"""Graph-biased self-attention encoder: feature encodings, distance / hop /
category attention biases, master-node readout, and the prediction head."""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, Tensor
from .graphs import MASTER, category_pair

UNKNOWN_PAIR_INDEX = 0


@dataclass
class DistanceBins:
    """Equal-width distance bins with one learnable scalar per boundary.
    Distances outside [min_dist, max_dist] clamp to the nearest boundary."""

    min_dist: float
    max_dist: float
    m: int

    @property
    def boundaries(self):
        return np.linspace(self.min_dist, self.max_dist, self.m + 1)

    def locate(self, dist):
        """Return (lower_idx, upper_idx, lower_weight, upper_weight)."""
        if self.max_dist <= self.min_dist:
            return 0, 0, 1.0, 0.0
        if dist <= self.min_dist:
            return 0, 0, 1.0, 0.0
        if dist >= self.max_dist:
            return self.m, self.m, 1.0, 0.0
        width = (self.max_dist - self.min_dist) / self.m
        k = min(int((dist - self.min_dist) / width), self.m - 1)
        lower = self.min_dist + k * width
        upper = lower + width
        w_up = (dist - lower) / width
        return k, k + 1, (upper - dist) / width, w_up


def fit_distance_bins(mgraphs, m):
    """Bin boundaries from the observed node-pair distances of the training
    split."""
    lo, hi = math.inf, -math.inf
    for g in mgraphs:
        for d in g.geo_dist.values():
            lo = min(lo, d)
            hi = max(hi, d)
    if lo > hi:
        lo, hi = 0.0, 1.0
    return DistanceBins(lo, hi, m)


def distance_bias(dist, bins, boundary_values):
    """Interpolated bias scalar for one distance (plain-float reference path
    used by tests and by the bias-matrix construction indices)."""
    lo, hi, w_lo, w_hi = bins.locate(dist)
    return w_lo * boundary_values[lo] + w_hi * boundary_values[hi]


def build_category_vocab(traj_graphs):
    """Observed unordered category pairs -> table row, index 0 reserved for
    the UNKNOWN pair (master edges and unseen combinations)."""
    pairs = set()
    for g in traj_graphs:
        pairs.update(g.edge_category.values())
    return {pair: i + 1 for i, pair in enumerate(sorted(pairs))}


def _pair_index(vocab, base, u, w):
    """Category-pair table index for the path edge between u and w."""
    if u == MASTER or w == MASTER:
        return UNKNOWN_PAIR_INDEX
    label = base.edge_category.get((u, w)) or base.edge_category.get((w, u))
    if label is None:  # reconnection edges recompute labels, so rarely hit
        return UNKNOWN_PAIR_INDEX
    return vocab.get(label, UNKNOWN_PAIR_INDEX)


def path_pair_indices(mgraph, vocab, i, j):
    """Category-pair indices along the canonical shortest path i -> j.
    The i == j case uses the node's self-loop edge."""
    if i == j:
        return [_pair_index(vocab, mgraph.base, i, i)]
    path = mgraph.paths[(i, j)]
    return [_pair_index(vocab, mgraph.base, u, w) for u, w in zip(path, path[1:])]


def category_bias(mgraph, vocab, i, j, pair_table, w_r):
    """Scalar c_ij: mean over shortest-path edges of <w_r, r_edge>.
    Plain-numpy reference used by tests."""
    idxs = path_pair_indices(mgraph, vocab, i, j)
    dots = [float(pair_table[k] @ w_r) for k in idxs]
    return sum(dots) / len(dots)


class GsanModel:
    """Holds all learnable tensors and runs the encoder forward pass."""

    def __init__(self, catalog, gt_graph, cat_vocab, dist_bins, config, rng,
                 poi_init=None, dtype=np.float32):
        self.config = config
        self.cat_vocab = cat_vocab
        self.bins = dist_bins
        self.dtype = dtype
        self.poi_ids = sorted(p.poi_id for p in catalog)
        self.poi_index = {pid: i for i, pid in enumerate(self.poi_ids)}
        self.categories = {p.poi_id: p.category_id for p in catalog}
        self.coords = {p.poi_id: (p.lat, p.lon) for p in catalog}

        d = config.d
        n_pois = len(self.poi_ids)
        buckets = config.degree_buckets + 1

        def init(shape, scale):
            return Tensor(rng.normal(0.0, scale, size=shape).astype(dtype),
                          requires_grad=True)

        params = {}
        if poi_init is not None:
            rows = np.stack([poi_init.row(pid) for pid in self.poi_ids])
            params["poi_table"] = Tensor(rows.astype(dtype), requires_grad=True)
        else:
            params["poi_table"] = init((n_pois, d), 0.1)
        params["deg_in"] = init((buckets, d), 0.02)
        params["deg_out"] = init((buckets, d), 0.02)
        params["pop"] = init((buckets, d), 0.02)
        params["pos"] = init((config.t_max + 1, d), 0.02)
        for layer in range(config.layers):
            for h in range(config.heads):
                for name in ("wq", "wk", "wv"):
                    params[f"l{layer}.h{h}.{name}"] = init((d, d), 1.0 / math.sqrt(d))
            params[f"l{layer}.wo"] = init((config.heads * d, d), 1.0 / math.sqrt(d))
        params["b_spd"] = Tensor(np.zeros((config.spd_cap + 2, 1), dtype=dtype),
                                 requires_grad=True)
        params["b_dist"] = Tensor(np.zeros((config.m_bins + 2, 1), dtype=dtype),
                                  requires_grad=True)
        params["cat_pairs"] = init((len(cat_vocab) + 1, d), 0.02)
        params["w_r"] = init((d, 1), 0.02)
        params["w_s"] = init((2 * d, d), 1.0 / math.sqrt(2 * d))
        self.params = params

        # degree / popularity bucket per POI row, read off the global graph
        cap = config.degree_buckets

        def bucket(x):
            return min(x, cap)

        self.deg_in_bucket = np.array(
            [bucket(gt_graph.in_degree.get(p, 0)) for p in self.poi_ids], dtype=np.int64)
        self.deg_out_bucket = np.array(
            [bucket(gt_graph.out_degree.get(p, 0)) for p in self.poi_ids], dtype=np.int64)
        self.pop_bucket = np.array(
            [bucket(int(math.log2(1 + gt_graph.visits.get(p, 0)))) for p in self.poi_ids],
            dtype=np.int64)

    def trainable(self):
        if self.config.freeze_poi_table:
            return {k: v for k, v in self.params.items() if k != "poi_table"}
        return self.params

    def regularized(self):
        """L2-penalized subset: everything except the bias scalar tables."""
        return {k: v for k, v in self.trainable().items()
                if k not in ("b_spd", "b_dist")}

    # -- feature encoding --------------------------------------------------

    def node_features(self, mgraph):
        g = mgraph.base
        idx = np.array([self.poi_index[p] for p in g.nodes], dtype=np.int64)
        pos_idx = []
        for p in g.nodes:
            step = g.last_step.get(p)
            if step is None:
                pos_idx.append(0)  # synthetic nodes use the padding row
            else:
                rev = g.seq_len - step + 1
                if rev > self.config.t_max:
                    raise NumericError(
                        f"position index {rev} exceeds t_max={self.config.t_max}")
                pos_idx.append(rev)
        h = ad.gather_rows(self.params["poi_table"], idx)
        h = h + ad.gather_rows(self.params["deg_in"], self.deg_in_bucket[idx])
        h = h + ad.gather_rows(self.params["deg_out"], self.deg_out_bucket[idx])
        h = h + ad.gather_rows(self.params["pop"], self.pop_bucket[idx])
        h = h + ad.gather_rows(self.params["pos"], np.array(pos_idx, dtype=np.int64))
        master = ad.tmean(h, axis=0, keepdims=True) + ad.gather_rows(self.params["pos"], [0])
        return ad.concat([h, master], axis=0)

    # -- attention bias ----------------------------------------------------

    def bias_matrix(self, mgraph):
        nodes = mgraph.nodes
        n = len(nodes)
        cfg = self.config

        spd_idx = np.empty((n, n), dtype=np.int64)
        lo_idx = np.empty((n, n), dtype=np.int64)
        hi_idx = np.empty((n, n), dtype=np.int64)
        w_lo = np.zeros((n, n), dtype=self.dtype)
        w_hi = np.zeros((n, n), dtype=self.dtype)
        master_dist_slot = cfg.m_bins + 1
        master_spd_slot = cfg.spd_cap + 1
        for a, i in enumerate(nodes):
            for b, j in enumerate(nodes):
                if i == MASTER or j == MASTER:
                    spd_idx[a, b] = master_spd_slot
                    lo_idx[a, b] = hi_idx[a, b] = master_dist_slot
                    w_lo[a, b] = 1.0
                    continue
                spd_idx[a, b] = min(mgraph.spd[(i, j)], cfg.spd_cap)
                dist = mgraph.geo_dist.get((i, j))
                if dist is None:
                    lo_idx[a, b] = hi_idx[a, b] = master_dist_slot
                    w_lo[a, b] = 1.0
                else:
                    lo, hi, wl, wh = self.bins.locate(dist)
                    lo_idx[a, b], hi_idx[a, b] = lo, hi
                    w_lo[a, b], w_hi[a, b] = wl, wh

        b_spd = ad.reshape(ad.gather_rows(self.params["b_spd"], spd_idx.ravel()), (n, n))
        b_lo = ad.reshape(ad.gather_rows(self.params["b_dist"], lo_idx.ravel()), (n, n))
        b_hi = ad.reshape(ad.gather_rows(self.params["b_dist"], hi_idx.ravel()), (n, n))
        bias = b_spd + ad.mul(b_lo, Tensor(w_lo)) + ad.mul(b_hi, Tensor(w_hi))

        if cfg.use_category_bias:
            flat_idx = []
            seg = []
            weights = []
            for a, i in enumerate(nodes):
                for b, j in enumerate(nodes):
                    idxs = path_pair_indices(mgraph, self.cat_vocab, i, j)
                    for k in idxs:
                        flat_idx.append(k)
                        seg.append(a * n + b)
                        weights.append(1.0 / len(idxs))
            pair_dots = ad.matmul(self.params["cat_pairs"], self.params["w_r"])
            gathered = ad.gather_rows(pair_dots, np.array(flat_idx, dtype=np.int64))
            weighted = ad.mul(gathered, Tensor(np.array(weights, dtype=self.dtype)[:, None]))
            c = ad.scatter_sum(weighted, np.array(seg, dtype=np.int64), n * n)
            bias = bias + ad.reshape(c, (n, n))
        return bias

    # -- attention + readout -----------------------------------------------

    def attention_layer(self, x, bias, layer):
        cfg = self.config
        scale = 1.0 / math.sqrt(cfg.d)
        heads = []
        for h in range(cfg.heads):
            q = ad.matmul(x, self.params[f"l{layer}.h{h}.wq"])
            k = ad.matmul(x, self.params[f"l{layer}.h{h}.wk"])
            v = ad.matmul(x, self.params[f"l{layer}.h{h}.wv"])
            scores = ad.mul(ad.matmul(q, k.T), scale) + bias
            if not np.all(np.isfinite(scores.data)):
                raise NumericError("non-finite attention scores")
            attn = ad.row_softmax(scores)
            heads.append(ad.matmul(attn, v))
        merged = heads[0] if len(heads) == 1 else ad.concat(heads, axis=1)
        return ad.matmul(merged, self.params[f"l{layer}.wo"])

    def encode(self, mgraph):
        """Full encoder pass; returns the trajectory representation s_u (1, d)."""
        x = self.node_features(mgraph)
        bias = self.bias_matrix(mgraph)
        for layer in range(self.config.layers):
            x = self.attention_layer(x, bias, layer)
        n = len(mgraph.nodes)
        v_s = ad.gather_rows(x, [n - 1])
        last_idx = mgraph.base.nodes.index(mgraph.base.last_node)
        v_last = ad.gather_rows(x, [last_idx])
        return ad.matmul(ad.concat([v_s, v_last], axis=1), self.params["w_s"])

    def predict(self, s_u):
        """Probability row over the full POI catalog."""
        logits = ad.matmul(s_u, self.params["poi_table"].T)
        return ad.row_softmax(logits)

    def rec_loss(self, prob_rows, target_poi_ids):
        """Mean cross-entropy of a batch of prediction rows."""
        probs = ad.concat(prob_rows, axis=0)
        targets = np.array([self.poi_index[p] for p in target_poi_ids], dtype=np.int64)
        return ad.cross_entropy(probs, targets)
