"""Local trajectory graphs, global temporal/spatial graphs, Haversine
distances, shortest-path tables and the master-node augmentation."""

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

EARTH_RADIUS_KM = 6371.0


def haversine(lat1, lon1, lat2, lon2):
    """Great-circle distance in km (Earth radius 6371.0 km)."""
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = math.radians(lat2 - lat1)
    dlam = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def category_pair(cat_a, cat_b):
    """Unordered category pair label for an edge."""
    return (cat_a, cat_b) if cat_a <= cat_b else (cat_b, cat_a)


@dataclass
class TrajectoryGraph:
    nodes: list  # unique poi_ids, first-visit order
    edges: set  # directed (i, j) poi_id pairs, includes one self-loop per node
    edge_category: dict  # (i, j) -> unordered (cat, cat) pair
    last_step: dict  # poi_id -> 1-based index of last occurrence; None = synthetic
    last_node: str
    seq_len: int

    def copy(self):
        return TrajectoryGraph(
            list(self.nodes), set(self.edges), dict(self.edge_category),
            dict(self.last_step), self.last_node, self.seq_len,
        )

    def undirected_adjacency(self):
        adj = {n: set() for n in self.nodes}
        for i, j in self.edges:
            if i != j:
                adj[i].add(j)
                adj[j].add(i)
        return adj

    def is_connected(self):
        if not self.nodes:
            return False
        adj = self.undirected_adjacency()
        seen = {self.nodes[0]}
        queue = deque([self.nodes[0]])
        while queue:
            for nb in adj[queue.popleft()]:
                if nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
        return len(seen) == len(self.nodes)


def build_trajectory_graph(traj, categories=None):
    """Convert a trajectory into a directed graph of its unique POIs.

    One edge per observed consecutive pair, plus a self-loop per node.
    `categories` maps poi_id -> category; defaults to the categories carried
    by the check-ins themselves.
    """
    if len(traj) < 1:
        raise ValueError("empty trajectory")
    if categories is None:
        categories = {c.poi_id: c.category_id for c in traj.checkins}
    seq = traj.poi_ids()
    nodes = []
    seen = set()
    for p in seq:
        if p not in seen:
            seen.add(p)
            nodes.append(p)
    edges = set()
    edge_category = {}
    for p in nodes:
        edges.add((p, p))
        edge_category[(p, p)] = category_pair(categories[p], categories[p])
    for a, b in zip(seq, seq[1:]):
        edges.add((a, b))
        edge_category[(a, b)] = category_pair(categories[a], categories[b])
    last_step = {p: t + 1 for t, p in enumerate(seq)}
    return TrajectoryGraph(nodes, edges, edge_category, last_step, seq[-1], len(seq))


@dataclass
class GlobalTemporalGraph:
    nodes: list  # all poi_ids
    cooccurrence: dict  # unordered (i, j) pair -> consecutive-visit count
    neighbors: dict  # poi_id -> top-N neighbor poi_ids, descending count
    in_degree: dict  # poi_id -> number of unique predecessors (directed)
    out_degree: dict  # poi_id -> number of unique successors (directed)
    visits: dict  # poi_id -> total visit count


def build_global_temporal(trajs, n_neighbors, catalog=None):
    """Aggregate consecutive-pair co-occurrence over all trajectories
    (direction-ignored), keeping at most N neighbors per node by descending
    count, ties broken by ascending poi_id."""
    if n_neighbors < 1:
        raise ValueError("n_neighbors must be >= 1")
    nodes = set(p.poi_id for p in catalog) if catalog else set()
    co = {}
    preds = {}
    succs = {}
    visits = {}
    for traj in trajs:
        seq = traj.poi_ids()
        for p in seq:
            nodes.add(p)
            visits[p] = visits.get(p, 0) + 1
        for a, b in zip(seq, seq[1:]):
            if a == b:
                continue
            key = (a, b) if a <= b else (b, a)
            co[key] = co.get(key, 0) + 1
            succs.setdefault(a, set()).add(b)
            preds.setdefault(b, set()).add(a)
    by_node = {}
    for (a, b), n in co.items():
        by_node.setdefault(a, []).append((b, n))
        by_node.setdefault(b, []).append((a, n))
    neighbors = {}
    for v in nodes:
        ranked = sorted(by_node.get(v, []), key=lambda t: (-t[1], t[0]))
        neighbors[v] = [nb for nb, _ in ranked[:n_neighbors]]
    return GlobalTemporalGraph(
        sorted(nodes), co, neighbors,
        {v: len(preds.get(v, ())) for v in nodes},
        {v: len(succs.get(v, ())) for v in nodes},
        {v: visits.get(v, 0) for v in nodes},
    )


@dataclass
class GlobalSpatialGraph:
    nodes: list  # all poi_ids
    edges: dict  # unordered (i, j) pair -> distance km, dist < alpha


def build_global_spatial(catalog, alpha_km):
    """Undirected proximity graph: edge iff haversine distance < alpha_km.

    Quadratic scan with a latitude-band prefilter; adequate at desk scale.
    """
    if alpha_km <= 0:
        raise ValueError("alpha_km must be > 0")
    pois = sorted(catalog, key=lambda p: p.lat)
    # 1 degree of latitude is ~111.19 km everywhere on the sphere
    lat_band = alpha_km / (math.pi * EARTH_RADIUS_KM / 180.0)
    edges = {}
    for i, a in enumerate(pois):
        for b in pois[i + 1:]:
            if b.lat - a.lat > lat_band:
                break
            d = haversine(a.lat, a.lon, b.lat, b.lon)
            if d < alpha_km:
                key = (a.poi_id, b.poi_id) if a.poi_id <= b.poi_id else (b.poi_id, a.poi_id)
                edges[key] = d
    return GlobalSpatialGraph(sorted(p.poi_id for p in catalog), edges)


def adjacency_from_pairs(nodes, pairs):
    adj = {n: set() for n in nodes}
    for i, j in pairs:
        if i != j:
            adj[i].add(j)
            adj[j].add(i)
    return adj


def all_pairs_spd(nodes, adjacency, cap):
    """Hop-count table by per-node BFS over an undirected adjacency.
    Values (and unreachable pairs) are clamped to cap."""
    if not nodes:
        raise ValueError("empty graph")
    spd = {}
    for src in nodes:
        dist = {src: 0}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            if dist[u] >= cap:
                continue
            for v in sorted(adjacency[u]):
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        for dst in nodes:
            spd[(src, dst)] = min(dist.get(dst, cap), cap)
    return spd


MASTER = "__master__"


@dataclass
class MasterGraph:
    base: TrajectoryGraph
    nodes: list  # base nodes + MASTER (last)
    spd: dict  # (i, j) -> hops over direction-ignored augmented edges
    geo_dist: dict  # (i, j) base pairs -> km; master pairs absent
    paths: dict = field(default_factory=dict)  # (i, j) -> canonical node path


def _canonical_paths(nodes, adjacency):
    """One deterministic shortest path per source: BFS expanding neighbors in
    ascending node index (list order)."""
    order = {n: i for i, n in enumerate(nodes)}
    paths = {}
    for src in nodes:
        parent = {src: None}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v in sorted(adjacency[u], key=order.__getitem__):
                if v not in parent:
                    parent[v] = u
                    queue.append(v)
        for dst in nodes:
            if dst not in parent:
                continue
            path = []
            cur = dst
            while cur is not None:
                path.append(cur)
                cur = parent[cur]
            paths[(src, dst)] = path[::-1]
    return paths


def add_master_node(g, coords=None, spd_cap=5):
    """Attach the readout master node: undirected edges to every base node,
    then all-pairs hop counts (<= 2 by construction) and base-pair Haversine
    distances.

    `coords` maps poi_id -> (lat, lon); geo distances are omitted when absent
    (the attention layer then uses its dedicated master/unknown bias slot).
    """
    if not g.nodes:
        raise ValueError("empty base graph")
    nodes = list(g.nodes) + [MASTER]
    pairs = set(g.edges) | {(p, MASTER) for p in g.nodes}
    adj = adjacency_from_pairs(nodes, pairs)
    spd = all_pairs_spd(nodes, adj, cap=max(2, spd_cap))
    geo = {}
    if coords:
        for i in g.nodes:
            for j in g.nodes:
                if i in coords and j in coords:
                    a, b = coords[i], coords[j]
                    geo[(i, j)] = haversine(a[0], a[1], b[0], b[1])
    return MasterGraph(g, nodes, spd, geo, _canonical_paths(nodes, adj))


# -- serialization ---------------------------------------------------------


def save_temporal_graph(g, path):
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"temporal {len(g.nodes)} {len(g.cooccurrence)}\n")
        for (a, b) in sorted(g.cooccurrence):
            fh.write(f"{a}\t{b}\t{g.cooccurrence[(a, b)]}\n")


def save_spatial_graph(g, path):
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"spatial {len(g.nodes)} {len(g.edges)}\n")
        for (a, b) in sorted(g.edges):
            fh.write(f"{a}\t{b}\t{g.edges[(a, b)]:.6f}\n")
