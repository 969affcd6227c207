"""Constrained sharing graph, distribution-based clustering, and an exhaustive oracle."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import hetero, wireless
from .errors import SizeGuardError, ValidationError
from .structures import ClusterAssignment

ORACLE_MAX_CLIENTS = 8


@dataclass(frozen=True)
class Edge:
    closeness: float
    rate: float


@dataclass
class ConstrainedGraph:
    """Pairs allowed to share, plus each node's EMD.

    ``edges`` holds one record per unordered pair ``(k, j)`` with ``k < j``.
    The directed EMD gap used for association is ``emd[member] - emd[head]``.
    """

    num_nodes: int
    node_emd: np.ndarray
    edges: dict[tuple[int, int], Edge] = field(default_factory=dict)
    e_th: float = 0.0
    v_th: float = 0.0

    def __post_init__(self):
        self.node_emd = np.asarray(self.node_emd, dtype=float)
        self._adj = [set() for _ in range(self.num_nodes)]
        for (k, j) in self.edges:
            self._adj[k].add(j)
            self._adj[j].add(k)

    @classmethod
    def from_edges(cls, node_emd, pairs, e_th=0.0, v_th=0.0) -> "ConstrainedGraph":
        """Graph with the given undirected pairs (test and oracle helper)."""
        edges = {}
        for k, j in pairs:
            k, j = sorted((int(k), int(j)))
            if k == j:
                raise ValidationError("self loops are not allowed")
            edges[(k, j)] = Edge(closeness=1.0, rate=float("inf"))
        return cls(len(node_emd), node_emd, edges, e_th, v_th)

    def neighbors(self, k: int) -> set[int]:
        return self._adj[k]

    def has_edge(self, k: int, j: int) -> bool:
        return j in self._adj[k]

    def gap(self, head: int, member: int) -> float:
        return float(self.node_emd[member] - self.node_emd[head])

    def rate(self, k: int, j: int) -> float:
        return self.edges[tuple(sorted((k, j)))].rate


def pairwise_distances(positions) -> np.ndarray:
    pos = np.asarray(positions, dtype=float)
    diff = pos[:, None, :] - pos[None, :, :]
    return np.sqrt((diff**2).sum(-1))


def pairwise_rates(
    distances, radio: wireless.RadioParams, geometry: wireless.SidelinkGeometry | None = None,
    tx_power: float | None = None,
) -> np.ndarray:
    """Sidelink rate for every ordered pair; zero on the diagonal."""
    d = np.asarray(distances, dtype=float)
    geometry = geometry or wireless.SidelinkGeometry(distance=1.0)
    p = radio.ue_power if tx_power is None else tx_power
    K = d.shape[0]
    rates = np.zeros((K, K))
    for k in range(K):
        for j in range(K):
            if k != j:
                sinr = wireless.multicast_sinr(p, geometry.with_distance(d[k, j]), radio)
                rates[k, j] = wireless.link_rate(sinr, radio.multicast_bandwidth)
    return rates


def build_graph(
    clients: Sequence[tuple[float, Sequence[float]]],
    g,
    closeness,
    rates,
    e_th: float,
    v_th: float,
) -> ConstrainedGraph:
    """Keep pairs whose closeness and sidelink rate both clear their thresholds.

    ``rates`` is the K x K matrix from :func:`pairwise_rates`; the rate of a
    pair is the smaller of its two directions.
    """
    close = np.asarray(closeness, dtype=float)
    rates = np.asarray(rates, dtype=float)
    K = len(clients)
    if close.shape != (K, K) or rates.shape != (K, K):
        raise ValidationError("closeness and rate matrices must be K x K")
    if not np.allclose(close, close.T):
        raise ValidationError("closeness matrix must be symmetric")
    if np.any((close < 0) | (close > 1)):
        raise ValidationError("closeness values must lie in [0, 1]")
    node_emd = np.array([hetero.emd(p, g) for _, p in clients])
    edges = {}
    for k in range(K):
        for j in range(k + 1, K):
            v = min(rates[k, j], rates[j, k])
            if close[k, j] >= e_th and v >= v_th:
                edges[(k, j)] = Edge(closeness=float(close[k, j]), rate=float(v))
    return ConstrainedGraph(K, node_emd, edges, e_th, v_th)


def daca_cluster(graph: ConstrainedGraph) -> ClusterAssignment:
    """Greedy low-EMD head selection, then best-gap member association.

    Nodes are visited in ascending EMD (ties by id); a node that no chosen
    head covers yet becomes a head.  Every non-head then joins the adjacent
    head with the largest EMD gap, i.e. the lowest-EMD adjacent head.
    """
    K = graph.num_nodes
    order = sorted(range(K), key=lambda k: (graph.node_emd[k], k))
    heads: list[int] = []
    covered = np.zeros(K, dtype=bool)
    for k in order:
        if covered[k]:
            continue
        heads.append(k)
        covered[k] = True
        for j in graph.neighbors(k):
            covered[j] = True
    head_set = set(heads)
    members: dict[int, list[int]] = {h: [] for h in heads}
    for c in range(K):
        if c in head_set:
            continue
        best = max(
            (h for h in graph.neighbors(c) if h in head_set),
            key=lambda h: (graph.gap(h, c), -h),
        )
        members[best].append(c)
    return ClusterAssignment(heads=tuple(heads), members={h: tuple(cs) for h, cs in members.items()})


@dataclass
class ConditionReport:
    intra_ok: bool
    inter_ok: bool
    intra_violations: list[tuple[int, int]]
    inter_violations: list[tuple[int, int, int]]

    @property
    def ok(self) -> bool:
        return self.intra_ok and self.inter_ok


def verify_conditions(assignment: ClusterAssignment, graph: ConstrainedGraph) -> ConditionReport:
    """Check the intra-cluster and inter-cluster head conditions.

    intra: every head's EMD is at most each of its members' EMD.
    inter: no member has an adjacent head with a strictly larger EMD gap
    than its own head offers.  Violations come back as (head, member) and
    (member, head, better_head) tuples.
    """
    emd = graph.node_emd
    intra, inter = [], []
    head_set = set(assignment.heads)
    for h, cs in assignment.members.items():
        for c in cs:
            if emd[h] > emd[c] + 1e-12:
                intra.append((h, c))
            for other in graph.neighbors(c):
                if other in head_set and other != h and graph.gap(other, c) > graph.gap(h, c) + 1e-12:
                    inter.append((c, h, other))
    return ConditionReport(not intra, not inter, intra, inter)


def full_share_rule(counts) -> dict[int, float]:
    """Every head shares its whole dataset."""
    return {h: float(n) for h, n in enumerate(counts)}


def enumerate_assignments(graph: ConstrainedGraph):
    """All assignments in which every non-head joins an adjacent head."""
    K = graph.num_nodes
    nodes = range(K)
    for r in range(1, K + 1):
        for heads in itertools.combinations(nodes, r):
            hs = set(heads)
            others = [c for c in nodes if c not in hs]
            options = [[h for h in heads if graph.has_edge(h, c)] for c in others]
            if any(not o for o in options):
                continue
            for choice in itertools.product(*options):
                members = {h: [] for h in heads}
                for c, h in zip(others, choice):
                    members[h].append(c)
                yield ClusterAssignment(heads=heads, members={h: tuple(v) for h, v in members.items()})


def exhaustive_optimum(
    clients: Sequence[tuple[float, Sequence[float]]],
    g,
    graph: ConstrainedGraph,
    volume_rule: Callable[[np.ndarray], Mapping[int, float]] = full_share_rule,
    normalize: bool = True,
) -> tuple[ClusterAssignment, float]:
    """Brute-force minimizer of the post-sharing average EMD.

    Ties are resolved towards the first assignment enumerated (fewest heads,
    then lexicographic).
    """
    K = len(clients)
    if K > ORACLE_MAX_CLIENTS:
        raise SizeGuardError(f"exhaustive search limited to {ORACLE_MAX_CLIENTS} clients, got {K}")
    counts = np.array([float(n) for n, _ in clients])
    dists = np.vstack([hetero.as_distribution(p) for _, p in clients])
    g = hetero.as_distribution(g, "g")
    volumes = volume_rule(counts)
    best, best_val = None, np.inf
    for a in enumerate_assignments(graph):
        plan = {h: volumes[h] for h in a.sharing_heads}
        n_new, d_new = hetero.mixed_state(counts, dists, a, plan)
        per = np.abs(d_new - g).sum(axis=1)
        denom = n_new.sum() if normalize else counts.sum()
        val = float(np.dot(n_new, per) / denom)
        if val < best_val - 1e-12:
            best, best_val = a, val
    return best, best_val


def random_instance(num_clients: int, num_classes: int, rng: np.random.Generator,
                    edge_prob: float = 0.5, samples: int = 100):
    """Random oracle instance: equal-size clients, each a blend of the uniform
    label law with a one-hot on its own class, and a random sharing graph.

    Returns ``(clients, g, graph)`` where ``g`` is the pooled distribution.
    """
    if num_clients > num_classes:
        raise ValidationError("each client needs a distinct dominant class")
    classes = rng.permutation(num_classes)[:num_clients]
    lam = rng.uniform(0.0, 1.0, size=num_clients)
    uniform = np.full(num_classes, 1.0 / num_classes)
    dists = []
    for k in range(num_clients):
        p = (1 - lam[k]) * uniform
        p[classes[k]] += lam[k]
        dists.append(p)
    dists = np.array(dists)
    g = dists.mean(axis=0)
    clients = [(samples, d) for d in dists]
    pairs = [(k, j) for k in range(num_clients) for j in range(k + 1, num_clients)
             if rng.uniform() < edge_prob]
    node_emd = np.abs(dists - g).sum(axis=1)
    return clients, g, ConstrainedGraph.from_edges(node_emd, pairs)
