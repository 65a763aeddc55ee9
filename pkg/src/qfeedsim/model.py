"""Network model: random topology, object catalog, placement, churn, load.

Everything here is seeded and deterministic: the same seed always yields
the same graph, the same catalog and the same placement.  Node ids are
dense integers ``0..n-1`` so peers live in a plain list.
"""

from __future__ import annotations

import bisect
import itertools
import random
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import networkx as nx


class ConfigurationError(ValueError):
    """A scenario parameter combination that cannot be built."""


class InvariantViolation(RuntimeError):
    """A structural rule of the simulation was broken (always a bug)."""


@dataclass(slots=True)
class NodeProfile:
    """Static resources of one peer plus its availability flag."""

    upload_bandwidth: float
    download_bandwidth: float
    shared_storage_capacity: float
    available_storage: float
    degree: int
    is_up: bool = True


@dataclass(slots=True)
class ObjectRecord:
    """One shared file (or one copy of it, once placed in a store)."""

    object_id: int
    name: str
    keywords: frozenset[int]
    size: float
    inserted_at: int = 0


@dataclass
class Topology:
    """Undirected simple graph as sorted adjacency lists."""

    adjacency: dict[int, list[int]]
    node_count: int
    target_avg_degree: float

    def edge_count(self) -> int:
        return sum(len(v) for v in self.adjacency.values()) // 2

    def avg_degree(self) -> float:
        return 2.0 * self.edge_count() / self.node_count


def generate_network(node_count: int, avg_degree: float, seed: int) -> Topology:
    """Random topology with the requested average degree.

    Erdos-Renyi G(n, p) with p = avg_degree / (n - 1); nodes that come out
    isolated are attached to one random neighbour so that every node has at
    least one edge.
    """
    if node_count < 2:
        raise ConfigurationError("need at least 2 nodes")
    if avg_degree < 1:
        raise ConfigurationError("average degree must be >= 1")
    if avg_degree >= node_count - 1:
        raise ConfigurationError("average degree must be below node_count - 1")
    p = avg_degree / (node_count - 1)
    graph = nx.fast_gnp_random_graph(node_count, p, seed=seed)
    rng = random.Random(f"{seed}:topology-repair")
    for node in range(node_count):
        if graph.degree(node) == 0:
            other = rng.randrange(node_count - 1)
            if other >= node:
                other += 1
            graph.add_edge(node, other)
    adjacency = {n: sorted(graph.neighbors(n)) for n in range(node_count)}
    return Topology(adjacency=adjacency, node_count=node_count,
                    target_avg_degree=avg_degree)


class ZipfSampler:
    """Draws ranks 0..n-1 with probability proportional to 1/(rank+1)^s.

    An exponent of zero degenerates to the uniform distribution.
    """

    __slots__ = ("n", "cumulative", "total")

    def __init__(self, n: int, exponent: float):
        self.n = n
        weights = [1.0 / (k + 1) ** exponent for k in range(n)]
        self.cumulative = list(itertools.accumulate(weights))
        self.total = self.cumulative[-1]

    def draw(self, rng: random.Random) -> int:
        return bisect.bisect_left(self.cumulative, rng.random() * self.total)


def build_catalog(object_count: int, keyword_pool: int, seed: int,
                  max_keywords: int = 4, zipf_exponent: float = 1.0,
                  object_size: float = 1.0) -> list[ObjectRecord]:
    """Create the object catalog with 1..max_keywords keywords per object.

    Keywords are drawn from a skewed (Zipf-like) distribution over the
    pool, so a handful of keywords appear in many objects -- these become
    the popular content once queries use the same distribution.
    """
    if object_count < 1:
        raise ConfigurationError("need at least one object")
    if keyword_pool < object_count:
        raise ConfigurationError("keyword pool must be >= object count")
    rng = random.Random(f"{seed}:catalog")
    sampler = ZipfSampler(keyword_pool, zipf_exponent)
    catalog = []
    for oid in range(object_count):
        want = rng.randint(1, max_keywords)
        kws = frozenset(sampler.draw(rng) for _ in range(want))
        catalog.append(ObjectRecord(object_id=oid, name=f"obj-{oid}",
                                    keywords=kws, size=object_size))
    return catalog


def place_objects(catalog: Sequence[ObjectRecord], profiles: Sequence[NodeProfile],
                  copies_per_object: tuple[int, int], seed: int) -> list[dict[int, ObjectRecord]]:
    """Randomly distribute copies of every object onto nodes with room.

    Each object receives between ``copies_per_object[0]`` and
    ``copies_per_object[1]`` copies, all on distinct nodes, each of which
    must have spare shared storage.  Returns one store (object id -> copy)
    per node; profile.available_storage is debited accordingly.
    """
    lo, hi = copies_per_object
    if lo < 1 or hi < lo:
        raise ConfigurationError("copies_per_object range must satisfy 1 <= lo <= hi")
    total_size = sum(obj.size for obj in catalog) * lo
    total_capacity = sum(p.shared_storage_capacity for p in profiles)
    if total_size > total_capacity:
        raise ConfigurationError("aggregate storage too small for the catalog")
    rng = random.Random(f"{seed}:placement")
    stores: list[dict[int, ObjectRecord]] = [{} for _ in profiles]
    node_ids = list(range(len(profiles)))
    for obj in catalog:
        copies = rng.randint(lo, hi)
        rng.shuffle(node_ids)
        placed = 0
        for nid in node_ids:
            if placed >= copies:
                break
            profile = profiles[nid]
            if profile.available_storage >= obj.size and obj.object_id not in stores[nid]:
                stores[nid][obj.object_id] = replace(obj, inserted_at=0)
                profile.available_storage -= obj.size
                placed += 1
        if placed == 0:
            raise ConfigurationError(
                f"no node can host object {obj.object_id}; storage exhausted")
    return stores


def apply_churn(profiles: Sequence[NodeProfile], rng: random.Random) -> tuple[list[int], list[int]]:
    """Flip half of the down nodes up and the same number of up nodes down.

    Selection is uniform; the total node count and the up/down split are
    conserved.  Returns (woken ids, silenced ids).
    """
    down = [i for i, p in enumerate(profiles) if not p.is_up]
    up = [i for i, p in enumerate(profiles) if p.is_up]
    flips = len(down) // 2
    if flips == 0:
        return [], []
    woken = rng.sample(down, flips)
    silenced = rng.sample(up, flips)
    for nid in woken:
        profiles[nid].is_up = True
    for nid in silenced:
        profiles[nid].is_up = False
    return woken, silenced


def tick_load(node: "PeerNode", capacity_per_tick: int) -> float:
    """Load fraction of a node for the current tick; may exceed 1."""
    if capacity_per_tick <= 0:
        raise ConfigurationError("capacity_per_tick must be positive")
    return node.processed_this_tick / capacity_per_tick


class PeerNode:
    """One network participant and all of its mutable state."""

    __slots__ = (
        "node_id", "profile", "neighbors", "store", "keyword_index",
        "neighbor_table", "route_candidates", "marked_ids",
        "repl_qtable", "popularity", "popular_ready", "replication_list",
        "kw_requests", "window_total",
        "processed_this_tick", "load_tick",
    )

    def __init__(self, node_id: int, profile: NodeProfile, neighbors: list[int]):
        self.node_id = node_id
        self.profile = profile
        self.neighbors = neighbors
        self.store: dict[int, ObjectRecord] = {}
        self.keyword_index: dict[int, set[int]] = {}
        self.neighbor_table: dict[int, object] = {}
        self.route_candidates: list[int] = []
        self.marked_ids: list[int] = []
        self.repl_qtable: Optional[dict[int, float]] = None
        self.popularity: dict[int, object] = {}
        self.popular_ready: set[int] = set()
        self.replication_list: dict[str, int] = {}
        self.kw_requests: dict[int, int] = {}
        self.window_total = 0
        self.processed_this_tick = 0
        self.load_tick = -1

    def file_count(self) -> int:
        return len(self.store)

    def count_processed(self, tick: int) -> None:
        if self.load_tick != tick:
            self.load_tick = tick
            self.processed_this_tick = 0
        self.processed_this_tick += 1

    def load_fraction(self, tick: int, capacity: int) -> float:
        if self.load_tick != tick:
            return 0.0
        return self.processed_this_tick / capacity

    def add_object(self, obj: ObjectRecord, inserted_at: int) -> None:
        """Insert a copy into the shared store; never overwrites."""
        oid = obj.object_id
        if oid in self.store:
            raise InvariantViolation(
                f"node {self.node_id} already holds object {oid}")
        if self.profile.available_storage < obj.size:
            raise InvariantViolation(
                f"node {self.node_id} out of storage for object {oid}")
        copy = replace(obj, inserted_at=inserted_at)
        self.store[oid] = copy
        self.profile.available_storage -= copy.size
        for kw in copy.keywords:
            self.keyword_index.setdefault(kw, set()).add(oid)

    def remove_object(self, object_id: int) -> ObjectRecord:
        copy = self.store.pop(object_id)
        self.profile.available_storage += copy.size
        for kw in copy.keywords:
            bucket = self.keyword_index.get(kw)
            if bucket is not None:
                bucket.discard(object_id)
                if not bucket:
                    del self.keyword_index[kw]
        return copy

    def matches(self, keywords: Iterable[int]) -> set[int]:
        """Object ids in the store sharing at least one query keyword."""
        found: set[int] = set()
        index = self.keyword_index
        for kw in keywords:
            bucket = index.get(kw)
            if bucket:
                found |= bucket
        return found


class Network:
    """All peers plus the immutable catalog and topology."""

    def __init__(self, topology: Topology, catalog: Sequence[ObjectRecord],
                 nodes: list[PeerNode]):
        self.topology = topology
        self.catalog = list(catalog)
        self.nodes = nodes
        # creation counters by provenance, cumulative over the network's life
        self.files_from_replication = 0
        self.files_from_download = 0
        # optional per-transfer audit hook: fn(kind, source, target, object_id)
        self.transfer_audit = None

    def up_ids(self) -> list[int]:
        return [n.node_id for n in self.nodes if n.profile.is_up]

    def store_copy(self, kind: str, target: PeerNode, obj: ObjectRecord,
                   tick: int) -> None:
        """Single choke point for every copy creation; enforces invariants."""
        if kind == "replication" and not target.profile.is_up:
            raise InvariantViolation(
                f"replication transfer to down node {target.node_id}")
        if self.transfer_audit is not None:
            self.transfer_audit(kind, target.node_id, obj.object_id)
        target.add_object(obj, tick)
        if kind == "replication":
            self.files_from_replication += 1
        elif kind == "download":
            self.files_from_download += 1

    def check_storage_accounting(self) -> None:
        """Verify available = capacity - sum(sizes) for every node."""
        for node in self.nodes:
            used = sum(o.size for o in node.store.values())
            expect = node.profile.shared_storage_capacity - used
            if abs(node.profile.available_storage - expect) > 1e-9 or expect < -1e-9:
                raise InvariantViolation(
                    f"storage accounting off at node {node.node_id}")
