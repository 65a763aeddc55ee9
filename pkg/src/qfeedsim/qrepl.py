"""Autonomous replication driven by object popularity and per-node Q-values.

A node tracks how often each object in its store is requested, promotes
objects past a popularity threshold, and copies them to the best-scoring
nodes of its replication Q-table.  The Q-table is built once by a small
hello walk and is updated after every replication round from the
reinforcement signal (degree, bandwidth, free storage) each recipient
returns.  Nodes found down are punished; nodes already holding the copy
keep their score.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from .model import Network, ObjectRecord, PeerNode

__all__ = [
    "PopularityEntry",
    "QReplConfig",
    "ReplicationOutcome",
    "ReplicationReport",
    "OversizedObjectError",
    "update_popularity",
    "select_replication_candidates",
    "build_repl_qtable",
    "select_target_nodes",
    "compute_repl_reward",
    "update_repl_q",
    "replicate_object",
    "evict_for_space",
    "path_replicate",
]


class OversizedObjectError(RuntimeError):
    """The object cannot fit a node's storage even after full eviction."""


@dataclass(slots=True)
class PopularityEntry:
    """Popularity state of one object at one node."""

    object_id: int
    popularity: float = 0.0
    replicated: bool = False


class ReplicationOutcome(Enum):
    REPLICATED = "replicated"
    HAS_COPY = "has_copy"
    DOWN = "down"


@dataclass
class QReplConfig:
    """Knobs of the replication scheme."""

    eta: float = 0.5                 # popularity learning constant
    p_th: float = 30.0               # popularity needed to replicate
    popularity_update_every: int = 50  # requests per popularity window
    replication_check_period: int = 0  # ticks; 0 means every period boundary
    hello_ttl: int = 3
    hello_walkers: int = 2
    d_min: int = 3                   # system minimum degree
    b_min: float = 64.0              # system minimum bandwidth
    s_min: float = 40.0              # system minimum storage
    wr1: float = 0.4                 # reward weight, degree
    wr2: float = 0.2                 # reward weight, bandwidth (smallest)
    wr3: float = 0.4                 # reward weight, storage
    alpha: float = 0.2
    reservation_timeout_periods: int = 1

    def validate(self) -> None:
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must be in (0, 1)")
        if abs(self.wr1 + self.wr2 + self.wr3 - 1.0) > 1e-9:
            raise ValueError("reward weights must sum to 1")
        if self.wr2 >= self.wr1 or self.wr2 >= self.wr3:
            raise ValueError("bandwidth weight wr2 must be the smallest")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if min(self.d_min, self.b_min, self.s_min) <= 0:
            raise ValueError("system minimums must be positive")
        if self.hello_ttl < 1 or self.hello_walkers < 1:
            raise ValueError("hello walk needs ttl >= 1 and walkers >= 1")
        if self.popularity_update_every < 1:
            raise ValueError("popularity window must be >= 1")


def update_popularity(entry: PopularityEntry, r_q: int, n_q: int,
                      cfg: QReplConfig) -> float:
    """Fold one request window into an object's popularity.

    Adds eta * (r_q / n_q) * 100; a window with no requests for the object
    (or no requests at all) leaves the value untouched.  Popularity never
    decreases.
    """
    if r_q > 0 and n_q > 0:
        entry.popularity += cfg.eta * (r_q / n_q) * 100.0
    return entry.popularity


def select_replication_candidates(popularity: dict[int, PopularityEntry],
                                  cfg: QReplConfig) -> list[int]:
    """Object ids whose popularity reached the threshold, hottest first."""
    ready = [e for e in popularity.values() if e.popularity >= cfg.p_th]
    ready.sort(key=lambda e: (-e.popularity, e.object_id))
    return [e.object_id for e in ready]


def build_repl_qtable(net: Network, node_id: int, cfg: QReplConfig,
                      rng: random.Random) -> dict[int, float]:
    """Discover replication candidates with a hello walk and score them.

    All up direct neighbours join the table; additionally
    ``hello_walkers`` walkers continue from randomly chosen neighbours,
    each hop forwarding to exactly one not-yet-visited up neighbour, for
    ``hello_ttl`` hops total.  Every reached node responds with its
    bandwidth and free storage, scored as
    ``(b_w / b_min + s_avbl / s_min) * 100``.
    """
    source = net.nodes[node_id]
    if not source.profile.is_up:
        return {}
    visited = {node_id}
    members: list[int] = []
    first_hop = [nid for nid in source.neighbors if net.nodes[nid].profile.is_up]
    for nid in first_hop:
        visited.add(nid)
        members.append(nid)
    walkers = first_hop if len(first_hop) <= cfg.hello_walkers else \
        rng.sample(first_hop, cfg.hello_walkers)
    for start in walkers:
        at = start
        for _ in range(cfg.hello_ttl - 1):
            nxt = [nid for nid in net.nodes[at].neighbors
                   if nid not in visited and net.nodes[nid].profile.is_up]
            if not nxt:
                break
            at = nxt[int(rng.random() * len(nxt))]
            visited.add(at)
            members.append(at)
    table = {}
    for nid in members:
        p = net.nodes[nid].profile
        table[nid] = (p.upload_bandwidth / cfg.b_min +
                      p.available_storage / cfg.s_min) * 100.0
    return table


def compute_repl_reward(d_d: float, b_w: float, s_avbl: float,
                        cfg: QReplConfig) -> float:
    """Reward from a recipient's reinforcement signal.

    Each attribute is normalised by its system minimum and divided by its
    weight, so the smallest weight (bandwidth) dominates the reward.
    """
    return (d_d / (cfg.d_min * cfg.wr1) +
            b_w / (cfg.b_min * cfg.wr2) +
            s_avbl / (cfg.s_min * cfg.wr3)) * 100.0


def update_repl_q(q: float, outcome: ReplicationOutcome, alpha: float,
                  reward: float = 0.0) -> float:
    """New Q-value for a replication candidate after one round."""
    if outcome is ReplicationOutcome.REPLICATED:
        return q + alpha * (reward - q)
    if outcome is ReplicationOutcome.DOWN:
        return q * (1.0 - alpha)
    return q


def select_target_nodes(qtable: dict[int, float], obj: ObjectRecord,
                        net: Network, tick: int = 0) -> list[int]:
    """Pick replication targets at or above the table's mean Q-value.

    Skips nodes that are down, already hold the object, or have its name
    reserved; the object's name is reserved on every selected node.
    """
    if not qtable:
        return []
    avg_q = sum(qtable.values()) / len(qtable)
    targets = []
    for nid in sorted(qtable):
        if qtable[nid] < avg_q:
            continue
        node = net.nodes[nid]
        if not node.profile.is_up:
            continue
        if obj.object_id in node.store:
            continue
        if obj.name in node.replication_list:
            continue
        node.replication_list[obj.name] = tick
        targets.append(nid)
    return targets


@dataclass
class ReplicationReport:
    """Everything one replication round did, for tests and metrics."""

    object_id: int
    avg_q: float
    targets: list[int] = field(default_factory=list)
    recipients: list[int] = field(default_factory=list)
    rewards: dict[int, float] = field(default_factory=dict)
    penalized_down: list[int] = field(default_factory=list)
    skipped_full: list[int] = field(default_factory=list)


def replicate_object(net: Network, source_id: int, object_id: int,
                     cfg: QReplConfig, tick: int = 0) -> ReplicationReport:
    """Run one full replication round for one object.

    Selects targets above the mean Q-value, reserves the object name on
    each, transfers copies (evicting low-popularity objects at the target
    when storage is tight), then updates the whole Q-table: recipients
    blend toward their reinforcement reward, down candidates decay by
    (1 - alpha), everyone else keeps their value.
    """
    source = net.nodes[source_id]
    obj = source.store.get(object_id)
    if obj is None:
        raise ValueError(f"source {source_id} does not hold object {object_id}")
    qtable = source.repl_qtable
    if not qtable:
        return ReplicationReport(object_id=object_id, avg_q=0.0)
    avg_q = sum(qtable.values()) / len(qtable)
    report = ReplicationReport(object_id=object_id, avg_q=avg_q)
    report.targets = select_target_nodes(qtable, obj, net, tick)
    down = [nid for nid in sorted(qtable)
            if qtable[nid] >= avg_q and not net.nodes[nid].profile.is_up]

    for nid in report.targets:
        node = net.nodes[nid]
        if node.profile.available_storage < obj.size:
            try:
                evict_for_space(node, obj.size)
            except OversizedObjectError:
                del node.replication_list[obj.name]
                report.skipped_full.append(nid)
                continue
        net.store_copy("replication", node, obj, tick)
        del node.replication_list[obj.name]
        # reinforcement signal: free storage after storing, bandwidth, degree
        p = node.profile
        reward = compute_repl_reward(p.degree, p.upload_bandwidth,
                                     p.available_storage, cfg)
        qtable[nid] = update_repl_q(qtable[nid], ReplicationOutcome.REPLICATED,
                                    cfg.alpha, reward)
        report.rewards[nid] = reward
        report.recipients.append(nid)
        _note_replication_to_neighbor(source, nid, object_id)

    for nid in down:
        qtable[nid] = update_repl_q(qtable[nid], ReplicationOutcome.DOWN, cfg.alpha)
        report.penalized_down.append(nid)

    entry = source.popularity.get(object_id)
    if entry is not None and report.recipients:
        entry.replicated = True
    return report


def _note_replication_to_neighbor(source: PeerNode, target_id: int,
                                  object_id: int) -> None:
    # replica-retention stats exist only for direct neighbours
    rec = source.neighbor_table.get(target_id)
    if rec is not None:
        rec.stats.nr += 1
        rec.stats.replicated_ids.append(object_id)


def evict_for_space(node: PeerNode, needed_size: float) -> list[int]:
    """Evict objects until ``needed_size`` fits; returns the evicted ids.

    Victims are taken lowest popularity first, ties broken by the oldest
    insertion time.  Raises OversizedObjectError when even an empty store
    could not hold the object.
    """
    if needed_size > node.profile.shared_storage_capacity:
        raise OversizedObjectError(
            f"object of size {needed_size} exceeds node {node.node_id} capacity")
    evicted = []
    while node.profile.available_storage < needed_size:
        victim = min(
            node.store.values(),
            key=lambda o: (
                node.popularity[o.object_id].popularity
                if o.object_id in node.popularity else 0.0,
                o.inserted_at,
                o.object_id,
            ),
        )
        node.remove_object(victim.object_id)
        evicted.append(victim.object_id)
    return evicted


def path_replicate(net: Network, path: Sequence[int], object_id: int,
                   tick: int = 0) -> list[int]:
    """Baseline scheme: copy the found object along a successful walk.

    Every interior node of ``path`` (between requester and provider) that
    lacks the object receives a copy, storage permitting.
    """
    if len(path) < 3:
        return []
    provider = net.nodes[path[-1]]
    obj = provider.store.get(object_id)
    if obj is None:
        return []
    recipients = []
    for nid in path[1:-1]:
        node = net.nodes[nid]
        if object_id in node.store or not node.profile.is_up:
            continue
        if node.profile.available_storage < obj.size:
            try:
                evict_for_space(node, obj.size)
            except OversizedObjectError:
                continue
        net.store_copy("replication", node, obj, tick)
        recipients.append(nid)
    return recipients


def expire_reservations(net: Network, now: int, max_age: int) -> None:
    """Drop reservations older than ``max_age`` ticks (aborted transfers)."""
    for node in net.nodes:
        if node.replication_list:
            stale = [name for name, t in node.replication_list.items()
                     if now - t > max_age]
            for name in stale:
                del node.replication_list[name]
