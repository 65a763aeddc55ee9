"""Per-neighbour Q-table and the four-state free-rider control policy.

Every peer keeps one NeighborRecord per neighbour: a Q-value, a service
status (normal / suspended / dormant / marked-dormant) and the per-period
traffic statistics the reward formula consumes.  Q-values move toward the
observed reward by exponential blending (``q += alpha * (reward - q)``);
status follows the Q-value through two fixed thresholds, with a separate
two-stage recovery path for dormant neighbours (polling, then probe
queries).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Iterable, Optional

__all__ = [
    "NeighborStatus",
    "PeriodStats",
    "SuspendedContext",
    "DormantContext",
    "NeighborRecord",
    "QFeedConfig",
    "ServiceAction",
    "init_q_value",
    "compute_reward_normal",
    "compute_reward_suspended",
    "update_q",
    "classify_status",
    "reduce_ttl",
    "availability_gate",
    "poll_dormant",
    "sample_marked_query",
    "record_probe_result",
    "end_of_period",
    "service_policy",
]


class NeighborStatus(IntEnum):
    NORMAL = 0
    SUSPENDED = 1
    DORMANT = 2
    # Dormant node that passed a poll; still served as dormant except for
    # stride-sampled probe queries.
    MARKED_DORMANT = 3


class ServiceAction(IntEnum):
    """What a peer does with a query based on the originator's status."""

    FORWARD = 0        # normal service: check store, forward on miss
    LIMITED = 1        # suspended origin: check store, slash TTL, forward to one
    LOCAL_ONLY = 2     # dormant origin: check store, never forward
    DROP = 3           # dormant origin under load: drop unprocessed


@dataclass(slots=True)
class PeriodStats:
    """Traffic counters collected per neighbour over one period.

    pn/pnhit    queries this peer originated through the neighbour, and how
                many of them produced a hit.
    on/onhit    queries of third parties this peer forwarded to the
                neighbour, and hits for those.
    nr/na       objects this peer replicated to the neighbour this period,
                and how many of them the neighbour still holds.
    ngq/nghit   queries the neighbour originated toward this peer, and hits
                for those (at this peer or downstream).
    nf          neighbour's file count, sampled at the period boundary.
    results_total   summed result counts of the reporting (hit) queries,
                feeding avg_results.
    """

    pn: int = 0
    on: int = 0
    pnhit: int = 0
    onhit: int = 0
    nr: int = 0
    na: int = 0
    ngq: int = 0
    nghit: int = 0
    nf: int = 0
    results_total: int = 0
    replicated_ids: list = field(default_factory=list)

    @property
    def avg_results(self) -> float:
        """Mean result count over the queries that reported a hit."""
        return self.results_total / self.pnhit if self.pnhit else 0.0

    def reset(self) -> None:
        self.pn = self.on = self.pnhit = self.onhit = 0
        self.nr = self.na = self.ngq = self.nghit = 0
        self.nf = 0
        self.results_total = 0
        self.replicated_ids.clear()


@dataclass(slots=True)
class SuspendedContext:
    """Bookkeeping opened when a neighbour enters the suspended state."""

    f_free: int                      # file count at suspension time; fixed
    queries_since_suspension: int = 0


@dataclass(slots=True)
class DormantContext:
    """Bookkeeping opened when a neighbour enters the dormant state."""

    f_d: int                         # file count at demotion time; fixed
    sampled_queries: int = 0
    sampled_hits: int = 0
    route_counter: int = 0           # queries seen since marking, for the stride


@dataclass(slots=True)
class NeighborRecord:
    """One Q-table row."""

    neighbor_id: int
    q_value: float
    status: NeighborStatus = NeighborStatus.NORMAL
    stats: PeriodStats = field(default_factory=PeriodStats)
    suspended_ctx: Optional[SuspendedContext] = None
    dormant_ctx: Optional[DormantContext] = None


@dataclass
class QFeedConfig:
    """Weights and thresholds of the free-rider control policy."""

    alpha: float = 0.2          # learning rate of the Q update
    u1: float = 0.4             # initial-value weight on bandwidth ratio
    u2: float = 0.6             # initial-value weight on file count (u2 > u1)
    w1: float = 0.4             # reward weight: own-query hits x avg results
    w2: float = 0.2             # reward weight: forwarded-query hits
    w3: float = 0.2             # reward weight: replica retention
    w4: float = 0.2             # reward weight: neighbour-origin hit rate
    w_susp: float = 0.8         # suspended-reward weight on file growth
    l_th: float = 100.0         # normal/suspended threshold
    u_th: float = 60.0          # suspended/dormant threshold
    h_th: float = 0.1           # probe hit-ratio needed for promotion
    n1_limit: int = 20          # suspended queries needed before a delta reward
    poll_interval: int = 100    # ticks between dormant polls
    sample_stride: int = 20     # every Nth query probes a marked-dormant node

    def validate(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if abs(self.u1 + self.u2 - 1.0) > 1e-9 or self.u2 <= self.u1:
            raise ValueError("u1 + u2 must be 1 with u2 > u1")
        weights = (self.w1, self.w2, self.w3, self.w4)
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ValueError("w1..w4 must sum to 1")
        if not all(0.0 < w < 1.0 for w in weights) or any(w > self.w1 for w in weights[1:]):
            raise ValueError("w1 must be the greatest weight, all in (0, 1)")
        if not 0.0 < self.w_susp < 1.0:
            raise ValueError("w_susp must be in (0, 1)")
        if not 0.0 <= self.u_th < self.l_th:
            raise ValueError("need 0 <= u_th < l_th")
        if self.sample_stride < 1 or self.poll_interval < 1:
            raise ValueError("stride and poll interval must be >= 1")
        if self.n1_limit < 0:
            raise ValueError("n1_limit must be >= 0")


def init_q_value(profile, f_current: int, cfg: QFeedConfig) -> float:
    """Initial Q-value for a new neighbour, floored at the normal threshold.

    Scores the neighbour by its upload/download bandwidth ratio and the
    number of files it currently shares; anything below 100 is lifted to
    100 so every neighbour starts in the normal state.
    """
    if profile.download_bandwidth <= 0:
        raise ValueError("download bandwidth must be positive")
    ratio = profile.upload_bandwidth / profile.download_bandwidth
    raw = (cfg.u1 * ratio + cfg.u2 * f_current) * 100.0
    return max(100.0, raw)


def compute_reward_normal(stats: PeriodStats, cfg: QFeedConfig) -> float:
    """Period reward for a normal neighbour.

    Four weighted terms scaled by 100: own-query hit rate times average
    result count, forwarded-query hit rate, replica retention, and the
    neighbour's own-query hit rate.  A term with a zero denominator
    contributes 0; full retention (nr == na > 0) contributes na itself
    rather than dividing by zero.
    """
    term1 = (stats.pnhit / stats.pn) * stats.avg_results if stats.pn else 0.0
    term2 = (stats.onhit / stats.on) if stats.on else 0.0
    if stats.nr == 0:
        term3 = 0.0
    elif stats.nr == stats.na:
        term3 = float(stats.na)
    else:
        term3 = stats.na / (stats.nr - stats.na)
    term4 = (stats.nghit / stats.ngq) if stats.ngq else 0.0
    return (cfg.w1 * term1 + cfg.w2 * term2 + cfg.w3 * term3 + cfg.w4 * term4) * 100.0


def compute_reward_suspended(f_after: int, f_free: int, cfg: QFeedConfig) -> float:
    """File-growth reward for a suspended neighbour, clamped at zero."""
    return max(0.0, cfg.w_susp * (f_after - f_free) * 100.0)


def update_q(q: float, reward: float, alpha: float) -> float:
    """Blend the Q-value toward the reward: q + alpha * (reward - q)."""
    return q + alpha * (reward - q)


def classify_status(q: float, cfg: QFeedConfig) -> NeighborStatus:
    """Map a Q-value onto the three base states."""
    if q >= cfg.l_th:
        return NeighborStatus.NORMAL
    if q >= cfg.u_th:
        return NeighborStatus.SUSPENDED
    return NeighborStatus.DORMANT


def reduce_ttl(ttl: int) -> int:
    """Slash a TTL to round(ln(ttl)); strictly smaller for every ttl >= 1."""
    if ttl <= 0:
        return 0
    return round(math.log(ttl))


def availability_gate(f_d: int, f_a: int) -> bool:
    """Has a marked-dormant node grown its shared folder enough for probing?

    Passes when the growth since demotion reaches ln of the current file
    count.  A node with an empty folder never passes.
    """
    if f_a < 1:
        return False
    return (f_a - f_d) >= math.log(f_a)


def poll_dormant(table: dict[int, NeighborRecord], dormant_id: int,
                 cfg: QFeedConfig,
                 q_of_dormant_at: Callable[[int], Optional[float]]) -> Optional[float]:
    """Poll well-performing neighbours for their opinion of a dormant one.

    The peer averages the Q-values of its normal neighbours (AvgQ), asks
    every normal neighbour at or above that average for its own Q-value of
    ``dormant_id`` (``q_of_dormant_at`` returns None when the polled node is
    down or does not know the id), and averages the answers into AvgD.
    When AvgD reaches the normal threshold the dormant record is marked
    and adopts AvgD as its Q-value; otherwise nothing changes.  Returns
    AvgD, or None when nobody answered.
    """
    rec = table[dormant_id]
    if rec.status is not NeighborStatus.DORMANT:
        raise ValueError("poll target must be in the dormant state")
    normals = [(nid, r.q_value) for nid, r in sorted(table.items())
               if r.status is NeighborStatus.NORMAL]
    if not normals:
        return None
    avg_q = sum(q for _, q in normals) / len(normals)
    responses = []
    for nid, q in normals:
        if q < avg_q:
            continue
        answer = q_of_dormant_at(nid)
        if answer is not None:
            responses.append(answer)
    if not responses:
        return None
    avg_d = sum(responses) / len(responses)
    if avg_d >= cfg.l_th:
        rec.q_value = avg_d
        rec.status = NeighborStatus.MARKED_DORMANT
        if rec.dormant_ctx is not None:
            rec.dormant_ctx.sampled_queries = 0
            rec.dormant_ctx.sampled_hits = 0
            rec.dormant_ctx.route_counter = 0
    return avg_d


def sample_marked_query(record: NeighborRecord, cfg: QFeedConfig) -> bool:
    """Stride decision for a marked-dormant neighbour.

    Counts one query routed by the peer and returns True on every
    ``sample_stride``-th one (20th, 40th, ...), i.e. when this query should
    be routed through the marked node as a probe.
    """
    ctx = record.dormant_ctx
    if ctx is None:
        return False
    ctx.route_counter += 1
    return ctx.route_counter % cfg.sample_stride == 0


def record_probe_result(record: NeighborRecord, hit: bool, cfg: QFeedConfig) -> bool:
    """Record one probe outcome against a marked-dormant neighbour.

    Returns True once the probe hit ratio reaches ``h_th``, i.e. the node
    earned promotion; the caller then applies ``promote_marked`` with the
    neighbour's current file count.
    """
    ctx = record.dormant_ctx
    if ctx is None:
        raise ValueError("record is not in a probing state")
    ctx.sampled_queries += 1
    if hit:
        ctx.sampled_hits += 1
    if ctx.sampled_queries > 0 and ctx.sampled_hits / ctx.sampled_queries >= cfg.h_th:
        return True
    return False


def promote_marked(record: NeighborRecord, f_free: int) -> None:
    """Move a marked-dormant record to suspended after a passed probe test."""
    record.status = NeighborStatus.SUSPENDED
    record.dormant_ctx = None
    record.suspended_ctx = SuspendedContext(f_free=f_free)


def service_policy(origin_status: NeighborStatus, load_fraction: float,
                   cfg: QFeedConfig, load_threshold: float = 0.9) -> ServiceAction:
    """Service decision for a query, by the status of its originator.

    Normal origins get full service.  Suspended origins get a local check
    and a TTL-slashed forward to a single neighbour.  Dormant (and
    marked-dormant) origins get a local check only -- or, when the peer is
    at or above its load threshold, an unprocessed drop.
    """
    if origin_status is NeighborStatus.NORMAL:
        return ServiceAction.FORWARD
    if origin_status is NeighborStatus.SUSPENDED:
        return ServiceAction.LIMITED
    if load_fraction >= load_threshold:
        return ServiceAction.DROP
    return ServiceAction.LOCAL_ONLY


def end_of_period(table: dict[int, NeighborRecord], cfg: QFeedConfig,
                  live_file_count: Callable[[int], int]) -> list[tuple[int, NeighborStatus, NeighborStatus]]:
    """Apply the period update to a peer's whole Q-table.

    Normal neighbours earn the four-term reward and are reclassified.
    Suspended neighbours whose query count passed ``n1_limit`` earn the
    file-growth reward and are reclassified.  Dormant and marked-dormant
    neighbours are never updated from discovery feedback.  All period
    statistics reset afterwards.  Returns the list of status transitions
    as ``(neighbor_id, old, new)``.
    """
    transitions = []
    for nid in sorted(table):
        rec = table[nid]
        old = rec.status
        if old is NeighborStatus.NORMAL:
            rec.stats.nf = live_file_count(nid)
            reward = compute_reward_normal(rec.stats, cfg)
            rec.q_value = update_q(rec.q_value, reward, cfg.alpha)
            new = classify_status(rec.q_value, cfg)
            if new is not old:
                _enter_state(rec, new, live_file_count(nid))
                transitions.append((nid, old, new))
        elif old is NeighborStatus.SUSPENDED:
            ctx = rec.suspended_ctx
            if ctx is not None and ctx.queries_since_suspension > cfg.n1_limit:
                f_after = live_file_count(nid)
                delta = compute_reward_suspended(f_after, ctx.f_free, cfg)
                rec.q_value = update_q(rec.q_value, delta, cfg.alpha)
                ctx.queries_since_suspension = 0
                new = classify_status(rec.q_value, cfg)
                if new is not old:
                    _enter_state(rec, new, f_after)
                    transitions.append((nid, old, new))
        rec.stats.reset()
    return transitions


def _enter_state(rec: NeighborRecord, new: NeighborStatus, file_count: int) -> None:
    rec.status = new
    if new is NeighborStatus.NORMAL:
        rec.suspended_ctx = None
        rec.dormant_ctx = None
    elif new is NeighborStatus.SUSPENDED:
        rec.suspended_ctx = SuspendedContext(f_free=file_count)
        rec.dormant_ctx = None
    elif new is NeighborStatus.DORMANT:
        rec.suspended_ctx = None
        rec.dormant_ctx = DormantContext(f_d=file_count)


def fill_na_counts(table: dict[int, NeighborRecord],
                   holds_object: Callable[[int, int], bool]) -> None:
    """Refresh the replica-retention counters before a period update.

    ``holds_object(neighbor_id, object_id)`` answers whether the neighbour
    still shares an object this peer replicated to it during the period.
    """
    for nid, rec in table.items():
        if rec.stats.nr:
            rec.stats.na = sum(1 for oid in rec.stats.replicated_ids
                               if holds_object(nid, oid))
