"""Synthetic workload generators.

Two request-stream families:

* grouped leader/follower streams: each group has a Poisson leader whose
  object draws follow a Zipf popularity law, and followers that re-request
  the leader's object after a delay (deterministic, uniform, or an arbitrary
  joint sampler).
* a toroidal "moving viewer" environment: clients move on a 3-D torus and
  request every object inside a visibility radius each time slot; followers
  replay the leader's path a fixed number of slots behind.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .trace import NO_VERSION, ObjectCatalog, Trace

# ---------------------------------------------------------------------------
# Follower delay specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StructuredDelays:
    """Evenly spaced deterministic delays: follower i lags the leader by i*step."""

    step: float

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"step must be > 0, got {self.step}")

    def values(self, followers: int) -> np.ndarray:
        return self.step * np.arange(1, followers + 1, dtype=np.float64)


@dataclass(frozen=True)
class FixedDelays:
    """Explicit deterministic delay per follower."""

    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))


@dataclass(frozen=True)
class UniformDelays:
    """Independent uniform delay per follower; lower bounds may be negative."""

    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        norm = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        for lo, hi in norm:
            if not lo < hi:
                raise ValueError(f"uniform delay bounds need lo < hi, got [{lo}, {hi}]")
        object.__setattr__(self, "bounds", norm)

    @classmethod
    def iid(cls, lo: float, hi: float, followers: int) -> "UniformDelays":
        return cls(tuple((lo, hi) for _ in range(followers)))


@dataclass(frozen=True)
class JointDelays:
    """Arbitrary joint delay distribution given by a sampler.

    sampler(rng, n) must return an (n, count) float array; one row is the
    delay vector of all followers for one leader arrival.
    """

    sampler: Callable[[np.random.Generator, int], np.ndarray]
    count: int


DelaySpec = StructuredDelays | FixedDelays | UniformDelays | JointDelays


def delay_count(spec: DelaySpec | None) -> int | None:
    """Follower count implied by the delay spec, or None when any count fits."""
    if spec is None or isinstance(spec, StructuredDelays):
        return None
    if isinstance(spec, FixedDelays):
        return len(spec.values)
    if isinstance(spec, UniformDelays):
        return len(spec.bounds)
    return spec.count


def sample_delays(
    spec: DelaySpec | None, followers: int, rng: np.random.Generator, n: int
) -> np.ndarray:
    """Draw n delay vectors of shape (n, followers)."""
    if followers == 0:
        return np.empty((n, 0), dtype=np.float64)
    if spec is None:
        raise ValueError("followers > 0 requires a delay spec")
    if isinstance(spec, StructuredDelays):
        return np.broadcast_to(spec.values(followers), (n, followers)).copy()
    if isinstance(spec, FixedDelays):
        vals = np.asarray(spec.values, dtype=np.float64)
        return np.broadcast_to(vals, (n, followers)).copy()
    if isinstance(spec, UniformDelays):
        lo = np.array([b[0] for b in spec.bounds])
        hi = np.array([b[1] for b in spec.bounds])
        return rng.uniform(lo, hi, size=(n, followers))
    out = np.asarray(spec.sampler(rng, n), dtype=np.float64)
    if out.shape != (n, followers):
        raise ValueError(f"joint sampler returned shape {out.shape}, expected {(n, followers)}")
    return out


# ---------------------------------------------------------------------------
# Popularity
# ---------------------------------------------------------------------------


def zipf_pmf(num_objects: int, exponent: float) -> np.ndarray:
    """Zipf popularity over ranks 1..num_objects: p(r) proportional to r^-exponent."""
    if num_objects < 1:
        raise ValueError("num_objects must be >= 1")
    if exponent < 0:
        raise ValueError("exponent must be >= 0")
    weights = np.arange(1, num_objects + 1, dtype=np.float64) ** (-float(exponent))
    return weights / weights.sum()


# ---------------------------------------------------------------------------
# Grouped leader/follower generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupSpec:
    """One leader/follower group over a contiguous object range."""

    first_object: int
    num_objects: int
    leader_rate: float
    zipf_exponent: float
    followers: int
    delays: DelaySpec | None = None

    def __post_init__(self):
        if self.num_objects < 1:
            raise ValueError("num_objects must be >= 1")
        if not self.leader_rate > 0:
            raise ValueError("leader_rate must be > 0")
        if self.followers < 0:
            raise ValueError("followers must be >= 0")
        if self.followers > 0 and self.delays is None:
            raise ValueError("followers > 0 requires a delay spec")
        implied = delay_count(self.delays)
        if implied is not None and implied != self.followers:
            raise ValueError(
                f"delay spec is for {implied} followers but group has {self.followers}"
            )

    def object_ids(self) -> np.ndarray:
        return np.arange(self.first_object, self.first_object + self.num_objects)

    def pmf(self) -> np.ndarray:
        return zipf_pmf(self.num_objects, self.zipf_exponent)

    def rates(self) -> np.ndarray:
        """Per-object leader request rate."""
        return self.leader_rate * self.pmf()


def group_clients(groups: Sequence[GroupSpec]) -> list[tuple[int, list[int]]]:
    """Sequential client numbering: [(leader_id, [follower ids...]), ...]."""
    out = []
    nxt = 1
    for g in groups:
        leader = nxt
        followers = list(range(nxt + 1, nxt + 1 + g.followers))
        out.append((leader, followers))
        nxt += 1 + g.followers
    return out


def _size_lookup(object_sizes) -> Callable[[int], float]:
    if object_sizes is None:
        return lambda oid: 1.0
    if isinstance(object_sizes, (int, float)):
        s = float(object_sizes)
        return lambda oid: s
    if isinstance(object_sizes, Mapping):
        return lambda oid: float(object_sizes[oid])
    return lambda oid: float(object_sizes(oid))


def even_odd_sizes(even: float = 2.0, odd: float = 5.0) -> Callable[[int], float]:
    """Size rule used by several presets: even ids one size, odd ids another."""
    return lambda oid: even if oid % 2 == 0 else odd


def gen_grouped_trace(
    groups: Sequence[GroupSpec],
    horizon: float,
    seed: int,
    object_sizes=None,
    meta: dict[str, str] | None = None,
) -> Trace:
    """Generate a grouped leader/follower trace on [0, horizon].

    Leader arrivals are Poisson over [0, horizon]; each arrival draws an
    object from the group's Zipf popularity; follower i re-requests the same
    object after its (possibly random, possibly negative) delay.  Follower
    events that land before time 0 are dropped, events past the horizon are
    kept.  Deterministic for a fixed (groups, horizon, seed).
    """
    if not groups:
        raise ValueError("need at least one group")
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    rng = np.random.default_rng(seed)
    size_of = _size_lookup(object_sizes)
    clients = group_clients(groups)

    times_parts: list[np.ndarray] = []
    client_parts: list[np.ndarray] = []
    object_parts: list[np.ndarray] = []
    catalog = ObjectCatalog()

    for g, (leader, followers) in zip(groups, clients):
        for oid in g.object_ids().tolist():
            catalog.add(oid, size_of(oid))
        n = rng.poisson(g.leader_rate * horizon)
        arrivals = np.sort(rng.uniform(0.0, horizon, n))
        objs = g.first_object + rng.choice(g.num_objects, size=n, p=g.pmf())
        times_parts.append(arrivals)
        client_parts.append(np.full(n, leader, dtype=np.int64))
        object_parts.append(objs)
        if g.followers:
            delays = sample_delays(g.delays, g.followers, rng, n)
            for i, fc in enumerate(followers):
                t = arrivals + delays[:, i]
                keep = t >= 0.0
                times_parts.append(t[keep])
                client_parts.append(np.full(int(keep.sum()), fc, dtype=np.int64))
                object_parts.append(objs[keep])

    times = np.concatenate(times_parts)
    cl = np.concatenate(client_parts)
    ob = np.concatenate(object_parts)
    base_meta = {"generator": "grouped", "seed": str(seed), "horizon": repr(float(horizon))}
    if meta:
        base_meta.update(meta)
    trace = Trace(times, cl, ob, None, catalog, base_meta)
    trace.sort_events()
    return trace


# ---------------------------------------------------------------------------
# Toroid environment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToroidGroup:
    """Follower slot delays for one leader (each >= 1)."""

    follower_delays: tuple[int, ...]

    def __post_init__(self):
        delays = tuple(int(d) for d in self.follower_delays)
        if any(d < 1 for d in delays):
            raise ValueError("follower delays must be >= 1 slot")
        object.__setattr__(self, "follower_delays", delays)


@dataclass(frozen=True)
class ToroidSpec:
    """Moving-viewer workload on a 3-D torus.

    Each leader moves at `speed` per slot and redraws an isotropic direction
    every `direction_period` slots.  Follower i sits where its leader was
    `delay` slots ago (no requests before that many slots have elapsed).
    Every client requests all objects within `visibility_radius` each slot;
    with `newly_visible_only` set, only objects that were not visible to that
    client in the previous slot are requested.  With `versioned` set, each
    request carries a distance tier: 0 below `near_radius`, 1 out to the
    visibility radius; tier sizes come from `tier_sizes` (the far tier 2 is
    catalogued but never requested).
    """

    groups: tuple[ToroidGroup, ...]
    horizon_slots: int
    side: float = 1000.0
    num_objects: int = 4000
    speed: float = 25.0
    direction_period: int = 10
    visibility_radius: float = 50.0
    versioned: bool = False
    near_radius: float = 10.0
    tier_sizes: tuple[float, float, float] = (1.0, 0.5, 0.1)
    newly_visible_only: bool = False

    def __post_init__(self):
        if self.horizon_slots < 1:
            raise ValueError("horizon_slots must be >= 1")
        if not self.groups:
            raise ValueError("need at least one group")
        max_delay = max((max(g.follower_delays, default=0) for g in self.groups), default=0)
        if max_delay >= self.horizon_slots:
            raise ValueError("horizon must exceed the largest follower delay")

    def client_count(self) -> int:
        return sum(1 + len(g.follower_delays) for g in self.groups)


@dataclass(frozen=True)
class OrderShuffle:
    """Swap the delays of follower pairs (1,2), (3,4), ... every `period` slots."""

    period: int

    def __post_init__(self):
        if self.period < 1:
            raise ValueError("period must be >= 1")


@dataclass(frozen=True)
class LeaderSwitch:
    """Reassign every follower to a random leader every `period` slots.

    Followers are processed in follower-id order; the k-th follower that
    joins a leader within one reassignment gets delay step_delay * k.
    """

    period: int
    probabilities: tuple[float, ...]
    step_delay: int = 5

    def __post_init__(self):
        if self.period < 1:
            raise ValueError("period must be >= 1")
        probs = tuple(float(p) for p in self.probabilities)
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError("probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "probabilities", probs)


Dynamics = OrderShuffle | LeaderSwitch


def apply_order_shuffle(
    assignments: list[tuple[int, int]], period: int, slot: int
) -> list[tuple[int, int]]:
    """Assignments are (leader_index, delay) per follower, in follower order.

    At slots that are positive multiples of the period, consecutive followers
    of the same leader exchange delays pairwise; a trailing unpaired follower
    keeps its delay.  Other slots return the input unchanged.
    """
    if slot <= 0 or slot % period != 0:
        return assignments
    out = list(assignments)
    by_leader: dict[int, list[int]] = {}
    for idx, (leader, _) in enumerate(assignments):
        by_leader.setdefault(leader, []).append(idx)
    for indices in by_leader.values():
        for a, b in zip(indices[0::2], indices[1::2]):
            la, da = out[a]
            lb, db = out[b]
            out[a] = (la, db)
            out[b] = (lb, da)
    return out


def apply_leader_switch(
    assignments: list[tuple[int, int]],
    dyn: LeaderSwitch,
    slot: int,
    rng: np.random.Generator,
) -> list[tuple[int, int]]:
    """Redraw every follower's leader at positive multiples of the period.

    Note: consumes one rng draw per follower whenever it fires, so traces
    stay reproducible for a fixed seed.
    """
    if slot <= 0 or slot % dyn.period != 0:
        return assignments
    probs = np.asarray(dyn.probabilities)
    joined: dict[int, int] = {}
    out = []
    for _ in assignments:
        leader = int(rng.choice(len(probs), p=probs))
        joined[leader] = joined.get(leader, 0) + 1
        out.append((leader, dyn.step_delay * joined[leader]))
    return out


def _torus_distance_sq(
    points: np.ndarray, objects: np.ndarray, side: float
) -> np.ndarray:
    """Squared minimal-image distance between points (..., 3) and objects (D, 3).

    Accumulates one axis at a time so the peak temporary is (..., D) rather
    than (..., D, 3).
    """
    out = None
    for k in range(3):
        diff = np.abs(points[..., k, None] - objects[:, k])
        np.minimum(diff, side - diff, out=diff)
        diff *= diff
        out = diff if out is None else out + diff
    return out


def gen_toroid_trace(
    spec: ToroidSpec,
    dynamics: Dynamics | None = None,
    seed: int = 0,
    meta: dict[str, str] | None = None,
) -> Trace:
    """Generate the toroid trace; slot numbers become event times."""
    rng = np.random.default_rng(seed)
    side = spec.side
    H = spec.horizon_slots
    n_leaders = len(spec.groups)

    objects_pos = rng.uniform(0.0, side, size=(spec.num_objects, 3))

    # leader paths: new isotropic unit direction every direction_period slots
    paths = np.empty((n_leaders, H, 3))
    for li in range(n_leaders):
        pos = rng.uniform(0.0, side, size=3)
        direction = _unit_vector(rng)
        for n in range(H):
            if n > 0 and n % spec.direction_period == 0:
                direction = _unit_vector(rng)
            if n > 0:
                pos = (pos + spec.speed * direction) % side
            paths[li, n] = pos

    # follower assignment per slot, replaying dynamics at period boundaries
    assignments: list[tuple[int, int]] = []
    for li, g in enumerate(spec.groups):
        assignments.extend((li, d) for d in g.follower_delays)
    n_followers = len(assignments)
    leader_by_slot = np.empty((n_followers, H), dtype=np.int64)
    delay_by_slot = np.empty((n_followers, H), dtype=np.int64)
    for n in range(H):
        if dynamics is not None:
            if isinstance(dynamics, OrderShuffle):
                assignments = apply_order_shuffle(assignments, dynamics.period, n)
            else:
                assignments = apply_leader_switch(assignments, dynamics, n, rng)
        for fi, (li, d) in enumerate(assignments):
            leader_by_slot[fi, n] = li
            delay_by_slot[fi, n] = d

    # client numbering mirrors the grouped generator: leader then its followers
    numbering: list[tuple[str, int]] = []
    fi = 0
    for li, g in enumerate(spec.groups):
        numbering.append(("leader", li))
        for _ in g.follower_delays:
            numbering.append(("follower", fi))
            fi += 1
    C = len(numbering)

    positions = np.full((C, H, 3), np.nan)
    slots = np.arange(H)
    for ci, (role, idx) in enumerate(numbering):
        if role == "leader":
            positions[ci] = paths[idx]
        else:
            src = slots - delay_by_slot[idx]
            ok = src >= 0
            positions[ci, ok] = paths[leader_by_slot[idx, ok], src[ok]]

    r2 = spec.visibility_radius**2
    near2 = spec.near_radius**2
    times_parts: list[np.ndarray] = []
    client_parts: list[np.ndarray] = []
    object_parts: list[np.ndarray] = []
    version_parts: list[np.ndarray] = []
    prev_visible = np.zeros((C, spec.num_objects), dtype=bool)

    chunk = max(1, int(2_000_000 // max(1, C * spec.num_objects)))
    for start in range(0, H, chunk):
        stop = min(H, start + chunk)
        pos = positions[:, start:stop]  # (C, S, 3)
        with np.errstate(invalid="ignore"):
            d2 = _torus_distance_sq(pos, objects_pos, side)  # (C, S, D)
            visible = d2 <= r2
        visible &= ~np.isnan(pos[..., 0])[..., None]
        if spec.newly_visible_only:
            request = visible.copy()
            request[:, 0, :] &= ~prev_visible
            if stop - start > 1:
                request[:, 1:, :] &= ~visible[:, :-1, :]
            prev_visible = visible[:, -1, :].copy()
        else:
            request = visible
        ci, si, oi = np.nonzero(request)
        times_parts.append((start + si).astype(np.float64))
        client_parts.append((ci + 1).astype(np.int64))
        object_parts.append((oi + 1).astype(np.int64))
        if spec.versioned:
            version_parts.append(np.where(d2[ci, si, oi] < near2, 0, 1).astype(np.int64))

    catalog = ObjectCatalog()
    if spec.versioned:
        for oid in range(1, spec.num_objects + 1):
            for tier, size in enumerate(spec.tier_sizes):
                catalog.add(oid, size, tier)
    else:
        for oid in range(1, spec.num_objects + 1):
            catalog.add(oid, 1.0)

    times = np.concatenate(times_parts) if times_parts else np.empty(0)
    cl = np.concatenate(client_parts) if client_parts else np.empty(0, dtype=np.int64)
    ob = np.concatenate(object_parts) if object_parts else np.empty(0, dtype=np.int64)
    if spec.versioned:
        vr = np.concatenate(version_parts) if version_parts else np.empty(0, dtype=np.int64)
    else:
        vr = None
    base_meta = {
        "generator": "toroid",
        "seed": str(seed),
        "horizon_slots": str(H),
        "clients": str(C),
    }
    if dynamics is not None:
        base_meta["dynamics"] = type(dynamics).__name__.lower()
    if meta:
        base_meta.update(meta)
    trace = Trace(times, cl, ob, vr, catalog, base_meta)
    trace.sort_events()
    return trace


def _unit_vector(rng: np.random.Generator) -> np.ndarray:
    # isotropic via normalized Gaussian; re-draw the (measure-zero) tiny norms
    while True:
        v = rng.normal(size=3)
        norm = np.linalg.norm(v)
        if norm > 1e-12:
            return v / norm
