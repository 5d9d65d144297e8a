"""Cache simulation engine.

Replays a request trace against a byte-budgeted cache under a pluggable
eviction policy.  Optionally each client first consults a small private LRU
cache; only its misses are forwarded to the shared cache, and all policy
state and reported hit ratios concern the forwarded stream.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import IO

import numpy as np

from .policies import Policy, PolicyParams, build_policy
from .trace import Trace


class ConfigurationError(ValueError):
    """Invalid simulation configuration or a policy/trace mismatch."""


class ConsistencyError(RuntimeError):
    """An internal accounting invariant failed after a run."""


@dataclass(frozen=True)
class CacheConfig:
    """Shared cache size in bytes plus the per-client private cache fraction.

    Each client's private cache holds floor(local_cache_fraction * capacity)
    bytes; zero disables the private tier entirely.
    """

    capacity: float
    local_cache_fraction: float = 0.0

    def __post_init__(self):
        if not (self.capacity > 0 and math.isfinite(self.capacity)):
            raise ConfigurationError("capacity must be positive and finite")
        if not 0 <= self.local_cache_fraction < 1:
            raise ConfigurationError("local_cache_fraction must be in [0, 1)")

    def local_capacity(self) -> float:
        return float(math.floor(self.local_cache_fraction * self.capacity))


class CacheState:
    """Live state shared between the engine loop and the policy hooks."""

    __slots__ = ("capacity", "order", "last_requester")

    def __init__(self, capacity: float):
        self.capacity = capacity
        # resident identities in recency order, least-recent first; the
        # value is the object size so eviction can release the bytes
        self.order: OrderedDict[int, float] = OrderedDict()
        # identity key -> client that requested it last (survives eviction)
        self.last_requester: dict[int, int] = {}


@dataclass
class SimulationMetrics:
    """Counters from one run.  Hit ratio is over forwarded requests only."""

    policy: str
    capacity: float
    local_cache_fraction: float
    total_events: int
    forwarded: int
    hits: int
    local_hits: int
    oversized_misses: int
    evictions: int
    pair_clients: np.ndarray  # per observed (client, identity) row
    pair_objects: np.ndarray
    pair_versions: np.ndarray  # -1 where unversioned
    pair_requests: np.ndarray
    pair_hits: np.ndarray
    eviction_log: list[int] | None = None
    static_exact: bool | None = None  # static_opt only
    meta: dict = field(default_factory=dict)

    @property
    def hit_ratio(self) -> float:
        if self.forwarded == 0:
            return float("nan")
        return self.hits / self.forwarded

    def per_client(self) -> dict[int, tuple[int, int]]:
        """client -> (forwarded requests, hits)."""
        out: dict[int, tuple[int, int]] = {}
        for c, r, h in zip(
            self.pair_clients.tolist(), self.pair_requests.tolist(), self.pair_hits.tolist()
        ):
            pr, ph = out.get(c, (0, 0))
            out[c] = (pr + r, ph + h)
        return out

    def to_csv(self, fh: IO[str]) -> None:
        """Per-pair rows, then per-client aggregates, then the overall row.

        Aggregate rows use -1 for the collapsed columns.
        """
        fh.write("client,object,version,requests,hits\n")
        rows = sorted(
            zip(
                self.pair_clients.tolist(),
                self.pair_objects.tolist(),
                self.pair_versions.tolist(),
                self.pair_requests.tolist(),
                self.pair_hits.tolist(),
            )
        )
        for c, o, v, r, h in rows:
            ver = "-" if v < 0 else str(v)
            fh.write(f"{c},{o},{ver},{r},{h}\n")
        for c, (r, h) in sorted(self.per_client().items()):
            fh.write(f"{c},-1,-,{r},{h}\n")
        fh.write(f"-1,-1,-,{self.forwarded},{self.hits}\n")

    def summary_dict(self) -> dict:
        d = {
            "policy": self.policy,
            "capacity": self.capacity,
            "local_cache_fraction": self.local_cache_fraction,
            "total_events": self.total_events,
            "forwarded": self.forwarded,
            "hits": self.hits,
            "hit_ratio": None if self.forwarded == 0 else self.hits / self.forwarded,
            "local_hits": self.local_hits,
            "oversized_misses": self.oversized_misses,
            "evictions": self.evictions,
        }
        if self.static_exact is not None:
            d["static_selection_exact"] = self.static_exact
        d.update(self.meta)
        return d

    def write_summary(self, fh: IO[str]) -> None:
        json.dump(self.summary_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def measured_hit_ratio(metrics: SimulationMetrics) -> float:
    """Hit ratio over forwarded requests; errors when nothing was forwarded."""
    if metrics.forwarded == 0:
        raise ConsistencyError("no forwarded requests: hit ratio undefined")
    return metrics.hits / metrics.forwarded


def config_digest(policy_label: str, config: CacheConfig, trace: Trace) -> str:
    """Short stable digest tying a metrics file to its inputs."""
    h = hashlib.sha256()
    h.update(policy_label.encode())
    h.update(repr((config.capacity, config.local_cache_fraction)).encode())
    h.update(np.ascontiguousarray(trace.times).tobytes())
    h.update(np.ascontiguousarray(trace.clients).tobytes())
    h.update(np.ascontiguousarray(trace.objects).tobytes())
    h.update(np.ascontiguousarray(trace.versions).tobytes())
    return h.hexdigest()[:16]


def admit_with_eviction(
    state: CacheState, key: int, size: float, policy: "Policy"
) -> list[int]:
    """Admit one identity, evicting policy victims until it fits.

    Returns the evicted keys in eviction order.  The incoming identity must
    not be resident and must fit the cache at all (``size <= capacity``);
    the identity is inserted at the most-recent end.  A victim that is not
    resident is an internal-consistency failure.
    """
    order = state.order
    if key in order:
        raise ConsistencyError(f"identity {key} is already resident")
    if size > state.capacity:
        raise ConfigurationError("identity larger than the cache capacity")
    evicted: list[int] = []
    used = sum(order.values())
    while used + size > state.capacity:
        v = policy.victim()
        if v not in order:
            raise ConsistencyError(f"policy returned non-resident victim {v}")
        used -= order.pop(v)
        policy.on_evict(v)
        evicted.append(v)
    order[key] = size
    policy.on_admit(key)
    return evicted


def _local_filter(
    keys: list, clients: list, sizes: list, local_capacity: float
) -> tuple[np.ndarray, int]:
    """Per-client private LRU prefilter.

    Returns a boolean forwarded mask and the private-tier hit count.  Objects
    larger than the private capacity always miss it and are forwarded.
    """
    n = len(keys)
    forwarded = np.ones(n, dtype=bool)
    caches: dict[int, OrderedDict] = {}
    used: dict[int, float] = {}
    local_hits = 0
    for i in range(n):
        c = clients[i]
        cache = caches.get(c)
        if cache is None:
            cache = caches[c] = OrderedDict()
            used[c] = 0.0
        k = keys[i]
        if k in cache:
            cache.move_to_end(k)
            local_hits += 1
            forwarded[i] = False
            continue
        s = sizes[i]
        if s <= local_capacity:
            u = used[c]
            while u + s > local_capacity:
                _, vs = cache.popitem(last=False)
                u -= vs
            cache[k] = s
            used[c] = u + s
    return forwarded, local_hits


def simulate(
    trace: Trace,
    policy: PolicyParams | Policy,
    config: CacheConfig,
    record_evictions: bool = False,
    seed: int = 0,
) -> SimulationMetrics:
    """Run one simulation and return its metrics.

    The policy may be passed as params (a fresh instance is built per run) or
    as a prebuilt instance, which must be unused.  Every shipped policy is
    deterministic, so ``seed`` only tags the output metadata; it completes
    the (trace, policy, config, seed) -> metrics purity contract.
    """
    keys_arr = trace.identity_keys()
    cat_keys, cat_sizes = trace.catalog.size_arrays()
    if len(cat_keys) == 0:
        raise ConfigurationError("trace catalog is empty")
    idx = np.searchsorted(cat_keys, keys_arr)
    idx_ok = (idx < len(cat_keys)) & (cat_keys[np.minimum(idx, len(cat_keys) - 1)] == keys_arr)
    if not idx_ok.all():
        raise ConfigurationError("trace references objects missing from its catalog")
    sizes_arr = cat_sizes[idx]

    keys = keys_arr.tolist()
    clients = trace.clients.tolist()
    sizes = sizes_arr.tolist()

    local_hits = 0
    if config.local_cache_fraction > 0:
        local_cap = config.local_capacity()
        if local_cap > 0:
            fwd_mask, local_hits = _local_filter(keys, clients, sizes, local_cap)
            if not fwd_mask.all():
                keys_arr = keys_arr[fwd_mask]
                sizes_arr = sizes_arr[fwd_mask]
                keys = keys_arr.tolist()
                clients = [c for c, f in zip(clients, fwd_mask.tolist()) if f]
                sizes = sizes_arr.tolist()

    n = len(keys)
    size_of = dict(zip(cat_keys.tolist(), cat_sizes.tolist()))
    if isinstance(policy, Policy):
        pol = policy
    else:
        pol = build_policy(policy, keys, size_of, config.capacity)
    if pol.requires_unit_sizes and not trace.catalog.unit_sized():
        raise ConfigurationError(f"policy {pol.name!r} supports unit-size catalogs only")

    state = CacheState(config.capacity)
    pol.bind(state)
    hit_flags = np.zeros(n, dtype=bool)
    oversized = 0
    evictions = 0
    ev_log: list[int] | None = [] if record_evictions else None

    if pol.static_set is not None:
        resident = pol.static_set
        hit_flags = np.isin(keys_arr, np.fromiter(resident, dtype=np.int64, count=len(resident)))
        last_req = state.last_requester
        for i in range(n):
            last_req[keys[i]] = clients[i]
    else:
        order = state.order
        last_req = state.last_requester
        capacity = config.capacity
        base_on_request = Policy.on_request
        on_request = None if type(pol).on_request is base_on_request else pol.on_request
        on_admit = None if type(pol).on_admit is Policy.on_admit else pol.on_admit
        on_evict = None if type(pol).on_evict is Policy.on_evict else pol.on_evict
        victim = pol.victim
        used = 0.0
        for i in range(n):
            k = keys[i]
            c = clients[i]
            hit = k in order
            if on_request is not None:
                on_request(c, k, hit)
            last_req[k] = c
            if hit:
                order.move_to_end(k)
                hit_flags[i] = True
                continue
            s = sizes[i]
            if s > capacity:
                oversized += 1
                continue
            while used + s > capacity:
                v = victim()
                vs = order.pop(v, None)
                if vs is None:
                    raise ConsistencyError(f"policy returned non-resident victim {v}")
                used -= vs
                evictions += 1
                if on_evict is not None:
                    on_evict(v)
                if ev_log is not None:
                    ev_log.append(v)
            order[k] = s
            used += s
            if on_admit is not None:
                on_admit(k)

    pair_codes = (np.asarray(clients, dtype=np.int64) << 40) | keys_arr
    uniq, inverse = np.unique(pair_codes, return_inverse=True)
    req_counts = np.bincount(inverse, minlength=len(uniq))
    hit_counts = np.bincount(inverse, weights=hit_flags, minlength=len(uniq)).astype(np.int64)
    pc = (uniq >> 40).astype(np.int64)
    pk = uniq & ((1 << 40) - 1)
    po = (pk >> 8).astype(np.int64)
    pv = (pk & 0xFF).astype(np.int64) - 1

    metrics = SimulationMetrics(
        policy=pol.name if not isinstance(policy, PolicyParams) else policy.label(),
        capacity=config.capacity,
        local_cache_fraction=config.local_cache_fraction,
        total_events=len(trace),
        forwarded=n,
        hits=int(hit_flags.sum()),
        local_hits=int(local_hits),
        oversized_misses=oversized,
        evictions=evictions,
        pair_clients=pc,
        pair_objects=po,
        pair_versions=pv,
        pair_requests=req_counts.astype(np.int64),
        pair_hits=hit_counts,
        eviction_log=ev_log,
        static_exact=(pol.selection.exact if hasattr(pol, "selection") else None),
        meta={"seed": str(seed)},
    )
    check_metrics(metrics)
    return metrics


def check_metrics(metrics: SimulationMetrics) -> None:
    """Internal accounting invariants; failure means an engine bug."""
    if metrics.hits > metrics.forwarded:
        raise ConsistencyError("hits exceed forwarded requests")
    if int(metrics.pair_requests.sum()) != metrics.forwarded:
        raise ConsistencyError("per-pair requests do not add up to the forwarded count")
    if int(metrics.pair_hits.sum()) != metrics.hits:
        raise ConsistencyError("per-pair hits do not add up to the hit total")
    if (metrics.pair_hits > metrics.pair_requests).any():
        raise ConsistencyError("a pair has more hits than requests")
    if metrics.local_hits + metrics.forwarded != metrics.total_events:
        raise ConsistencyError("private-tier hits plus forwarded do not cover all events")


def normalized_model_hit_rate(
    groups: list[tuple[np.ndarray, int]],
    hit_probs: list[tuple[np.ndarray, list[np.ndarray]]],
) -> float:
    """Aggregate a per-object hit-probability table into one rate ratio.

    ``groups`` pairs each group's per-object leader request rates with its
    follower count; ``hit_probs`` pairs the leader hit-probability vector
    with one vector per follower.  The result is the expected hit rate over
    the total request rate, so it is directly comparable to a measured hit
    ratio.
    """
    num = 0.0
    den = 0.0
    for (rates, followers), (leader_p, follower_ps) in zip(groups, hit_probs):
        rates = np.asarray(rates, dtype=float)
        if len(follower_ps) != followers:
            raise ValueError("follower probability vectors do not match the follower count")
        den += float(rates.sum()) * (1 + followers)
        num += float((rates * np.asarray(leader_p, dtype=float)).sum())
        for fp in follower_ps:
            num += float((rates * np.asarray(fp, dtype=float)).sum())
    if den == 0:
        raise ValueError("total request rate is zero")
    return num / den
