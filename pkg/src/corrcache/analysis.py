"""Analytic cache model for grouped request streams.

Under the model, each group has a Poisson leader stream over its objects and
a fixed number of followers that re-request the leader's object after random
delays.  For a cache that keeps an object for a window of length t after each
request, the probability that object d is cached is

    p(d, t) = 1 - exp(-rate(d) * I(t))

where I(t) is the expected length of the union of the request windows opened
by one leader arrival and its follower re-requests.  The characteristic time
t* of a cache of capacity b solves sum_d p(d, t*) * size(d) = b, and per-role
hit probabilities follow from p(d, t*) and the delay distribution.

I(t) has closed forms for deterministic delays, reduces to one-dimensional
quadrature for independent delays, and is estimated by Monte Carlo for
arbitrary joint delay distributions (with samples drawn once per group and
reused across t, so solves stay monotone and deterministic).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Callable, Mapping, Sequence

import numpy as np
from scipy.integrate import quad

from .engine import normalized_model_hit_rate
from .workloads import (
    DelaySpec,
    FixedDelays,
    GroupSpec,
    JointDelays,
    StructuredDelays,
    UniformDelays,
    delay_count,
)

DEFAULT_MC_SAMPLES = 1_000_000
_MC_CHUNK = 200_000


class ModelError(ValueError):
    """Invalid model inputs (capacity out of range, shape mismatches, ...)."""


def _quad(fn: Callable[[float], float], lo: float, hi: float, points) -> float:
    if hi <= lo:
        return 0.0
    pts = sorted({float(p) for p in points if lo < p < hi})
    val, _ = quad(fn, lo, hi, points=pts or None, limit=200, epsabs=1e-12, epsrel=1e-10)
    return val


def _union_measure_from_starts(starts: np.ndarray, length: float) -> np.ndarray:
    """Row-wise measure of a union of equal-length intervals.

    ``starts`` is (n, k) and must be sorted along the last axis; every
    interval is [start, start + length].
    """
    gaps = np.diff(starts, axis=-1)
    return length + np.minimum(gaps, length).sum(axis=-1)


def fixed_window_integral(values: Sequence[float], t: float) -> float:
    """Exact window integral for deterministic delays.

    The cached window of one leader arrival covers [0, t]; each follower
    re-request at delay v adds [v, v + t].  The integral is the measure of
    the union.
    """
    if t <= 0:
        return 0.0
    starts = np.sort(np.append(np.asarray(values, dtype=float), 0.0))
    return float(_union_measure_from_starts(starts, t))


def structured_window_integral(step: float, followers: int, t: float) -> float:
    """Closed form for evenly spaced delays step, 2*step, ..."""
    if t <= 0:
        return 0.0
    return t + followers * min(step, t)


def _uniform_cdf(x: float, lo: float, hi: float) -> float:
    if x <= lo:
        return 0.0
    if x >= hi:
        return 1.0
    return (x - lo) / (hi - lo)


def uniform_window_integral(bounds: Sequence[tuple[float, float]], t: float) -> float:
    """Window integral for independent uniform delays, via quadrature.

    At point u outside the leader window [0, t], the coverage probability is
    1 - prod_j (1 - P(delay_j in [u - t, u])).
    """
    if t <= 0:
        return 0.0
    if not bounds:
        return t

    def covered(u: float) -> float:
        prod = 1.0
        for lo, hi in bounds:
            prod *= 1.0 - (_uniform_cdf(u, lo, hi) - _uniform_cdf(u - t, lo, hi))
        return 1.0 - prod

    pts: set[float] = {0.0, t}
    for lo, hi in bounds:
        pts.update((lo, hi, lo + t, hi + t))
    left = min(0.0, min(lo for lo, _ in bounds))
    right = max(t, max(hi for _, hi in bounds) + t)
    total = t
    total += _quad(covered, left, 0.0, pts)
    total += _quad(covered, t, right, pts)
    return total


def joint_window_integral(samples: np.ndarray, t: float) -> float:
    """Monte-Carlo window integral from delay-vector samples (one per row)."""
    if t <= 0:
        return 0.0
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2:
        raise ModelError("joint delay samples must be a 2-D array")
    n = samples.shape[0]
    acc = 0.0
    for i in range(0, n, _MC_CHUNK):
        chunk = samples[i : i + _MC_CHUNK]
        aug = np.concatenate([np.zeros((chunk.shape[0], 1)), chunk], axis=1)
        aug.sort(axis=1)
        acc += float(_union_measure_from_starts(aug, t).sum())
    return acc / n


def group_window_integral(
    delays: DelaySpec | None,
    followers: int,
    t: float,
    samples: int = DEFAULT_MC_SAMPLES,
    rng: np.random.Generator | None = None,
    sample_matrix: np.ndarray | None = None,
) -> float:
    """Expected union length of the windows opened by one leader arrival.

    Dispatches on the delay spec: closed form for structured and fixed
    delays, quadrature for independent uniforms, Monte Carlo for joint
    samplers (pass ``sample_matrix`` to reuse draws across t values).
    """
    if t <= 0:
        return 0.0
    if followers == 0 or delays is None:
        return float(t)
    if isinstance(delays, StructuredDelays):
        return structured_window_integral(delays.step, followers, t)
    if isinstance(delays, FixedDelays):
        return fixed_window_integral(delays.values, t)
    if isinstance(delays, UniformDelays):
        return uniform_window_integral(delays.bounds, t)
    if isinstance(delays, JointDelays):
        if sample_matrix is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            sample_matrix = np.asarray(delays.sampler(rng, samples), dtype=float)
        return joint_window_integral(sample_matrix, t)
    raise ModelError(f"unsupported delay spec {type(delays).__name__}")


@dataclass(eq=False)
class ModelGroup:
    """One request group: per-object leader rates plus the follower layout."""

    object_ids: np.ndarray
    rates: np.ndarray
    followers: int
    delays: DelaySpec | None = None

    def __post_init__(self):
        self.object_ids = np.asarray(self.object_ids, dtype=np.int64)
        self.rates = np.asarray(self.rates, dtype=float)
        if self.object_ids.shape != self.rates.shape or self.object_ids.ndim != 1:
            raise ModelError("object_ids and rates must be 1-D and aligned")
        if len(np.unique(self.object_ids)) != len(self.object_ids):
            raise ModelError("object_ids within a group must be distinct")
        if (self.rates < 0).any():
            raise ModelError("rates must be nonnegative")
        if self.followers < 0:
            raise ModelError("followers must be >= 0")
        implied = delay_count(self.delays)
        if implied is not None and implied != self.followers:
            raise ModelError(
                f"delay spec implies {implied} followers, group declares {self.followers}"
            )
        if self.followers > 0 and self.delays is None:
            raise ModelError("groups with followers need a delay spec")

    @classmethod
    def from_group_spec(cls, spec: GroupSpec) -> "ModelGroup":
        return cls(
            object_ids=spec.object_ids(),
            rates=spec.rates(),
            followers=spec.followers,
            delays=spec.delays,
        )


@dataclass(frozen=True)
class CharacteristicTime:
    """Fixed point of the expected-cached-volume equation."""

    t_star: float
    capacity: float
    rhs_value: float
    residual: float
    iterations: int


@dataclass(frozen=True)
class GroupHitProbs:
    """Per-object hit probabilities for one group, by client role."""

    object_ids: np.ndarray
    rates: np.ndarray
    followers: int
    leader: np.ndarray
    follower_list: tuple[np.ndarray, ...]  # one vector per follower index


@dataclass(frozen=True)
class HitReport:
    capacity: float
    t_star: float
    residual: float
    iterations: int
    groups: tuple[GroupHitProbs, ...]
    normalized_hit_rate: float

    def to_csv(self, fh: IO[str]) -> None:
        fh.write(f"# capacity={self.capacity!r}\n")
        fh.write(f"# t_star={self.t_star!r}\n")
        fh.write(f"# residual={self.residual!r}\n")
        fh.write(f"# normalized_hit_rate={self.normalized_hit_rate!r}\n")
        fh.write("group,client_role,follower_index,object,hit_prob\n")
        for gi, g in enumerate(self.groups):
            for oid, p in zip(g.object_ids.tolist(), g.leader.tolist()):
                fh.write(f"{gi},leader,-,{oid},{p!r}\n")
            for fi, vec in enumerate(g.follower_list, start=1):
                for oid, p in zip(g.object_ids.tolist(), vec.tolist()):
                    fh.write(f"{gi},follower,{fi},{oid},{p!r}\n")


class WorkingSetModel:
    """Evaluates cached-object probabilities and role hit probabilities.

    ``sizes`` may be None (unit sizes), a scalar, a mapping from object id to
    size, or a callable; it must cover every object appearing in any group.
    """

    def __init__(
        self,
        groups: Sequence[ModelGroup],
        sizes=None,
        mc_samples: int = DEFAULT_MC_SAMPLES,
        mc_seed: int = 0,
    ):
        if not groups:
            raise ModelError("model needs at least one group")
        self.groups = list(groups)
        self.mc_samples = int(mc_samples)
        self.mc_seed = int(mc_seed)
        self.object_ids = np.unique(np.concatenate([g.object_ids for g in self.groups]))
        self._scatter = [
            np.searchsorted(self.object_ids, g.object_ids) for g in self.groups
        ]
        if sizes is None:
            self.sizes = np.ones(len(self.object_ids))
        elif np.isscalar(sizes):
            self.sizes = np.full(len(self.object_ids), float(sizes))
        elif isinstance(sizes, Mapping):
            self.sizes = np.array([float(sizes[o]) for o in self.object_ids.tolist()])
        elif callable(sizes):
            self.sizes = np.array([float(sizes(o)) for o in self.object_ids.tolist()])
        else:
            raise ModelError("sizes must be None, a scalar, a mapping, or a callable")
        if (self.sizes <= 0).any():
            raise ModelError("object sizes must be positive")
        self._mc_cache: dict[int, np.ndarray] = {}

    @classmethod
    def from_group_specs(
        cls,
        groups: Sequence[GroupSpec],
        sizes=None,
        mc_samples: int = DEFAULT_MC_SAMPLES,
        mc_seed: int = 0,
    ) -> "WorkingSetModel":
        return cls(
            [ModelGroup.from_group_spec(g) for g in groups],
            sizes=sizes,
            mc_samples=mc_samples,
            mc_seed=mc_seed,
        )

    def total_volume(self) -> float:
        return float(self.sizes.sum())

    def _mc_samples_for(self, gi: int) -> np.ndarray:
        mat = self._mc_cache.get(gi)
        if mat is None:
            g = self.groups[gi]
            rng = np.random.default_rng(self.mc_seed + gi)
            mat = np.asarray(g.delays.sampler(rng, self.mc_samples), dtype=float)
            if mat.shape != (self.mc_samples, g.followers):
                raise ModelError(
                    f"joint sampler returned shape {mat.shape}, "
                    f"expected {(self.mc_samples, g.followers)}"
                )
            self._mc_cache[gi] = mat
        return mat

    def group_integral(self, gi: int, t: float) -> float:
        g = self.groups[gi]
        if isinstance(g.delays, JointDelays):
            return group_window_integral(
                g.delays, g.followers, t, sample_matrix=self._mc_samples_for(gi)
            )
        return group_window_integral(g.delays, g.followers, t)

    def p_requested(self, t: float) -> np.ndarray:
        """P(object is inside the cache window of length t), per object."""
        if t < 0:
            raise ModelError("window length must be >= 0")
        exponent = np.zeros(len(self.object_ids))
        for gi, g in enumerate(self.groups):
            exponent[self._scatter[gi]] += g.rates * self.group_integral(gi, t)
        return -np.expm1(-exponent)

    def expected_cached_volume(self, t: float) -> float:
        return float((self.p_requested(t) * self.sizes).sum())

    def solve_characteristic_time(
        self, capacity: float, rel_tol: float = 1e-6, max_iter: int = 500
    ) -> CharacteristicTime:
        """Solve expected_cached_volume(t*) = capacity by bracketed bisection."""
        if capacity <= 0:
            raise ModelError("capacity must be positive")
        if capacity >= self.total_volume():
            raise ModelError(
                "capacity holds the whole catalog; the characteristic time is unbounded"
            )
        target = float(capacity)
        tol = rel_tol * target
        lo, hi = 0.0, 1.0
        iters = 0
        while self.expected_cached_volume(hi) < target:
            lo = hi
            hi *= 2.0
            iters += 1
            if iters > 200:
                raise ModelError("failed to bracket the characteristic time")
        mid = hi
        val = self.expected_cached_volume(hi)
        while iters < max_iter:
            mid = 0.5 * (lo + hi)
            val = self.expected_cached_volume(mid)
            iters += 1
            if abs(val - target) <= tol:
                break
            if val < target:
                lo = mid
            else:
                hi = mid
        else:
            raise ModelError(
                f"characteristic time did not converge in {max_iter} iterations "
                f"(residual {val - target:g})"
            )
        return CharacteristicTime(
            t_star=mid,
            capacity=target,
            rhs_value=val,
            residual=val - target,
            iterations=iters,
        )

    # -- role hit probabilities ------------------------------------------

    def _leader_factor(self, gi: int, t: float) -> float:
        """P(no follower re-request lands within t before a leader arrival)."""
        g = self.groups[gi]
        if g.followers == 0:
            return 1.0
        d = g.delays
        if isinstance(d, StructuredDelays):
            return 1.0  # delays are strictly positive
        if isinstance(d, FixedDelays):
            return 0.0 if any(-t <= v <= 0 for v in d.values) else 1.0
        if isinstance(d, UniformDelays):
            prod = 1.0
            for lo, hi in d.bounds:
                prod *= 1.0 - (_uniform_cdf(0.0, lo, hi) - _uniform_cdf(-t, lo, hi))
            return prod
        mat = self._mc_samples_for(gi)
        inside = (mat >= -t) & (mat <= 0)
        return float((~inside.any(axis=1)).mean())

    def _follower_factor(self, gi: int, i: int, t: float) -> float:
        """P(follower i's re-request is not inside any other client's window)."""
        g = self.groups[gi]
        d = g.delays
        if isinstance(d, FixedDelays):
            v = d.values
            if 0 <= v[i] <= t:
                return 0.0
            for j, vj in enumerate(v):
                if j != i and -t <= vj - v[i] <= 0:
                    return 0.0
            return 1.0
        if isinstance(d, UniformDelays):
            lo_i, hi_i = d.bounds[i]
            width = hi_i - lo_i
            others = [b for j, b in enumerate(d.bounds) if j != i]

            def integrand(x: float) -> float:
                prod = 1.0
                for lo, hi in others:
                    prod *= 1.0 - (_uniform_cdf(x, lo, hi) - _uniform_cdf(x - t, lo, hi))
                return prod / width

            pts: set[float] = {0.0, t}
            for lo, hi in others:
                pts.update((lo, hi, lo + t, hi + t))
            total = 0.0
            total += _quad(integrand, lo_i, min(hi_i, 0.0), pts)
            total += _quad(integrand, max(lo_i, t), hi_i, pts)
            return total
        if isinstance(d, JointDelays):
            mat = self._mc_samples_for(gi)
            vi = mat[:, i]
            ok = (vi < 0) | (vi > t)
            for j in range(g.followers):
                if j == i:
                    continue
                diff = mat[:, j] - vi
                ok &= ~((diff >= -t) & (diff <= 0))
            return float(ok.mean())
        raise ModelError("follower factors need an explicit delay spec")

    def leader_hit_probs(self, t: float) -> list[np.ndarray]:
        """Per-group leader hit probability vectors at window length t."""
        p = self.p_requested(t)
        out = []
        for gi, g in enumerate(self.groups):
            pg = p[self._scatter[gi]]
            factor = self._leader_factor(gi, t)
            # factor 1 means the miss probability is untouched; return p
            # itself so the closed-form identity holds bit-exactly
            out.append(pg.copy() if factor == 1.0 else 1.0 - (1.0 - pg) * factor)
        return out

    def follower_hit_probs(self, t: float) -> list[list[np.ndarray]]:
        """Per-group, per-follower hit probability vectors at window length t."""
        p = self.p_requested(t)
        out: list[list[np.ndarray]] = []
        for gi, g in enumerate(self.groups):
            pg = p[self._scatter[gi]]
            vecs: list[np.ndarray] = []
            if isinstance(g.delays, StructuredDelays):
                # every follower trails some request by exactly step
                if g.delays.step < t:
                    vecs = [np.ones_like(pg) for _ in range(g.followers)]
                else:
                    vecs = [pg.copy() for _ in range(g.followers)]
            else:
                for i in range(g.followers):
                    factor = self._follower_factor(gi, i, t)
                    vecs.append(pg.copy() if factor == 1.0 else 1.0 - (1.0 - pg) * factor)
            out.append(vecs)
        return out

    def hit_report(self, capacity: float, rel_tol: float = 1e-6) -> HitReport:
        """Solve for t*, then tabulate hit probabilities for every role."""
        ct = self.solve_characteristic_time(capacity, rel_tol=rel_tol)
        t = ct.t_star
        leaders = self.leader_hit_probs(t)
        followers = self.follower_hit_probs(t)
        groups = tuple(
            GroupHitProbs(
                object_ids=g.object_ids,
                rates=g.rates,
                followers=g.followers,
                leader=leaders[gi],
                follower_list=tuple(followers[gi]),
            )
            for gi, g in enumerate(self.groups)
        )
        rate = normalized_model_hit_rate(
            [(g.rates, g.followers) for g in self.groups],
            [(leaders[gi], followers[gi]) for gi in range(len(self.groups))],
        )
        return HitReport(
            capacity=capacity,
            t_star=ct.t_star,
            residual=ct.residual,
            iterations=ct.iterations,
            groups=groups,
            normalized_hit_rate=rate,
        )
