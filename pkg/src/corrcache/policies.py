"""Eviction policies.

Policies plug into the cache engine through a small hook protocol:

* ``bind(state)`` is called once with the live cache state (recency order,
  resident sizes, last-requester index).
* ``on_request(client, key, hit)`` fires once per main-cache event, after the
  hit is determined but before residency or the last-requester index change.
* ``on_admit(key)`` / ``on_evict(key)`` fire when residency changes.
* ``victim()`` names the resident to evict next; the engine removes it.

The engine's recency order (state.order, least-recent first) doubles as the
LRU bookkeeping every policy may consult for tie-breaking.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

INF_NEXT_USE = 1 << 62


class PolicyConfigError(ValueError):
    """Bad policy parameters or a policy/trace mismatch."""


@dataclass(frozen=True)
class PolicyParams:
    """Declarative policy selection, parseable from strings like 'lfru:w=20'."""

    kind: str
    window: int = 20
    gamma: float = 0.5
    rates: Mapping[int, float] | None = None  # static_opt: object key -> weighted rate

    def label(self) -> str:
        if self.kind == "lfru":
            return f"lfru(w={self.window})"
        if self.kind == "lfrus":
            return f"lfrus(w={self.window},g={self.gamma:g})"
        return self.kind


POLICY_KINDS = ("lru", "lfu", "sieve", "belady", "static_opt", "lfru", "lfrus")


def parse_policy_spec(text: str) -> PolicyParams:
    """Parse 'lru', 'lfru:w=20', 'lfrus:w=2:gamma=0.5', ..."""
    parts = [p.strip() for p in text.strip().split(":") if p.strip()]
    if not parts:
        raise PolicyConfigError("empty policy spec")
    kind = parts[0].lower()
    if kind not in POLICY_KINDS:
        raise PolicyConfigError(f"unknown policy {kind!r} (choose from {', '.join(POLICY_KINDS)})")
    window = 20
    gamma = 0.5
    for opt in parts[1:]:
        if "=" not in opt:
            raise PolicyConfigError(f"malformed policy option {opt!r}")
        k, v = (s.strip() for s in opt.split("=", 1))
        if k in ("w", "window"):
            window = int(v)
            if window < 0:
                raise PolicyConfigError("window must be >= 0")
        elif k in ("g", "gamma"):
            gamma = float(v)
            if not 0 < gamma <= 1:
                raise PolicyConfigError("gamma must be in (0, 1]")
        else:
            raise PolicyConfigError(f"unknown policy option {k!r}")
    return PolicyParams(kind=kind, window=window, gamma=gamma)


class Policy:
    """Base: LRU.  Subclasses override hooks they need."""

    name = "lru"
    requires_unit_sizes = False
    static_set: frozenset | None = None

    def bind(self, state) -> None:
        self.state = state

    def on_request(self, client: int, key: int, hit: bool) -> None:  # pragma: no cover
        pass

    def on_admit(self, key: int) -> None:  # pragma: no cover
        pass

    def on_evict(self, key: int) -> None:  # pragma: no cover
        pass

    def victim(self) -> int:
        # least recently used: the front of the recency order
        return next(iter(self.state.order))


class LRUPolicy(Policy):
    name = "lru"


class LFUPolicy(Policy):
    """Evict the resident with the smallest lifetime request count.

    Counts accumulate over the whole run and survive eviction; ties fall back
    to least-recently-used.
    """

    name = "lfu"

    def __init__(self):
        self.counts: dict[int, int] = {}

    def on_request(self, client: int, key: int, hit: bool) -> None:
        self.counts[key] = self.counts.get(key, 0) + 1

    def victim(self) -> int:
        counts = self.counts
        best_key = None
        best = None
        # iteration starts at the least-recent end, so the first strict
        # minimum seen is automatically the LRU tie-break winner
        for key in self.state.order:
            c = counts.get(key, 0)
            if best is None or c < best:
                best = c
                best_key = key
        return best_key


class _SieveNode:
    __slots__ = ("key", "visited", "prev", "next")

    def __init__(self, key: int):
        self.key = key
        self.visited = False
        self.prev: _SieveNode | None = None
        self.next: _SieveNode | None = None


class SievePolicy(Policy):
    """Insertion-ordered queue with visited bits and a clearing hand.

    New identities join the newest end and are never reordered.  The hand
    starts at the oldest entry; eviction clears visited bits from the hand
    toward older entries (wrapping to the newest end once the old end is
    exhausted) and removes the first unvisited identity, leaving the hand
    just past it in scan direction.
    """

    name = "sieve"

    def __init__(self):
        self.nodes: dict[int, _SieveNode] = {}
        self.oldest: _SieveNode | None = None
        self.newest: _SieveNode | None = None
        self.hand: _SieveNode | None = None

    def on_request(self, client: int, key: int, hit: bool) -> None:
        if hit:
            self.nodes[key].visited = True

    def on_admit(self, key: int) -> None:
        node = _SieveNode(key)
        self.nodes[key] = node
        if self.newest is None:
            self.oldest = self.newest = node
        else:
            node.prev = self.newest
            self.newest.next = node
            self.newest = node

    def victim(self) -> int:
        cur = self.hand if self.hand is not None else self.oldest
        while cur.visited:
            cur.visited = False
            cur = cur.prev if cur.prev is not None else self.newest
        self.hand = cur  # on_evict advances past it when the engine removes it
        return cur.key

    def on_evict(self, key: int) -> None:
        node = self.nodes.pop(key)
        if node.prev is not None:
            node.prev.next = node.next
        else:
            self.oldest = node.next
        if node.next is not None:
            node.next.prev = node.prev
        else:
            self.newest = node.prev
        if self.hand is node:
            # one step past the victim: its older neighbour, wrapping to the
            # newest entry when the victim sat at the old end
            self.hand = node.prev if node.prev is not None else self.newest


class BeladyPolicy(Policy):
    """Offline optimum for unit sizes: evict the resident used farthest in
    the future; never-again beats everything; ties (both never-again) are LRU.
    """

    name = "belady"
    requires_unit_sizes = True

    def __init__(self, keys: Sequence[int]):
        # next_use[i] = position of the next event with the same identity
        n = len(keys)
        nxt = [INF_NEXT_USE] * n
        seen: dict[int, int] = {}
        for i in range(n - 1, -1, -1):
            nxt[i] = seen.get(keys[i], INF_NEXT_USE)
            seen[keys[i]] = i
        self._next_of_event = nxt
        self._pos = 0
        self._cur_next: dict[int, int] = {}
        self._heap: list[tuple[int, int]] = []  # (-next_use, key), lazy
        self._never_again: set[int] = set()  # residents with no future use

    def on_request(self, client: int, key: int, hit: bool) -> None:
        nu = self._next_of_event[self._pos]
        self._pos += 1
        self._cur_next[key] = nu
        if hit:
            if nu == INF_NEXT_USE:
                self._never_again.add(key)
            else:
                heapq.heappush(self._heap, (-nu, key))

    def on_admit(self, key: int) -> None:
        nu = self._cur_next[key]
        if nu == INF_NEXT_USE:
            self._never_again.add(key)
        else:
            heapq.heappush(self._heap, (-nu, key))

    def on_evict(self, key: int) -> None:
        self._never_again.discard(key)

    def victim(self) -> int:
        if self._never_again:
            never = self._never_again
            for key in self.state.order:  # least-recent first = LRU tie-break
                if key in never:
                    return key
        order = self.state.order
        cur = self._cur_next
        heap = self._heap
        while heap:
            neg_nu, key = heap[0]
            if key in order and cur.get(key) == -neg_nu:
                heapq.heappop(heap)
                return key
            heapq.heappop(heap)
        raise RuntimeError("belady victim requested with no resident candidates")


@dataclass(frozen=True)
class StaticSelection:
    keys: frozenset[int]
    value: float
    exact: bool


def _enumerate_subsets(weights: np.ndarray, sizes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All-subset (size_sum, value_sum) arrays; index bit i = item i taken."""
    sz = np.zeros(1)
    val = np.zeros(1)
    for w, s in zip(weights, sizes):
        sz = np.concatenate([sz, sz + s])
        val = np.concatenate([val, val + w])
    return sz, val


def static_optimal_select(
    weights: Mapping[int, float], sizes: Mapping[int, float], budget: float
) -> StaticSelection:
    """Pick the fixed cached set maximizing total weighted request rate.

    Exact for: equal sizes (top-k by weight) at any count, and up to 25
    candidates via meet-in-the-middle.  Larger mixed-size instances fall back
    to a density greedy and are flagged exact=False.
    """
    if budget <= 0:
        raise PolicyConfigError("budget must be > 0")
    keys = sorted(k for k in weights if weights[k] > 0)
    for k in keys:
        if k not in sizes:
            raise PolicyConfigError(f"no size for object key {k}")
    w = np.array([float(weights[k]) for k in keys])
    s = np.array([float(sizes[k]) for k in keys])
    keep = s <= budget
    keys = [k for k, ok in zip(keys, keep) if ok]
    w, s = w[keep], s[keep]
    if not keys:
        return StaticSelection(frozenset(), 0.0, True)
    if s.sum() <= budget:
        return StaticSelection(frozenset(keys), float(w.sum()), True)

    if len(set(s.tolist())) == 1:
        unit = s[0]
        count = int(budget // unit)
        order = sorted(range(len(keys)), key=lambda i: (-w[i], keys[i]))
        chosen = order[:count]
        return StaticSelection(
            frozenset(keys[i] for i in chosen), float(w[chosen].sum()), True
        )

    if len(keys) <= 25:
        half = len(keys) // 2
        a_sz, a_val = _enumerate_subsets(w[:half], s[:half])
        b_sz, b_val = _enumerate_subsets(w[half:], s[half:])
        b_order = np.argsort(b_sz, kind="stable")
        b_sz_sorted = b_sz[b_order]
        b_val_sorted = b_val[b_order]
        b_best_val = np.maximum.accumulate(b_val_sorted)
        # argmax index of the running best, for reconstruction
        b_best_idx = np.zeros(len(b_order), dtype=np.int64)
        cur_best = -1.0
        cur_idx = 0
        for i, v in enumerate(b_val_sorted.tolist()):
            if v > cur_best:
                cur_best = v
                cur_idx = i
            b_best_idx[i] = cur_idx
        best_value = -1.0
        best_masks = (0, 0)
        feasible = np.flatnonzero(a_sz <= budget)
        pos = np.searchsorted(b_sz_sorted, budget - a_sz[feasible], side="right") - 1
        for a_mask, j in zip(feasible.tolist(), pos.tolist()):
            if j < 0:
                continue
            total = a_val[a_mask] + b_best_val[j]
            if total > best_value:
                best_value = total
                best_masks = (a_mask, int(b_order[b_best_idx[j]]))
        chosen: set[int] = set()
        a_mask, b_mask = best_masks
        for i in range(half):
            if a_mask >> i & 1:
                chosen.add(keys[i])
        for i in range(len(keys) - half):
            if b_mask >> i & 1:
                chosen.add(keys[half + i])
        return StaticSelection(frozenset(chosen), float(best_value), True)

    # density greedy fallback, flagged as heuristic
    order = sorted(range(len(keys)), key=lambda i: (-(w[i] / s[i]), -w[i], keys[i]))
    used = 0.0
    chosen = set()
    value = 0.0
    for i in order:
        if used + s[i] <= budget:
            used += s[i]
            chosen.add(keys[i])
            value += w[i]
    return StaticSelection(frozenset(chosen), float(value), False)


class StaticOptPolicy(Policy):
    """Preloaded fixed set; the engine never admits or evicts around it."""

    name = "static_opt"

    def __init__(self, selection: StaticSelection):
        self.selection = selection
        self.static_set = selection.keys

    def victim(self) -> int:  # pragma: no cover
        raise RuntimeError("static_opt never evicts")


class _FollowPolicyBase(Policy):
    """Shared machinery for the follow-aware policies.

    Per client, a window of the outcomes of its last window+1 requests is
    kept.  A request's outcome is the client it followed: the previous
    requester of the object, recorded only when the request hit and the
    previous requester is a different client; otherwise None.  The follow
    matrix F[c1][c2] scores how strongly client c2 follows client c1 over
    c2's current window; a client's row score is its best column.  Eviction
    removes the resident whose last requester has the lowest row score,
    breaking ties toward least-recently-used.  window=0 is the degenerate
    case and behaves exactly like LRU.
    """

    def __init__(self, window: int):
        if window < 0:
            raise PolicyConfigError("window must be >= 0")
        self.window = window
        self.windows: dict[int, deque] = {}

    def _outcome(self, client: int, key: int, hit: bool) -> int | None:
        if not hit:
            return None
        prev = self.state.last_requester.get(key)
        if prev is None or prev == client:
            return None
        return prev

    def window_snapshot(self) -> dict[int, tuple]:
        """Outcome windows, oldest first (for consistency checks)."""
        return {c: tuple(dq) for c, dq in self.windows.items()}

    def _row_scores(self) -> dict[int, int]:
        raise NotImplementedError

    def follow_counts(self) -> dict[tuple[int, int], int]:
        raise NotImplementedError

    def follow_matrix_csv(self) -> str:
        """Current follow matrix as ``c1,c2,count`` rows (debugging aid)."""
        lines = ["c1,c2,count"]
        for (c1, c2), n in sorted(self.follow_counts().items()):
            lines.append(f"{c1},{c2},{n}")
        return "\n".join(lines) + "\n"

    def victim(self) -> int:
        scores = self._row_scores()
        order = self.state.order
        if not scores:
            return next(iter(order))
        last_req = self.state.last_requester
        best_key = None
        best = None
        for key in order:  # least-recent first: first minimum wins ties
            c = last_req.get(key)
            s = scores.get(c, 0) if c is not None else 0
            if s == 0:
                return key  # cannot be beaten, and earliest = LRU tie-break
            if best is None or s < best:
                best = s
                best_key = key
        return best_key


class LFRUPolicy(_FollowPolicyBase):
    """Follow-count eviction: keep objects whose last requester is followed."""

    name = "lfru"

    def __init__(self, window: int = 20):
        super().__init__(window)
        # incremental F: rows[c1][c2] = follows of c1 within c2's window
        self.rows: dict[int, dict[int, int]] = {}

    def on_request(self, client: int, key: int, hit: bool) -> None:
        if self.window == 0:
            return
        outcome = self._outcome(client, key, hit)
        dq = self.windows.get(client)
        if dq is None:
            dq = self.windows[client] = deque(maxlen=self.window + 1)
        if len(dq) == dq.maxlen:
            expired = dq[0]
            if expired is not None:
                row = self.rows[expired]
                row[client] -= 1
                if row[client] == 0:
                    del row[client]
                    if not row:
                        del self.rows[expired]
        dq.append(outcome)
        if outcome is not None:
            row = self.rows.setdefault(outcome, {})
            row[client] = row.get(client, 0) + 1

    def _row_scores(self) -> dict[int, int]:
        return {c1: max(row.values()) for c1, row in self.rows.items()}

    def follow_counts(self) -> dict[tuple[int, int], int]:
        return {
            (c1, c2): n for c1, row in self.rows.items() for c2, n in row.items() if n
        }


class LFRUSPolicy(_FollowPolicyBase):
    """Follow scoring with geometric recency weights.

    An outcome at lag k in a client's window (lag 0 = newest request)
    contributes gamma**k; entries are floored before comparison.  gamma=1
    reproduces the plain follow counts.
    """

    name = "lfrus"

    def __init__(self, window: int = 20, gamma: float = 0.5):
        super().__init__(window)
        if not 0 < gamma <= 1:
            raise PolicyConfigError("gamma must be in (0, 1]")
        self.gamma = float(gamma)
        self._gamma_pow = [self.gamma**k for k in range(window + 1)]

    def on_request(self, client: int, key: int, hit: bool) -> None:
        if self.window == 0:
            return
        outcome = self._outcome(client, key, hit)
        dq = self.windows.get(client)
        if dq is None:
            dq = self.windows[client] = deque(maxlen=self.window + 1)
        dq.append(outcome)

    def follow_counts(self) -> dict[tuple[int, int], int]:
        out: dict[tuple[int, int], int] = {}
        gp = self._gamma_pow
        for c2, dq in self.windows.items():
            sums: dict[int, float] = {}
            # rightmost entry is the newest request -> lag 0
            for lag, outcome in enumerate(reversed(dq)):
                if outcome is not None:
                    sums[outcome] = sums.get(outcome, 0.0) + gp[lag]
            for c1, v in sums.items():
                n = math.floor(v)
                if n:
                    out[(c1, c2)] = n
        return out

    def _row_scores(self) -> dict[int, int]:
        scores: dict[int, int] = {}
        for (c1, _c2), n in self.follow_counts().items():
            if n > scores.get(c1, 0):
                scores[c1] = n
        return scores


def build_policy(
    params: PolicyParams,
    forwarded_keys: Sequence[int],
    sizes: Mapping[int, float],
    capacity: float,
) -> Policy:
    """Instantiate a fresh policy for one simulation run."""
    kind = params.kind
    if kind == "lru":
        return LRUPolicy()
    if kind == "lfu":
        return LFUPolicy()
    if kind == "sieve":
        return SievePolicy()
    if kind == "belady":
        return BeladyPolicy(forwarded_keys)
    if kind == "lfru":
        return LFRUPolicy(params.window)
    if kind == "lfrus":
        return LFRUSPolicy(params.window, params.gamma)
    if kind == "static_opt":
        if params.rates is None:
            raise PolicyConfigError(
                "static_opt needs per-object request rates (available for generator presets)"
            )
        selection = static_optimal_select(params.rates, sizes, capacity)
        return StaticOptPolicy(selection)
    raise PolicyConfigError(f"unknown policy kind {kind!r}")
