"""Vision-token rankings and Kendall's tau between layers.

``kendall_tau_b`` is Knight's O(N log N) algorithm: sort by the first variable,
then count the swaps a merge sort needs to order the second one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from keeprate.core import AttentionTrace
from keeprate.errors import DimensionMismatchError, LayerRangeError, RankingMismatchError


@dataclass(frozen=True, slots=True)
class LayerRanking:
    order: tuple[int, ...]
    layer_index: int

    def __post_init__(self) -> None:
        if sorted(self.order) != list(range(len(self.order))):
            raise RankingMismatchError(f"order of layer {self.layer_index} is not a permutation")

    @property
    def size(self) -> int:
        return len(self.order)

    def positions(self) -> np.ndarray:
        """Rank position of every token index (0 = most attended)."""
        ranks = np.empty(self.size, dtype=np.int64)
        ranks[np.asarray(self.order, dtype=np.int64)] = np.arange(self.size)
        return ranks


@dataclass(frozen=True, slots=True)
class TauSeries:
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        for value in self.values:
            if not -1.0 <= value <= 1.0:
                raise RankingMismatchError(f"tau value {value} outside [-1, 1]")

    def pairs(self) -> list[tuple[int, int]]:
        return [(i, i + 1) for i in range(1, len(self.values) + 1)]


def descending_order(scores: Sequence[float] | np.ndarray) -> np.ndarray:
    """Token indices by descending score, ties broken by ascending index."""
    row = np.asarray(scores, dtype=np.float64)
    # lexsort sorts by the last key first; stable on the index key
    return np.lexsort((np.arange(row.size), -row))


def rank_layer(trace: AttentionTrace, layer: int) -> LayerRanking:
    if not 1 <= layer <= trace.layer_count:
        raise LayerRangeError(f"layer {layer} outside 1..{trace.layer_count}")
    order = descending_order(trace.layer(layer))
    return LayerRanking(order=tuple(int(i) for i in order), layer_index=layer)


def kendall_tau(a: LayerRanking, b: LayerRanking) -> float:
    if a.size != b.size:
        raise RankingMismatchError(f"rankings cover {a.size} and {b.size} tokens")
    return kendall_tau_b(a.positions(), b.positions())


def kendall_tau_b(x: Sequence[float] | np.ndarray, y: Sequence[float] | np.ndarray) -> float:
    """Tie-adjusted Kendall's tau in O(N log N)."""
    xs = np.asarray(x, dtype=np.float64)
    ys = np.asarray(y, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise RankingMismatchError(f"score vectors have shapes {xs.shape} and {ys.shape}")
    n = xs.size
    if n < 2:
        return 1.0

    order = np.lexsort((ys, xs))
    xs = xs[order]
    ys = ys[order]

    n0 = n * (n - 1) // 2
    n1 = _tied_pairs(xs)
    n3 = _joint_tied_pairs(xs, ys)

    swaps = _merge_sort_swaps(ys.tolist())
    n2 = _tied_pairs(np.sort(ys))

    denominator = math.sqrt((n0 - n1) * (n0 - n2))
    if denominator == 0.0:
        # one side is constant; an identical constant pair is perfectly concordant
        return 1.0 if n1 == n2 == n0 else 0.0
    tau = (n0 - n1 - n2 + n3 - 2 * swaps) / denominator
    return float(min(1.0, max(-1.0, tau)))


def kendall_tau_bruteforce(x: Sequence[float], y: Sequence[float]) -> float:
    """O(N^2) tau-b by direct pair enumeration; the reference the fast version is checked against."""
    xs = list(x)
    ys = list(y)
    concordant = discordant = ties_x = ties_y = 0
    n = len(xs)
    for i in range(n):
        for j in range(i + 1, n):
            dx = xs[i] - xs[j]
            dy = ys[i] - ys[j]
            if dx == 0:
                ties_x += 1
            if dy == 0:
                ties_y += 1
            if dx == 0 or dy == 0:
                continue
            if (dx > 0) == (dy > 0):
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) // 2
    denominator = math.sqrt((n0 - ties_x) * (n0 - ties_y))
    if denominator == 0.0:
        return 1.0 if ties_x == ties_y == n0 else 0.0
    return (concordant - discordant) / denominator


def tau_series(trace: AttentionTrace) -> TauSeries:
    if trace.layer_count < 2:
        raise DimensionMismatchError("tau series needs at least two layers")
    rankings = [rank_layer(trace, layer) for layer in range(1, trace.layer_count + 1)]
    return TauSeries(tuple(kendall_tau(a, b) for a, b in zip(rankings, rankings[1:])))


def tau_matrix(trace: AttentionTrace) -> np.ndarray:
    rankings = [rank_layer(trace, layer) for layer in range(1, trace.layer_count + 1)]
    size = len(rankings)
    matrix = np.eye(size)
    for i in range(size):
        for j in range(i + 1, size):
            matrix[i, j] = matrix[j, i] = kendall_tau(rankings[i], rankings[j])
    return matrix


def mean_tau_series(traces: Iterable[AttentionTrace]) -> TauSeries:
    """Element-wise mean of the tau series of several traces with equal layer counts."""
    series = [tau_series(trace).values for trace in traces]
    if not series:
        raise DimensionMismatchError("mean_tau_series needs at least one trace")
    if len({len(values) for values in series}) != 1:
        raise DimensionMismatchError("all traces must have the same number of layers")
    return TauSeries(tuple(float(v) for v in np.mean(np.asarray(series), axis=0)))


def _tied_pairs(sorted_values: np.ndarray) -> int:
    if sorted_values.size == 0:
        return 0
    _, counts = np.unique(sorted_values, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def _joint_tied_pairs(xs: np.ndarray, ys: np.ndarray) -> int:
    # xs, ys already lexsorted by (x, y)
    total = 0
    run = 1
    for i in range(1, xs.size):
        if xs[i] == xs[i - 1] and ys[i] == ys[i - 1]:
            run += 1
        else:
            total += run * (run - 1) // 2
            run = 1
    return total + run * (run - 1) // 2


def _merge_sort_swaps(values: list[float]) -> int:
    """Number of strict inversions in ``values``, counted by a bottom-up merge sort."""
    n = len(values)
    buffer = values[:]
    swaps = 0
    width = 1
    while width < n:
        for start in range(0, n, 2 * width):
            mid = min(start + width, n)
            end = min(start + 2 * width, n)
            i, j, k = start, mid, start
            while i < mid and j < end:
                if values[j] < values[i]:
                    buffer[k] = values[j]
                    swaps += mid - i
                    j += 1
                else:
                    buffer[k] = values[i]
                    i += 1
                k += 1
            while i < mid:
                buffer[k] = values[i]
                i += 1
                k += 1
            while j < end:
                buffer[k] = values[j]
                j += 1
                k += 1
        values, buffer = buffer, values
        width *= 2
    return swaps
