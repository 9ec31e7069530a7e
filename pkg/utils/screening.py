"""
Window screening: per-property similarity tensors over neighbor pairs and the
normal/suspicious vote of every sensor window.
"""

import logging
import os
from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from utils.dtw import batch_similarity
from utils.topology import SensorNeighborhoodMatrix

logger = logging.getLogger(__name__)


class ScreeningError(ValueError):
    """Invalid window plan or threshold."""


class Suspicion(IntEnum):
    NORMAL = 0
    SUSPICIOUS = 1
    UNEVALUATED = 2


@dataclass(frozen=True)
class WindowPlan:
    """Windows of ``eta`` slots with stride eta/2 over ``slot_count`` slots (0-based)."""

    eta: int
    slot_count: int
    count: int

    @property
    def stride(self) -> int:
        return self.eta // 2

    @property
    def empty(self) -> bool:
        return self.count == 0

    def slot_range(self, window: int) -> Tuple[int, int]:
        """[start, end) slot indices of a window."""
        if not 0 <= window < self.count:
            raise IndexError(f"window {window} outside plan of {self.count}")
        start = window * self.stride
        return start, start + self.eta

    def starts(self) -> np.ndarray:
        return np.arange(self.count, dtype=np.int64) * self.stride

    def windows_of(self, slots: np.ndarray) -> np.ndarray:
        """(count, eta) view of a slot array cut into the plan's windows."""
        if self.empty:
            return np.empty((0, self.eta))
        view = np.lib.stride_tricks.sliding_window_view(np.asarray(slots, dtype=np.float64), self.eta)
        return view[::self.stride][:self.count]


def plan_windows(slot_count: int, eta: int) -> WindowPlan:
    if eta < 2 or eta % 2:
        raise ScreeningError(f"eta must be an even integer >= 2, got {eta}")
    if slot_count < eta:
        logger.warning(f"Only {slot_count} slots for windows of {eta}: empty window plan")
        return WindowPlan(eta, slot_count, 0)
    count = (slot_count - eta) // (eta // 2) + 1
    return WindowPlan(eta, slot_count, count)


@dataclass(frozen=True)
class SimilarityTensor:
    """Similarities of neighbor pairs per window.

    ``pairs`` holds (j, k) node indices with j < k where (a_i)_jk = 1;
    ``values[p, w]`` is the similarity of pair p in window w, NaN when either
    window is incomplete or the window was not screened.
    """

    property: str
    node_order: Tuple[str, ...]
    plan: WindowPlan
    pairs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.pairs.setflags(write=False)
        self.values.setflags(write=False)

    def _pair_index(self, j: int, k: int) -> Optional[int]:
        lo, hi = min(j, k), max(j, k)
        hit = np.flatnonzero((self.pairs[:, 0] == lo) & (self.pairs[:, 1] == hi))
        return int(hit[0]) if hit.size else None

    def entry(self, j: int, k: int, window: int) -> Optional[float]:
        p = self._pair_index(j, k)
        if p is None:
            return None
        value = self.values[p, window]
        return None if np.isnan(value) else float(value)

    def neighbor_values(self, j: int, window: int) -> Dict[int, float]:
        """Present similarities of node j to its neighbors in one window."""
        out = {}
        for p in np.flatnonzero((self.pairs[:, 0] == j) | (self.pairs[:, 1] == j)):
            value = self.values[p, window]
            if not np.isnan(value):
                other = int(self.pairs[p, 1] if self.pairs[p, 0] == j else self.pairs[p, 0])
                out[other] = float(value)
        return out

    def present_count(self) -> int:
        return int(np.count_nonzero(~np.isnan(self.values)))

    def summary(self) -> Dict[str, object]:
        present = self.values[~np.isnan(self.values)]
        return {
            'property': self.property,
            'pairs': int(self.pairs.shape[0]),
            'windows': self.plan.count,
            'entries': int(present.size),
            'min': float(present.min()) if present.size else None,
            'median': float(np.median(present)) if present.size else None,
            'mean': float(present.mean()) if present.size else None,
        }


@dataclass(frozen=True)
class SuspicionTable:
    property: str
    node_order: Tuple[str, ...]
    flags: np.ndarray
    similar: np.ndarray
    present: np.ndarray

    def __post_init__(self):
        for array in (self.flags, self.similar, self.present):
            array.setflags(write=False)

    def flag(self, node_id: str, window: int) -> Suspicion:
        return Suspicion(int(self.flags[self.node_order.index(node_id), window]))

    def count(self, flag: Suspicion) -> int:
        return int(np.count_nonzero(self.flags == flag))


def build_similarity_tensor(series: Mapping[str, Optional[np.ndarray]], sensor_matrix: SensorNeighborhoodMatrix,
                            plan: WindowPlan, value_scale: float = 1.0,
                            window_mask: Optional[np.ndarray] = None) -> SimilarityTensor:
    """Trend similarity of every neighbor pair of one property, window by window.

    ``series`` maps node_id to that node's slot array for the property (None or
    absent when the node has no such sensor). ``window_mask`` restricts
    screening to the selected windows; the rest stay absent.
    """
    node_order = sensor_matrix.node_order
    pairs = sensor_matrix.pairs()
    values = np.full((pairs.shape[0], plan.count), np.nan)

    if window_mask is None:
        selected = np.arange(plan.count)
    else:
        selected = np.flatnonzero(np.asarray(window_mask, dtype=bool))

    cache: Dict[int, np.ndarray] = {}

    def windows_for(j: int) -> Optional[np.ndarray]:
        if j not in cache:
            slots = series.get(node_order[j])
            cache[j] = None if slots is None else plan.windows_of(slots)[selected]
        return cache[j]

    if selected.size:
        for p, (j, k) in enumerate(pairs):
            wa, wb = windows_for(int(j)), windows_for(int(k))
            if wa is None or wb is None:
                continue
            values[p, selected] = batch_similarity(wa, wb, value_scale)

    tensor = SimilarityTensor(sensor_matrix.property, node_order, plan, pairs, values)
    logger.info(f"Similarity tensor for {tensor.property}: {pairs.shape[0]} pairs, "
                f"{selected.size} windows, {tensor.present_count()} entries")
    return tensor


def vote_suspicious(tensor: SimilarityTensor, beta: float) -> SuspicionTable:
    """Normal when at least half of the present neighbor similarities reach beta.

    The denominator counts present entries, so a genuine similarity of 0 is a
    dissimilar neighbor rather than a missing one.
    """
    if not 0 < beta <= 1:
        raise ScreeningError(f"beta must be in (0, 1], got {beta}")
    n = len(tensor.node_order)
    present = ~np.isnan(tensor.values)
    with np.errstate(invalid='ignore'):
        similar = present & (tensor.values >= beta)

    present_count = np.zeros((n, tensor.plan.count), dtype=np.int32)
    similar_count = np.zeros((n, tensor.plan.count), dtype=np.int32)
    for side in (0, 1):
        np.add.at(present_count, tensor.pairs[:, side], present.astype(np.int32))
        np.add.at(similar_count, tensor.pairs[:, side], similar.astype(np.int32))

    flags = np.full((n, tensor.plan.count), Suspicion.UNEVALUATED, dtype=np.int8)
    evaluated = present_count > 0
    normal = evaluated & (2 * similar_count >= present_count)
    flags[evaluated] = Suspicion.SUSPICIOUS
    flags[normal] = Suspicion.NORMAL
    return SuspicionTable(tensor.property, tensor.node_order, flags, similar_count, present_count)


def dump_similarity(tensors: Sequence[SimilarityTensor], out_dir: str) -> List[str]:
    """Append every present entry to SM_<property>.csv (node_j,node_k,window,similarity)."""
    os.makedirs(out_dir, exist_ok=True)
    rows: Dict[str, List[pd.DataFrame]] = {}
    for tensor in tensors:
        p, w = np.nonzero(~np.isnan(tensor.values))
        order = np.array(tensor.node_order, dtype=object)
        rows.setdefault(tensor.property, []).append(pd.DataFrame({
            'node_j': order[tensor.pairs[p, 0]] if p.size else [],
            'node_k': order[tensor.pairs[p, 1]] if p.size else [],
            'window': w,
            'similarity': tensor.values[p, w],
        }))
    written = []
    for prop, frames in sorted(rows.items()):
        path = os.path.join(out_dir, f"SM_{prop}.csv")
        frame = pd.concat(frames, ignore_index=True).sort_values(['window', 'node_j', 'node_k'], kind='stable')
        frame.to_csv(path, index=False, float_format='%.12f')
        written.append(path)
    return written
