"""
Cross-property corroboration of suspicious windows.

A suspicious window of property i at node j is an unusual event when at least
half of the evaluated, correlated properties at the same node and window are
suspicious too (C1 >= C2 / 2 with C2 > 0); otherwise it is an erroneous outlier.
"""

import logging
from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, Mapping, Tuple

import numpy as np

from utils.rules import RelationshipMatrix
from utils.screening import Suspicion, SuspicionTable

logger = logging.getLogger(__name__)


class ClassificationError(ValueError):
    pass


class Verdict(IntEnum):
    NORMAL = 0
    ERRONEOUS_OUTLIER = 1
    UNUSUAL_EVENT = 2
    UNEVALUATED = 3

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> 'Verdict':
        for verdict, name in _LABELS.items():
            if name == label:
                return verdict
        raise ValueError(f"unknown verdict label {label!r}")


_LABELS = {
    Verdict.NORMAL: 'Normal',
    Verdict.ERRONEOUS_OUTLIER: 'ErroneousOutlier',
    Verdict.UNUSUAL_EVENT: 'UnusualEvent',
    Verdict.UNEVALUATED: 'Unevaluated',
}


@dataclass(frozen=True)
class DecisionTable:
    """Verdicts and corroboration counts indexed (property, node, window)."""

    property_order: Tuple[str, ...]
    node_order: Tuple[str, ...]
    verdicts: np.ndarray
    c1: np.ndarray
    c2: np.ndarray

    def __post_init__(self):
        for array in (self.verdicts, self.c1, self.c2):
            array.setflags(write=False)

    @property
    def window_count(self) -> int:
        return int(self.verdicts.shape[2])

    def verdict(self, prop: str, node_id: str, window: int) -> Verdict:
        i, j = self.property_order.index(prop), self.node_order.index(node_id)
        return Verdict(int(self.verdicts[i, j, window]))

    def counts(self) -> Dict[str, int]:
        return {v.label: int(np.count_nonzero(self.verdicts == v)) for v in Verdict}


def _stack(tables: Mapping[str, SuspicionTable], relationship: RelationshipMatrix) -> np.ndarray:
    if not relationship.property_order:
        raise ClassificationError("relationship matrix has no properties")
    missing = [p for p in relationship.property_order if p not in tables]
    if missing:
        raise ClassificationError(f"no suspicion table for {missing}")
    first = tables[relationship.property_order[0]]
    for prop in relationship.property_order:
        table = tables[prop]
        if table.node_order != first.node_order or table.flags.shape != first.flags.shape:
            raise ClassificationError(f"suspicion table of {prop} does not match the others in shape")
    return np.stack([tables[p].flags for p in relationship.property_order])


def classify_window(tables: Mapping[str, SuspicionTable], relationship: RelationshipMatrix,
                    prop: str, node_id: str, window: int) -> Tuple[Verdict, int, int]:
    """Verdict and (C1, C2) of one suspicious window."""
    own = tables[prop].flag(node_id, window)
    if own is not Suspicion.SUSPICIOUS:
        raise ClassificationError(f"{prop} at node {node_id} window {window} is {own.name}, not SUSPICIOUS")
    c1 = c2 = 0
    for other in relationship.linked(prop):
        flag = tables[other].flag(node_id, window)
        if flag is Suspicion.UNEVALUATED:
            continue
        c2 += 1
        if flag is Suspicion.SUSPICIOUS:
            c1 += 1
    # no corroborating evidence at all is an error, not an event
    verdict = Verdict.UNUSUAL_EVENT if c2 > 0 and 2 * c1 >= c2 else Verdict.ERRONEOUS_OUTLIER
    return verdict, c1, c2


def classify_all(tables: Mapping[str, SuspicionTable], relationship: RelationshipMatrix) -> DecisionTable:
    flags = _stack(tables, relationship)
    y = relationship.cells.astype(np.int32)
    suspicious = (flags == Suspicion.SUSPICIOUS).astype(np.int32)
    evaluated = (flags != Suspicion.UNEVALUATED).astype(np.int32)

    # C[i, j, w] = sum_i' y[i, i'] * x[i', j, w]
    c1 = np.einsum('ik,kjw->ijw', y, suspicious)
    c2 = np.einsum('ik,kjw->ijw', y, evaluated)

    event = (c2 > 0) & (2 * c1 >= c2)
    verdicts = np.where(flags == Suspicion.NORMAL, Verdict.NORMAL, Verdict.UNEVALUATED).astype(np.int8)
    is_suspicious = flags == Suspicion.SUSPICIOUS
    verdicts[is_suspicious & event] = Verdict.UNUSUAL_EVENT
    verdicts[is_suspicious & ~event] = Verdict.ERRONEOUS_OUTLIER

    c1 = np.where(is_suspicious, c1, 0).astype(np.int16)
    c2 = np.where(is_suspicious, c2, 0).astype(np.int16)
    node_order = tables[relationship.property_order[0]].node_order
    return DecisionTable(relationship.property_order, node_order, verdicts, c1, c2)
