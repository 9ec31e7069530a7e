"""
Correlation knowledge base.

Domain experts record correlations between sensor properties as triples, one per
line::

    # subject            predicate              object
    air_temperature      hasStrongCorrelation   relative_humidity

A query asks whether two properties are linked, in either direction, by any
predicate from an active set. The relationship matrix Y is built from those
answers.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, FrozenSet, Iterable, Optional, Sequence, Tuple

import numpy as np

from utils.ingest import validate_property

logger = logging.getLogger(__name__)


class Category(Enum):
    STRENGTH = 'strength'
    DIRECTION = 'direction'
    SHAPE = 'shape'
    SPACETIME = 'spacetime'
    COMPOSITION = 'composition'


PREDICATES: Dict[str, Category] = {
    'hasVeryStrongCorrelation': Category.STRENGTH,
    'hasStrongCorrelation': Category.STRENGTH,
    'hasMediumCorrelation': Category.STRENGTH,
    'hasWeakCorrelation': Category.STRENGTH,
    'hasVeryWeakCorrelation': Category.STRENGTH,
    'hasPositiveCorrelation': Category.DIRECTION,
    'hasNegativeCorrelation': Category.DIRECTION,
    'hasLinearCorrelation': Category.SHAPE,
    'hasCurvilinearCorrelation': Category.SHAPE,
    'hasScatteredCorrelation': Category.SHAPE,
    'hasSpatialCorrelation': Category.SPACETIME,
    'hasTemporalCorrelation': Category.SPACETIME,
    'hasSpatioTemporalCorrelation': Category.SPACETIME,
    'hasPartialCorrelation': Category.COMPOSITION,
    'hasSimpleCorrelation': Category.COMPOSITION,
    'hasMultipleCorrelation': Category.COMPOSITION,
}

# hasVeryStrongCorrelation -> verystrong
SHORT_NAMES: Dict[str, str] = {
    token[len('has'):-len('Correlation')].lower(): token for token in PREDICATES
}

DEFAULT_PREDICATES: FrozenSet[str] = frozenset({'hasStrongCorrelation', 'hasMediumCorrelation'})


class RuleParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, token: Optional[str] = None,
                 path: Optional[str] = None):
        self.line = line
        self.token = token
        where = f"{path or '<rules>'}:{line}: " if line is not None else ''
        super().__init__(f"{where}{message}")


def predicates_in(category: Category) -> FrozenSet[str]:
    return frozenset(t for t, c in PREDICATES.items() if c is category)


def parse_predicate_names(raw) -> FrozenSet[str]:
    """Comma-separated short names, full tokens or category names to predicate tokens."""
    names = raw.split(',') if isinstance(raw, str) else list(raw)
    tokens = set()
    categories = {c.value: c for c in Category}
    for name in (n.strip() for n in names):
        if not name:
            continue
        if name in PREDICATES:
            tokens.add(name)
        elif name.lower() in SHORT_NAMES:
            tokens.add(SHORT_NAMES[name.lower()])
        elif name.lower() in categories:
            tokens |= predicates_in(categories[name.lower()])
        else:
            raise RuleParseError(f"unknown predicate {name!r}", token=name)
    if not tokens:
        raise RuleParseError("no predicates selected")
    return frozenset(tokens)


@dataclass(frozen=True, order=True)
class CorrelationRule:
    subject: str
    predicate: str
    object: str

    def __post_init__(self):
        if self.predicate not in PREDICATES:
            raise RuleParseError(f"unknown predicate {self.predicate!r}", token=self.predicate)
        validate_property(self.subject)
        validate_property(self.object)
        if self.subject == self.object:
            raise RuleParseError(f"rule links {self.subject} to itself", token=self.subject)

    @property
    def category(self) -> Category:
        return PREDICATES[self.predicate]


@dataclass(frozen=True)
class RuleSet:
    rules: FrozenSet[CorrelationRule] = frozenset()

    def __len__(self) -> int:
        return len(self.rules)

    def __iter__(self):
        return iter(sorted(self.rules))

    @property
    def properties(self) -> FrozenSet[str]:
        return frozenset(p for r in self.rules for p in (r.subject, r.object))

    def ask(self, prop_a: str, prop_b: str, active_predicates: Iterable[str] = DEFAULT_PREDICATES) -> bool:
        return ask_correlated(self, prop_a, prop_b, active_predicates)

    def to_text(self) -> str:
        return ''.join(f"{r.subject} {r.predicate} {r.object}\n" for r in self)


def parse_rules(text: str, properties: Optional[Iterable[str]] = None, path: Optional[str] = None) -> RuleSet:
    known = set(properties) if properties is not None else None
    rules = set()
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise RuleParseError(f"expected '<subject> <predicate> <object>', got {line!r}", number, path=path)
        subject, predicate, obj = parts
        if predicate not in PREDICATES:
            raise RuleParseError(f"unknown predicate {predicate!r}", number, predicate, path)
        for prop in (subject, obj):
            try:
                validate_property(prop)
            except ValueError as e:
                raise RuleParseError(str(e), number, prop, path)
            if known is not None and prop not in known:
                raise RuleParseError(f"unknown property {prop!r}", number, prop, path)
        if subject == obj:
            raise RuleParseError(f"rule links {subject} to itself", number, subject, path)
        rules.add(CorrelationRule(subject, predicate, obj))
    return RuleSet(frozenset(rules))


def load_rules(path: str, properties: Optional[Iterable[str]] = None) -> RuleSet:
    with open(path, encoding='utf-8') as f:
        rule_set = parse_rules(f.read(), properties, path)
    logger.info(f"Loaded {len(rule_set)} correlation rules from {path}")
    return rule_set


def ask_correlated(rules: RuleSet, prop_a: str, prop_b: str,
                   active_predicates: Iterable[str] = DEFAULT_PREDICATES) -> bool:
    """True iff an active-predicate rule links the two properties in either direction."""
    active = frozenset(active_predicates)
    pairs = {(prop_a, prop_b), (prop_b, prop_a)}
    return any(r.predicate in active and (r.subject, r.object) in pairs for r in rules.rules)


@dataclass(frozen=True)
class RelationshipMatrix:
    property_order: Tuple[str, ...]
    cells: np.ndarray
    active_predicates: FrozenSet[str]

    def __post_init__(self):
        self.cells.setflags(write=False)

    def linked(self, prop: str) -> Tuple[str, ...]:
        row = self.cells[self.property_order.index(prop)]
        return tuple(self.property_order[k] for k in np.flatnonzero(row))

    def to_dict(self) -> Dict[str, object]:
        return {
            'property_order': list(self.property_order),
            'cells': self.cells.tolist(),
            'active_predicates': sorted(self.active_predicates),
        }


def build_relationship_matrix(rules: RuleSet, property_order: Sequence[str],
                              active_predicates: Iterable[str] = DEFAULT_PREDICATES) -> RelationshipMatrix:
    order = tuple(property_order)
    if len(set(order)) != len(order):
        raise ValueError("property_order has duplicates")
    active = frozenset(active_predicates)
    m = len(order)
    cells = np.zeros((m, m), dtype=np.int8)
    for i in range(m):
        for k in range(i + 1, m):
            if ask_correlated(rules, order[i], order[k], active):
                cells[i, k] = cells[k, i] = 1
    return RelationshipMatrix(order, cells, active)
