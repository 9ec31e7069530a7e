"""
Evaluation harness: calibrated synthetic sensor networks, injected segment
outliers and unusual events with ground truth, precision/recall scoring and
similarity-threshold sweeps.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import ConfigError, DetectionConfig
from utils.ingest import (OBSERVATION_COLUMNS, NetworkTables, NodeRecord, SensorRecord, to_epoch,
                          write_nodes, write_observations, write_sensors)
from utils.pipeline import PredictedWindow, decide, observation_span, prepare_detection
from utils.rules import DEFAULT_PREDICATES, CorrelationRule, RuleSet, predicates_in, Category
from utils.topology import EARTH_RADIUS_M

logger = logging.getLogger(__name__)

TEMPERATURE = 'air_temperature'
HUMIDITY = 'relative_humidity'
PRESSURE = 'air_pressure'

UNITS = {TEMPERATURE: 'degC', HUMIDITY: 'percent', PRESSURE: 'hPa'}
# per-observation noise of the clean generator: clean neighbor windows stay far
# above a similarity of 0.90 at eta = 12 but often dip below 0.98
NOISE = {TEMPERATURE: 0.15, HUMIDITY: 0.15, PRESSURE: 0.15}

DEFAULT_START = '2011-08-18T00:00:00Z'
DEFAULT_ORIGIN = (-28.2300, 153.2700)
NODE_SPACING_M = 140.0
DAY_S = 86400

LABELS = ('ErroneousOutlier', 'UnusualEvent')
TRUTH_COLUMNS = ['property', 'node_id', 'slot_start', 'slot_end', 'label']
METRICS_COLUMNS = ['beta', 'tp', 'fp', 'fn', 'precision', 'recall']


class InjectionError(ValueError):
    """Segments cannot be placed under the injection constraints."""


class ScoreError(ValueError):
    """Predictions and ground truth cannot be compared."""


class InjectionMode(Enum):
    OUTLIERS = 'outliers'
    EVENTS_STRONG = 'events-strong'
    EVENTS_POSITIVE = 'events-positive'

    @property
    def label(self) -> str:
        return 'ErroneousOutlier' if self is InjectionMode.OUTLIERS else 'UnusualEvent'


# --- datasets ---

@dataclass(frozen=True)
class SyntheticDataset:
    """A regular-grid network: ``values[prop]`` is (n_nodes, slot_count) in ``node_order``."""

    nodes: Tuple[NodeRecord, ...]
    sensors: Tuple[SensorRecord, ...]
    grid_start: int
    grid_step: int
    values: Mapping[str, np.ndarray]
    units: Mapping[str, str] = field(default_factory=lambda: dict(UNITS))

    @property
    def node_order(self) -> Tuple[str, ...]:
        return tuple(n.node_id for n in self.nodes)

    @property
    def slot_count(self) -> int:
        return int(next(iter(self.values.values())).shape[1])

    @property
    def properties(self) -> List[str]:
        return sorted(self.values)

    def with_values(self, values: Mapping[str, np.ndarray]) -> 'SyntheticDataset':
        return replace(self, values=dict(values))

    def observations(self) -> pd.DataFrame:
        times = self.grid_start + self.grid_step * np.arange(self.slot_count, dtype=np.int64)
        frames = []
        for prop in self.properties:
            ids = [sensor_id(node, prop) for node in self.node_order]
            frames.append(pd.DataFrame({
                'sensor_id': np.repeat(ids, self.slot_count),
                'timestamp': np.tile(times, len(ids)),
                'property': prop,
                'value': self.values[prop].reshape(-1),
                'unit': self.units[prop],
            }, columns=OBSERVATION_COLUMNS))
        return pd.concat(frames, ignore_index=True)

    def tables(self) -> NetworkTables:
        return NetworkTables(self.nodes, self.sensors, self.observations())

    def write(self, out_dir: str) -> List[str]:
        os.makedirs(out_dir, exist_ok=True)
        paths = [os.path.join(out_dir, name) for name in ('nodes.csv', 'sensors.csv', 'observations.csv')]
        write_nodes(paths[0], self.nodes)
        write_sensors(paths[1], self.sensors)
        write_observations(paths[2], self.observations())
        return paths


def sensor_id(node_id: str, prop: str) -> str:
    return f"{node_id}-{prop}"


def grid_layout(count: int, spacing_m: float = NODE_SPACING_M,
                origin: Tuple[float, float] = DEFAULT_ORIGIN) -> List[Tuple[float, float]]:
    """Square lattice of ``count`` positions ``spacing_m`` apart, row by row."""
    side = math.ceil(math.sqrt(count))
    lat0, lon0 = origin
    dlat = math.degrees(spacing_m / EARTH_RADIUS_M)
    dlon = math.degrees(spacing_m / (EARTH_RADIUS_M * math.cos(math.radians(lat0))))
    return [(lat0 + r * dlat, lon0 + c * dlon) for r, c in (divmod(i, side) for i in range(count))]


def generate_clean(seed: int, nodes: int = 36, days: int = 30, grid_step: int = 600,
                   start: str = DEFAULT_START) -> SyntheticDataset:
    """Co-located streams share a smooth diurnal base signal plus small per-sensor noise."""
    if nodes < 1 or days < 1 or grid_step <= 0:
        raise ConfigError("nodes, days and grid_step must be positive")
    rng = np.random.default_rng(seed)
    grid_start = to_epoch(start)
    slot_count = days * DAY_S // grid_step
    t = np.arange(slot_count, dtype=np.float64) * grid_step
    diurnal = np.sin(2 * np.pi * t / DAY_S - np.pi / 2)
    semidiurnal = np.sin(4 * np.pi * t / DAY_S)
    drift = np.sin(2 * np.pi * t / (days * DAY_S))

    base = {
        TEMPERATURE: 14.0 + 4.0 * diurnal + 1.5 * drift,
        HUMIDITY: 70.0 - 12.0 * diurnal - 3.0 * drift,
        PRESSURE: 1013.0 + 0.8 * semidiurnal + 2.0 * drift,
    }
    offsets = {TEMPERATURE: 0.5, HUMIDITY: 2.0, PRESSURE: 0.3}

    values = {}
    for prop in (TEMPERATURE, HUMIDITY, PRESSURE):
        offset = rng.uniform(-offsets[prop], offsets[prop], size=(nodes, 1))
        noise = rng.normal(0.0, NOISE[prop], size=(nodes, slot_count))
        values[prop] = base[prop][None, :] + offset + noise
    values[HUMIDITY] = np.clip(values[HUMIDITY], 0.0, 100.0)

    node_records = tuple(NodeRecord(str(i + 1), lat, lon, grid_start)
                         for i, (lat, lon) in enumerate(grid_layout(nodes)))
    sensors = tuple(SensorRecord(sensor_id(n.node_id, prop), n.node_id, prop, grid_start)
                    for n in node_records for prop in (TEMPERATURE, HUMIDITY, PRESSURE))
    logger.info(f"Generated clean dataset: {nodes} nodes, {days} days, {slot_count} slots per sensor")
    return SyntheticDataset(node_records, sensors, grid_start, grid_step, values)


# --- ground truth ---

class TruthSegment(NamedTuple):
    property: str
    node_id: str
    slot_start: int
    slot_end: int
    label: str


@dataclass(frozen=True)
class GroundTruth:
    segments: Tuple[TruthSegment, ...] = ()

    def __post_init__(self):
        by_stream: Dict[Tuple[str, str], List[Tuple[int, int]]] = {}
        for seg in self.segments:
            if seg.label not in LABELS:
                raise ScoreError(f"unknown truth label {seg.label!r}")
            if not 0 <= seg.slot_start < seg.slot_end:
                raise ScoreError(f"bad slot range [{seg.slot_start}, {seg.slot_end})")
            by_stream.setdefault((seg.property, seg.node_id), []).append((seg.slot_start, seg.slot_end))
        for key, ranges in by_stream.items():
            ranges.sort()
            for (_, prev_end), (cur_start, _) in zip(ranges, ranges[1:]):
                if cur_start < prev_end:
                    raise ScoreError(f"overlapping truth segments for {key[0]} at node {key[1]}")

    def __len__(self) -> int:
        return len(self.segments)

    def of_label(self, label: str) -> List[TruthSegment]:
        return [s for s in self.segments if s.label == label]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(sorted(self.segments, key=lambda s: (s.node_id, s.property, s.slot_start)),
                            columns=TRUTH_COLUMNS)

    def write(self, path: str) -> None:
        self.to_frame().to_csv(path, index=False, encoding='utf-8')

    @classmethod
    def read(cls, path: str) -> 'GroundTruth':
        frame = pd.read_csv(path, dtype={'property': str, 'node_id': str, 'label': str})
        missing = [c for c in TRUTH_COLUMNS if c not in frame.columns]
        if missing:
            raise ScoreError(f"{path}: missing truth columns {missing}")
        return cls(tuple(TruthSegment(str(r.property), str(r.node_id), int(r.slot_start), int(r.slot_end),
                                      str(r.label)) for r in frame.itertuples(index=False)))


# --- injection ---

@dataclass(frozen=True)
class InjectionSpec:
    mode: InjectionMode
    streams_per_round: int = 8
    segment_length: int = 12
    rounds: int = 15
    value_ranges: Mapping[str, Tuple[float, float]] = field(
        default_factory=lambda: {TEMPERATURE: (0.0, 25.0), HUMIDITY: (40.0, 100.0)})
    rng_seed: int = 0
    # event shape: half-sine bump of ``event_bump`` plus uniform jitter of +-``event_jitter``
    # on temperature; humidity follows with ``humidity_factor``
    event_bump: float = 5.0
    event_jitter: float = 4.0
    humidity_factor: float = 2.0
    # minimum gap in slots between two segments on one node
    margin: int = 12
    max_attempts: int = 10000

    def __post_init__(self):
        if self.streams_per_round < 0 or self.rounds < 0:
            raise ConfigError("streams_per_round and rounds must be >= 0")
        if self.segment_length < 2:
            raise ConfigError("segment_length must be >= 2")
        for prop, (lo, hi) in self.value_ranges.items():
            if lo >= hi:
                raise ConfigError(f"empty value range for {prop}")

    @classmethod
    def default(cls, mode: InjectionMode, rng_seed: int = 0) -> 'InjectionSpec':
        rounds = 15 if mode is InjectionMode.OUTLIERS else 30
        return cls(mode=mode, rounds=rounds, rng_seed=rng_seed)


class _Placer:
    """Rejection sampler for segment starts on the window-start lattice."""

    def __init__(self, rng: np.random.Generator, node_count: int, slot_count: int, spec: InjectionSpec):
        self.rng = rng
        self.node_count = node_count
        self.length = spec.segment_length
        self.margin = spec.margin
        self.attempts = spec.max_attempts
        self.stride = max(1, spec.segment_length // 2)
        self.start_choices = (slot_count - spec.segment_length) // self.stride + 1
        if self.start_choices < 1:
            raise InjectionError(f"{slot_count} slots cannot hold a segment of {spec.segment_length}")
        self.by_node: Dict[int, List[int]] = {}

    def _clear_of_node(self, node: int, start: int) -> bool:
        return all(start >= other + self.length + self.margin or start + self.length + self.margin <= other
                   for other in self.by_node.get(node, ()))

    def place(self, taken: List[int]) -> Tuple[int, int]:
        """(node index, slot start) disjoint in time from ``taken`` and clear of the node's segments."""
        for _ in range(self.attempts):
            node = int(self.rng.integers(self.node_count))
            start = int(self.rng.integers(self.start_choices)) * self.stride
            if any(start < other + self.length and other < start + self.length for other in taken):
                continue
            if not self._clear_of_node(node, start):
                continue
            self.by_node.setdefault(node, []).append(start)
            taken.append(start)
            return node, start
        raise InjectionError(f"no room for another segment after {self.attempts} attempts")


def _check_spec(clean: SyntheticDataset, spec: InjectionSpec) -> None:
    for prop in (TEMPERATURE, HUMIDITY):
        if prop not in clean.values:
            raise InjectionError(f"dataset has no {prop} streams")


def inject_outliers(clean: SyntheticDataset, spec: InjectionSpec,
                    seed: Optional[int] = None) -> Tuple[SyntheticDataset, GroundTruth]:
    """Replace segments with uniform random values; temperature and humidity, round by round."""
    if spec.mode is not InjectionMode.OUTLIERS:
        raise InjectionError(f"inject_outliers needs mode outliers, got {spec.mode.value}")
    _check_spec(clean, spec)
    rng = np.random.default_rng(spec.rng_seed if seed is None else seed)
    values = {prop: array.copy() for prop, array in clean.values.items()}
    placer = _Placer(rng, len(clean.nodes), clean.slot_count, spec)
    order = clean.node_order
    segments = []
    for _ in range(spec.rounds):
        for prop in (TEMPERATURE, HUMIDITY):
            lo, hi = spec.value_ranges[prop]
            taken: List[int] = []
            for _ in range(spec.streams_per_round):
                node, start = placer.place(taken)
                end = start + spec.segment_length
                values[prop][node, start:end] = rng.uniform(lo, hi, size=spec.segment_length)
                segments.append(TruthSegment(prop, order[node], start, end, 'ErroneousOutlier'))
    logger.info(f"Injected {len(segments)} segment outliers")
    return clean.with_values(values), GroundTruth(tuple(segments))


def inject_events(clean: SyntheticDataset, spec: InjectionSpec,
                  seed: Optional[int] = None) -> Tuple[SyntheticDataset, GroundTruth]:
    """Replace the same window of temperature and humidity at chosen nodes with a coherent deviation."""
    if spec.mode not in (InjectionMode.EVENTS_STRONG, InjectionMode.EVENTS_POSITIVE):
        raise InjectionError(f"inject_events needs an events mode, got {spec.mode.value}")
    _check_spec(clean, spec)
    rng = np.random.default_rng(spec.rng_seed if seed is None else seed)
    values = {prop: array.copy() for prop, array in clean.values.items()}
    placer = _Placer(rng, len(clean.nodes), clean.slot_count, spec)
    order = clean.node_order
    length = spec.segment_length
    bump = np.sin(np.pi * (np.arange(length) + 0.5) / length)
    sign = 1.0 if spec.mode is InjectionMode.EVENTS_POSITIVE else -1.0
    segments = []
    for _ in range(spec.rounds):
        taken: List[int] = []
        for _ in range(spec.streams_per_round):
            node, start = placer.place(taken)
            end = start + length
            deviation = spec.event_bump * bump + rng.uniform(-spec.event_jitter, spec.event_jitter, size=length)
            values[TEMPERATURE][node, start:end] += deviation
            values[HUMIDITY][node, start:end] += sign * spec.humidity_factor * deviation
            for prop in (TEMPERATURE, HUMIDITY):
                segments.append(TruthSegment(prop, order[node], start, end, 'UnusualEvent'))
    values[HUMIDITY] = np.clip(values[HUMIDITY], 0.0, 100.0)
    logger.info(f"Injected {len(segments) // 2} unusual events ({len(segments)} segments)")
    return clean.with_values(values), GroundTruth(tuple(segments))


def inject(clean: SyntheticDataset, spec: InjectionSpec) -> Tuple[SyntheticDataset, GroundTruth]:
    if spec.mode is InjectionMode.OUTLIERS:
        return inject_outliers(clean, spec)
    return inject_events(clean, spec)


def harness_rules(mode: Optional[InjectionMode] = None) -> Tuple[RuleSet, FrozenSet[str]]:
    """Correlation rules and active predicates matching a dataset mode."""
    if mode is InjectionMode.EVENTS_POSITIVE:
        rule = CorrelationRule(TEMPERATURE, 'hasPositiveCorrelation', HUMIDITY)
        return RuleSet(frozenset({rule})), DEFAULT_PREDICATES | predicates_in(Category.DIRECTION)
    rule = CorrelationRule(TEMPERATURE, 'hasStrongCorrelation', HUMIDITY)
    return RuleSet(frozenset({rule})), DEFAULT_PREDICATES


# --- scoring ---

@dataclass(frozen=True)
class MetricsRow:
    beta: Optional[float]
    tp: int
    fp: int
    fn: int
    precision: Optional[float]
    recall: Optional[float]
    suspicious: Optional[int] = None

    def to_record(self) -> Dict[str, str]:
        def fmt(value: Optional[float]) -> str:
            return '' if value is None else f"{value:.6f}"

        return {
            'beta': '' if self.beta is None else f"{self.beta:.4f}",
            'tp': str(self.tp),
            'fp': str(self.fp),
            'fn': str(self.fn),
            'precision': fmt(self.precision),
            'recall': fmt(self.recall),
        }


def score(predictions: Iterable[PredictedWindow], truth: GroundTruth, target_label: str,
          slot_count: Optional[int] = None, beta: Optional[float] = None,
          suspicious: Optional[int] = None) -> MetricsRow:
    """Window-level precision/recall of one verdict label against ground truth.

    A truth segment is matched by any predicted window of the label on the same
    property and node whose slot range overlaps it.
    """
    if target_label not in LABELS:
        raise ScoreError(f"target label must be one of {LABELS}, got {target_label!r}")
    wanted = truth.of_label(target_label)
    if slot_count is not None:
        beyond = [s for s in wanted if s.slot_end > slot_count]
        if beyond:
            raise ScoreError(f"truth segment {beyond[0]} lies outside the {slot_count}-slot grid")

    by_stream: Dict[Tuple[str, str], List[int]] = {}
    for index, seg in enumerate(wanted):
        by_stream.setdefault((seg.property, seg.node_id), []).append(index)

    matched = np.zeros(len(wanted), dtype=bool)
    fp = 0
    for p in predictions:
        if p.verdict != target_label:
            continue
        hits = [i for i in by_stream.get((p.property, p.node_id), ())
                if p.slot_start < wanted[i].slot_end and wanted[i].slot_start < p.slot_end]
        if hits:
            matched[hits] = True
        else:
            fp += 1

    tp = int(matched.sum())
    fn = len(wanted) - tp
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    return MetricsRow(beta, tp, fp, fn, precision, recall, suspicious)


def beta_values(beta_from: float, beta_to: float, beta_step: float) -> List[float]:
    if not 0 < beta_from <= beta_to <= 1:
        raise ConfigError(f"need 0 < beta_from <= beta_to <= 1, got {beta_from} .. {beta_to}")
    if beta_step <= 0:
        raise ConfigError(f"beta_step must be > 0, got {beta_step}")
    count = int(math.floor((beta_to - beta_from) / beta_step + 1e-9)) + 1
    return [round(beta_from + k * beta_step, 10) for k in range(count)]


def sweep(tables: NetworkTables, truth: GroundTruth, rules: RuleSet, config: DetectionConfig,
          beta_from: float, beta_to: float, beta_step: float, target_label: str,
          time_range: Optional[Tuple[int, int]] = None) -> List[MetricsRow]:
    """One MetricsRow per threshold; the similarity tensors are built once."""
    betas = beta_values(beta_from, beta_to, beta_step)
    if time_range is None:
        time_range = observation_span(tables, config.grid_step_s)
    if time_range is None:
        logger.warning("Sweep over an empty observation table")
        return [score([], truth, target_label, beta=b, suspicious=0) for b in betas]

    prepared = prepare_detection(tables, rules, config, time_range)

    def row(beta: float) -> MetricsRow:
        result = decide(prepared, beta)
        return score(result.predicted_windows(target_label), truth, target_label,
                     slot_count=prepared.plan.slot_count, beta=beta, suspicious=result.suspicious_count())

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            rows = list(pool.map(row, betas))
    else:
        rows = [row(b) for b in betas]
    logger.info(f"Swept {len(rows)} thresholds from {betas[0]} to {betas[-1]}")
    return rows


def metrics_frame(rows: Sequence[MetricsRow]) -> pd.DataFrame:
    return pd.DataFrame([r.to_record() for r in rows], columns=METRICS_COLUMNS)
