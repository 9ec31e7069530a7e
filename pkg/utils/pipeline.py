"""
Detection pipeline: topology versions -> similarity tensors -> suspicion vote ->
cross-property classification, over one queried time range.

``prepare_detection`` does everything that does not depend on the similarity
threshold; ``decide`` applies a threshold. ``run_detection`` is both in one call.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from config import DetectionConfig
from utils.classify import DecisionTable, Verdict, classify_all
from utils.ingest import NetworkTables, ObservationSeries, SensorRecord, to_grid, to_iso
from utils.rules import RelationshipMatrix, RuleSet, build_relationship_matrix
from utils.screening import (SimilarityTensor, Suspicion, SuspicionTable, WindowPlan,
                             build_similarity_tensor, plan_windows, vote_suspicious)
from utils.topology import TopologyVersion, configuration_events, version_matrices

logger = logging.getLogger(__name__)


class PredictedWindow(NamedTuple):
    property: str
    node_id: str
    window: int
    slot_start: int
    slot_end: int
    verdict: str


@dataclass(frozen=True)
class ScreenedVersion:
    version: TopologyVersion
    windows: np.ndarray  # bool mask over the plan: windows assigned to this version
    tensors: Mapping[str, SimilarityTensor]


@dataclass(frozen=True)
class PreparedDetection:
    config: DetectionConfig
    time_range: Tuple[int, int]
    plan: WindowPlan
    relationship: RelationshipMatrix
    versions: Tuple[ScreenedVersion, ...]
    dropped_windows: Tuple[int, ...]
    observation_count: int

    @property
    def grid_start(self) -> int:
        return self.time_range[0]

    @property
    def grid_step(self) -> int:
        return self.config.grid_step_s


@dataclass(frozen=True)
class VersionDecision:
    version: TopologyVersion
    windows: np.ndarray
    tensors: Mapping[str, SimilarityTensor]
    suspicion: Mapping[str, SuspicionTable]
    decisions: DecisionTable


@dataclass(frozen=True)
class DetectionResult:
    prepared: PreparedDetection
    beta: float
    versions: Tuple[VersionDecision, ...]

    @property
    def plan(self) -> WindowPlan:
        return self.prepared.plan

    @property
    def grid_start(self) -> int:
        return self.prepared.grid_start

    @property
    def grid_step(self) -> int:
        return self.prepared.grid_step

    @property
    def empty(self) -> bool:
        return not self.versions

    def slot_time(self, slot: int) -> int:
        return self.grid_start + slot * self.grid_step

    def predicted_windows(self, label: Optional[str] = None) -> List[PredictedWindow]:
        """Anomalous (property, node, window) cells, optionally of one verdict label."""
        wanted = (Verdict.ERRONEOUS_OUTLIER, Verdict.UNUSUAL_EVENT) if label is None else (Verdict.from_label(label),)
        out = []
        for vd in self.versions:
            table = vd.decisions
            hit = np.isin(table.verdicts, wanted) & vd.windows[None, None, :]
            for i, j, w in np.argwhere(hit):
                start, end = self.plan.slot_range(int(w))
                out.append(PredictedWindow(table.property_order[i], table.node_order[j], int(w), start, end,
                                           Verdict(int(table.verdicts[i, j, w])).label))
        out.sort(key=lambda p: (p.node_id, p.property, p.window))
        return out

    def verdict_counts(self) -> Dict[str, int]:
        """Verdict counts over the windows each version owns."""
        counts = {v.label: 0 for v in Verdict}
        for vd in self.versions:
            assigned = vd.decisions.verdicts[:, :, vd.windows]
            for v in Verdict:
                counts[v.label] += int(np.count_nonzero(assigned == v))
        return counts

    def suspicious_count(self) -> int:
        return sum(int(np.count_nonzero(t.flags[:, vd.windows] == Suspicion.SUSPICIOUS))
                   for vd in self.versions for t in vd.suspicion.values())

    def audit(self) -> Dict[str, object]:
        versions = []
        for vd in self.versions:
            v = vd.version
            versions.append({
                'valid_from': to_iso(v.valid_from),
                'valid_to': None if v.valid_to is None else to_iso(v.valid_to),
                'node_order': list(v.node_order),
                'node_matrix': v.node_matrix.cells.tolist(),
                'sensor_matrices': {p: m.cells.tolist() for p, m in sorted(v.sensor_matrices.items())},
                'windows': [int(w) for w in np.flatnonzero(vd.windows)],
                'similarity': [vd.tensors[p].summary() for p in sorted(vd.tensors)],
                'suspicious': {p: int(np.count_nonzero(t.flags[:, vd.windows] == Suspicion.SUSPICIOUS))
                               for p, t in sorted(vd.suspicion.items())},
            })
        return {
            'relationship': self.prepared.relationship.to_dict(),
            'versions': versions,
            'dropped_windows': list(self.prepared.dropped_windows),
        }


def _series_by_sensor(tables: NetworkTables, config: DetectionConfig,
                      time_range: Tuple[int, int]) -> Tuple[Dict[str, ObservationSeries], int]:
    start, end = time_range
    step = config.grid_step_s
    slot_count = -(-(end - start) // step)
    last = start + (slot_count - 1) * step

    obs = tables.observations
    ts = obs['timestamp'].to_numpy(dtype=np.int64)
    # keep what can snap onto the grid
    near = (2 * ts >= 2 * start - step) & (2 * ts <= 2 * last + step)
    in_range = obs[near]

    empty = in_range.iloc[0:0]
    grouped = {sid: frame for sid, frame in in_range.groupby('sensor_id', sort=False)}
    series = {}
    for sensor in tables.sensors:
        if sensor.removed_at is not None and sensor.removed_at <= start:
            continue
        if sensor.installed_at >= end:
            continue
        series[sensor.sensor_id] = to_grid(grouped.get(sensor.sensor_id, empty), sensor, step,
                                           time_range, strict=False)
    return series, int(len(in_range))


def _sensor_for(sensors: Sequence[SensorRecord], node_id: str, prop: str,
                version: TopologyVersion) -> Optional[SensorRecord]:
    for sensor in sensors:
        if sensor.node_id == node_id and sensor.property == prop \
                and sensor.active_throughout(version.valid_from, version.valid_to):
            return sensor
    return None


def _assign_windows(plan: WindowPlan, versions: Sequence[TopologyVersion], start: int,
                    step: int) -> np.ndarray:
    """Version index of each window, -1 when a window straddles a version boundary."""
    first = start + plan.starts() * step
    last = first + (plan.eta - 1) * step
    assigned = np.full(plan.count, -1, dtype=np.int64)
    for index, version in enumerate(versions):
        inside = first >= version.valid_from
        if version.valid_to is not None:
            inside &= last < version.valid_to
        assigned[inside] = index
    return assigned


def prepare_detection(tables: NetworkTables, rules: RuleSet, config: DetectionConfig,
                      time_range: Tuple[int, int]) -> PreparedDetection:
    """Build every threshold-independent artifact of a detection run."""
    start, end = int(time_range[0]), int(time_range[1])
    if end <= start:
        raise ValueError("time range must be nonempty")
    step = config.grid_step_s
    properties = tables.properties
    relationship = build_relationship_matrix(rules, properties, config.active_predicates)
    slot_count = -(-(end - start) // step)
    plan = plan_windows(slot_count, config.eta)

    series, observation_count = _series_by_sensor(tables, config, (start, end))
    if observation_count == 0:
        logger.warning(f"No observations between {to_iso(start)} and {to_iso(end)}")
        return PreparedDetection(config, (start, end), plan, relationship, (), (), 0)

    events = configuration_events(tables.nodes, tables.sensors)
    versions = version_matrices(events, (start, end), config.delta_m, properties)
    assigned = _assign_windows(plan, versions, start, step)
    dropped = tuple(int(w) for w in np.flatnonzero(assigned < 0))
    if dropped:
        logger.warning(f"{len(dropped)} window(s) straddle a topology change and stay unevaluated")

    screened = []
    for index, version in enumerate(versions):
        mask = assigned == index

        def screen(prop: str, version=version, mask=mask) -> SimilarityTensor:
            slots = {}
            for node_id in version.node_order:
                sensor = _sensor_for(tables.sensors, node_id, prop, version)
                if sensor is not None and sensor.sensor_id in series:
                    slots[node_id] = series[sensor.sensor_id].slots
            return build_similarity_tensor(slots, version.sensor_matrices[prop], plan,
                                           config.scale_for(prop), window_mask=mask)

        if config.workers > 1 and len(properties) > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                tensors = dict(zip(properties, pool.map(screen, properties)))
        else:
            tensors = {prop: screen(prop) for prop in properties}
        screened.append(ScreenedVersion(version, mask, tensors))

    return PreparedDetection(config, (start, end), plan, relationship, tuple(screened), dropped,
                             observation_count)


def decide(prepared: PreparedDetection, beta: Optional[float] = None) -> DetectionResult:
    """Vote and classify every screened version at one similarity threshold."""
    beta = prepared.config.beta if beta is None else beta
    decided = []
    for sv in prepared.versions:
        suspicion = {prop: vote_suspicious(tensor, beta) for prop, tensor in sv.tensors.items()}
        decisions = classify_all(suspicion, prepared.relationship)
        decided.append(VersionDecision(sv.version, sv.windows, sv.tensors, suspicion, decisions))
    return DetectionResult(prepared, beta, tuple(decided))


def run_detection(tables: NetworkTables, rules: RuleSet, config: DetectionConfig,
                  time_range: Tuple[int, int]) -> DetectionResult:
    prepared = prepare_detection(tables, rules, config, time_range)
    result = decide(prepared)
    if not result.empty:
        counts = result.verdict_counts()
        logger.info(f"Detection {to_iso(time_range[0])} .. {to_iso(time_range[1])} at beta={result.beta}: "
                    f"{counts['ErroneousOutlier']} erroneous outlier and {counts['UnusualEvent']} "
                    f"unusual event window(s)")
    return result


def observation_span(tables: NetworkTables, grid_step: int) -> Optional[Tuple[int, int]]:
    """[first, last + step) of all observations, or None when there are none."""
    if tables.observations.empty:
        return None
    ts = tables.observations['timestamp']
    return int(ts.min()), int(ts.max()) + grid_step
