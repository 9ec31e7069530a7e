"""
Spatial neighborhood matrices over nodes and sensors, versioned by network configuration.
"""

import logging
import os
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from utils.ingest import NodeRecord, SensorRecord, to_iso

logger = logging.getLogger(__name__)

# WGS84 equatorial radius, used as a sphere radius
EARTH_RADIUS_M = 6378137.0


class TopologyError(ValueError):
    """Inconsistent node/sensor configuration or mismatched matrix dimensions."""


def geo_distance(lat_a, lon_a, lat_b, lon_b):
    """Great-circle distance in meters (haversine on a sphere of EARTH_RADIUS_M).

    Accepts scalars or numpy arrays (broadcast).
    """
    lat_a, lon_a, lat_b, lon_b = (np.asarray(v, dtype=np.float64) for v in (lat_a, lon_a, lat_b, lon_b))
    half_dlat = np.sin(np.pi / 360.0 * (lat_a - lat_b))
    half_dlon = np.sin(np.pi / 360.0 * (lon_a - lon_b))
    d = half_dlat * half_dlat + np.cos(np.radians(lat_a)) * np.cos(np.radians(lat_b)) * half_dlon * half_dlon
    d = np.clip(d, 0.0, 1.0)
    b = np.arctan2(np.sqrt(d), np.sqrt(1.0 - d))
    distance = 2.0 * EARTH_RADIUS_M * b
    return float(distance) if distance.ndim == 0 else distance


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class NeighborhoodMatrix:
    valid_from: int
    valid_to: Optional[int]
    node_order: Tuple[str, ...]
    cells: np.ndarray

    def index_of(self, node_id: str) -> int:
        return self.node_order.index(node_id)

    def neighbors_of(self, node_id: str) -> List[str]:
        row = self.cells[self.index_of(node_id)]
        return [self.node_order[k] for k in np.flatnonzero(row)]


@dataclass(frozen=True)
class DeploymentVector:
    property: str
    node_order: Tuple[str, ...]
    entries: np.ndarray


@dataclass(frozen=True)
class SensorNeighborhoodMatrix:
    property: str
    valid_from: int
    valid_to: Optional[int]
    node_order: Tuple[str, ...]
    cells: np.ndarray

    def pairs(self) -> np.ndarray:
        """Neighbor pairs (j, k) with j < k, as a (P, 2) index array."""
        j, k = np.nonzero(np.triu(self.cells, k=1))
        return np.stack([j, k], axis=1) if j.size else np.empty((0, 2), dtype=np.int64)


def build_node_matrix(nodes: Sequence[NodeRecord], delta_m: float,
                      valid_from: Optional[int] = None, valid_to: Optional[int] = None) -> NeighborhoodMatrix:
    """u_jk = 1 iff the nodes are at most ``delta_m`` meters apart and j != k.

    Without explicit bounds the validity interval is the intersection of the
    nodes' active intervals.
    """
    if delta_m < 0:
        raise TopologyError(f"delta must be >= 0 meters, got {delta_m}")
    if not nodes:
        raise TopologyError("node list is empty")
    ids = [n.node_id for n in nodes]
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise TopologyError(f"duplicate node_id {dup!r}")

    lat = np.array([n.latitude for n in nodes])
    lon = np.array([n.longitude for n in nodes])
    distance = geo_distance(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    cells = (distance <= delta_m).astype(np.int8)
    np.fill_diagonal(cells, 0)

    if valid_from is None:
        valid_from = max(n.installed_at for n in nodes)
    if valid_to is None:
        ends = [n.removed_at for n in nodes if n.removed_at is not None]
        valid_to = min(ends) if ends else None
    return NeighborhoodMatrix(valid_from, valid_to, tuple(ids), _readonly(cells))


def build_deployment_vector(sensors: Iterable[SensorRecord], prop: str, interval: Tuple[int, Optional[int]],
                            node_order: Sequence[str]) -> DeploymentVector:
    """(e_i)_j = 1 iff node j hosts a sensor of ``prop`` for the whole interval."""
    start, end = interval
    if end is not None and end <= start:
        raise TopologyError("interval must be nonempty")
    position = {node_id: j for j, node_id in enumerate(node_order)}
    entries = np.zeros(len(node_order), dtype=np.int8)
    for sensor in sensors:
        if sensor.property != prop or sensor.node_id not in position:
            continue
        if sensor.active_throughout(start, end):
            entries[position[sensor.node_id]] = 1
    return DeploymentVector(prop, tuple(node_order), _readonly(entries))


def build_sensor_matrix(deployment: DeploymentVector, node_matrix: NeighborhoodMatrix) -> SensorNeighborhoodMatrix:
    """A_i = E_i • U with E_i = e_i^T e_i (elementwise product)."""
    if tuple(deployment.node_order) != tuple(node_matrix.node_order):
        raise TopologyError("deployment vector and node matrix disagree on node order")
    e = deployment.entries.astype(np.int8)
    cells = (np.outer(e, e) * node_matrix.cells).astype(np.int8)
    return SensorNeighborhoodMatrix(deployment.property, node_matrix.valid_from, node_matrix.valid_to,
                                    node_matrix.node_order, _readonly(cells))


class ConfigurationEvent(NamedTuple):
    time: int
    action: str  # 'install' or 'remove'
    kind: str  # 'node' or 'sensor'
    record: object

    @property
    def record_id(self) -> str:
        return self.record.node_id if self.kind == 'node' else self.record.sensor_id


def configuration_events(nodes: Iterable[NodeRecord], sensors: Iterable[SensorRecord]) -> List[ConfigurationEvent]:
    """Install/remove events of every node and sensor, in time order."""
    events = []
    for node in nodes:
        events.append(ConfigurationEvent(node.installed_at, 'install', 'node', node))
        if node.removed_at is not None:
            events.append(ConfigurationEvent(node.removed_at, 'remove', 'node', node))
    for sensor in sensors:
        events.append(ConfigurationEvent(sensor.installed_at, 'install', 'sensor', sensor))
        if sensor.removed_at is not None:
            events.append(ConfigurationEvent(sensor.removed_at, 'remove', 'sensor', sensor))
    # removals first at equal times so a replacement at T does not look like a double install
    events.sort(key=lambda e: (e.time, 0 if e.action == 'remove' else 1, e.kind, e.record_id))
    return events


@dataclass(frozen=True)
class TopologyVersion:
    valid_from: int
    valid_to: Optional[int]
    node_matrix: NeighborhoodMatrix
    sensor_matrices: Mapping[str, SensorNeighborhoodMatrix]

    @property
    def node_order(self) -> Tuple[str, ...]:
        return self.node_matrix.node_order

    def contains(self, start: int, end: int) -> bool:
        """True when [start, end) lies inside this version's interval."""
        return self.valid_from <= start and (self.valid_to is None or end <= self.valid_to)


def _replay(events: Sequence[ConfigurationEvent]):
    """Yield (time, active nodes, active sensors) after each distinct event time."""
    nodes: Dict[str, NodeRecord] = {}
    sensors: Dict[str, SensorRecord] = {}
    i = 0
    while i < len(events):
        t = events[i].time
        while i < len(events) and events[i].time == t:
            event = events[i]
            active = nodes if event.kind == 'node' else sensors
            key = event.record_id
            if event.action == 'install':
                if key in active:
                    raise TopologyError(f"{event.kind} {key} installed twice (at {to_iso(t)})")
                active[key] = event.record
            else:
                if key not in active:
                    raise TopologyError(f"{event.kind} {key} removed at {to_iso(t)} but not installed")
                del active[key]
            i += 1
        yield t, dict(nodes), dict(sensors)


def _build_version(start: int, end: Optional[int], nodes: Mapping[str, NodeRecord],
                   sensors: Mapping[str, SensorRecord], delta_m: float,
                   properties: Sequence[str]) -> TopologyVersion:
    ordered = [nodes[k] for k in sorted(nodes)]
    if ordered:
        node_matrix = build_node_matrix(ordered, delta_m, valid_from=start, valid_to=end)
    else:
        node_matrix = NeighborhoodMatrix(start, end, (), _readonly(np.zeros((0, 0), dtype=np.int8)))
    sensor_matrices = {}
    for prop in properties:
        deployment = build_deployment_vector(sensors.values(), prop, (start, end), node_matrix.node_order)
        sensor_matrices[prop] = build_sensor_matrix(deployment, node_matrix)
    return TopologyVersion(start, end, node_matrix, sensor_matrices)


def version_matrices(events: Sequence[ConfigurationEvent], time_range: Tuple[int, int], delta_m: float,
                     properties: Sequence[str]) -> List[TopologyVersion]:
    """Matrices for every configuration interval intersecting ``time_range``.

    The returned intervals partition [start, end); each configuration change
    inside the range closes the previous version and opens a new one.
    """
    start, end = time_range
    if end <= start:
        raise TopologyError("time range must be nonempty")
    times = [e.time for e in events]
    if times != sorted(times):
        raise TopologyError("configuration events must be time-ordered")

    state_nodes: Dict[str, NodeRecord] = {}
    state_sensors: Dict[str, SensorRecord] = {}
    boundaries = []  # (time, nodes, sensors) for changes strictly inside the range
    for t, nodes, sensors in _replay(events):
        if t <= start:
            state_nodes, state_sensors = nodes, sensors
        elif t < end:
            boundaries.append((t, nodes, sensors))

    versions = []
    current_from = start
    for t, nodes, sensors in boundaries:
        versions.append(_build_version(current_from, t, state_nodes, state_sensors, delta_m, properties))
        current_from, state_nodes, state_sensors = t, nodes, sensors
    versions.append(_build_version(current_from, end, state_nodes, state_sensors, delta_m, properties))

    logger.info(f"Built {len(versions)} topology version(s) for {to_iso(start)} .. {to_iso(end)}")
    return versions


def _stamp(epoch: Optional[int]) -> str:
    if epoch is None:
        return 'open'
    return pd.Timestamp(int(epoch), unit='s', tz='UTC').strftime('%Y%m%dT%H%M%SZ')


def _matrix_frame(cells: np.ndarray, node_order: Sequence[str]) -> pd.DataFrame:
    frame = pd.DataFrame(cells, index=list(node_order), columns=list(node_order))
    frame.index.name = 'node_id'
    return frame


def dump_matrices(versions: Sequence[TopologyVersion], out_dir: str) -> List[str]:
    """Write U_<from>_<to>.csv and A_<property>_<from>_<to>.csv for every version."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for version in versions:
        suffix = f"{_stamp(version.valid_from)}_{_stamp(version.valid_to)}"
        path = os.path.join(out_dir, f"U_{suffix}.csv")
        _matrix_frame(version.node_matrix.cells, version.node_order).to_csv(path)
        written.append(path)
        for prop, matrix in sorted(version.sensor_matrices.items()):
            path = os.path.join(out_dir, f"A_{prop}_{suffix}.csv")
            _matrix_frame(matrix.cells, matrix.node_order).to_csv(path)
            written.append(path)
    logger.info(f"Wrote {len(written)} matrix files to {out_dir}")
    return written
