"""
Canonical data model and CSV ingestion.

Three tables describe a network: nodes.csv, sensors.csv and observations.csv.
Timestamps are ISO-8601 with a timezone in the files and UTC epoch seconds in
memory. Observations are aligned onto a regular grid per sensor with
``to_grid``; missing slots stay NaN.
"""

import logging
import re
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

NODE_COLUMNS = ['node_id', 'latitude', 'longitude', 'installed_at', 'removed_at']
SENSOR_COLUMNS = ['sensor_id', 'node_id', 'property', 'installed_at', 'removed_at']
OBSERVATION_COLUMNS = ['sensor_id', 'timestamp', 'property', 'value', 'unit']

_PROPERTY_RE = re.compile(r'^[a-z][a-z0-9_]*$')
_TZ_SUFFIX = r'(?:Z|[+-]\d{2}:?\d{2})$'
_EPOCH = pd.Timestamp(0, tz='UTC')


class IngestError(ValueError):
    """A table could not be read or violates the data model."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = ''
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{where}{message}")


class GridAmbiguityError(ValueError):
    """Two observations of one sensor snap to the same grid slot."""


def validate_property(name: str) -> str:
    if not isinstance(name, str) or not _PROPERTY_RE.match(name):
        raise ValueError(f"invalid property name {name!r}: expected [a-z][a-z0-9_]*")
    return name


@dataclass(frozen=True)
class NodeRecord:
    node_id: str
    latitude: float
    longitude: float
    installed_at: int
    removed_at: Optional[int] = None

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude {self.latitude} out of range for node {self.node_id}")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude {self.longitude} out of range for node {self.node_id}")
        if self.removed_at is not None and self.removed_at <= self.installed_at:
            raise ValueError(f"node {self.node_id} removed_at must be after installed_at")

    def active_throughout(self, start: int, end: Optional[int]) -> bool:
        return _covers(self.installed_at, self.removed_at, start, end)


@dataclass(frozen=True)
class SensorRecord:
    sensor_id: str
    node_id: str
    property: str
    installed_at: int
    removed_at: Optional[int] = None

    def __post_init__(self):
        validate_property(self.property)
        if self.removed_at is not None and self.removed_at <= self.installed_at:
            raise ValueError(f"sensor {self.sensor_id} removed_at must be after installed_at")

    def active_at(self, t: int) -> bool:
        return self.installed_at <= t and (self.removed_at is None or t < self.removed_at)

    def active_throughout(self, start: int, end: Optional[int]) -> bool:
        return _covers(self.installed_at, self.removed_at, start, end)


def _covers(installed_at: int, removed_at: Optional[int], start: int, end: Optional[int]) -> bool:
    if installed_at > start:
        return False
    if removed_at is None:
        return True
    return end is not None and removed_at >= end


@dataclass(frozen=True)
class ObservationSeries:
    """One sensor's observations aligned on a regular grid.

    ``slots`` is a read-only float array; NaN marks a missing slot.
    ``discarded`` counts observations too far from every slot and ``rejected``
    those dropped because they collided with another observation.
    """

    sensor_id: str
    property: str
    grid_start: int
    grid_step: int
    slots: np.ndarray
    discarded: int = 0
    rejected: int = 0

    @property
    def slot_count(self) -> int:
        return int(self.slots.shape[0])

    @property
    def filled(self) -> int:
        return int(np.count_nonzero(~np.isnan(self.slots)))

    @property
    def missing(self) -> int:
        return self.slot_count - self.filled

    def slot_times(self) -> np.ndarray:
        return self.grid_start + self.grid_step * np.arange(self.slot_count, dtype=np.int64)


class NetworkTables(NamedTuple):
    nodes: Tuple[NodeRecord, ...]
    sensors: Tuple[SensorRecord, ...]
    observations: pd.DataFrame

    @property
    def properties(self) -> List[str]:
        return sorted({s.property for s in self.sensors})


def to_epoch(value) -> int:
    """ISO-8601 string (with timezone) or Timestamp to UTC epoch seconds."""
    ts = pd.Timestamp(value)
    if ts.tzinfo is None:
        raise ValueError(f"timestamp {value!r} has no timezone")
    return int((ts.tz_convert('UTC') - _EPOCH) // pd.Timedelta(seconds=1))


def to_iso(epoch_s) -> str:
    return pd.Timestamp(int(epoch_s), unit='s', tz='UTC').strftime('%Y-%m-%dT%H:%M:%SZ')


def format_timestamps(epochs) -> pd.Series:
    stamps = pd.to_datetime(pd.Series(np.asarray(epochs, dtype=np.int64)), unit='s', utc=True)
    return stamps.dt.strftime('%Y-%m-%dT%H:%M:%SZ')


def _read_table(path: str, columns: Sequence[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except pd.errors.EmptyDataError:
        raise IngestError("file is empty, header row required", path, 1)
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise IngestError(f"unreadable CSV: {e}", path)

    header = [c.strip() for c in frame.columns]
    missing = [c for c in columns if c not in header]
    if missing:
        raise IngestError(f"missing columns {missing}", path, 1)
    frame.columns = header
    return frame[list(columns)].apply(lambda col: col.str.strip())


def _line_of(frame: pd.DataFrame, mask) -> int:
    # header is line 1
    return int(np.flatnonzero(np.asarray(mask))[0]) + 2


def _require(frame: pd.DataFrame, columns: Sequence[str], path: str) -> None:
    for column in columns:
        empty = frame[column] == ''
        if empty.any():
            raise IngestError(f"empty {column}", path, _line_of(frame, empty))


def _parse_times(frame: pd.DataFrame, column: str, path: str, optional: bool = False) -> np.ndarray:
    """Vectorized ISO-8601 parse; returns int64 epoch seconds (-1 for empty optional)."""
    raw = frame[column]
    present = raw != ''
    if not optional and not present.all():
        raise IngestError(f"empty {column}", path, _line_of(frame, ~present))

    no_tz = present & ~raw.str.contains(_TZ_SUFFIX, regex=True)
    if no_tz.any():
        line = _line_of(frame, no_tz)
        raise IngestError(f"{column} {raw[no_tz].iloc[0]!r} has no timezone", path, line)

    parsed = pd.to_datetime(raw.where(present, None), format='ISO8601', utc=True, errors='coerce')
    bad = present & parsed.isna()
    if bad.any():
        raise IngestError(f"malformed {column} {raw[bad].iloc[0]!r}", path, _line_of(frame, bad))

    out = np.full(len(frame), -1, dtype=np.int64)
    if present.any():
        out[present.to_numpy()] = ((parsed[present] - _EPOCH) // pd.Timedelta(seconds=1)).to_numpy(dtype=np.int64)
    return out


def _to_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return np.nan


def _parse_floats(frame: pd.DataFrame, column: str, path: str) -> np.ndarray:
    # float() is correctly rounded, so written values reload bit-exact
    values = frame[column].map(_to_float).astype(np.float64)
    bad = values.isna() | ~np.isfinite(values.fillna(0.0))
    if bad.any():
        raise IngestError(f"malformed {column} {frame[column][bad].iloc[0]!r}", path, _line_of(frame, bad))
    return values.to_numpy(dtype=np.float64)


def _duplicates(frame: pd.DataFrame, column: str, path: str, what: str) -> None:
    dup = frame[column].duplicated()
    if dup.any():
        line = _line_of(frame, dup)
        raise IngestError(f"duplicate {what} {frame[column][dup].iloc[0]!r}", path, line)


def load_nodes(path: str) -> Tuple[NodeRecord, ...]:
    frame = _read_table(path, NODE_COLUMNS)
    _require(frame, ['node_id', 'latitude', 'longitude'], path)
    _duplicates(frame, 'node_id', path, 'node_id')
    lat = _parse_floats(frame, 'latitude', path)
    lon = _parse_floats(frame, 'longitude', path)
    installed = _parse_times(frame, 'installed_at', path)
    removed = _parse_times(frame, 'removed_at', path, optional=True)

    nodes = []
    for idx, node_id in enumerate(frame['node_id']):
        try:
            nodes.append(NodeRecord(
                node_id=node_id,
                latitude=float(lat[idx]),
                longitude=float(lon[idx]),
                installed_at=int(installed[idx]),
                removed_at=None if frame['removed_at'].iat[idx] == '' else int(removed[idx]),
            ))
        except ValueError as e:
            raise IngestError(str(e), path, idx + 2)
    return tuple(nodes)


def load_sensors(path: str, nodes: Sequence[NodeRecord]) -> Tuple[SensorRecord, ...]:
    frame = _read_table(path, SENSOR_COLUMNS)
    _require(frame, ['sensor_id', 'node_id', 'property'], path)
    _duplicates(frame, 'sensor_id', path, 'sensor_id')

    known = {n.node_id for n in nodes}
    dangling = ~frame['node_id'].isin(known)
    if dangling.any():
        line = _line_of(frame, dangling)
        raise IngestError(f"dangling node_id reference {frame['node_id'][dangling].iloc[0]!r}", path, line)

    installed = _parse_times(frame, 'installed_at', path)
    removed = _parse_times(frame, 'removed_at', path, optional=True)

    sensors = []
    for idx, row in enumerate(frame.itertuples(index=False)):
        try:
            sensors.append(SensorRecord(
                sensor_id=row.sensor_id,
                node_id=row.node_id,
                property=row.property,
                installed_at=int(installed[idx]),
                removed_at=None if row.removed_at == '' else int(removed[idx]),
            ))
        except ValueError as e:
            raise IngestError(str(e), path, idx + 2)

    _check_sensor_overlap(sensors, path)
    return tuple(sensors)


def _check_sensor_overlap(sensors: Sequence[SensorRecord], path: str) -> None:
    """At any instant a node hosts at most one sensor per property."""
    by_slot = {}
    for line, sensor in enumerate(sensors, start=2):
        by_slot.setdefault((sensor.node_id, sensor.property), []).append((sensor, line))
    for (node_id, prop), group in by_slot.items():
        group.sort(key=lambda item: item[0].installed_at)
        for (prev, _), (cur, line) in zip(group, group[1:]):
            if prev.removed_at is None or cur.installed_at < prev.removed_at:
                raise IngestError(
                    f"sensor {cur.sensor_id} overlaps sensor {prev.sensor_id} "
                    f"for property {prop} on node {node_id}", path, line)


def load_observations(path: str, sensors: Sequence[SensorRecord]) -> pd.DataFrame:
    frame = _read_table(path, OBSERVATION_COLUMNS)
    if frame.empty:
        return _empty_observations()

    _require(frame, ['sensor_id', 'property', 'unit'], path)
    by_id = {s.sensor_id: s for s in sensors}
    dangling = ~frame['sensor_id'].isin(by_id.keys())
    if dangling.any():
        line = _line_of(frame, dangling)
        raise IngestError(f"dangling sensor_id reference {frame['sensor_id'][dangling].iloc[0]!r}", path, line)

    timestamps = _parse_times(frame, 'timestamp', path)
    values = _parse_floats(frame, 'value', path)

    expected_prop = frame['sensor_id'].map({k: s.property for k, s in by_id.items()})
    wrong = frame['property'] != expected_prop
    if wrong.any():
        line = _line_of(frame, wrong)
        raise IngestError(f"property {frame['property'][wrong].iloc[0]!r} does not match its sensor", path, line)

    installed = frame['sensor_id'].map({k: s.installed_at for k, s in by_id.items()}).to_numpy(dtype=np.int64)
    removed = frame['sensor_id'].map(
        {k: (s.removed_at if s.removed_at is not None else np.iinfo(np.int64).max) for k, s in by_id.items()}
    ).to_numpy(dtype=np.int64)
    outside = (timestamps < installed) | (timestamps >= removed)
    if outside.any():
        line = _line_of(frame, outside)
        raise IngestError("observation outside its sensor's deployment interval", path, line)

    return pd.DataFrame({
        'sensor_id': frame['sensor_id'].to_numpy(),
        'timestamp': timestamps,
        'property': frame['property'].to_numpy(),
        'value': values,
        'unit': frame['unit'].to_numpy(),
    })


def _empty_observations() -> pd.DataFrame:
    return pd.DataFrame({
        'sensor_id': pd.Series(dtype=object),
        'timestamp': pd.Series(dtype=np.int64),
        'property': pd.Series(dtype=object),
        'value': pd.Series(dtype=np.float64),
        'unit': pd.Series(dtype=object),
    })


def load_tables(nodes_path: str, sensors_path: str, observations_path: str) -> NetworkTables:
    """Read and cross-validate the three network tables; rows keep file order."""
    nodes = load_nodes(nodes_path)
    sensors = load_sensors(sensors_path, nodes)
    observations = load_observations(observations_path, sensors)
    logger.info(f"Loaded {len(nodes)} nodes, {len(sensors)} sensors, {len(observations)} observations")
    return NetworkTables(nodes, sensors, observations)


def to_grid(observations: pd.DataFrame, sensor: SensorRecord, grid_step: int,
            window_of_interest: Tuple[int, int], strict: bool = True) -> ObservationSeries:
    """Snap one sensor's observations to the nearest slot of a regular grid.

    The grid starts at ``window_of_interest[0]`` and has one slot per
    ``grid_step`` seconds up to the (exclusive) end. An observation is kept when
    it lies within ``grid_step / 2`` of a slot. With ``strict`` a slot collision
    raises GridAmbiguityError; otherwise all observations of that slot are
    rejected and the slot stays missing.
    """
    start, end = int(window_of_interest[0]), int(window_of_interest[1])
    if grid_step <= 0:
        raise ValueError(f"grid_step must be > 0, got {grid_step}")
    if end <= start:
        raise ValueError("window_of_interest must be nonempty")

    slot_count = -(-(end - start) // grid_step)
    slots = np.full(slot_count, np.nan)

    if 'sensor_id' in observations.columns and len(observations):
        own = observations[observations['sensor_id'] == sensor.sensor_id]
    else:
        own = observations
    times = own['timestamp'].to_numpy(dtype=np.int64)
    values = own['value'].to_numpy(dtype=np.float64)

    offset = times - start
    index = (2 * offset + grid_step) // (2 * grid_step)
    distance = np.abs(offset - index * grid_step)
    inside = (index >= 0) & (index < slot_count) & (2 * distance <= grid_step)
    discarded = int(np.count_nonzero(~inside))
    if discarded:
        logger.warning(f"Sensor {sensor.sensor_id}: discarded {discarded} observations off the grid")

    index, values = index[inside], values[inside]
    unique, counts = np.unique(index, return_counts=True)
    colliding = unique[counts > 1]
    rejected = 0
    if colliding.size:
        if strict:
            first = int(colliding[0])
            raise GridAmbiguityError(
                f"sensor {sensor.sensor_id}: {int(counts[counts > 1][0])} observations snap to slot {first} "
                f"({to_iso(start + first * grid_step)})")
        clash = np.isin(index, colliding)
        rejected = int(np.count_nonzero(clash))
        logger.warning(f"Sensor {sensor.sensor_id}: rejected {rejected} observations in {colliding.size} ambiguous slots")
        index, values = index[~clash], values[~clash]

    slots[index] = values
    slots.setflags(write=False)
    return ObservationSeries(
        sensor_id=sensor.sensor_id,
        property=sensor.property,
        grid_start=start,
        grid_step=int(grid_step),
        slots=slots,
        discarded=discarded,
        rejected=rejected,
    )


def series_to_observations(series: ObservationSeries, unit: str) -> pd.DataFrame:
    """Filled slots back as observation rows (timestamps exactly on the grid)."""
    filled = ~np.isnan(series.slots)
    return pd.DataFrame({
        'sensor_id': series.sensor_id,
        'timestamp': series.slot_times()[filled],
        'property': series.property,
        'value': series.slots[filled],
        'unit': unit,
    }, columns=OBSERVATION_COLUMNS)


def write_observations(path: str, observations: pd.DataFrame) -> None:
    frame = observations.copy()
    frame['timestamp'] = format_timestamps(frame['timestamp']).to_numpy()
    frame[OBSERVATION_COLUMNS].to_csv(path, index=False, encoding='utf-8')


def write_nodes(path: str, nodes: Sequence[NodeRecord]) -> None:
    pd.DataFrame([{
        'node_id': n.node_id,
        'latitude': f"{n.latitude:.7f}",
        'longitude': f"{n.longitude:.7f}",
        'installed_at': to_iso(n.installed_at),
        'removed_at': '' if n.removed_at is None else to_iso(n.removed_at),
    } for n in nodes], columns=NODE_COLUMNS).to_csv(path, index=False, encoding='utf-8')


def write_sensors(path: str, sensors: Sequence[SensorRecord]) -> None:
    pd.DataFrame([{
        'sensor_id': s.sensor_id,
        'node_id': s.node_id,
        'property': s.property,
        'installed_at': to_iso(s.installed_at),
        'removed_at': '' if s.removed_at is None else to_iso(s.removed_at),
    } for s in sensors], columns=SENSOR_COLUMNS).to_csv(path, index=False, encoding='utf-8')
