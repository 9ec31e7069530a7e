"""
Detection reports (JSON) and metrics files (CSV), written atomically.
"""

import json
import logging
import os
import tempfile
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from config import DetectionConfig, __version__
from utils.classify import Verdict
from utils.evalharness import MetricsRow, ScoreError, metrics_frame
from utils.ingest import to_iso
from utils.pipeline import DetectionResult, PredictedWindow

logger = logging.getLogger(__name__)

REPORT_FORMAT = 'trendguard-report/1'

NODE_STATUS_NORMAL = 'normal'
NODE_STATUS_OUTLIERS = 'segment_outliers'
NODE_STATUS_EVENTS = 'unusual_events'
NODE_STATUS_UNEVALUATED = 'unevaluated'


def _neighbor_context(vd, i: int, j: int, w: int) -> Dict[str, object]:
    prop = vd.decisions.property_order[i]
    matrix = vd.version.sensor_matrices[prop]
    order = matrix.node_order
    neighbors = [order[k] for k in np.flatnonzero(matrix.cells[j])]
    similarities = list(vd.tensors[prop].neighbor_values(j, w).values())
    return {
        'neighbors': sorted(neighbors),
        'min_similarity': float(min(similarities)) if similarities else None,
        'median_similarity': float(np.median(similarities)) if similarities else None,
    }


def _records(result: DetectionResult) -> List[Dict[str, object]]:
    records = []
    anomalous = (Verdict.ERRONEOUS_OUTLIER, Verdict.UNUSUAL_EVENT)
    for vd in result.versions:
        table = vd.decisions
        hit = np.isin(table.verdicts, anomalous) & vd.windows[None, None, :]
        for i, j, w in np.argwhere(hit):
            i, j, w = int(i), int(j), int(w)
            slot_start, slot_end = result.plan.slot_range(w)
            record = {
                'property': table.property_order[i],
                'node_id': table.node_order[j],
                'window': w,
                'slot_start': slot_start,
                'slot_end': slot_end,
                'start': to_iso(result.slot_time(slot_start)),
                'end': to_iso(result.slot_time(slot_end)),
                'verdict': Verdict(int(table.verdicts[i, j, w])).label,
                'c1': int(table.c1[i, j, w]),
                'c2': int(table.c2[i, j, w]),
            }
            record.update(_neighbor_context(vd, i, j, w))
            records.append(record)
    records.sort(key=lambda r: (r['node_id'], r['property'], r['window']))
    return records


def node_statuses(result: DetectionResult) -> Dict[str, str]:
    """Per-node status over every owned window and property."""
    seen: Dict[str, set] = {}
    for vd in result.versions:
        verdicts = vd.decisions.verdicts[:, :, vd.windows]
        for j, node_id in enumerate(vd.decisions.node_order):
            seen.setdefault(node_id, set()).update(int(v) for v in np.unique(verdicts[:, j, :]))
    statuses = {}
    for node_id, found in sorted(seen.items()):
        if Verdict.UNUSUAL_EVENT in found:
            statuses[node_id] = NODE_STATUS_EVENTS
        elif Verdict.ERRONEOUS_OUTLIER in found:
            statuses[node_id] = NODE_STATUS_OUTLIERS
        elif Verdict.NORMAL in found:
            statuses[node_id] = NODE_STATUS_NORMAL
        else:
            statuses[node_id] = NODE_STATUS_UNEVALUATED
    return statuses


def build_report(result: DetectionResult) -> Dict[str, object]:
    prepared = result.prepared
    start, end = prepared.time_range
    records = _records(result)
    config = prepared.config.to_dict()
    config['beta'] = result.beta
    return {
        'format': REPORT_FORMAT,
        'generator': {'name': 'trendguard', 'version': __version__},
        'config': config,
        'time_range': {'from': to_iso(start), 'to': to_iso(end)},
        'grid': {
            'start': to_iso(start),
            'step_s': prepared.grid_step,
            'slot_count': result.plan.slot_count,
            'eta': result.plan.eta,
            'stride': result.plan.stride,
            'window_count': result.plan.count,
        },
        'records': records,
        'summary': {
            'observations': prepared.observation_count,
            'topology_versions': len(result.versions),
            'verdicts': result.verdict_counts(),
            'records': len(records),
            'node_status': node_statuses(result),
        },
        'audit': result.audit(),
    }


def empty_report(config: DetectionConfig) -> Dict[str, object]:
    """Report for a run that had no observations and no explicit time range."""
    return {
        'format': REPORT_FORMAT,
        'generator': {'name': 'trendguard', 'version': __version__},
        'config': config.to_dict(),
        'time_range': None,
        'grid': None,
        'records': [],
        'summary': {
            'observations': 0,
            'topology_versions': 0,
            'verdicts': {v.label: 0 for v in Verdict},
            'records': 0,
            'node_status': {},
        },
        'audit': None,
    }


def predictions_from_report(report: Dict[str, object]) -> List[PredictedWindow]:
    try:
        return [PredictedWindow(str(r['property']), str(r['node_id']), int(r['window']),
                                int(r['slot_start']), int(r['slot_end']), str(r['verdict']))
                for r in report['records']]
    except (KeyError, TypeError, ValueError) as e:
        raise ScoreError(f"malformed report record: {e}")


def report_slot_count(report: Dict[str, object]) -> Optional[int]:
    grid = report.get('grid') or {}
    count = grid.get('slot_count')
    return None if count is None else int(count)


def _atomic_write(path: str, write) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix='.tmp-', suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            write(f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def write_report(path: str, report: Dict[str, object]) -> None:
    _atomic_write(path, lambda f: (json.dump(report, f, indent=2, sort_keys=True), f.write('\n')))
    logger.info(f"Wrote report with {len(report['records'])} records to {path}")


def read_report(path: str) -> Dict[str, object]:
    with open(path, encoding='utf-8') as f:
        try:
            report = json.load(f)
        except json.JSONDecodeError as e:
            raise ScoreError(f"{path}: not a JSON report ({e})")
    if not isinstance(report, dict) or 'records' not in report:
        raise ScoreError(f"{path}: no records in report")
    return report


def write_metrics(path: str, rows: Sequence[MetricsRow]) -> None:
    frame = metrics_frame(rows)
    _atomic_write(path, lambda f: frame.to_csv(f, index=False))
    logger.info(f"Wrote {len(rows)} metrics rows to {path}")


def read_metrics(path: str) -> pd.DataFrame:
    return pd.read_csv(path, dtype=str, keep_default_na=False)
