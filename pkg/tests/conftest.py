import numpy as np
import pandas as pd
import pytest

from config import DetectionConfig
from utils.evalharness import HUMIDITY, TEMPERATURE, generate_clean, harness_rules
from utils.logger import setup_logger
from utils.pipeline import observation_span, run_detection

# corrupted segment of the golden scenarios: slots [60, 72) touch windows 9, 10 and 11
SEGMENT = (60, 72)
SEGMENT_WINDOWS = {9, 10, 11}


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run full-size evaluation tests')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope='session', autouse=True)
def quiet_logs(tmp_path_factory):
    setup_logger(debug=False, log_dir=str(tmp_path_factory.mktemp('logs')))


def sawtooth(dataset, prop, node_id, segment, amplitude):
    """Copy of ``dataset`` with an alternating +-amplitude deviation on one stream."""
    start, end = segment
    values = {p: v.copy() for p, v in dataset.values.items()}
    j = dataset.node_order.index(node_id)
    values[prop][j, start:end] += amplitude * np.where(np.arange(end - start) % 2, -1.0, 1.0)
    return dataset.with_values(values)


def detect(dataset, rules=None, config=None, **overrides):
    tables = dataset.tables() if hasattr(dataset, 'tables') else dataset
    if rules is None:
        rules, active = harness_rules()
        overrides.setdefault('active_predicates', active)
    config = (config or DetectionConfig()).replace(**overrides)
    return run_detection(tables, rules, config, observation_span(tables, config.grid_step_s))


def cells(result, label=None):
    """{(property, node_id, window): verdict label} over owned windows."""
    return {(p.property, p.node_id, p.window): p.verdict for p in result.predicted_windows(label)}


@pytest.fixture(scope='session')
def clean_small():
    """12 nodes on a 4 x 3 lattice, 2 days, three properties."""
    return generate_clean(seed=11, nodes=12, days=2)


@pytest.fixture(scope='session')
def humidity_error(clean_small):
    """Humidity sensor at node 1 breaks; its temperature stays intact."""
    return sawtooth(clean_small, HUMIDITY, '1', SEGMENT, 15.0)


@pytest.fixture(scope='session')
def node_event(clean_small):
    """Temperature and humidity at node 10 both swing away from the neighborhood."""
    dataset = sawtooth(clean_small, TEMPERATURE, '10', SEGMENT, 5.0)
    return sawtooth(dataset, HUMIDITY, '10', SEGMENT, 15.0)


def write_csv(path, rows, columns):
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False)
    return str(path)
