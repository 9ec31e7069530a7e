import json
import os

import pandas as pd
import pytest
from click.testing import CliRunner

from cli import cli
from config import __version__


@pytest.fixture
def run(tmp_path):
    runner = CliRunner()

    def invoke(*args):
        return runner.invoke(cli, ['--log-dir', str(tmp_path / 'logs'), *args], catch_exceptions=False)
    return invoke


@pytest.fixture
def dataset(run, tmp_path):
    out = tmp_path / 'data'
    result = run('gen', '--mode', 'outliers', '--seed', '3', '--nodes', '12', '--days', '2', '--rounds', '1',
                 '--out', str(out))
    assert result.exit_code == 0, result.output
    return out


def inputs(data):
    return ['--nodes', str(data / 'nodes.csv'), '--sensors', str(data / 'sensors.csv'),
            '--obs', str(data / 'observations.csv'), '--rules', str(data / 'rules.txt')]


def test_version(run):
    result = run('--version')
    assert result.exit_code == 0
    assert __version__ in result.output


class TestGen:
    def test_writes_every_file(self, dataset):
        assert sorted(os.listdir(dataset)) == ['nodes.csv', 'observations.csv', 'rules.txt', 'sensors.csv',
                                               'truth.csv']
        truth = pd.read_csv(dataset / 'truth.csv')
        assert len(truth) == 16
        assert set(truth['label']) == {'ErroneousOutlier'}
        rules = (dataset / 'rules.txt').read_text(encoding='utf-8')
        assert 'air_temperature hasStrongCorrelation relative_humidity' in rules

    def test_same_seed_same_files(self, run, dataset, tmp_path):
        again = tmp_path / 'again'
        run('gen', '--mode', 'outliers', '--seed', '3', '--nodes', '12', '--days', '2', '--rounds', '1',
            '--out', str(again))
        for name in os.listdir(dataset):
            assert (dataset / name).read_bytes() == (again / name).read_bytes()

    def test_clean_mode_has_no_truth(self, run, tmp_path):
        out = tmp_path / 'clean'
        result = run('gen', '--mode', 'clean', '--nodes', '4', '--days', '1', '--out', str(out))
        assert result.exit_code == 0
        assert pd.read_csv(out / 'truth.csv').empty

    def test_positive_mode_suggests_direction_predicates(self, run, tmp_path):
        out = tmp_path / 'positive'
        run('gen', '--mode', 'events-positive', '--nodes', '12', '--days', '2', '--rounds', '1', '--out', str(out))
        rules = (out / 'rules.txt').read_text(encoding='utf-8')
        assert 'hasPositiveCorrelation' in rules
        assert 'positive' in rules.splitlines()[1]

    def test_unknown_mode(self, run, tmp_path):
        result = run('gen', '--mode', 'glitches', '--out', str(tmp_path / 'x'))
        assert result.exit_code == 2


class TestDetect:
    def test_report(self, run, dataset, tmp_path):
        out = tmp_path / 'report.json'
        result = run('detect', *inputs(dataset), '--out', str(out))
        assert result.exit_code == 0, result.output
        report = json.loads(out.read_text(encoding='utf-8'))
        assert report['format'] == 'trendguard-report/1'
        assert report['grid']['slot_count'] == 288
        assert report['grid']['window_count'] == 47
        keys = [(r['node_id'], r['property'], r['window']) for r in report['records']]
        assert keys == sorted(keys)
        assert report['summary']['records'] == len(report['records']) > 0

    def test_options_reach_the_config(self, run, dataset, tmp_path):
        out = tmp_path / 'report.json'
        result = run('detect', *inputs(dataset), '--beta', '0.8', '--eta', '8', '--delta', '200',
                     '--scale', 'air_pressure=0.5', '--out', str(out))
        assert result.exit_code == 0, result.output
        report = json.loads(out.read_text(encoding='utf-8'))
        assert report['config']['beta'] == 0.8
        assert report['config']['eta'] == 8
        assert report['config']['delta_m'] == 200.0
        assert report['config']['value_scales']['air_pressure'] == 0.5

    def test_dumps(self, run, dataset, tmp_path):
        result = run('detect', *inputs(dataset), '--out', str(tmp_path / 'r.json'),
                     '--dump-matrices', str(tmp_path / 'm'), '--dump-similarity', str(tmp_path / 's'))
        assert result.exit_code == 0, result.output
        assert any(name.startswith('U_') for name in os.listdir(tmp_path / 'm'))
        assert sorted(os.listdir(tmp_path / 's')) == [
            'SM_air_pressure.csv', 'SM_air_temperature.csv', 'SM_relative_humidity.csv']

    def test_missing_input(self, run, dataset, tmp_path):
        args = inputs(dataset)
        args[args.index('--obs') + 1] = str(tmp_path / 'nope.csv')
        result = run('detect', *args, '--out', str(tmp_path / 'r.json'))
        assert result.exit_code == 2

    def test_invalid_eta(self, run, dataset, tmp_path):
        result = run('detect', *inputs(dataset), '--eta', '7', '--out', str(tmp_path / 'r.json'))
        assert result.exit_code == 2

    def test_rule_on_unknown_property(self, run, dataset, tmp_path):
        rules = tmp_path / 'bad_rules.txt'
        rules.write_text('air_temperature hasStrongCorrelation wind_speed\n', encoding='utf-8')
        args = inputs(dataset)
        args[args.index('--rules') + 1] = str(rules)
        result = run('detect', *args, '--out', str(tmp_path / 'r.json'))
        assert result.exit_code == 2
        assert 'wind_speed' in result.output

    def test_empty_range_warns(self, run, dataset, tmp_path):
        out = tmp_path / 'r.json'
        result = run('detect', *inputs(dataset), '--from', '2012-01-01T00:00:00Z', '--to', '2012-01-02T00:00:00Z',
                     '--out', str(out))
        assert result.exit_code == 0
        assert 'no observations' in result.output
        report = json.loads(out.read_text(encoding='utf-8'))
        assert report['records'] == []
        assert report['summary']['observations'] == 0

    def test_reversed_range(self, run, dataset, tmp_path):
        result = run('detect', *inputs(dataset), '--from', '2011-08-19T00:00:00Z', '--to', '2011-08-18T00:00:00Z',
                     '--out', str(tmp_path / 'r.json'))
        assert result.exit_code == 2


def write_report(path, records, slot_count=288):
    path.write_text(json.dumps({'config': {'beta': 0.9}, 'grid': {'slot_count': slot_count},
                                'records': records}), encoding='utf-8')
    return str(path)


def record(prop, node, window, verdict='ErroneousOutlier'):
    return {'property': prop, 'node_id': node, 'window': window, 'slot_start': 6 * window,
            'slot_end': 6 * window + 12, 'verdict': verdict}


class TestScore:
    @pytest.fixture
    def truth(self, tmp_path):
        path = tmp_path / 'truth.csv'
        path.write_text('property,node_id,slot_start,slot_end,label\n'
                        'relative_humidity,1,60,72,ErroneousOutlier\n', encoding='utf-8')
        return str(path)

    def test_perfect(self, run, truth, tmp_path):
        report = write_report(tmp_path / 'r.json', [record('relative_humidity', '1', w) for w in (9, 10, 11)])
        out = tmp_path / 'metrics.csv'
        result = run('score', '--report', report, '--truth', truth, '--label', 'ErroneousOutlier', '--out', str(out))
        assert result.exit_code == 0, result.output
        row = pd.read_csv(out, dtype=str).iloc[0]
        assert (row['beta'], row['tp'], row['fp'], row['fn']) == ('0.9000', '1', '0', '0')
        assert row['precision'] == '1.000000' and row['recall'] == '1.000000'

    def test_empty_report(self, run, truth, tmp_path):
        report = write_report(tmp_path / 'r.json', [])
        out = tmp_path / 'metrics.csv'
        result = run('score', '--report', report, '--truth', truth, '--label', 'ErroneousOutlier', '--out', str(out))
        assert result.exit_code == 0
        assert 'precision=undefined' in result.output
        row = pd.read_csv(out, dtype=str, keep_default_na=False).iloc[0]
        assert row['precision'] == '' and row['recall'] == '0.000000'

    def test_bad_label(self, run, truth, tmp_path):
        report = write_report(tmp_path / 'r.json', [])
        result = run('score', '--report', report, '--truth', truth, '--label', 'Normal', '--out',
                     str(tmp_path / 'm.csv'))
        assert result.exit_code == 2

    def test_not_a_report(self, run, truth, tmp_path):
        bad = tmp_path / 'r.json'
        bad.write_text('[1, 2', encoding='utf-8')
        result = run('score', '--report', str(bad), '--truth', truth, '--label', 'ErroneousOutlier', '--out',
                     str(tmp_path / 'm.csv'))
        assert result.exit_code == 1


class TestSweep:
    def test_default_grid(self, run, dataset, tmp_path):
        out = tmp_path / 'sweep.csv'
        result = run('sweep', *inputs(dataset), '--truth', str(dataset / 'truth.csv'), '--label', 'ErroneousOutlier',
                     '--out', str(out))
        assert result.exit_code == 0, result.output
        frame = pd.read_csv(out, dtype=str, keep_default_na=False)
        assert len(frame) == 29
        assert frame['beta'].iloc[0] == '0.7000' and frame['beta'].iloc[-1] == '0.9800'

    def test_bad_grid(self, run, dataset, tmp_path):
        result = run('sweep', *inputs(dataset), '--truth', str(dataset / 'truth.csv'), '--label', 'ErroneousOutlier',
                     '--beta-from', '0.9', '--beta-to', '0.8', '--out', str(tmp_path / 's.csv'))
        assert result.exit_code == 2
