import pytest

from app import create_app
from utils.evalharness import harness_rules


@pytest.fixture
def client(humidity_error, tmp_path):
    humidity_error.write(str(tmp_path))
    rules, _ = harness_rules()
    (tmp_path / 'rules.txt').write_text(rules.to_text(), encoding='utf-8')
    app = create_app('testing')
    app.config['DATA_DIR'] = str(tmp_path)
    return app.test_client()


def test_health(client):
    response = client.get('/')
    assert response.status_code == 200
    body = response.get_json()
    assert body['status'] == 'ok'
    assert body['detection']['beta'] == 0.9
    assert response.headers['X-Content-Type-Options'] == 'nosniff'


def test_unknown_route(client):
    response = client.get('/api/v1/nothing')
    assert response.status_code == 404
    assert response.get_json()['status'] == 'error'


class TestDetect:
    def test_report(self, client):
        response = client.get('/api/v1/detect')
        assert response.status_code == 200
        report = response.get_json()['report']
        cells = {(r['property'], r['node_id'], r['window']): r['verdict'] for r in report['records']}
        assert cells == {('relative_humidity', '1', w): 'ErroneousOutlier' for w in (9, 10, 11)}
        record = report['records'][0]
        assert record['c1'] == 0 and record['c2'] == 1
        assert record['start'] == '2011-08-18T09:00:00Z'
        assert report['summary']['node_status']['1'] == 'segment_outliers'
        assert report['summary']['node_status']['2'] == 'normal'

    def test_time_range_and_overrides(self, client):
        response = client.get('/api/v1/detect', query_string={
            'from': '2011-08-18T00:00:00Z', 'to': '2011-08-19T00:00:00Z', 'beta': '0.85', 'eta': '12'})
        assert response.status_code == 200
        report = response.get_json()['report']
        assert report['config']['beta'] == 0.85
        assert report['grid']['slot_count'] == 144

    def test_empty_range(self, client):
        response = client.get('/api/v1/detect', query_string={
            'from': '2012-01-01T00:00:00Z', 'to': '2012-01-02T00:00:00Z'})
        assert response.status_code == 200
        report = response.get_json()['report']
        assert report['records'] == []
        assert report['summary']['observations'] == 0

    @pytest.mark.parametrize('query', [
        {'beta': 'high'},
        {'beta': '1.5'},
        {'eta': '7'},
        {'predicates': 'sideways'},
        {'from': 'yesterday'},
        {'from': '2011-08-19T00:00:00Z', 'to': '2011-08-18T00:00:00Z'},
    ])
    def test_bad_query(self, client, query):
        response = client.get('/api/v1/detect', query_string=query)
        assert response.status_code == 400
        assert response.get_json()['status'] == 'error'

    def test_missing_data(self, client, tmp_path):
        (tmp_path / 'observations.csv').unlink()
        response = client.get('/api/v1/detect')
        assert response.status_code == 500


class TestScore:
    TRUTH = [{'property': 'relative_humidity', 'node_id': '1', 'slot_start': 60, 'slot_end': 72,
              'label': 'ErroneousOutlier'}]

    def test_score_a_report(self, client):
        report = client.get('/api/v1/detect').get_json()['report']
        response = client.post('/api/v1/score', json={'report': report, 'truth': self.TRUTH,
                                                      'label': 'ErroneousOutlier'})
        assert response.status_code == 200
        metrics = response.get_json()['metrics']
        assert (metrics['tp'], metrics['fp'], metrics['fn']) == (1, 0, 0)
        assert metrics['precision'] == 1.0 and metrics['beta'] == 0.9

    def test_undefined_precision_is_null(self, client):
        response = client.post('/api/v1/score', json={'report': {'records': []}, 'truth': self.TRUTH,
                                                      'label': 'ErroneousOutlier'})
        metrics = response.get_json()['metrics']
        assert metrics['precision'] is None
        assert metrics['recall'] == 0.0

    @pytest.mark.parametrize('body', [
        None,
        {'truth': [], 'label': 'ErroneousOutlier'},
        {'report': {'records': []}, 'truth': [], 'label': 'Normal'},
        {'report': {'records': [{'window': 1}]}, 'truth': [], 'label': 'ErroneousOutlier'},
        {'report': {'records': []}, 'truth': [{'property': 'x'}], 'label': 'ErroneousOutlier'},
    ])
    def test_bad_body(self, client, body):
        response = client.post('/api/v1/score', json=body)
        assert response.status_code == 400
