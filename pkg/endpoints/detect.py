# endpoints/detect.py
import os

from flask import Blueprint, current_app, jsonify, request
from utils.classify import ClassificationError
from utils.ingest import GridAmbiguityError, IngestError, load_tables, to_epoch
from utils.pipeline import observation_span, run_detection
from utils.report import build_report, empty_report
from utils.rules import RuleParseError, load_rules, parse_predicate_names
from utils.screening import ScreeningError
from utils.topology import TopologyError
import logging

logger = logging.getLogger(__name__)
bp = Blueprint('detect', __name__)


def _data_path(key):
    return os.path.join(current_app.config['DATA_DIR'], current_app.config[key])


def _arg(name, cast):
    raw = request.args.get(name)
    return None if raw is None else cast(raw)


def _parse_query():
    """Query parameters to (DetectionConfig, from, to); raises ValueError on bad input."""
    predicates = request.args.get('predicates')
    detection = current_app.config['DETECTION'].replace(
        beta=_arg('beta', float),
        delta_m=_arg('delta', float),
        eta=_arg('eta', int),
        active_predicates=parse_predicate_names(predicates) if predicates else None,
    )
    start = request.args.get('from')
    end = request.args.get('to')
    return detection, to_epoch(start) if start else None, to_epoch(end) if end else None


@bp.route('/detect', methods=['GET'])
def detect():
    """
    設定済みのネットワークデータで異常検知を実行するエンドポイント

    Query:
        from, to (str, optional): ISO-8601 time range, default the observation span
        beta, delta, eta (optional): overrides of the detection defaults
        predicates (str, optional): active predicates, comma separated

    Returns:
        JSON: detection report
    """
    try:
        detection, start, end = _parse_query()
    except (ValueError, RuleParseError) as e:
        logger.warning(f"Invalid detection query: {str(e)}")
        return jsonify({
            'status': 'error',
            'message': str(e)
        }), 400

    try:
        tables = load_tables(_data_path('NODES_CSV'), _data_path('SENSORS_CSV'), _data_path('OBSERVATIONS_CSV'))
        rules = load_rules(_data_path('RULES_FILE'), properties=tables.properties)

        if start is None or end is None:
            span = observation_span(tables, detection.grid_step_s)
            if span is not None:
                start = span[0] if start is None else start
                end = span[1] if end is None else end
        if start is None or end is None:
            report = empty_report(detection)
        elif end <= start:
            return jsonify({
                'status': 'error',
                'message': "'to' must be after 'from'"
            }), 400
        else:
            logger.info(f"Running detection for {start} .. {end}")
            report = build_report(run_detection(tables, rules, detection, (start, end)))
        return jsonify({
            'status': 'success',
            'report': report
        })
    except ScreeningError as e:
        return jsonify({
            'status': 'error',
            'message': str(e)
        }), 400
    except (IngestError, GridAmbiguityError, TopologyError, ClassificationError, RuleParseError, OSError) as e:
        logger.error(f"Error running detection: {str(e)}")
        return jsonify({
            'status': 'error',
            'message': str(e)
        }), 500
