# endpoints/score.py
from flask import Blueprint, request, jsonify
from utils.evalharness import LABELS, GroundTruth, ScoreError, TruthSegment, score
from utils.report import predictions_from_report, report_slot_count
import logging

logger = logging.getLogger(__name__)
bp = Blueprint('score', __name__)

@bp.route('/score', methods=['POST'])
def score_report():
    """
    検出レポートを正解データと照合するエンドポイント

    Request Body:
        report (dict): a detection report
        truth (list): rows with property, node_id, slot_start, slot_end, label
        label (str): ErroneousOutlier or UnusualEvent

    Returns:
        JSON: tp, fp, fn, precision, recall (null when undefined)
    """
    data = request.get_json(silent=True)

    if not data or 'report' not in data or 'truth' not in data or 'label' not in data:
        logger.warning("Missing required fields in request")
        return jsonify({
            'status': 'error',
            'message': 'report, truth and label are required'
        }), 400

    if data['label'] not in LABELS:
        return jsonify({
            'status': 'error',
            'message': f"label must be one of {', '.join(LABELS)}"
        }), 400

    try:
        truth = GroundTruth(tuple(
            TruthSegment(str(r['property']), str(r['node_id']), int(r['slot_start']), int(r['slot_end']),
                         str(r['label']))
            for r in data['truth']
        ))
        report = data['report']
        row = score(predictions_from_report(report), truth, data['label'],
                    slot_count=report_slot_count(report), beta=(report.get('config') or {}).get('beta'))
    except (ScoreError, KeyError, TypeError, ValueError, AttributeError) as e:
        logger.warning(f"Cannot score report: {str(e)}")
        return jsonify({
            'status': 'error',
            'message': str(e)
        }), 400

    logger.info(f"Scored report: tp={row.tp} fp={row.fp} fn={row.fn}")
    return jsonify({
        'status': 'success',
        'metrics': {
            'beta': row.beta,
            'tp': row.tp,
            'fp': row.fp,
            'fn': row.fn,
            'precision': row.precision,
            'recall': row.recall
        }
    })
