"""
trendguard command line: generate evaluation datasets, run detection, score
reports and sweep the similarity threshold.

    python cli.py gen --mode outliers --seed 7 --out data/
    python cli.py detect --nodes data/nodes.csv --sensors data/sensors.csv \
        --obs data/observations.csv --rules data/rules.txt --out report.json
    python cli.py score --report report.json --truth data/truth.csv \
        --label ErroneousOutlier --out metrics.csv
"""

import logging
import os
from dataclasses import replace
from typing import Optional, Sequence, Tuple

import click

from config import Config, ConfigError, DetectionConfig, parse_scales, __version__
from utils.classify import ClassificationError
from utils.dtw import DTWError
from utils.evalharness import (LABELS, GroundTruth, InjectionError, InjectionMode, InjectionSpec, ScoreError,
                               generate_clean, harness_rules, inject, score, sweep)
from utils.ingest import GridAmbiguityError, IngestError, NetworkTables, load_tables, to_epoch
from utils.logger import log_memory_usage, setup_logger
from utils.pipeline import observation_span, run_detection
from utils.report import (build_report, empty_report, predictions_from_report, read_report, report_slot_count,
                          write_metrics, write_report)
from utils.rules import RuleParseError, SHORT_NAMES, load_rules, parse_predicate_names
from utils.screening import ScreeningError, dump_similarity
from utils.topology import TopologyError, dump_matrices

logger = logging.getLogger(__name__)

DOMAIN_ERRORS = (IngestError, GridAmbiguityError, TopologyError, DTWError, ScreeningError, ClassificationError,
                 InjectionError, ScoreError, OSError)
INPUT_FILE = click.Path(exists=True, dir_okay=False)


def _detection_config(beta: Optional[float] = None, delta: Optional[float] = None, eta: Optional[int] = None,
                      predicates: Optional[str] = None, scales: Sequence[str] = (),
                      workers: Optional[int] = None) -> DetectionConfig:
    try:
        base = DetectionConfig.from_object(Config)
        value_scales = dict(base.value_scales)
        value_scales.update(parse_scales(','.join(scales)))
        return base.replace(
            beta=beta,
            delta_m=delta,
            eta=eta,
            active_predicates=parse_predicate_names(predicates) if predicates else None,
            value_scales=value_scales,
            workers=workers,
        )
    except (ConfigError, RuleParseError) as e:
        raise click.UsageError(str(e))


def _time_range(time_from: Optional[str], time_to: Optional[str], tables: NetworkTables,
                grid_step: int) -> Optional[Tuple[int, int]]:
    try:
        start = to_epoch(time_from) if time_from else None
        end = to_epoch(time_to) if time_to else None
    except ValueError as e:
        raise click.BadParameter(str(e), param_hint="'--from' / '--to'")
    if start is None or end is None:
        span = observation_span(tables, grid_step)
        if span is None:
            return None
        start = span[0] if start is None else start
        end = span[1] if end is None else end
    if end <= start:
        raise click.BadParameter("--to must be after --from", param_hint="'--to'")
    return start, end


def _load_inputs(nodes_path: str, sensors_path: str, obs_path: str, rules_path: str):
    tables = load_tables(nodes_path, sensors_path, obs_path)
    rules = load_rules(rules_path, properties=tables.properties)
    return tables, rules


def detection_options(func):
    """Input files and pipeline parameters shared by detect and sweep."""
    options = [
        click.option('--nodes', 'nodes_path', type=INPUT_FILE, required=True, help='nodes.csv'),
        click.option('--sensors', 'sensors_path', type=INPUT_FILE, required=True, help='sensors.csv'),
        click.option('--obs', 'obs_path', type=INPUT_FILE, required=True, help='observations.csv'),
        click.option('--rules', 'rules_path', type=INPUT_FILE, required=True, help='correlation rule file'),
        click.option('--from', 'time_from', default=None, help='ISO-8601 start (default: first observation)'),
        click.option('--to', 'time_to', default=None, help='ISO-8601 end, exclusive (default: after last observation)'),
        click.option('--delta', type=float, default=None, help='neighborhood distance in meters'),
        click.option('--eta', type=int, default=None, help='window length in slots (even)'),
        click.option('--predicates', default=None,
                     help=f"active predicates: short names ({','.join(sorted(SHORT_NAMES))}) or categories"),
        click.option('--scale', 'scales', multiple=True, help='property=scale, repeatable'),
        click.option('--workers', type=int, default=None, help='threads for per-property screening'),
    ]
    for option in reversed(options):
        func = option(func)
    return func


@click.group()
@click.version_option(__version__, prog_name='trendguard')
@click.option('--debug', is_flag=True, help='verbose logging')
@click.option('--log-dir', default=None, help='directory of the rotating log file')
def cli(debug: bool, log_dir: Optional[str]):
    """Spatio-temporal trend anomaly detection for environmental sensor networks."""
    setup_logger(debug, log_dir or Config.LOG_DIR)


@cli.command()
@click.option('--mode', type=click.Choice([m.value for m in InjectionMode] + ['clean']), required=True)
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), required=True)
@click.option('--nodes', type=click.IntRange(min=1), default=36, show_default=True)
@click.option('--days', type=click.IntRange(min=1), default=30, show_default=True)
@click.option('--rounds', type=click.IntRange(min=0), default=None, help='override the number of injection rounds')
def gen(mode: str, seed: int, out_dir: str, nodes: int, days: int, rounds: Optional[int]):
    """Write nodes.csv, sensors.csv, observations.csv, truth.csv and rules.txt."""
    try:
        clean = generate_clean(seed, nodes=nodes, days=days)
        if mode == 'clean':
            dataset, truth = clean, GroundTruth()
            rules, active = harness_rules(None)
        else:
            injection = InjectionMode(mode)
            spec = InjectionSpec.default(injection, rng_seed=seed)
            if rounds is not None:
                spec = replace(spec, rounds=rounds)
            dataset, truth = inject(clean, spec)
            rules, active = harness_rules(injection)
    except ConfigError as e:
        raise click.UsageError(str(e))
    except DOMAIN_ERRORS as e:
        logger.error(f"Dataset generation failed: {str(e)}")
        raise click.ClickException(str(e))

    try:
        dataset.write(out_dir)
        truth.write(os.path.join(out_dir, 'truth.csv'))
        short = sorted(name for name, token in SHORT_NAMES.items() if token in active)
        with open(os.path.join(out_dir, 'rules.txt'), 'w', encoding='utf-8') as f:
            f.write(f"# mode: {mode}, seed: {seed}\n")
            f.write(f"# detect with --predicates {','.join(short)}\n")
            f.write(rules.to_text())
    except OSError as e:
        logger.error(f"Failed to write dataset: {str(e)}")
        raise click.ClickException(str(e))
    click.echo(f"wrote {len(dataset.nodes)} nodes, {len(truth)} truth segments to {out_dir}")


@cli.command()
@detection_options
@click.option('--beta', type=float, default=None, help='similarity threshold in (0, 1]')
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), required=True)
@click.option('--dump-matrices', 'matrices_dir', type=click.Path(file_okay=False), default=None,
              help='also write U and A_i matrices as CSV into this directory')
@click.option('--dump-similarity', 'similarity_dir', type=click.Path(file_okay=False), default=None,
              help='also write the similarity tensors as CSV into this directory')
def detect(nodes_path, sensors_path, obs_path, rules_path, time_from, time_to, delta, eta, predicates, scales,
           workers, beta, out_path, matrices_dir, similarity_dir):
    """Run detection over a time range and write a JSON report."""
    config = _detection_config(beta, delta, eta, predicates, scales, workers)
    try:
        tables, rules = _load_inputs(nodes_path, sensors_path, obs_path, rules_path)
    except RuleParseError as e:
        raise click.UsageError(str(e))
    except DOMAIN_ERRORS as e:
        logger.error(f"Failed to load inputs: {str(e)}")
        raise click.ClickException(str(e))

    time_range = _time_range(time_from, time_to, tables, config.grid_step_s)
    try:
        if time_range is None:
            report = empty_report(config)
        else:
            result = run_detection(tables, rules, config, time_range)
            report = build_report(result)
            if matrices_dir:
                dump_matrices([vd.version for vd in result.versions], matrices_dir)
            if similarity_dir:
                dump_similarity([t for vd in result.versions for t in vd.tensors.values()], similarity_dir)
        write_report(out_path, report)
    except ScreeningError as e:
        raise click.UsageError(str(e))
    except DOMAIN_ERRORS as e:
        logger.error(f"Detection failed: {str(e)}")
        raise click.ClickException(str(e))
    log_memory_usage(logger, 'detection')

    if report['summary']['observations'] == 0:
        click.echo('warning: no observations in the requested time range, the report is empty', err=True)
    verdicts = report['summary']['verdicts']
    click.echo(f"{verdicts['ErroneousOutlier']} erroneous outlier and {verdicts['UnusualEvent']} "
               f"unusual event window(s) -> {out_path}")


@cli.command('score')
@click.option('--report', 'report_path', type=INPUT_FILE, required=True)
@click.option('--truth', 'truth_path', type=INPUT_FILE, required=True)
@click.option('--label', type=click.Choice(LABELS), required=True)
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), required=True)
def score_command(report_path, truth_path, label, out_path):
    """Score one report against ground truth."""
    try:
        report = read_report(report_path)
        truth = GroundTruth.read(truth_path)
        beta = (report.get('config') or {}).get('beta')
        row = score(predictions_from_report(report), truth, label,
                    slot_count=report_slot_count(report), beta=beta)
        write_metrics(out_path, [row])
    except (ValueError, OSError) as e:
        logger.error(f"Scoring failed: {str(e)}")
        raise click.ClickException(str(e))
    record = row.to_record()
    click.echo(f"tp={row.tp} fp={row.fp} fn={row.fn} precision={record['precision'] or 'undefined'} "
               f"recall={record['recall'] or 'undefined'}")


@cli.command('sweep')
@detection_options
@click.option('--truth', 'truth_path', type=INPUT_FILE, required=True)
@click.option('--label', type=click.Choice(LABELS), required=True)
@click.option('--beta-from', type=float, default=0.70, show_default=True)
@click.option('--beta-to', type=float, default=0.98, show_default=True)
@click.option('--beta-step', type=float, default=0.01, show_default=True)
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), required=True)
def sweep_command(nodes_path, sensors_path, obs_path, rules_path, time_from, time_to, delta, eta, predicates,
                  scales, workers, truth_path, label, beta_from, beta_to, beta_step, out_path):
    """Precision and recall for every threshold of a range."""
    config = _detection_config(None, delta, eta, predicates, scales, workers)
    try:
        tables, rules = _load_inputs(nodes_path, sensors_path, obs_path, rules_path)
        truth = GroundTruth.read(truth_path)
    except RuleParseError as e:
        raise click.UsageError(str(e))
    except DOMAIN_ERRORS + (ValueError,) as e:
        logger.error(f"Failed to load inputs: {str(e)}")
        raise click.ClickException(str(e))

    time_range = _time_range(time_from, time_to, tables, config.grid_step_s)
    try:
        rows = sweep(tables, truth, rules, config, beta_from, beta_to, beta_step, label, time_range=time_range)
        write_metrics(out_path, rows)
    except ConfigError as e:
        raise click.UsageError(str(e))
    except DOMAIN_ERRORS as e:
        logger.error(f"Sweep failed: {str(e)}")
        raise click.ClickException(str(e))
    log_memory_usage(logger, 'sweep')
    click.echo(f"{len(rows)} thresholds -> {out_path}")


if __name__ == '__main__':
    cli()
