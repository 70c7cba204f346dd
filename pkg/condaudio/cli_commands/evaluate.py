from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional, Tuple

import click

from condaudio.cli_commands._common import echo_run, fail, run
from condaudio.config import DatasetConfig, RunConfig
from condaudio.core.conditions import energy_condition
from condaudio.core.dsp import Contour
from condaudio.core.metrics import EvalReport, evaluate_energy, evaluate_pitch, evaluate_temporal, reference_row
from condaudio.dataset.codec import read_contour
from condaudio.dataset.labels import read_strong_labels
from condaudio.errors import CondAudioError, DataError, FormatError, ParameterError
from condaudio.tools.report import build_report, ensure_dir, write_json, write_text

KINDS = ("temporal", "pitch", "energy", "all")


def _read_contours(directory: Optional[Path], kind: str, frame_rate: float) -> Dict[str, Contour]:
    """<id>.<kind>.acnd files of one directory, keyed by clip id."""
    if directory is None:
        raise ParameterError(f"evaluating {kind} needs both --ref-contours and --pred-contours")
    if not directory.is_dir():
        raise DataError(f"contour directory not found: {directory}")
    suffix = f".{kind}.acnd"
    out = {}
    for path in sorted(directory.glob(f"*{suffix}")):
        contour = read_contour(path, frame_rate)
        if not isinstance(contour, Contour):
            raise FormatError(f"{path}: expected a {kind} contour")
        out[path.name[: -len(suffix)]] = contour
    return out


def _labels(path: Optional[Path], which: str):
    if path is None:
        raise ParameterError(f"temporal evaluation needs --{which}-labels")
    clips, errors = read_strong_labels(path)
    if errors:
        raise DataError(f"{path}: {len(errors)} malformed rows (first: row {errors[0].row}, {errors[0].reason})")
    return clips


@click.command(name="eval")
@click.argument("kind", type=click.Choice(KINDS))
@click.option("--ref-labels", type=click.Path(dir_okay=False, path_type=Path), help="Reference strong labels (TSV).")
@click.option("--pred-labels", type=click.Path(dir_okay=False, path_type=Path),
              help="Detected strong labels of the generated audio (TSV).")
@click.option("--ref-contours", type=click.Path(file_okay=False, path_type=Path),
              help="Directory of reference <id>.pitch.acnd / <id>.energy.acnd files.")
@click.option("--pred-contours", type=click.Path(file_okay=False, path_type=Path),
              help="Directory of contours extracted from the generated audio.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Dataset config; its energy range quantizes the energy contours.")
@click.option("--name", default="Generated", show_default=True, help="Settings label of the evaluated row.")
@click.option("--gt-row", is_flag=True, help="Prepend the ground-truth row computed from the references.")
@click.option("--log-hz", is_flag=True, help="Compute DTW on log-frequency.")
@click.option("--matching", type=click.Choice(["greedy", "optimal"]), default="greedy", show_default=True,
              help="Event pairing: onset-ordered greedy, or maximum bipartite.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path),
              help="Also write report.json and report.txt here.")
def command(kind: str, ref_labels: Optional[Path], pred_labels: Optional[Path], ref_contours: Optional[Path],
            pred_contours: Optional[Path], config_path: Optional[Path], name: str, gt_row: bool, log_hz: bool,
            matching: str, out_dir: Optional[Path]):
    """Score generated audio against references; prints the control-performance table."""
    try:
        config = DatasetConfig.load(config_path)
        echo_run(RunConfig(command=f"eval {kind}", seed=0,
                           paths={k: str(v) for k, v in (("ref_labels", ref_labels), ("pred_labels", pred_labels),
                                                         ("ref_contours", ref_contours),
                                                         ("pred_contours", pred_contours), ("out", out_dir))
                                  if v is not None}))
        report, truth = EvalReport(), EvalReport()
        if kind in ("temporal", "all"):
            refs = _labels(ref_labels, "ref")
            report = report.merged(evaluate_temporal(refs, _labels(pred_labels, "pred"), matching))
            truth = truth.merged(evaluate_temporal(refs, refs, matching).model_copy(update={"per_class": {}}))
        if kind in ("pitch", "all"):
            refs = _read_contours(ref_contours, "pitch", config.frame_rate)
            report = report.merged(evaluate_pitch(refs, _read_contours(pred_contours, "pitch", config.frame_rate),
                                                  log_hz))
            truth = truth.merged(reference_row(refs))
        if kind in ("energy", "all"):
            refs = _read_contours(ref_contours, "energy", config.frame_rate)
            gens = _read_contours(pred_contours, "energy", config.frame_rate)
            report = report.merged(evaluate_energy({k: energy_condition(v, config) for k, v in refs.items()},
                                                   {k: energy_condition(v, config) for k, v in gens.items()}))

        rows: List[Tuple[str, EvalReport]] = ([("GT", truth)] if gt_row else []) + [(name, report)]
        table, data = build_report(rows, kind)
        click.echo(table, nl=False)
        if out_dir is not None:
            ensure_dir(out_dir)
            write_json(out_dir / "report.json", data)
            write_text(out_dir / "report.txt", table)
    except CondAudioError as e:
        fail(e)


def main():
    run(command)
