from __future__ import annotations

from pathlib import Path
from typing import Optional

import click

from condaudio.cli_commands._common import echo_run, fail, run
from condaudio.config import DatasetConfig, RunConfig
from condaudio.core.conditions import EventSet, events_to_grid
from condaudio.dataset.codec import write_contour
from condaudio.dataset.labels import clip_id, read_strong_labels
from condaudio.dataset.manifest import extract_files
from condaudio.errors import CondAudioError
from condaudio.tools.report import ensure_dir, write_json

SUMMARY = "summary.json"


@click.command(name="extract")
@click.argument("source", type=click.Path(exists=True, path_type=Path))
@click.argument("out_dir", type=click.Path(file_okay=False, path_type=Path))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Dataset/extraction config file (KEY=value).")
@click.option("--labels", "labels_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Strong-label TSV; writes a timestamp grid for every labelled clip.")
@click.option("--seed", default=0, show_default=True, help="Recorded for reproducibility; extraction is deterministic.")
def command(source: Path, out_dir: Path, config_path: Optional[Path], labels_path: Optional[Path], seed: int):
    """Extract pitch and energy contours (and timestamp grids) from one WAV file or a directory of them."""
    try:
        config = DatasetConfig.load(config_path)
        files = [source] if source.is_file() else sorted(source.glob("*.wav"))
        echo_run(RunConfig(command="extract", seed=seed, paths={"source": str(source), "out": str(out_dir)},
                           frame={"sample_rate": config.sample_rate, "window_size": config.window_size,
                                  "hop": config.hop, "n_frames": config.n_frames}))
        labels = read_strong_labels(labels_path)[0] if labels_path else {}
        event_set = None
        if labels:
            event_set = EventSet(tuple(config.event_set or sorted({e.label for v in labels.values() for e in v})))

        ensure_dir(out_dir)
        summary = {"config_digest": config.digest(), "files": {}, "errors": {}}
        for path, (contours, error) in zip(files, extract_files(files, config.extraction())):
            if error:
                summary["errors"][path.name] = error
                continue
            cid = clip_id(path.name)
            f0, energy = contours
            outputs = [f"{cid}.pitch.acnd", f"{cid}.energy.acnd"]
            write_contour(out_dir / outputs[0], f0, "pitch")
            write_contour(out_dir / outputs[1], energy, "energy")
            if event_set is not None and cid in labels:
                try:
                    grid = events_to_grid(labels[cid], event_set, config.frame_rate, config.n_frames)
                except CondAudioError as e:
                    summary["errors"][path.name] = f"labels: {e}"
                else:
                    outputs.append(f"{cid}.grid.acnd")
                    write_contour(out_dir / outputs[-1], grid, "grid")
            summary["files"][cid] = {"frames": len(f0), "voiced": f0.n_voiced, "outputs": outputs}

        write_json(out_dir / SUMMARY, summary)
        click.echo(f"{len(summary['files'])} file(s) extracted, {len(summary['errors'])} error(s)")
        for name, message in sorted(summary["errors"].items()):
            click.echo(f"  {name}: {message}", err=True)
        if summary["errors"]:
            raise SystemExit(2)
    except CondAudioError as e:
        fail(e)


def main():
    run(command)
