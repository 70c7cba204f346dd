from __future__ import annotations

from pathlib import Path
from typing import Optional

import click

from condaudio.cli_commands._common import echo_run, fail, parse_list
from condaudio.config import DatasetConfig, RunConfig
from condaudio.dataset.labels import read_captions, read_strong_labels
from condaudio.dataset.manifest import Manifest, build_manifest, split, write_split_report
from condaudio.dataset.synthetic import write_fixture_corpus
from condaudio.errors import CondAudioError, ParameterError


def _frame(config: DatasetConfig) -> dict:
    return {"sample_rate": config.sample_rate, "window_size": config.window_size, "hop": config.hop,
            "n_frames": config.n_frames}


@click.group(name="dataset")
def command():
    """Build, split and synthesize condition-annotated clip corpora."""


@command.command(name="synth")
@click.argument("out_dir", type=click.Path(file_okay=False, path_type=Path))
@click.option("--clips", "n_clips", default=10, show_default=True, help="Number of fixture clips (1..20).")
@click.option("--seed", default=0, show_default=True)
@click.option("--seconds", default=10.0, show_default=True, help="Clip duration.")
@click.option("--sample-rate", default=16000, show_default=True)
def synth(out_dir: Path, n_clips: int, seed: int, seconds: float, sample_rate: int):
    """Write a tiny synthetic corpus: audio/<id>.wav, labels.tsv and captions.json."""
    try:
        echo_run(RunConfig(command="dataset synth", seed=seed, paths={"out": str(out_dir)},
                           frame={"sample_rate": sample_rate, "clip_seconds": seconds}))
        audio_dir, labels, captions = write_fixture_corpus(out_dir, n_clips, seed, seconds, sample_rate)
        click.echo(f"Created {n_clips} clip(s) in {audio_dir}")
        click.echo(f"Created {labels.name}")
        click.echo(f"Created {captions.name}")
    except CondAudioError as e:
        fail(e)


@command.command(name="build")
@click.option("--audio", "audio_dir", required=True, type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--captions", "captions_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Dataset config file (KEY=value).")
@click.option("--clip-seconds", type=float, help="Override CLIP_SECONDS from the config.")
def build(audio_dir: Path, labels_path: Path, captions_path: Path, out_dir: Path, config_path: Optional[Path],
          clip_seconds: Optional[float]):
    """Validate labels and captions, extract contours and write the manifest."""
    try:
        config = DatasetConfig.load(config_path, clip_seconds=clip_seconds)
        echo_run(RunConfig(command="dataset build", seed=0, frame=_frame(config),
                           paths={"audio": str(audio_dir), "labels": str(labels_path),
                                  "captions": str(captions_path), "out": str(out_dir)}))
        labels, label_errors = read_strong_labels(labels_path)
        for err in label_errors:
            click.echo(f"Skipping label row {err.row}: {err.reason}", err=True)
        manifest, report = build_manifest(labels, read_captions(captions_path), audio_dir, config, out_dir,
                                          label_errors)
        for cid, reason in sorted(report.excluded.items()):
            click.echo(f"Excluded {cid}: {reason}", err=True)
        click.echo(f"{len(manifest.records)} clip(s) written to {out_dir} (digest {manifest.config.digest()[:12]})")
    except CondAudioError as e:
        fail(e)


@command.command(name="split")
@click.argument("manifest_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--counts", default="8,1,1", show_default=True, help="train,valid,test clip counts.")
@click.option("--seed", default=0, show_default=True)
@click.option("--test-classes", help="Comma-separated classes; test clips must contain one of them.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False, path_type=Path),
              help="Split report (JSON); the manifest itself is left untouched.")
def split_command(manifest_dir: Path, counts: str, seed: int, test_classes: Optional[str], out_path: Path):
    """Seeded train/valid/test split of a built manifest."""
    try:
        parsed = parse_list(counts, int)
        if len(parsed) != 3:
            raise ParameterError(f"--counts needs three integers, got {counts!r}")
        manifest = Manifest.load(manifest_dir)
        echo_run(RunConfig(command="dataset split", seed=seed, paths={"manifest": str(manifest_dir),
                                                                        "out": str(out_path)}))
        result = split(manifest, tuple(parsed), seed, parse_list(test_classes))
        write_split_report(out_path, result)
        click.echo(", ".join(f"{name}={n}" for name, n in result.split_counts().items()))
    except CondAudioError as e:
        fail(e)
