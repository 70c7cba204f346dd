from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import click
import numpy as np
import torch

from condaudio.cli_commands._common import echo_run, fail, parse_list
from condaudio.config import RunConfig, ToyConfig, derive_seed
from condaudio.errors import CondAudioError
from condaudio.ldm.checkpoint import load_checkpoint, save_checkpoint
from condaudio.ldm.model import ToyModel
from condaudio.ldm.probe import make_probe_batch, probe_batches, probe_score, sweep
from condaudio.ldm.sampling import sample
from condaudio.ldm.training import Trainer, evaluation_loss
from condaudio.tools.report import ensure_dir, render_sweep, write_json, write_loss_curve, write_text

logger = logging.getLogger(__name__)

CHECKPOINT = "checkpoint.catk"
LOSS_CURVE = "loss.csv"


def _schedule(config: ToyConfig) -> dict:
    return {"timesteps": config.timesteps, "beta_start": config.beta_start, "beta_end": config.beta_end}


def _eval_batch(model: ToyModel, n: int, seed: int):
    return make_probe_batch(model, n, np.random.default_rng(derive_seed(seed, "eval-batch")))


def _load(checkpoint: Path, config_path: Optional[Path]) -> ToyModel:
    if config_path is None:
        model = load_checkpoint(checkpoint)
        logger.warning("no --config given; using the config stored in %s (digest %s)",
                       checkpoint.name, model.config.digest()[:12])
        return model
    return load_checkpoint(checkpoint, ToyConfig.load(config_path))


@click.group(name="toy")
def command():
    """Train, sample and sweep the desk-scale latent diffusion model on synthetic probe data."""


@command.command(name="train")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Toy model config file (KEY=value).")
@click.option("--seed", type=int, help="Override SEED from the config.")
@click.option("--steps", type=int, help="Override TRAIN_STEPS from the config.")
@click.option("--log-every", default=50, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
def train(config_path: Optional[Path], seed: Optional[int], steps: Optional[int], log_every: int, out_dir: Path):
    """Write checkpoint.catk and loss.csv to OUT."""
    try:
        config = ToyConfig.load(config_path, seed=seed, train_steps=steps)
        echo_run(RunConfig(command="toy train", seed=config.seed, paths={"out": str(out_dir)},
                           schedule=_schedule(config), steps=config.train_steps))
        model = ToyModel(config)
        eval_batch = _eval_batch(model, config.probe_samples, config.seed)
        initial = evaluation_loss(model, eval_batch, config.seed)
        history = Trainer(model).fit(probe_batches(model, config.seed, config.batch_size), config.train_steps,
                                     eval_batch=eval_batch, log_every=max(1, log_every))
        ensure_dir(out_dir)
        save_checkpoint(out_dir / CHECKPOINT, model)
        write_loss_curve(out_dir / LOSS_CURVE, [{"step": 0, "loss": initial, "eval_loss": initial}] + history)
        final = history[-1]["eval_loss"] if history else initial
        click.echo(f"Created {CHECKPOINT} (eval loss {initial:.4f} -> {final:.4f})")
        click.echo(f"Created {LOSS_CURVE}")
    except CondAudioError as e:
        fail(e)


@command.command(name="sample")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Refuse to run unless the checkpoint was trained with this config.")
@click.option("--seed", default=0, show_default=True)
@click.option("--omega", type=float, help="Guidance scale (default: GUIDANCE_SCALE).")
@click.option("--steps", type=int, help="Sampling steps (default: SAMPLE_STEPS).")
@click.option("--n", "n_samples", default=4, show_default=True, help="Number of latents.")
@click.option("--decode", is_flag=True, help="Save mel frames (n, latent_frames, mel_bins) instead of latents.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False, path_type=Path),
              help="Latents (.npy), shape (n, latent_frames, latent_dim).")
def sample_command(checkpoint: Path, config_path: Optional[Path], seed: int, omega: Optional[float],
                   steps: Optional[int], n_samples: int, decode: bool, out_path: Path):
    """Sample latents for seeded probe conditions."""
    try:
        model = _load(checkpoint, config_path)
        config = model.config
        omega = config.guidance_scale if omega is None else omega
        steps = config.sample_steps if steps is None else steps
        echo_run(RunConfig(command="toy sample", seed=seed, paths={"checkpoint": str(checkpoint), "out": str(out_path)},
                           schedule=_schedule(config), omega=omega, steps=steps))
        batch = make_probe_batch(model, n_samples, np.random.default_rng(derive_seed(seed, "sample-batch")))
        generator = torch.Generator().manual_seed(derive_seed(seed, "sampler"))
        with torch.no_grad():
            latents = sample(model, model.text_condition(batch.text), model.control_condition(batch.controls),
                             steps, omega, generator)
        ensure_dir(out_path.parent)
        out = model.decode_latent(latents) if decode else latents
        np.save(out_path, out.detach().cpu().numpy().astype(np.float32))
        click.echo(f"Created {out_path.name} (probe score {probe_score(model, latents, batch):.3f})")
    except CondAudioError as e:
        fail(e)


@command.command(name="sweep")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Refuse to run unless the checkpoint was trained with this config.")
@click.option("--omegas", help="Comma-separated guidance scales (default: SWEEP_OMEGAS).")
@click.option("--steps", help="Comma-separated sampling steps (default: SWEEP_STEPS).")
@click.option("--seed", type=int, help="Probe and sampler seed (default: the checkpoint's SEED).")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
def sweep_command(checkpoint: Path, config_path: Optional[Path], omegas: Optional[str], steps: Optional[str],
                  seed: Optional[int], out_dir: Path):
    """Matched vs shuffled probe scores over a guidance x steps grid; writes sweep.json and sweep.txt."""
    try:
        model = _load(checkpoint, config_path)
        config = model.config
        seed = config.seed if seed is None else seed
        omega_list = parse_list(omegas, float) or config.sweep_omegas
        step_list = parse_list(steps, int) or config.sweep_steps
        echo_run(RunConfig(command="toy sweep", seed=seed, paths={"checkpoint": str(checkpoint), "out": str(out_dir)},
                           schedule=_schedule(config)))
        rows = sweep(model, _eval_batch(model, config.probe_samples, seed), omega_list, step_list, seed)
        table = render_sweep(rows)
        ensure_dir(out_dir)
        write_json(out_dir / "sweep.json", {"checkpoint_digest": config.digest(), "seed": seed, "rows": rows})
        write_text(out_dir / "sweep.txt", table)
        click.echo(table)
    except CondAudioError as e:
        fail(e)
