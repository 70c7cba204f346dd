from condaudio.ldm.checkpoint import load_checkpoint, save_checkpoint
from condaudio.ldm.encoder import BoxEncoder, ControlCondition, ControlEncoder
from condaudio.ldm.fusion import FusionLayer, fusion_forward
from condaudio.ldm.model import ToyModel, downsample_control, encode_control
from condaudio.ldm.probe import make_probe_batch, probe_score, sweep
from condaudio.ldm.sampling import sample
from condaudio.ldm.schedule import DiffusionSchedule, cfg_combine, forward_diffuse, linear_schedule
from condaudio.ldm.training import Batch, Trainer, evaluation_loss, guidance_dropout, ldm_loss

__all__ = [
    "Batch",
    "BoxEncoder",
    "ControlCondition",
    "ControlEncoder",
    "DiffusionSchedule",
    "FusionLayer",
    "ToyModel",
    "Trainer",
    "cfg_combine",
    "downsample_control",
    "encode_control",
    "evaluation_loss",
    "forward_diffuse",
    "fusion_forward",
    "guidance_dropout",
    "ldm_loss",
    "linear_schedule",
    "load_checkpoint",
    "make_probe_batch",
    "probe_score",
    "sample",
    "save_checkpoint",
    "sweep",
]
