# condaudio/ldm/checkpoint.py
# Binary checkpoint layout (all integers little-endian):
#   b"CATK" | u16 version | 64-byte hex config digest | u32 config length | config JSON
#   u32 block count, then per block:
#   u8 tag (0 frozen, 1 trainable) | u16 name length | name | u8 ndim | u32 dims... | float32 payload
from __future__ import annotations

import io
import logging
import struct
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import torch

from condaudio.config import ToyConfig
from condaudio.errors import ConfigMismatchError, FormatError
from condaudio.ldm.model import ToyModel

logger = logging.getLogger(__name__)

MAGIC = b"CATK"
VERSION = 1
FROZEN, TRAINABLE = 0, 1


def _trainable_names(model: ToyModel) -> set:
    return {name for name, p in model.named_parameters() if p.requires_grad}


def save_checkpoint(path: Union[str, Path], model: ToyModel) -> None:
    trainable = _trainable_names(model)
    state = model.state_dict()
    config_json = model.config.model_dump_json().encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    buf.write(model.config.digest().encode("ascii"))
    buf.write(struct.pack("<I", len(config_json)))
    buf.write(config_json)
    buf.write(struct.pack("<I", len(state)))
    for name in sorted(state):
        tensor = state[name].detach().cpu()
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<BH", TRAINABLE if name in trainable else FROZEN, len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", tensor.ndim))
        buf.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        buf.write(tensor.numpy().astype("<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())
    logger.info("saved checkpoint %s (%d blocks)", path, len(state))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: Union[str, Path], config: Optional[ToyConfig] = None) -> ToyModel:
    """Rebuild a model from a checkpoint. With `config`, its digest must match the stored one."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read checkpoint {path}: {e}") from e
    r = _Reader(data, path)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    digest = r.take(64).decode("ascii")
    (config_len,) = r.unpack("<I")
    stored = ToyConfig.model_validate_json(r.take(config_len))
    if stored.digest() != digest:
        raise FormatError(f"{path}: stored config does not match its digest")
    if config is not None and config.digest() != digest:
        raise ConfigMismatchError(f"{path}: checkpoint was written for a different config ({digest[:12]})")
    model = ToyModel(stored)
    state = model.state_dict()
    trainable = _trainable_names(model)

    (n_blocks,) = r.unpack("<I")
    loaded = {}
    for _ in range(n_blocks):
        tag, name_len = r.unpack("<BH")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        if name not in state:
            raise FormatError(f"{path}: unknown block {name!r}")
        if tuple(state[name].shape) != tuple(shape):
            raise FormatError(f"{path}: block {name!r} has shape {shape}, expected {tuple(state[name].shape)}")
        if tag != (TRAINABLE if name in trainable else FROZEN):
            raise FormatError(f"{path}: block {name!r} has the wrong frozen/trainable tag")
        loaded[name] = torch.from_numpy(values.astype(np.float32))
    missing = sorted(set(state) - set(loaded))
    if missing:
        raise FormatError(f"{path}: missing blocks {missing}")
    model.load_state_dict(loaded)
    return model
