"""Versioned binary model container.

Layout (little-endian): magic ``MVCM``, version byte, length-prefixed UTF-8
config echo, u32 speaker count, speaker ids, optional standardization stats
(float64 mean/std), u32 epoch, the named parameter tensors, and optionally the
Adam moments (so checkpoints resume exactly). Raw IEEE bytes round-trip bit
for bit.
"""

import struct
from pathlib import Path

import numpy as np

from .config import parse_config_text
from .errors import BadMagicError, TruncatedPayloadError
from .moe import MoeModel
from .optim import AdamState

MAGIC = b"MVCM"
VERSION = 1

_DTYPE_CODES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class _Reader:
    def __init__(self, raw, path):
        self.raw = raw
        self.off = 0
        self.path = path

    def take(self, n):
        if self.off + n > len(self.raw):
            raise TruncatedPayloadError(f"{self.path}: container truncated")
        chunk = self.raw[self.off : self.off + n]
        self.off += n
        return chunk

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]

    def string(self):
        return self.take(self.u32()).decode("utf-8")

    def array(self):
        itemsize = self.u32()
        if itemsize not in _DTYPE_CODES:
            raise TruncatedPayloadError(f"{self.path}: bad dtype code {itemsize}")
        ndim = self.u32()
        shape = tuple(self.u32() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(self.take(count * itemsize), dtype=_DTYPE_CODES[itemsize])
        return data.reshape(shape).copy()


def _w_u32(fh, v):
    fh.write(struct.pack("<I", v))


def _w_string(fh, s):
    b = s.encode("utf-8")
    _w_u32(fh, len(b))
    fh.write(b)


def _w_array(fh, arr):
    arr = np.ascontiguousarray(arr)
    _w_u32(fh, arr.dtype.itemsize)
    _w_u32(fh, arr.ndim)
    for d in arr.shape:
        _w_u32(fh, d)
    fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def save_model(model, path, config_text, adam=None, epoch=0):
    params = model.params()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        _w_string(fh, config_text)
        _w_u32(fh, model.n_speakers)
        for sid in model.speaker_ids:
            _w_string(fh, sid)
        if model.stats is not None:
            fh.write(b"\x01")
            _w_array(fh, model.stats.mean)
            _w_array(fh, model.stats.std)
        else:
            fh.write(b"\x00")
        _w_u32(fh, epoch)
        _w_u32(fh, len(params))
        for name, p in params.items():
            _w_string(fh, name)
            _w_array(fh, p.data)
        if adam is not None:
            fh.write(b"\x01")
            fh.write(struct.pack("<Q", adam.step))
            for name in params:
                _w_array(fh, adam.m[name])
                _w_array(fh, adam.v[name])
        else:
            fh.write(b"\x00")


def load_model(path):
    """Returns (model, config, adam_state or None, epoch)."""
    raw = Path(path).read_bytes()
    if len(raw) < 5 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad model magic {raw[:4]!r}")
    if raw[4] != VERSION:
        raise BadMagicError(f"{path}: unsupported container version {raw[4]}")
    r = _Reader(raw, path)
    r.off = 5
    config_text = r.string()
    cfg = parse_config_text(config_text, apply_env=False)
    n_speakers = r.u32()
    speaker_ids = [r.string() for _ in range(n_speakers)]
    has_stats = r.take(1) == b"\x01"
    stats = None
    if has_stats:
        from .features import StandardizationStats

        mean = r.array()
        std = r.array()
        stats = StandardizationStats(mean=mean, std=std)
    epoch = r.u32()
    n_params = r.u32()
    model = MoeModel(cfg, n_speakers, seed=0)
    model.speaker_ids = speaker_ids
    model.stats = stats
    params = model.params()
    if n_params != len(params):
        raise TruncatedPayloadError(
            f"{path}: container has {n_params} tensors, model expects {len(params)}"
        )
    for _ in range(n_params):
        name = r.string()
        arr = r.array()
        if name not in params:
            raise TruncatedPayloadError(f"{path}: unexpected tensor {name!r}")
        p = params[name]
        if arr.shape != p.data.shape:
            raise TruncatedPayloadError(
                f"{path}: tensor {name} shape {arr.shape} != {p.data.shape}"
            )
        p.data = arr.astype(p.data.dtype, copy=False)
    adam = None
    if r.take(1) == b"\x01":
        adam = AdamState(lr=cfg.lr, b1=cfg.b1, b2=cfg.b2)
        adam.step = r.u64()
        for name in params:
            adam.m[name] = r.array()
            adam.v[name] = r.array()
    return model, cfg, adam, epoch
