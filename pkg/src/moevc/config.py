"""Flat ``key = value`` run configuration with dotted section prefixes.

Lines are ``section.key = value`` with ``#`` comments. Unknown keys are
rejected; malformed lines fail with their line number. ``MOEVC_SEED`` in the
environment overrides ``train.seed``.
"""

import os
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError


def _parse_bool(s):
    low = s.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_int_list(s):
    return tuple(int(v) for v in s.split(",") if v.strip() != "")


def _parse_float_list(s):
    return tuple(float(v) for v in s.split(",") if v.strip() != "")


def _parse_kernel(s):
    parts = s.lower().split("x")
    if len(parts) != 2:
        raise ValueError(f"kernel must look like 3x9, got {s!r}")
    kh, kw = int(parts[0]), int(parts[1])
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel dims must be odd (shape algebra relies on it)")
    return (kh, kw)


@dataclass
class RunConfig:
    # architecture
    feature_dim: int = 36
    enc_channels: tuple = (8, 16, 16)
    kernel: tuple = (3, 9)
    time_stride: int = 2
    latent_channels: int = 8
    embed_dim: int = 32
    den_state: int = 32
    een_channels: tuple = (6, 8)
    clf_channels: tuple = (8, 8)
    moe: bool = True
    # optimizer
    lr: float = 0.001
    b1: float = 0.9
    b2: float = 0.999
    batch: int = 64
    # loss weights
    lambda_mi: float = 1.0
    lambda_ce: float = 1.0
    alpha: float = 1.0
    beta: float = 0.0
    # training
    epochs: int = 200
    segment_len: int = 128
    seed: int = 1234
    precision: int = 32
    # sweep grid
    sweep_betas: tuple = (0.0, 3.0, 12.0)
    sweep_seeds: tuple = (101, 202, 303)
    # paths
    log_path: str = ""

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32

    def validate(self):
        if self.time_stride < 1:
            raise ConfigError("arch.time_stride must be >= 1")
        if not self.enc_channels:
            raise ConfigError("arch.enc_channels must list at least one layer")
        if self.precision not in (32, 64):
            raise ConfigError("train.precision must be 32 or 64")
        if self.segment_len % (self.time_stride ** len(self.enc_channels)) != 0:
            raise ConfigError(
                "train.segment_len must be a multiple of the total stride factor "
                f"{self.time_stride ** len(self.enc_channels)}"
            )
        if self.batch < 1 or self.epochs < 0:
            raise ConfigError("optimizer.batch must be >= 1 and train.epochs >= 0")
        return self


# key -> (attribute, parser, formatter)
_SCHEMA = {
    "arch.feature_dim": ("feature_dim", int, str),
    "arch.enc_channels": ("enc_channels", _parse_int_list, lambda v: ",".join(map(str, v))),
    "arch.kernel": ("kernel", _parse_kernel, lambda v: f"{v[0]}x{v[1]}"),
    "arch.time_stride": ("time_stride", int, str),
    "arch.latent_channels": ("latent_channels", int, str),
    "arch.embed_dim": ("embed_dim", int, str),
    "arch.den_state": ("den_state", int, str),
    "arch.een_channels": ("een_channels", _parse_int_list, lambda v: ",".join(map(str, v))),
    "arch.clf_channels": ("clf_channels", _parse_int_list, lambda v: ",".join(map(str, v))),
    "arch.moe": ("moe", _parse_bool, lambda v: "true" if v else "false"),
    "optimizer.lr": ("lr", float, repr),
    "optimizer.b1": ("b1", float, repr),
    "optimizer.b2": ("b2", float, repr),
    "optimizer.batch": ("batch", int, str),
    "loss.lambda_mi": ("lambda_mi", float, repr),
    "loss.lambda_ce": ("lambda_ce", float, repr),
    "loss.alpha": ("alpha", float, repr),
    "loss.beta": ("beta", float, repr),
    "train.epochs": ("epochs", int, str),
    "train.segment_len": ("segment_len", int, str),
    "train.seed": ("seed", int, str),
    "train.precision": ("precision", int, str),
    "sweep.betas": ("sweep_betas", _parse_float_list, lambda v: ",".join(repr(b) for b in v)),
    "sweep.seeds": ("sweep_seeds", _parse_int_list, lambda v: ",".join(map(str, v))),
    "paths.log": ("log_path", str, str),
}


def parse_config_text(text, apply_env=True):
    cfg = RunConfig()
    for no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {line.strip()!r}", line_no=no)
        key, _, value = body.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key {key!r}", line_no=no)
        attr, parser, _ = _SCHEMA[key]
        try:
            setattr(cfg, attr, parser(value))
        except ValueError as e:
            raise ConfigError(f"bad value for {key}: {e}", line_no=no) from None
    if apply_env and os.environ.get("MOEVC_SEED"):
        try:
            cfg.seed = int(os.environ["MOEVC_SEED"])
        except ValueError:
            raise ConfigError("MOEVC_SEED must be an integer") from None
    return cfg.validate()


def load_config(path, apply_env=True):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config_text(text, apply_env=apply_env)


def config_to_text(cfg):
    """Serialize a RunConfig to the flat text format (round-trips by parse)."""
    lines = []
    for key, (attr, _, fmt) in _SCHEMA.items():
        lines.append(f"{key} = {fmt(getattr(cfg, attr))}")
    return "\n".join(lines) + "\n"


def replace(cfg, **kwargs):
    """A copy of ``cfg`` with the given attributes replaced."""
    vals = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    vals.update(kwargs)
    return RunConfig(**vals).validate()
