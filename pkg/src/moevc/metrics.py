"""Objective quality proxies and sweep-report aggregation.

Mel-cepstral distance replaces any learned quality predictor here: synthetic
utterance pairs are frame-aligned by construction, so no time warping is
needed. All feature dimensions enter the distance (the synthetic features
carry no energy coefficient to exclude).
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError

_MCD_SCALE = 10.0 / np.log(10.0)


@dataclass
class MCDResult:
    mcd_db: float
    frames_compared: int


def mcd(a, b):
    """Mean over frames of (10/ln10) * sqrt(2 * sum_d (a_d - b_d)^2), in dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"mcd expects equal T x D shapes, got {a.shape} vs {b.shape}")
    per_frame = _MCD_SCALE * np.sqrt(2.0 * ((a - b) ** 2).sum(axis=1))
    return MCDResult(mcd_db=float(per_frame.mean()), frames_compared=a.shape[0])


SWEEP_CSV_HEADER = (
    "beta,seed,mean_frr,mean_mcd_convert,mean_mcd_recon,"
    "loss_recon,loss_lat,loss_mi,loss_ce,loss_ae,loss_spc,zero_gate_frac"
)

_SWEEP_FIELDS = (
    "beta",
    "seed",
    "mean_frr",
    "mean_mcd_convert",
    "mean_mcd_recon",
    "loss_recon",
    "loss_lat",
    "loss_mi",
    "loss_ce",
    "loss_ae",
    "loss_spc",
    "zero_gate_frac",
)


@dataclass
class SweepRow:
    beta: float
    seed: int
    mean_frr: float
    mean_mcd_convert: float
    mean_mcd_recon: float
    loss_recon: float
    loss_lat: float
    loss_mi: float
    loss_ce: float
    loss_ae: float
    loss_spc: float
    zero_gate_frac: float

    def csv_line(self):
        vals = []
        for name in _SWEEP_FIELDS:
            v = getattr(self, name)
            vals.append(str(v) if name == "seed" else repr(float(v)))
        return ",".join(vals)


def sweep_rows_to_csv(rows):
    """Deterministic CSV text: rows ordered by (beta, seed)."""
    ordered = sorted(rows, key=lambda r: (r.beta, r.seed))
    return "\n".join([SWEEP_CSV_HEADER] + [r.csv_line() for r in ordered]) + "\n"


def read_sweep_csv(path):
    with open(path, "r", newline="") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != SWEEP_CSV_HEADER:
        raise DataError(f"{path}: bad sweep csv header")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != len(_SWEEP_FIELDS):
            raise DataError(f"{path}: wrong column count")
        kwargs = {}
        for name, raw in zip(_SWEEP_FIELDS, parts):
            kwargs[name] = int(raw) if name == "seed" else float(raw)
        rows.append(SweepRow(**kwargs))
    return rows


def _trend(values):
    if len(values) < 2:
        return "flat"
    diffs = np.diff(values)
    if np.all(diffs > 0):
        return "increasing"
    if np.all(diffs < 0):
        return "decreasing"
    return "mixed"


def aggregate_sweep(rows):
    """(csv text, summary dict) with per-beta seed means and trend verdicts."""
    csv_text = sweep_rows_to_csv(rows)
    betas = sorted({r.beta for r in rows})
    frr_means = []
    mcd_means = []
    for b in betas:
        group = [r for r in rows if r.beta == b]
        frr_means.append(float(np.mean([r.mean_frr for r in group])))
        mcd_means.append(float(np.mean([r.mean_mcd_convert for r in group])))
    summary = {
        "betas": betas,
        "frr_means": frr_means,
        "mcd_means": mcd_means,
        "frr_trend": _trend(frr_means),
        "mcd_trend": _trend(mcd_means),
        "frr_strictly_increasing": _trend(frr_means) == "increasing",
    }
    return csv_text, summary
