"""Sparsity-vs-quality sweep: train one model per (beta, seed), evaluate the
eval split, and aggregate FRR/MCD trends.

Evaluation pairs utterances positionally: the i-th eval utterance of every
speaker shares its content (the synthetic corpus is parallel), so conversion
quality is MCD between the converted output and the target speaker's parallel
utterance, frame-aligned by construction.
"""

import tempfile
from pathlib import Path

import numpy as np

from .config import replace
from .convert import convert_utterance
from .metrics import SweepRow, aggregate_sweep, mcd
from .train import Trainer


def _eval_table(manifest):
    """{speaker: [eval entries in manifest order]} with equal counts."""
    table = {spk: manifest.select(split="eval", speaker=spk) for spk in manifest.speakers}
    counts = {len(v) for v in table.values()}
    if len(counts) != 1:
        raise ValueError("eval split must have the same utterance count per speaker")
    return table


def evaluate_model(model, manifest):
    """Mean FRR / conversion MCD / reconstruction MCD / gate-zero fraction
    over all ordered speaker pairs on the eval split."""
    table = _eval_table(manifest)
    speakers = manifest.speakers
    layer_sizes = list(model.cfg.enc_channels) + list(reversed(model.cfg.enc_channels))
    frrs, mcds_conv, mcds_recon, zero_fracs = [], [], [], []
    for src in speakers:
        for i, entry in enumerate(table[src]):
            seq = manifest.load(entry)
            recon, _ = convert_utterance(model, seq, src, src)
            mcds_recon.append(mcd(recon.frames, seq.frames).mcd_db)
            for tgt in speakers:
                if tgt == src:
                    continue
                out, report = convert_utterance(model, seq, src, tgt)
                ref = manifest.load(table[tgt][i])
                frrs.append(report.frr)
                mcds_conv.append(mcd(out.frames, ref.frames).mcd_db)
                if report.gate_sparsity:
                    # overall zero fraction: layer sparsities weighted by width
                    names = [f"enc{j}" for j in range(len(model.cfg.enc_channels))] + [
                        f"dec{j}" for j in range(len(model.cfg.enc_channels))
                    ]
                    total = sum(layer_sizes)
                    zero_fracs.append(
                        sum(report.gate_sparsity[n] * c for n, c in zip(names, layer_sizes))
                        / total
                    )
    return {
        "mean_frr": float(np.mean(frrs)),
        "mean_mcd_convert": float(np.mean(mcds_conv)),
        "mean_mcd_recon": float(np.mean(mcds_recon)),
        "zero_gate_frac": float(np.mean(zero_fracs)) if zero_fracs else 0.0,
    }


def run_sweep(manifest, cfg, betas=None, seeds=None, model_dir=None, progress=None):
    """Train and evaluate the (beta, seed) grid; returns (rows, csv, summary)."""
    betas = list(betas if betas is not None else cfg.sweep_betas)
    seeds = list(seeds if seeds is not None else cfg.sweep_seeds)
    keep_models = model_dir is not None
    if not keep_models:
        tmp = tempfile.TemporaryDirectory(prefix="moevc-sweep-")
        model_dir = tmp.name
    model_dir = Path(model_dir)
    model_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for beta in betas:
        for seed in seeds:
            run_cfg = replace(cfg, beta=beta, seed=seed)
            out = model_dir / f"model_b{beta}_s{seed}.mvcm"
            trainer = Trainer(manifest, run_cfg, out)
            model = trainer.run()
            final = trainer.log_rows[-1] if trainer.log_rows else [0] + [0.0] * 8
            ev = evaluate_model(model, manifest)
            rows.append(
                SweepRow(
                    beta=beta,
                    seed=seed,
                    mean_frr=ev["mean_frr"],
                    mean_mcd_convert=ev["mean_mcd_convert"],
                    mean_mcd_recon=ev["mean_mcd_recon"],
                    loss_recon=final[2],
                    loss_lat=final[3],
                    loss_mi=final[4],
                    loss_ce=final[5],
                    loss_ae=final[6],
                    loss_spc=final[7],
                    zero_gate_frac=ev["zero_gate_frac"],
                )
            )
            if progress:
                progress(rows[-1])
    csv_text, summary = aggregate_sweep(rows)
    return rows, csv_text, summary
