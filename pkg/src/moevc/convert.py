"""Single-utterance conversion on top of the sparse engine.

Handles the standardization boundary, time-axis padding to the model's total
stride factor (edge replication, trimmed after decoding), optional F0
transfer, and FLOP reporting.
"""

import numpy as np

from .autodiff import Tensor
from .errors import DataError
from .features import FeatureSeq, f0_convert, standardize, destandardize
from .moe import moe_forward
from .sparse import count_flops_dense, frr, overhead_macs, sparse_forward


def _pad_frames(frames, factor):
    t = frames.shape[0]
    pad = (-t) % factor
    if pad:
        frames = np.pad(frames, ((0, pad), (0, 0)), mode="edge")
    return frames, t


def convert_utterance(model, seq, source, target, dense=False, f0_stats=None):
    """Convert ``seq`` from speaker ``source`` to ``target``.

    Returns (FeatureSeq in raw feature space, FRRReport). ``dense`` runs the
    reference gated path instead of the skipping engine (identical math, all
    work performed). ``f0_stats`` is an optional (src F0Stats, tgt F0Stats)
    pair applied to the sequence's F0 track.
    """
    if model.stats is None:
        raise DataError("model carries no standardization stats; cannot convert")
    src_idx = model.speaker_index(source)
    tgt_idx = model.speaker_index(target)
    if seq.dim != model.cfg.feature_dim:
        raise DataError(f"feature dim {seq.dim} != model dim {model.cfg.feature_dim}")
    std = standardize(seq.frames, model.stats).astype(model.dtype)
    padded, t_orig = _pad_frames(std, model.base.stride_factor)
    x = padded.T[None, None]

    if dense:
        fw = moe_forward(model, Tensor(x), src_idx, tgt_idx)
        xhat = fw.output.data
        ledger = count_flops_dense(model, x.shape[2], x.shape[3])
        ledger.overhead_macs = overhead_macs(model, x.shape[2], x.shape[3])
        sparsity = {
            f"{side}{i}": float((g.data == 0.0).mean())
            for side, gates in (("enc", fw.gates.enc), ("dec", fw.gates.dec))
            for i, g in enumerate(gates)
        }
        report = frr(ledger, count_flops_dense(model, x.shape[2], x.shape[3]),
                     utterance_id=seq.utterance_id, gate_sparsity=sparsity)
    else:
        xhat, ledger, report = sparse_forward(
            model, x, src_idx, tgt_idx, utterance_id=seq.utterance_id
        )

    out_frames = destandardize(xhat[0, 0].T[:t_orig], model.stats).astype(np.float32)
    f0 = seq.f0
    if f0 is not None and f0_stats is not None:
        f0 = f0_convert(f0, f0_stats[0], f0_stats[1]).astype(np.float32)
    return (
        FeatureSeq(
            frames=out_frames,
            speaker_id=target,
            utterance_id=f"{seq.utterance_id}__to_{target}",
            f0=f0,
        ),
        report,
    )
