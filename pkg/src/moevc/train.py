"""Training loop: per-epoch segment sampling, batching, Adam, CSV logging.

Randomness discipline: every epoch derives its own generator streams purely
from (seed, epoch index), so a resumed run consumes exactly the streams an
uninterrupted run would, and two runs with the same seed and config produce
byte-identical models. Structural shortcuts keep zero-weight configurations
bit-identical to plain VAE training: with both classifier weights zero the
classifier is never evaluated, and with ``arch.moe = false`` no gating
machinery exists at all.
"""

import copy
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .config import config_to_text
from .errors import DataError, NumericFailureError
from .features import compute_stats, sample_training_segment, standardize
from .modelio import save_model
from .moe import MoeModel, moe_total_loss
from .optim import Adam

LOG_HEADER = "epoch,total,recon,lat,mi,ce,ae,spc,zero_gate_frac"


def epoch_streams(seed, epoch):
    """(segment, reparam, code) generators for one epoch, pure in (seed, epoch)."""
    return tuple(
        np.random.default_rng(np.random.SeedSequence([seed, 1, epoch, k]))
        for k in range(3)
    )


def init_entropy(seed):
    """Entropy used for model initialization under a given training seed."""
    return [seed, 7]


def load_training_set(manifest, cfg):
    """(standardized per-utterance frames, labels, stats, speaker ids)."""
    manifest.validate()
    speakers = manifest.speakers
    entries = manifest.select(split="train")
    seqs = [manifest.load(e) for e in entries]
    for s in seqs:
        if s.dim != cfg.feature_dim:
            raise DataError(
                f"{s.utterance_id}: dim {s.dim} != configured {cfg.feature_dim}"
            )
    stats = compute_stats(seqs)
    frames = [standardize(s.frames, stats).astype(cfg.dtype) for s in seqs]
    labels = np.array([speakers.index(e.speaker_id) for e in entries], dtype=np.int64)
    return frames, labels, stats, speakers


def epoch_batches(frames, labels, cfg, seg_rng):
    """Sample one segment per utterance, shuffle, and chunk into batches."""
    segs = [
        sample_training_segment(f, cfg.segment_len, seg_rng).T[None] for f in frames
    ]
    order = seg_rng.permutation(len(segs))
    for start in range(0, len(order), cfg.batch):
        idx = order[start : start + cfg.batch]
        x = np.stack([segs[i] for i in idx]).astype(cfg.dtype)
        yield Tensor(x), labels[idx]


class Trainer:
    def __init__(self, manifest, cfg, out_path, resume=None):
        self.cfg = cfg
        self.out_path = Path(out_path)
        self.frames, self.labels, stats, speakers = load_training_set(manifest, cfg)
        if resume is not None:
            model, _, adam_state, epoch = resume
            self.model = model
            self.adam = Adam(model.params(), lr=cfg.lr, b1=cfg.b1, b2=cfg.b2)
            if adam_state is not None:
                self.adam.state = adam_state
            self.start_epoch = epoch
        else:
            self.model = MoeModel(cfg, len(speakers), seed=init_entropy(cfg.seed))
            self.adam = Adam(self.model.params(), lr=cfg.lr, b1=cfg.b1, b2=cfg.b2)
            self.start_epoch = 0
        self.model.stats = stats
        self.model.speaker_ids = list(speakers)
        self.log_rows = []

    def _snapshot(self):
        params = {n: p.data.copy() for n, p in self.model.params().items()}
        return params, copy.deepcopy(self.adam.state), self.epoch_done

    def _restore_and_save(self, snapshot):
        params, adam_state, epoch = snapshot
        for n, p in self.model.params().items():
            p.data = params[n]
        self.adam.state = adam_state
        self.save(epoch=epoch)

    def save(self, epoch=None):
        save_model(
            self.model,
            self.out_path,
            config_to_text(self.cfg),
            adam=self.adam.state,
            epoch=self.epoch_done if epoch is None else epoch,
        )

    def run(self, log_path=None):
        cfg = self.cfg
        log_path = Path(log_path) if log_path else self.out_path.with_suffix(
            self.out_path.suffix + ".log.csv"
        )
        self.epoch_done = self.start_epoch
        snapshot = self._snapshot()
        mode = "a" if self.start_epoch > 0 and log_path.exists() else "w"
        with open(log_path, mode, newline="") as log:
            if mode == "w":
                log.write(LOG_HEADER + "\n")
            for epoch in range(self.start_epoch, cfg.epochs):
                seg_rng, reparam_rng, code_rng = epoch_streams(cfg.seed, epoch)
                sums = dict.fromkeys(
                    ("total", "recon", "lat", "mi", "ce", "ae", "spc", "zero_gate_frac"),
                    0.0,
                )
                count = 0
                for x, lab in epoch_batches(self.frames, self.labels, cfg, seg_rng):
                    self.model.zero_grad()
                    total, parts = moe_total_loss(
                        self.model, x, lab, cfg, rng=reparam_rng, code_rng=code_rng
                    )
                    tv = total.item()
                    if not np.isfinite(tv):
                        self._restore_and_save(snapshot)
                        raise NumericFailureError(
                            f"non-finite loss at epoch {epoch}; "
                            f"last good checkpoint (epoch {snapshot[2]}) written to {self.out_path}"
                        )
                    total.backward()
                    self.adam.step()
                    b = x.shape[0]
                    sums["total"] += tv * b
                    for k, v in parts.items():
                        sums[k] += v * b
                    count += b
                row = [epoch] + [sums[k] / count for k in
                                 ("total", "recon", "lat", "mi", "ce", "ae", "spc", "zero_gate_frac")]
                self.log_rows.append(row)
                log.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
                log.flush()
                self.epoch_done = epoch + 1
                snapshot = self._snapshot()
        self.save()
        return self.model
