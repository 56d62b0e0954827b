"""Deterministic multi-speaker synthetic feature corpus.

Each utterance index draws one shared content sequence (an order-1
autoregressive process), which every speaker renders through a fixed
speaker-specific affine map plus a tanh-shaped coloration and small
observation noise. The corpus is therefore parallel across speakers:
utterance j of speaker A and speaker B carry the same content, which gives
frame-aligned pairs for conversion quality measurement. Everything is a pure
function of the arguments and the seed.
"""

from pathlib import Path

import numpy as np

from .errors import DataError
from .features import (
    CorpusManifest,
    FeatureSeq,
    ManifestEntry,
    write_feature_file,
    write_manifest,
)

AR_COEFF = 0.95
OBS_NOISE = 0.01


class SpeakerVoice:
    """Fixed per-speaker rendering: affine map, coloration strength, F0 law."""

    def __init__(self, dim, rng):
        # Condition-bounded affine: singular values drawn in [0.7, 1.4].
        u, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        v, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        s = rng.uniform(0.7, 1.4, size=dim)
        self.matrix = (u * s) @ v
        self.bias = rng.normal(0.0, 1.0, size=dim)
        self.coloration = rng.uniform(0.2, 0.8)
        self.f0_log_mean = rng.uniform(np.log(100.0), np.log(250.0))
        self.f0_log_std = rng.uniform(0.08, 0.25)

    def render(self, content, rng):
        v = content @ self.matrix.T + self.bias
        x = v + self.coloration * np.tanh(v)
        x += OBS_NOISE * rng.standard_normal(x.shape)
        return x.astype(np.float32)

    def f0_track(self, n_frames, rng):
        # Persistent voiced/unvoiced runs via a sticky two-state chain.
        voiced = np.empty(n_frames, dtype=bool)
        state = True
        for t in range(n_frames):
            voiced[t] = state
            if rng.random() < 0.1:
                state = not state
        f0 = np.zeros(n_frames, dtype=np.float64)
        n_voiced = int(voiced.sum())
        f0[voiced] = np.exp(
            self.f0_log_mean + self.f0_log_std * rng.standard_normal(n_voiced)
        )
        return f0.astype(np.float32)


def _content_sequence(n_frames, dim, rng):
    innov = rng.standard_normal((n_frames, dim))
    seq = np.empty((n_frames, dim))
    scale = 1.0 / np.sqrt(1.0 - AR_COEFF**2)  # stationary start
    seq[0] = innov[0] * scale
    for t in range(1, n_frames):
        seq[t] = AR_COEFF * seq[t - 1] + innov[t]
    return seq


def gen_synthetic_corpus(out_dir, n_speakers, utts_per_speaker, n_frames, dim, seed):
    """Write MFCB files plus a manifest under ``out_dir``; returns the manifest.

    Roughly a quarter of each speaker's utterances (at least one, when there
    are two or more) are tagged eval; the rest train.
    """
    if n_speakers < 2:
        raise DataError("conversion needs at least 2 speakers")
    if utts_per_speaker < 1 or n_frames < 1 or dim < 1:
        raise DataError("utterance count, frame count and dim must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    root = np.random.SeedSequence(seed)
    spk_seed, content_seed, noise_seed, f0_seed = root.spawn(4)
    voices = [
        np.random.default_rng(s) for s in spk_seed.spawn(n_speakers)
    ]
    voices = [SpeakerVoice(dim, r) for r in voices]
    content_rngs = [np.random.default_rng(s) for s in content_seed.spawn(utts_per_speaker)]
    noise_rng = np.random.default_rng(noise_seed)
    f0_rng = np.random.default_rng(f0_seed)

    n_eval = max(1, utts_per_speaker // 4) if utts_per_speaker >= 2 else 0
    entries = []
    for j in range(utts_per_speaker):
        content = _content_sequence(n_frames, dim, content_rngs[j])
        split = "eval" if j >= utts_per_speaker - n_eval else "train"
        for s, voice in enumerate(voices):
            frames = voice.render(content, noise_rng)
            f0 = voice.f0_track(n_frames, f0_rng)
            name = f"spk{s}_utt{j:03d}.mfcb"
            seq = FeatureSeq(frames=frames, speaker_id=f"spk{s}", utterance_id=name, f0=f0)
            write_feature_file(seq, out_dir / name)
            entries.append(ManifestEntry(f"spk{s}", split, name))
    manifest = CorpusManifest(root=out_dir, entries=entries)
    write_manifest(manifest, out_dir / "manifest.tsv")
    return manifest
