"""Mixture-of-experts channel gating: embedding networks, sparse gating
networks, the gated forward pass, and the full training objective.

Two embeddings drive the gates: the encoder embedding network (EEN) sees the
input features with the source code tiled in; the decoder embedding network
(DEN) sees only the latent sequence and the target code, so the decoder side
is independent of the source speaker. Each gated conv layer owns one affine
gating map; gates are ReLU outputs, so exact zeros occur and mark channels
whose convolution work can be skipped entirely.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .classifier import SpeakerClassifier, ce_term, mi_term
from .layers import Affine, ConvLayer, GRUCell, concat_code
from .vae import BaseVae, batch_code


@dataclass
class GateSet:
    """Per-layer nonnegative gate vectors, (B, C_l) each."""

    enc: list
    dec: list

    def all_layers(self):
        return list(self.enc) + list(self.dec)

    def zero_fraction(self):
        total = 0
        zeros = 0
        for g in self.all_layers():
            d = g.data if isinstance(g, Tensor) else np.asarray(g)
            total += d.size
            zeros += int((d == 0.0).sum())
        return zeros / total if total else 0.0

    def as_arrays(self):
        """Batch-1 gate vectors as plain 1-D arrays (for planning)."""
        out = []
        for g in self.all_layers():
            d = g.data if isinstance(g, Tensor) else np.asarray(g)
            out.append(np.asarray(d).reshape(-1))
        return out


class Een:
    """Conv stack over code-tiled input, temporal pooling, affine stack."""

    def __init__(self, cfg, n_speakers, dtype, rng):
        kh, kw = cfg.kernel
        pad = ((kh - 1) // 2, (kw - 1) // 2)
        self.convs = []
        c_prev = 1 + n_speakers
        q = cfg.feature_dim
        for c in cfg.een_channels:
            self.convs.append(ConvLayer(c_prev, c, (kh, kw), (2, 2), pad, rng, dtype))
            c_prev = c
            q = (q + 2 * pad[0] - kh) // 2 + 1
        self.pooled_dim = c_prev * q
        self.fc0 = Affine(self.pooled_dim, cfg.embed_dim, rng, dtype)
        self.fc1 = Affine(cfg.embed_dim, cfg.embed_dim, rng, dtype)

    def embed(self, x, code):
        h = concat_code(x, code)
        for layer in self.convs:
            h = ad.relu(layer.forward(h))
        pooled = ad.mean(h, axis=-1)
        flat = ad.reshape(pooled, (h.shape[0], self.pooled_dim))
        return self.fc1.forward(ad.relu(self.fc0.forward(flat)))

    def named_params(self, prefix="een"):
        for i, layer in enumerate(self.convs):
            yield from layer.named_params(f"{prefix}.conv{i}")
        yield from self.fc0.named_params(f"{prefix}.fc0")
        yield from self.fc1.named_params(f"{prefix}.fc1")


class Den:
    """Recurrent sequence autoencoder over z plus the embedding head.

    The encoder cell consumes z frame by frame; its final state is both the
    feature for the embedding head and the initial state of a decoder cell
    that reconstructs the z sequence (zero-input unrolling, forward order).
    """

    def __init__(self, cfg, n_speakers, dtype, rng):
        self.step_dim = cfg.latent_channels * cfg.feature_dim
        self.state_dim = cfg.den_state
        self.enc_cell = GRUCell(self.step_dim, self.state_dim, rng, dtype)
        self.dec_cell = GRUCell(1, self.state_dim, rng, dtype)
        self.proj = Affine(self.state_dim, self.step_dim, rng, dtype)
        self.fc0 = Affine(self.state_dim + n_speakers, cfg.embed_dim, rng, dtype)
        self.fc1 = Affine(cfg.embed_dim, cfg.embed_dim, rng, dtype)
        self.dtype = dtype

    def _steps(self, z):
        b, c, q, n = z.shape
        flat = ad.reshape(z, (b, c * q, n))
        return [ad.reshape(ad.narrow(flat, 2, t, 1), (b, c * q)) for t in range(n)]

    def encode_state(self, z):
        steps = self._steps(z)
        h = Tensor(np.zeros((z.shape[0], self.state_dim), dtype=z.dtype))
        for x_t in steps:
            h = self.enc_cell.step(x_t, h)
        return h, steps

    def reconstruction_loss(self, state, steps):
        b = state.shape[0]
        zero_in = Tensor(np.zeros((b, 1), dtype=state.dtype))
        h = state
        recon = []
        for _ in steps:
            h = self.dec_cell.step(zero_in, h)
            recon.append(self.proj.forward(h))
        recon = ad.concat(recon, axis=1)
        target = ad.concat(steps, axis=1)
        return ad.mse(recon, target)

    def embed(self, state, code):
        if not isinstance(code, Tensor):
            code = Tensor(np.asarray(code, dtype=state.dtype))
        joined = ad.concat([state, code], axis=1)
        return self.fc1.forward(ad.relu(self.fc0.forward(joined)))

    def named_params(self, prefix="den"):
        yield from self.enc_cell.named_params(f"{prefix}.enc")
        yield from self.dec_cell.named_params(f"{prefix}.dec")
        yield from self.proj.named_params(f"{prefix}.proj")
        yield from self.fc0.named_params(f"{prefix}.fc0")
        yield from self.fc1.named_params(f"{prefix}.fc1")


class Sgn:
    """One affine gating map per gated conv layer; gates = relu(map(e)).

    Weights start near zero with bias 1.0, so training begins dense (all
    gates about 1).
    """

    def __init__(self, cfg, dtype, rng):
        e = cfg.embed_dim
        bound = 0.01 / np.sqrt(e)
        self.enc_maps = [
            Affine(e, c, rng, dtype, w_bound=bound, b_init=1.0)
            for c in cfg.enc_channels
        ]
        self.dec_maps = [
            Affine(e, c, rng, dtype, w_bound=bound, b_init=1.0)
            for c in reversed(cfg.enc_channels)
        ]

    def enc_gates(self, e_enc):
        return [ad.relu(m.forward(e_enc)) for m in self.enc_maps]

    def dec_gates(self, e_dec):
        return [ad.relu(m.forward(e_dec)) for m in self.dec_maps]

    def named_params(self, prefix="sgn"):
        for i, m in enumerate(self.enc_maps):
            yield from m.named_params(f"{prefix}.enc{i}")
        for i, m in enumerate(self.dec_maps):
            yield from m.named_params(f"{prefix}.dec{i}")


def sgn_gates(sgn, e, side, index):
    """Gate vector of one layer: relu of that layer's affine map."""
    maps = sgn.enc_maps if side == "enc" else sgn.dec_maps
    return ad.relu(maps[index].forward(e))


def apply_gates(h, g):
    """Scale channel i of (B,C,Q,N) by gate (B,C) entry i."""
    b, c = g.shape
    return ad.mul(h, ad.reshape(g, (b, c, 1, 1)))


def l_spc(gates):
    """Mean absolute gate value across all layers and batch items."""
    flat = [ad.reshape(g, (g.size,)) for g in gates.all_layers()]
    return ad.l1_norm(ad.concat(flat, axis=0))


class MoeModel:
    """Bundle: base VAE + classifier + (optionally) EEN/DEN/SGN."""

    def __init__(self, cfg, n_speakers, seed):
        self.cfg = cfg
        self.n_speakers = n_speakers
        dtype = np.dtype(cfg.dtype).type
        self.dtype = dtype
        ss = np.random.SeedSequence(seed)
        base_s, clf_s, een_s, den_s, sgn_s = ss.spawn(5)
        self.base = BaseVae(cfg, n_speakers, dtype, np.random.default_rng(base_s))
        self.clf = SpeakerClassifier(cfg, n_speakers, dtype, np.random.default_rng(clf_s))
        if cfg.moe:
            self.een = Een(cfg, n_speakers, dtype, np.random.default_rng(een_s))
            self.den = Den(cfg, n_speakers, dtype, np.random.default_rng(den_s))
            self.sgn = Sgn(cfg, dtype, np.random.default_rng(sgn_s))
        else:
            self.een = self.den = self.sgn = None
        # conversion-phase metadata, attached by the trainer
        self.stats = None
        self.speaker_ids = [f"spk{i}" for i in range(n_speakers)]

    def params(self):
        out = dict(self.base.named_params("base"))
        out.update(self.clf.named_params("clf"))
        if self.een is not None:
            out.update(self.een.named_params("een"))
            out.update(self.den.named_params("den"))
            out.update(self.sgn.named_params("sgn"))
        return out

    def zero_grad(self):
        for p in self.params().values():
            p.zero_grad()

    def speaker_index(self, speaker_id):
        from .errors import UnknownSpeakerError

        if speaker_id not in self.speaker_ids:
            raise UnknownSpeakerError(speaker_id, self.speaker_ids)
        return self.speaker_ids.index(speaker_id)


@dataclass
class MoeForward:
    output: Tensor
    gates: GateSet
    l_ae: Tensor
    mu: Tensor
    logvar: Tensor
    z: Tensor
    state: Tensor  # DEN encoder final state (None when MoE disabled)


def moe_forward(model, x, c_source, c_target=None, rng=None, gates_override=None,
                with_ae=True):
    """Gated reconstruction/conversion pass.

    ``c_target=None`` means reconstruct (target = source). ``rng`` enables
    latent sampling; None uses the posterior mean. ``gates_override`` skips
    the embedding networks and applies the given GateSet directly.
    """
    base = model.base
    if c_target is None:
        c_target = c_source
    code_src = batch_code(c_source, model.n_speakers, model.dtype)
    code_tgt = batch_code(c_target, model.n_speakers, model.dtype)
    zero = Tensor(np.zeros((), dtype=model.dtype))

    if model.sgn is None and gates_override is None:
        mu, logvar, z = base.encode(x, rng=rng)
        out = base.decode(z, code_tgt)
        return MoeForward(out, GateSet([], []), zero, mu, logvar, z, None)

    if gates_override is not None:
        g_enc, g_dec = list(gates_override.enc), list(gates_override.dec)
        g_enc = [g if isinstance(g, Tensor) else Tensor(np.asarray(g, model.dtype)) for g in g_enc]
        g_dec = [g if isinstance(g, Tensor) else Tensor(np.asarray(g, model.dtype)) for g in g_dec]
        mu, logvar, z = base.encode(x, rng=rng, gates=g_enc)
        out = base.decode(z, code_tgt, gates=g_dec)
        return MoeForward(out, GateSet(g_enc, g_dec), zero, mu, logvar, z, None)

    e_enc = model.een.embed(x, code_src)
    g_enc = model.sgn.enc_gates(e_enc)
    mu, logvar, z = base.encode(x, rng=rng, gates=g_enc)
    state, steps = model.den.encode_state(z)
    l_ae = model.den.reconstruction_loss(state, steps) if with_ae else zero
    e_dec = model.den.embed(state, code_tgt)
    g_dec = model.sgn.dec_gates(e_dec)
    out = base.decode(z, code_tgt, gates=g_dec)
    return MoeForward(out, GateSet(g_enc, g_dec), l_ae, mu, logvar, z, state)


def moe_total_loss(model, x, code_idx, weights, rng=None, code_rng=None):
    """Full training objective; returns (total, parts dict of floats).

    parts: recon, lat, mi, ce, ae, spc, zero_gate_frac. Zero-weight terms are
    structurally skipped where that cannot change the total, so an all-zero
    configuration reproduces plain VAE training bit for bit.
    """
    if model.sgn is None:
        from .classifier import acvae_total_loss

        total, parts = acvae_total_loss(
            model.base, model.clf, x, code_idx, weights, rng=rng, code_rng=code_rng
        )
        parts.update({"ae": 0.0, "spc": 0.0, "zero_gate_frac": 0.0})
        return total, parts

    fw = moe_forward(model, x, code_idx, rng=rng, with_ae=weights.alpha != 0.0)
    q, n = x.shape[2], x.shape[3]
    l_recon = ad.mul(ad.mse(fw.output, x), 0.5 * q * n)
    l_lat = ad.kl_std_normal(fw.mu, fw.logvar)
    total = ad.add(l_recon, l_lat)
    spc = l_spc(fw.gates)
    parts = {
        "recon": l_recon.item(),
        "lat": l_lat.item(),
        "mi": 0.0,
        "ce": 0.0,
        "ae": fw.l_ae.item(),
        "spc": spc.item(),
        "zero_gate_frac": fw.gates.zero_fraction(),
    }
    use_clf = weights.lambda_mi != 0.0 or weights.lambda_ce != 0.0
    if use_clf:
        rand_idx = (
            code_rng.integers(0, model.n_speakers, size=x.shape[0])
            if code_rng is not None
            else np.asarray(code_idx)
        )
        code_rand = batch_code(rand_idx, model.n_speakers, model.dtype)
        e_dec_rand = model.den.embed(fw.state, code_rand)
        g_dec_rand = model.sgn.dec_gates(e_dec_rand)
        xconv = model.base.decode(fw.z, code_rand, gates=g_dec_rand)
        mi = ad.mul(
            ad.add(mi_term(model.clf, fw.output, code_idx), mi_term(model.clf, xconv, rand_idx)),
            0.5,
        )
        ce = ce_term(model.clf, x, code_idx)
        parts["mi"] = mi.item()
        parts["ce"] = ce.item()
        total = ad.add(total, ad.mul(mi, -weights.lambda_mi))
        total = ad.add(total, ad.mul(ce, weights.lambda_ce))
    total = ad.add(total, ad.mul(fw.l_ae, weights.alpha))
    total = ad.add(total, ad.mul(spc, weights.beta))
    return total, parts
