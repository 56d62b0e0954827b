"""Gated-CNN variational autoencoder with speaker-code conditioned decoder.

The encoder consumes features alone; the decoder receives the speaker code
concatenated (tiled) at every layer. Both stacks optionally accept per-layer
gate vectors which scale each layer's output feature maps; ``None`` means
ungated (the plain base network).
"""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError
from .layers import ConvLayer, GatedConvLayer, concat_code


def _gate_mul(h, gate):
    b, c = gate.shape
    return ad.mul(h, ad.reshape(gate, (b, c, 1, 1)))


class BaseVae:
    """Encoder/decoder gated conv stacks plus latent and output heads."""

    def __init__(self, cfg, n_speakers, dtype, rng):
        kh, kw = cfg.kernel
        stride = (1, cfg.time_stride)
        pad = ((kh - 1) // 2, (kw - 1) // 2)
        out_pad = (0, cfg.time_stride - 1)
        self.cfg = cfg
        self.n_speakers = n_speakers
        self.dtype = np.dtype(dtype).type

        self.encoder = []
        c_prev = 1
        for c in cfg.enc_channels:
            self.encoder.append(
                GatedConvLayer(c_prev, c, (kh, kw), stride, pad, rng, self.dtype)
            )
            c_prev = c
        cz = cfg.latent_channels
        self.mu_head = ConvLayer(c_prev, cz, (1, 1), (1, 1), (0, 0), rng, self.dtype)
        self.logvar_head = ConvLayer(c_prev, cz, (1, 1), (1, 1), (0, 0), rng, self.dtype)

        self.decoder = []
        c_prev = cz
        for c in reversed(cfg.enc_channels):
            self.decoder.append(
                GatedConvLayer(
                    c_prev + n_speakers, c, (kh, kw), stride, pad, rng, self.dtype,
                    is_transpose=True, out_pad=out_pad,
                )
            )
            c_prev = c
        self.out_head = ConvLayer(c_prev, 1, (1, 1), (1, 1), (0, 0), rng, self.dtype)

    @property
    def stride_factor(self):
        return self.cfg.time_stride ** len(self.encoder)

    def named_params(self, prefix="base"):
        for i, layer in enumerate(self.encoder):
            yield from layer.named_params(f"{prefix}.enc{i}")
        yield from self.mu_head.named_params(f"{prefix}.mu")
        yield from self.logvar_head.named_params(f"{prefix}.logvar")
        for i, layer in enumerate(self.decoder):
            yield from layer.named_params(f"{prefix}.dec{i}")
        yield from self.out_head.named_params(f"{prefix}.out")

    def _check_input(self, x):
        if x.data.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"expected (B,1,Q,N) input, got {x.shape}")

    def encode(self, x, rng=None, gates=None):
        """Run the encoder stack; returns (mu, logvar, z).

        z is a reparameterized sample when ``rng`` is given, otherwise the
        posterior mean (deterministic mode).
        """
        self._check_input(x)
        h = x
        for i, layer in enumerate(self.encoder):
            h = layer.forward(h)
            if gates is not None:
                h = _gate_mul(h, gates[i])
        mu = self.mu_head.forward(h)
        logvar = self.logvar_head.forward(h)
        z = ad.sample_reparam(mu, logvar, rng) if rng is not None else mu
        return mu, logvar, z

    def decode(self, z, code, gates=None):
        """Run the decoder stack; every layer input is code-concatenated."""
        h = z
        for i, layer in enumerate(self.decoder):
            h = layer.forward(concat_code(h, code))
            if gates is not None:
                h = _gate_mul(h, gates[i])
        return self.out_head.forward(h)

    def vae_loss(self, x, code, rng=None):
        """(L_recon, L_lat, total): scaled-MSE Gaussian likelihood plus KL."""
        mu, logvar, z = self.encode(x, rng=rng)
        xbar = self.decode(z, code)
        q, n = x.shape[2], x.shape[3]
        l_recon = ad.mul(ad.mse(xbar, x), 0.5 * q * n)
        l_lat = ad.kl_std_normal(mu, logvar)
        return l_recon, l_lat, ad.add(l_recon, l_lat)

    def convert(self, x, code_target):
        """Deterministic conversion: decode the posterior mean with a target code."""
        _, _, z = self.encode(x, rng=None)
        return self.decode(z, code_target)


def batch_code(indices, n_speakers, dtype):
    """Int speaker indices -> (B,S) one-hot array."""
    idx = np.atleast_1d(np.asarray(indices, dtype=np.int64))
    if idx.min() < 0 or idx.max() >= n_speakers:
        raise ShapeError(f"speaker index out of range for {n_speakers}")
    out = np.zeros((idx.size, n_speakers), dtype=dtype)
    out[np.arange(idx.size), idx] = 1.0
    return out


def frames_to_input(frames, dtype):
    """T x D frame matrix -> (1, 1, D, T) model input (features as rows)."""
    arr = np.asarray(frames, dtype=dtype)
    return Tensor(arr.T[None, None])


def output_to_frames(y):
    """(1, 1, D, T) model output -> T x D frame matrix."""
    return np.asarray(y.data[0, 0].T)
