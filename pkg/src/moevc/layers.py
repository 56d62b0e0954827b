"""Network building blocks: gated/plain conv layers, affine maps, a GRU cell.

All forwards take and return autodiff Tensors with a leading batch axis.
Weight init is uniform(-a, a) with a = 1/sqrt(fan_in); biases start at zero
unless a layer overrides (the sparse gating maps start with bias 1 so gating
begins dense).
"""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError


def _uniform(rng, shape, bound, dtype):
    return (rng.random(shape, dtype=np.float32).astype(dtype) * 2.0 - 1.0) * dtype(bound)


def make_param(rng, shape, fan_in, dtype, bound=None):
    if bound is None:
        bound = 1.0 / np.sqrt(fan_in)
    return Tensor(_uniform(rng, shape, bound, np.dtype(dtype).type), requires_grad=True)


def zeros_param(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Affine:
    """x (B, d_in) -> x @ W + b with W (d_in, d_out)."""

    def __init__(self, d_in, d_out, rng, dtype, w_bound=None, b_init=0.0):
        self.W = make_param(rng, (d_in, d_out), d_in, dtype, bound=w_bound)
        self.b = Tensor(np.full(d_out, b_init, dtype=dtype), requires_grad=True)

    def forward(self, x, frozen=False):
        W = self.W.detach() if frozen else self.W
        b = self.b.detach() if frozen else self.b
        return ad.add(ad.matmul(x, W), b)

    def named_params(self, prefix):
        yield f"{prefix}.W", self.W
        yield f"{prefix}.b", self.b


class ConvLayer:
    """Plain (optionally transposed) convolution with bias, no gating."""

    def __init__(self, c_in, c_out, kernel, stride, pad, rng, dtype,
                 is_transpose=False, out_pad=(0, 0)):
        kh, kw = kernel
        fan_in = c_in * kh * kw
        kshape = (c_in, c_out, kh, kw) if is_transpose else (c_out, c_in, kh, kw)
        self.K = make_param(rng, kshape, fan_in, dtype)
        self.b = zeros_param((c_out,), dtype)
        self.stride = stride
        self.pad = pad
        self.out_pad = out_pad
        self.is_transpose = is_transpose
        self.c_in = c_in
        self.c_out = c_out

    def forward(self, x, frozen=False):
        K = self.K.detach() if frozen else self.K
        b = self.b.detach() if frozen else self.b
        if self.is_transpose:
            y = ad.conv2d_transpose(x, K, self.stride, self.pad, self.out_pad)
        else:
            y = ad.conv2d(x, K, self.stride, self.pad)
        return ad.add(y, ad.reshape(b, (1, self.c_out, 1, 1)))

    def named_params(self, prefix):
        yield f"{prefix}.K", self.K
        yield f"{prefix}.b", self.b


class GatedConvLayer:
    """Gated linear unit convolution: (W*h + b) * sigmoid(V*h + d).

    For transposed layers the kernels are stored (c_in, c_out, kh, kw); the
    bias vectors always have c_out entries.
    """

    def __init__(self, c_in, c_out, kernel, stride, pad, rng, dtype,
                 is_transpose=False, out_pad=(0, 0)):
        kh, kw = kernel
        fan_in = c_in * kh * kw
        kshape = (c_in, c_out, kh, kw) if is_transpose else (c_out, c_in, kh, kw)
        self.W = make_param(rng, kshape, fan_in, dtype)
        self.V = make_param(rng, kshape, fan_in, dtype)
        self.b = zeros_param((c_out,), dtype)
        self.d = zeros_param((c_out,), dtype)
        self.stride = stride
        self.pad = pad
        self.out_pad = out_pad
        self.is_transpose = is_transpose
        self.c_in = c_in
        self.c_out = c_out

    def forward(self, h):
        if h.shape[1] != self.c_in:
            raise ShapeError(f"layer expects {self.c_in} channels, got {h.shape[1]}")
        bshape = (1, self.c_out, 1, 1)
        if self.is_transpose:
            lin = ad.conv2d_transpose(h, self.W, self.stride, self.pad, self.out_pad)
            gate = ad.conv2d_transpose(h, self.V, self.stride, self.pad, self.out_pad)
        else:
            lin = ad.conv2d(h, self.W, self.stride, self.pad)
            gate = ad.conv2d(h, self.V, self.stride, self.pad)
        lin = ad.add(lin, ad.reshape(self.b, bshape))
        gate = ad.add(gate, ad.reshape(self.d, bshape))
        return ad.mul(lin, ad.sigmoid(gate))

    def named_params(self, prefix):
        yield f"{prefix}.W", self.W
        yield f"{prefix}.V", self.V
        yield f"{prefix}.b", self.b
        yield f"{prefix}.d", self.d


def glu_forward(layer, h):
    """Free-function alias for the gated convolution forward."""
    return layer.forward(h)


def concat_code(h, code):
    """Append tiled speaker-code channels: (B,C,Q,N) + (B,S) -> (B,C+S,Q,N).

    The code block is constant over spatial positions, so gradients flow into
    ``h`` only when the code is a plain array.
    """
    if not isinstance(code, Tensor):
        code = Tensor(np.asarray(code, dtype=h.dtype))
    b, _, q, n = h.shape
    s = code.shape[-1]
    code_col = ad.reshape(code, (b, s, 1, 1))
    ones = Tensor(np.ones((b, s, q, n), dtype=h.dtype))
    tiled = ad.mul(code_col, ones)
    return ad.concat([h, tiled], axis=1)


class GRUCell:
    """Single-layer gated recurrent cell (update/reset gates + candidate)."""

    def __init__(self, d_in, d_state, rng, dtype):
        self.d_in = d_in
        self.d_state = d_state
        mk = lambda di, do: make_param(rng, (di, do), di, dtype)
        self.Wr, self.Ur = mk(d_in, d_state), mk(d_state, d_state)
        self.Wu, self.Uu = mk(d_in, d_state), mk(d_state, d_state)
        self.Wn, self.Un = mk(d_in, d_state), mk(d_state, d_state)
        self.br = zeros_param((d_state,), dtype)
        self.bu = zeros_param((d_state,), dtype)
        self.bn = zeros_param((d_state,), dtype)

    def step(self, x, h):
        r = ad.sigmoid(ad.add(ad.add(ad.matmul(x, self.Wr), ad.matmul(h, self.Ur)), self.br))
        u = ad.sigmoid(ad.add(ad.add(ad.matmul(x, self.Wu), ad.matmul(h, self.Uu)), self.bu))
        n = ad.tanh(ad.add(ad.add(ad.matmul(x, self.Wn), ad.matmul(ad.mul(r, h), self.Un)), self.bn))
        # h' = (1 - u) * n + u * h
        return ad.add(ad.mul(ad.sub(1.0, u), n), ad.mul(u, h))

    def named_params(self, prefix):
        for nm in ("Wr", "Ur", "Wu", "Uu", "Wn", "Un", "br", "bu", "bn"):
            yield f"{prefix}.{nm}", getattr(self, nm)

    @property
    def macs_per_step(self):
        """Multiplies in the six affine maps for one step (batch 1)."""
        return 3 * (self.d_in * self.d_state + self.d_state * self.d_state)
