"""Raw numpy 2-D correlation / transposed-correlation kernels.

These are graph-free: the autodiff layer and the sparse inference engine
both call into here so that identical inputs produce bit-identical outputs.
Layout is (batch, channels, Q, N) throughout; convolution is
cross-correlation (no kernel flip). All routines are deterministic: the
per-output reduction order is fixed by the im2col GEMM.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError


def stable_sigmoid(x):
    """Overflow-safe logistic; the single implementation both the autodiff
    layer and the sparse engine use, so their outputs can match bit for bit."""
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def out_size(size, k, stride, pad):
    """Spatial output size of a strided correlation (floor formula)."""
    return (size + 2 * pad - k) // stride + 1


def tconv_out_size(size, k, stride, pad, out_pad):
    """Spatial output size of the transposed correlation."""
    return (size - 1) * stride + k - 2 * pad + out_pad


def _pad2d(x, pq, pn):
    if pq == 0 and pn == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pq, pq), (pn, pn)))


def _im2col(xp, kh, kw, sq, sn, crop_q=None, crop_n=None):
    """Padded input -> (B*Qo*No, C*kh*kw) patch matrix (one copy)."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sq, ::sn]
    if crop_q is not None:
        win = win[:, :, :crop_q, :crop_n]
    B, C, Qo, No = win.shape[:4]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(B * Qo * No, C * kh * kw), Qo, No


def corr2d(x, k, stride, pad):
    """Strided cross-correlation.

    x: (B, Ci, Q, N), k: (Co, Ci, kh, kw) -> (B, Co, Q', N').
    """
    B, Ci, Q, N = x.shape
    Co, Cik, kh, kw = k.shape
    if Cik != Ci:
        raise ShapeError(f"kernel expects {Cik} input channels, got {Ci}")
    sq, sn = stride
    pq, pn = pad
    if kh > Q + 2 * pq or kw > N + 2 * pn:
        raise ShapeError(
            f"kernel {kh}x{kw} larger than padded input {Q + 2 * pq}x{N + 2 * pn}"
        )
    xp = _pad2d(x, pq, pn)
    cols, Qo, No = _im2col(xp, kh, kw, sq, sn)
    out = cols @ k.reshape(Co, Ci * kh * kw).T
    return out.reshape(B, Qo, No, Co).transpose(0, 3, 1, 2)


def _scatter(src, k, stride, full_q, full_n):
    """Scatter-accumulate src through k into a zero target of full (padded) size.

    src: (B, Cs, Qs, Ns), k: (Cs, Ct, kh, kw) -> (B, Ct, full_q, full_n)
    where target[b, t, q*sq + a, n*sn + b'] += src[b, s, q, n] * k[s, t, a, b'].

    Implemented as one gather correlation per output phase (sub-pixel
    decomposition): output positions congruent to (rq, rn) mod stride only
    ever see the kernel taps with matching phase, and over those taps the
    scatter is an ordinary correlation with the flipped phase kernel.
    """
    B, Cs, Qs, Ns = src.shape
    _, Ct, kh, kw = k.shape
    sq, sn = stride
    src_mat = np.ascontiguousarray(src.transpose(1, 0, 2, 3)).reshape(Cs, B * Qs * Ns)
    g = (k.reshape(Cs, Ct * kh * kw).T @ src_mat).reshape(Ct, kh, kw, B, Qs, Ns)
    out = np.zeros((Ct, B, full_q, full_n), dtype=src.dtype)
    nq = -(-full_q // sq)
    nn = -(-full_n // sn)
    for rq in range(min(sq, kh)):
        for rn in range(min(sn, kw)):
            buf = np.zeros((Ct, B, nq, nn), dtype=src.dtype)
            for a in range(rq, kh, sq):
                qa = (a - rq) // sq
                for b in range(rn, kw, sn):
                    nb = (b - rn) // sn
                    buf[:, :, qa : qa + Qs, nb : nb + Ns] += g[:, a, b]
            view = out[:, :, rq::sq, rn::sn]
            view[:, :, : buf.shape[2], : buf.shape[3]] = buf[
                :, :, : view.shape[2], : view.shape[3]
            ]
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def corr2d_grad_input(dy, k, stride, pad, in_shape):
    """Gradient of corr2d w.r.t. its input (adjoint scatter)."""
    Q, N = in_shape
    pq, pn = pad
    # k is (Co, Ci, kh, kw); scatter source channels are Co.
    full = _scatter(dy, k, stride, Q + 2 * pq, N + 2 * pn)
    return full[:, :, pq : pq + Q, pn : pn + N]


def corr2d_grad_kernel(x, dy, stride, pad, kshape):
    """Gradient of corr2d w.r.t. the kernel."""
    Co, Ci, kh, kw = kshape
    sq, sn = stride
    pq, pn = pad
    B, _, Qo, No = dy.shape
    xp = _pad2d(x, pq, pn)
    cols, _, _ = _im2col(xp, kh, kw, sq, sn, Qo, No)
    dy_mat = dy.transpose(0, 2, 3, 1).reshape(B * Qo * No, Co)
    return (dy_mat.T @ cols).reshape(kshape)


def tconv2d(x, k, stride, pad, out_pad):
    """Transposed correlation (adjoint of corr2d with the same kernel).

    x: (B, Ci, Q, N), k: (Ci, Co, kh, kw) -> (B, Co, Q', N') where the first
    kernel axis matches the *input* channels, mirroring how the same kernel
    would map Co -> Ci under corr2d.
    """
    B, Ci, Q, N = x.shape
    Cik, Co, kh, kw = k.shape
    if Cik != Ci:
        raise ShapeError(f"transpose kernel expects {Cik} input channels, got {Ci}")
    sq, sn = stride
    pq, pn = pad
    opq, opn = out_pad
    if opq >= sq or opn >= sn:
        raise ShapeError(f"output padding {out_pad} must be < stride {stride}")
    Qo = tconv_out_size(Q, kh, sq, pq, opq)
    No = tconv_out_size(N, kw, sn, pn, opn)
    full_q = (Q - 1) * sq + kh
    full_n = (N - 1) * sn + kw
    full = _scatter(x, k, stride, max(full_q, Qo + pq), max(full_n, No + pn))
    return full[:, :, pq : pq + Qo, pn : pn + No]


def tconv2d_grad_input(dy, k, stride, pad, in_shape):
    """Gradient of tconv2d w.r.t. its input: a plain gather correlation."""
    # dy: (B, Co, Qo, No); k: (Ci, Co, kh, kw) -> treat as corr kernel (Ci<-Co).
    Q, N = in_shape
    sq, sn = stride
    pq, pn = pad
    kh, kw = k.shape[2], k.shape[3]
    B, Co, Qo, No = dy.shape
    dyp = _pad2d(dy, pq, pn)
    # Gather: dx[b,i,q,n] = sum_{o,a,b'} dy_pad[b,o,q*sq+a,n*sn+b'] * k[i,o,a,b']
    win = sliding_window_view(dyp, (kh, kw), axis=(2, 3))[:, :, ::sq, ::sn]
    # win may extend past Q,N if dy was over-padded; crop to the input size.
    win = win[:, :, :Q, :N]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    cols = cols.reshape(B * Q * N, Co * kh * kw)
    Ci = k.shape[0]
    out = cols @ k.reshape(Ci, Co * kh * kw).T
    return out.reshape(B, Q, N, Ci).transpose(0, 3, 1, 2)


def tconv2d_grad_kernel(x, dy, stride, pad, kshape):
    """Gradient of tconv2d w.r.t. the kernel."""
    Ci, Co, kh, kw = kshape
    sq, sn = stride
    pq, pn = pad
    B, _, Q, N = x.shape
    dyp = _pad2d(dy, pq, pn)
    dk = np.empty(kshape, dtype=dy.dtype)
    for a in range(kh):
        for b in range(kw):
            sl = dyp[:, :, a : a + sq * Q : sq, b : b + sn * N : sn][:, :, :Q, :N]
            dk[:, :, a, b] = np.tensordot(x, sl, axes=([0, 2, 3], [0, 2, 3]))
    return dk
