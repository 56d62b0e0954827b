"""Sparse inference engine: gate plans, skipped convolution, FLOP accounting.

A channel is active iff its gate is strictly greater than exact 0.0 (ReLU
guarantees exact zeros, so no epsilon is involved). The sparse forward slices
inputs and kernels down to active channels and therefore genuinely performs
less work; inactive output channels are implicitly zero. Counting convention:
1 MAC = 2 FLOPs; biases, activations, elementwise products and pooling are
excluded. For transposed layers the spatial factor is the input grid (each
input position scatters a full kernel footprint); for normal layers it is the
output grid. Conversion-phase accounting covers exactly what a conversion
computes: the encoder stack, the mu head (the logvar head is not evaluated
when converting deterministically), the decoder stack and the output head,
with EEN + DEN-encoder + SGN counted dense as overhead. The DEN's sequence
decoder is a training-only device and never runs at conversion.
"""

from dataclasses import dataclass, field

import numpy as np

from . import convkernels as ck
from .autodiff import Tensor
from .convkernels import stable_sigmoid
from .moe import GateSet, moe_forward
from .vae import batch_code


@dataclass
class LayerPlan:
    name: str
    active_in: np.ndarray   # indices into the layer's full input channel space
    active_out: np.ndarray  # indices into the layer's output channels
    n_code: int = 0         # trailing always-active code channels included in active_in


@dataclass
class GatePlan:
    layers: list

    def by_name(self, name):
        for lp in self.layers:
            if lp.name == name:
                return lp
        raise KeyError(name)


def _active(gate_vec):
    return np.flatnonzero(np.asarray(gate_vec).reshape(-1) > 0.0)


def plan_gates(gates, model):
    """Compile a GateSet (batch-1) into active-channel index lists.

    Input activity chains from layer to layer; speaker-code channels appended
    by decoder conditioning are always active.
    """
    g_enc = [np.asarray(g.data if isinstance(g, Tensor) else g).reshape(-1) for g in gates.enc]
    g_dec = [np.asarray(g.data if isinstance(g, Tensor) else g).reshape(-1) for g in gates.dec]
    S = model.n_speakers
    cz = model.cfg.latent_channels
    plans = []
    prev = np.arange(1)  # the single data channel feeds the first encoder layer
    for i, g in enumerate(g_enc):
        plans.append(LayerPlan(f"enc{i}", prev, _active(g)))
        prev = plans[-1].active_out
    plans.append(LayerPlan("mu", prev, np.arange(cz)))
    prev = np.arange(cz)
    for i, g in enumerate(g_dec):
        c_feat = model.base.decoder[i].c_in - S
        in_idx = np.concatenate([prev, c_feat + np.arange(S)])
        plans.append(LayerPlan(f"dec{i}", in_idx, _active(g), n_code=S))
        prev = plans[-1].active_out
    plans.append(LayerPlan("out", prev, np.arange(1)))
    return GatePlan(plans)


@dataclass
class LayerFlops:
    name: str
    dense_macs: int
    actual_macs: int

    @property
    def reduction(self):
        return 1.0 - self.actual_macs / self.dense_macs if self.dense_macs else 0.0


@dataclass
class FlopLedger:
    layers: list = field(default_factory=list)
    overhead_macs: int = 0

    @property
    def dense_macs(self):
        return sum(l.dense_macs for l in self.layers)

    @property
    def actual_macs(self):
        return sum(l.actual_macs for l in self.layers)

    @property
    def dense_flops(self):
        return 2 * self.dense_macs

    @property
    def actual_flops(self):
        return 2 * self.actual_macs

    @property
    def overhead_flops(self):
        return 2 * self.overhead_macs


@dataclass
class FRRReport:
    utterance_id: str
    frr: float
    dense_flops: int
    actual_flops: int
    overhead_flops: int
    layer_reductions: dict
    gate_sparsity: dict

    def csv_row(self):
        spars = ";".join(f"{k}={repr(v)}" for k, v in self.gate_sparsity.items())
        return (
            f"{self.utterance_id},{self.frr!r},{self.dense_flops},"
            f"{self.actual_flops},{self.overhead_flops},{spars}"
        )


FRR_CSV_HEADER = "utterance_id,frr,dense_flops,actual_flops,overhead_flops,layer_sparsity"


def _conv_shapes(model, q, n):
    """Per-layer (spatial_factor, q_out, n_out) chain for the conversion path."""
    kh, kw = model.cfg.kernel
    stride = (1, model.cfg.time_stride)
    pad = ((kh - 1) // 2, (kw - 1) // 2)
    shapes = {}
    for i, _ in enumerate(model.base.encoder):
        qo = ck.out_size(q, kh, stride[0], pad[0])
        no = ck.out_size(n, kw, stride[1], pad[1])
        shapes[f"enc{i}"] = (qo * no, qo, no)
        q, n = qo, no
    shapes["mu"] = (q * n, q, n)
    shapes["z"] = (q, n)
    for i, layer in enumerate(model.base.decoder):
        # transposed: spatial factor is the input grid
        shapes[f"dec{i}"] = (q * n, q, n)
        q = ck.tconv_out_size(q, kh, stride[0], pad[0], layer.out_pad[0])
        n = ck.tconv_out_size(n, kw, stride[1], pad[1], layer.out_pad[1])
    shapes["out"] = (q * n, q, n)
    return shapes


def _layer_struct(model):
    """(name, layer, n_branches, kh*kw) for every conversion-path layer."""
    kh, kw = model.cfg.kernel
    out = []
    for i, layer in enumerate(model.base.encoder):
        out.append((f"enc{i}", layer, 2, kh * kw))
    out.append(("mu", model.base.mu_head, 1, 1))
    for i, layer in enumerate(model.base.decoder):
        out.append((f"dec{i}", layer, 2, kh * kw))
    out.append(("out", model.base.out_head, 1, 1))
    return out


def overhead_macs(model, q, n):
    """Dense MAC count of EEN + DEN encoder/embedding + SGN at conversion."""
    if model.een is None:
        return 0
    cfg = model.cfg
    kh, kw = cfg.kernel
    pad = ((kh - 1) // 2, (kw - 1) // 2)
    total = 0
    cq, cn = q, n
    c_prev = 1 + model.n_speakers
    for c, layer in zip(cfg.een_channels, model.een.convs):
        qo = ck.out_size(cq, kh, 2, pad[0])
        no = ck.out_size(cn, kw, 2, pad[1])
        total += c_prev * c * kh * kw * qo * no
        cq, cn, c_prev = qo, no, c
    total += model.een.pooled_dim * cfg.embed_dim
    total += cfg.embed_dim * cfg.embed_dim
    # DEN: encoder cell per latent time step, then the embedding head
    n_z = n
    for _ in cfg.enc_channels:
        n_z = ck.out_size(n_z, kw, cfg.time_stride, pad[1])
    total += model.den.enc_cell.macs_per_step * n_z
    total += (cfg.den_state + model.n_speakers) * cfg.embed_dim
    total += cfg.embed_dim * cfg.embed_dim
    # SGN affine maps
    for c in cfg.enc_channels:
        total += cfg.embed_dim * c
    for c in reversed(cfg.enc_channels):
        total += cfg.embed_dim * c
    return total


def count_flops_dense(model, q, n):
    """Dense baseline ledger of the base network's conversion path."""
    shapes = _conv_shapes(model, q, n)
    ledger = FlopLedger()
    for name, layer, branches, ksp in _layer_struct(model):
        spatial = shapes[name][0]
        macs = branches * layer.c_in * layer.c_out * ksp * spatial
        ledger.layers.append(LayerFlops(name, macs, macs))
    return ledger


def count_flops_sparse(plan, model, q, n):
    """Ledger for a gate plan: active-channel MACs per layer plus overhead."""
    shapes = _conv_shapes(model, q, n)
    ledger = FlopLedger(overhead_macs=overhead_macs(model, q, n))
    for name, layer, branches, ksp in _layer_struct(model):
        spatial = shapes[name][0]
        lp = plan.by_name(name)
        dense = branches * layer.c_in * layer.c_out * ksp * spatial
        actual = branches * len(lp.active_in) * len(lp.active_out) * ksp * spatial
        ledger.layers.append(LayerFlops(name, dense, actual))
    return ledger


def frr(ledger, dense_baseline, utterance_id="", gate_sparsity=None):
    """FLOP reduction rate against the dense base network (no MoE parts)."""
    dense_total = dense_baseline.dense_macs
    rate = 1.0 - (ledger.actual_macs + ledger.overhead_macs) / dense_total
    reductions = {l.name: l.reduction for l in ledger.layers}
    return FRRReport(
        utterance_id=utterance_id,
        frr=rate,
        dense_flops=dense_baseline.dense_flops,
        actual_flops=ledger.actual_flops,
        overhead_flops=ledger.overhead_flops,
        layer_reductions=reductions,
        gate_sparsity=dict(gate_sparsity or {}),
    )


def _sparse_conv(layer, x_act, in_idx, out_idx, q_in, n_in):
    """Convolve only active channels; returns the (1, |out|, Qo, No) block."""
    kh, kw = layer.K.shape[2:] if hasattr(layer, "K") else layer.W.shape[2:]
    if layer.is_transpose:
        qo = ck.tconv_out_size(q_in, kh, layer.stride[0], layer.pad[0], layer.out_pad[0])
        no = ck.tconv_out_size(n_in, kw, layer.stride[1], layer.pad[1], layer.out_pad[1])
    else:
        qo = ck.out_size(q_in, kh, layer.stride[0], layer.pad[0])
        no = ck.out_size(n_in, kw, layer.stride[1], layer.pad[1])
    return qo, no


def _run_sparse_layer(kernels, biases, layer, x_act, in_idx, out_idx, dtype):
    """Shared sparse executor for plain and gated conv layers.

    kernels/biases: lists of (kernel Tensor, bias Tensor) per branch.
    Returns the list of per-branch (1, |out|, Qo, No) arrays.
    """
    q_in, n_in = x_act.shape[2], x_act.shape[3]
    qo, no = _sparse_conv(layer, x_act, in_idx, out_idx, q_in, n_in)
    outs = []
    for K, b in zip(kernels, biases):
        bias = b.data[out_idx].astype(dtype, copy=False)
        if len(out_idx) == 0:
            outs.append(np.zeros((1, 0, qo, no), dtype=dtype))
            continue
        if len(in_idx) == 0:
            block = np.broadcast_to(
                bias[None, :, None, None], (1, len(out_idx), qo, no)
            ).copy()
            outs.append(block)
            continue
        if layer.is_transpose:
            kk = K.data[in_idx][:, out_idx]
            y = ck.tconv2d(x_act, kk, layer.stride, layer.pad, layer.out_pad)
        else:
            kk = K.data[out_idx][:, in_idx]
            y = ck.corr2d(x_act, kk, layer.stride, layer.pad)
        outs.append(y + bias[None, :, None, None])
    return outs


def sparse_forward(model, x, c_source, c_target, gates_override=None, utterance_id=""):
    """Conversion that skips convolution work on zero-gated channels.

    x: (1, 1, Q, N) standardized features (array or Tensor). Returns
    (xhat array (1,1,Q,N), FlopLedger, FRRReport). Numerically equivalent to
    the dense gated path; bit-identical when every gate is active.
    """
    xd = x.data if isinstance(x, Tensor) else np.asarray(x)
    if xd.ndim == 3:
        xd = xd[None]
    dtype = model.dtype
    xd = xd.astype(dtype, copy=False)
    q, n = xd.shape[2], xd.shape[3]
    S = model.n_speakers

    if model.sgn is None and gates_override is None:
        # no gating machinery: dense base path, ledger fully dense
        fw = moe_forward(model, Tensor(xd), c_source, c_target)
        ledger = count_flops_dense(model, q, n)
        report = frr(ledger, ledger, utterance_id=utterance_id)
        return fw.output.data, ledger, report

    if gates_override is not None:
        gates = gates_override
        g_enc = [np.asarray(g.data if isinstance(g, Tensor) else g, dtype=dtype) for g in gates.enc]
    else:
        code_src = batch_code(c_source, S, dtype)
        e_enc = model.een.embed(Tensor(xd), code_src)
        g_enc = [g.data for g in model.sgn.enc_gates(e_enc)]

    # encoder, sparsely
    h = xd
    in_idx = np.arange(1)
    enc_out_idx = []
    for i, layer in enumerate(model.base.encoder):
        out_idx = _active(g_enc[i])
        lin, gate = _run_sparse_layer(
            [layer.W, layer.V], [layer.b, layer.d], layer, h, in_idx, out_idx, dtype
        )
        h = lin * stable_sigmoid(gate)
        h = h * np.asarray(g_enc[i]).reshape(-1)[out_idx][None, :, None, None].astype(dtype, copy=False)
        enc_out_idx.append(out_idx)
        in_idx = out_idx
    # mu head over active encoder outputs (logvar head skipped at conversion)
    (mu,) = _run_sparse_layer(
        [model.base.mu_head.K], [model.base.mu_head.b],
        model.base.mu_head, h, in_idx, np.arange(model.cfg.latent_channels), dtype,
    )
    z = mu

    # decoder gates from the DEN (dense Tensor math; counted as overhead)
    if gates_override is not None:
        g_dec = [np.asarray(g.data if isinstance(g, Tensor) else g, dtype=dtype) for g in gates_override.dec]
    else:
        code_tgt = batch_code(c_target, S, dtype)
        state, _ = model.den.encode_state(Tensor(z))
        e_dec = model.den.embed(state, code_tgt)
        g_dec = [g.data for g in model.sgn.dec_gates(e_dec)]

    code_tgt_arr = batch_code(c_target, S, dtype)
    h = z
    in_idx = np.arange(model.cfg.latent_channels)
    for i, layer in enumerate(model.base.decoder):
        c_feat = layer.c_in - S
        tile = np.broadcast_to(
            code_tgt_arr[0][None, :, None, None], (1, S, h.shape[2], h.shape[3])
        ).astype(dtype, copy=False)
        h_full = np.concatenate([h, tile], axis=1)
        in_full = np.concatenate([in_idx, c_feat + np.arange(S)])
        out_idx = _active(g_dec[i])
        lin, gate = _run_sparse_layer(
            [layer.W, layer.V], [layer.b, layer.d], layer, h_full, in_full, out_idx, dtype
        )
        h = lin * stable_sigmoid(gate)
        h = h * np.asarray(g_dec[i]).reshape(-1)[out_idx][None, :, None, None].astype(dtype, copy=False)
        in_idx = out_idx
    (xhat,) = _run_sparse_layer(
        [model.base.out_head.K], [model.base.out_head.b],
        model.base.out_head, h, in_idx, np.arange(1), dtype,
    )

    gates = GateSet([np.asarray(g) for g in g_enc], [np.asarray(g) for g in g_dec])
    plan = plan_gates(gates, model)
    ledger = count_flops_sparse(plan, model, q, n)
    dense = count_flops_dense(model, q, n)
    sparsity = {}
    for name, g in [(f"enc{i}", g) for i, g in enumerate(g_enc)] + [
        (f"dec{i}", g) for i, g in enumerate(g_dec)
    ]:
        vec = np.asarray(g).reshape(-1)
        sparsity[name] = float((vec == 0.0).mean())
    report = frr(ledger, dense, utterance_id=utterance_id, gate_sparsity=sparsity)
    return xhat, ledger, report


def write_frr_csv(reports, path):
    lines = [FRR_CSV_HEADER]
    lines += [r.csv_row() for r in reports]
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_frr_csv(path):
    with open(path, "r", newline="") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != FRR_CSV_HEADER:
        from .errors import DataError

        raise DataError(f"{path}: bad FRR csv header")
    out = []
    for line in lines[1:]:
        uid, fr, df, af, of, spars = line.split(",")
        sparsity = {}
        if spars:
            for item in spars.split(";"):
                k, _, v = item.partition("=")
                sparsity[k] = float(v)
        out.append(
            FRRReport(
                utterance_id=uid,
                frr=float(fr),
                dense_flops=int(df),
                actual_flops=int(af),
                overhead_flops=int(of),
                layer_reductions={},
                gate_sparsity=sparsity,
            )
        )
    return out
