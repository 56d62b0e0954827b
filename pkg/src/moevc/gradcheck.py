"""Central finite-difference gradient verification."""

import numpy as np

from .optim import adam_step  # noqa: F401  (re-exported for the dev CLI)


class GradReport:
    """Worst-offender summary of a finite-difference sweep."""

    def __init__(self):
        self.max_rel_err = 0.0
        self.worst_param = ""
        self.worst_index = ()
        self.checked = 0

    def record(self, name, index, rel_err):
        self.checked += 1
        if rel_err > self.max_rel_err:
            self.max_rel_err = rel_err
            self.worst_param = name
            self.worst_index = tuple(int(i) for i in index)

    def __str__(self):
        loc = f"{self.worst_param}{list(self.worst_index)}" if self.worst_param else "-"
        return (
            f"checked {self.checked} scalars; max rel err {self.max_rel_err:.3e} "
            f"at {loc}"
        )


def finite_diff_check(loss_fn, params, step=1e-5, corrupt_name=None):
    """Compare analytic gradients of ``loss_fn`` against central differences.

    ``loss_fn`` must be a pure function of the parameter values (re-seed any
    internal sampling per call). ``params`` is a dict name -> Tensor; every
    scalar is perturbed. Relative error uses max(|analytic|, |numeric|, 1)
    as denominator, so tiny gradients are compared absolutely.
    ``corrupt_name`` is a test hook that falsifies one analytic gradient.
    """
    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {name: p.grad.copy() for name, p in params.items()}
    if corrupt_name is not None:
        analytic[corrupt_name] = analytic[corrupt_name] + 1.0

    report = GradReport()
    for name, p in params.items():
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = loss_fn().item()
            flat[i] = orig - step
            f_minus = loss_fn().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = analytic[name].reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            report.record(name, np.unravel_index(i, p.shape), rel)
    return report


TOLERANCE = 1e-4


def run_full_suite(cfg, corrupt=False):
    """Finite-difference gate over every loss term through the gated forward.

    Runs at 64-bit on the architecture the config describes (gating forced
    on). The classifier's parameters are checked against the cross-entropy
    term alone, because the mutual-information term evaluates the classifier
    frozen: its value depends on those weights but its gradient deliberately
    does not. Exercise weights are fixed nonzero so every term contributes.
    Returns (ok, human-readable report lines).
    """
    from .autodiff import Tensor
    from .classifier import ce_term
    from .config import replace
    from .moe import MoeModel, moe_total_loss

    cfg = replace(cfg, precision=64, moe=True)
    n_speakers = 3
    model = MoeModel(cfg, n_speakers, seed=[cfg.seed, 99])
    params = model.params()
    rng = np.random.default_rng(cfg.seed)
    x = Tensor(rng.standard_normal((2, 1, cfg.feature_dim, cfg.segment_len)))
    labels = np.array([0, 1])

    class _Weights:
        lambda_mi = 0.7
        lambda_ce = 0.9
        alpha = 0.6
        beta = 0.4

    def total_fn():
        t, _ = moe_total_loss(
            model, x, labels, _Weights,
            rng=np.random.default_rng([cfg.seed, 1]),
            code_rng=np.random.default_rng([cfg.seed, 2]),
        )
        return t

    def ce_fn():
        from . import autodiff as ad

        return ad.mul(ce_term(model.clf, x, labels), _Weights.lambda_ce)

    non_clf = {n: p for n, p in params.items() if not n.startswith("clf.")}
    clf = {n: p for n, p in params.items() if n.startswith("clf.")}
    corrupt_name = next(iter(non_clf)) if corrupt else None
    rep_main = finite_diff_check(total_fn, non_clf, corrupt_name=corrupt_name)
    rep_clf = finite_diff_check(ce_fn, clf)

    # structural contracts: the MI term alone must leave the classifier
    # untouched while reaching the encoder; a parameter disconnected from the
    # loss keeps an exact zero gradient
    from .classifier import mi_term
    from .moe import moe_forward

    model.zero_grad()
    orphan = Tensor(np.zeros(3), requires_grad=True)
    fw = moe_forward(model, x, labels, rng=np.random.default_rng([cfg.seed, 1]))
    mi_term(model.clf, fw.output, labels).backward()
    clf_after_mi = max(float(np.abs(p.grad).max()) for p in clf.values())
    enc_after_mi = float(np.abs(params["base.enc0.W"].grad).max())
    structural_ok = (
        clf_after_mi == 0.0
        and enc_after_mi > 0.0
        and float(np.abs(orphan.grad).max()) == 0.0
    )

    ok = (
        rep_main.max_rel_err <= TOLERANCE
        and rep_clf.max_rel_err <= TOLERANCE
        and structural_ok
    )
    lines = [
        f"full objective vs central differences: {rep_main}",
        f"classifier vs cross-entropy term:      {rep_clf}",
        f"structural contracts (mi/ce routing, orphan zero-grad): "
        f"{'ok' if structural_ok else 'FAILED'}",
        f"tolerance {TOLERANCE:g}: {'PASS' if ok else 'FAIL'}",
    ]
    return ok, lines
