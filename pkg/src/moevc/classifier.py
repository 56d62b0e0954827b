"""Auxiliary speaker classifier and the classifier-augmented objective.

The classifier trains only on real features (cross-entropy term). The
mutual-information term evaluates the classifier with frozen parameters on
decoder outputs, so its gradient shapes the encoder/decoder but never the
classifier itself.
"""

import numpy as np

from . import autodiff as ad
from .layers import Affine, ConvLayer
from .vae import batch_code


class SpeakerClassifier:
    """Conv stack + temporal mean pooling + affine head to S logits."""

    def __init__(self, cfg, n_speakers, dtype, rng):
        kh, kw = cfg.kernel
        pad = ((kh - 1) // 2, (kw - 1) // 2)
        self.convs = []
        c_prev = 1
        q = cfg.feature_dim
        for c in cfg.clf_channels:
            self.convs.append(ConvLayer(c_prev, c, (kh, kw), (2, 2), pad, rng, dtype))
            c_prev = c
            q = (q + 2 * pad[0] - kh) // 2 + 1
        self.pooled_dim = c_prev * q
        self.head = Affine(self.pooled_dim, n_speakers, rng, dtype)
        self.n_speakers = n_speakers

    def named_params(self, prefix="clf"):
        for i, layer in enumerate(self.convs):
            yield from layer.named_params(f"{prefix}.conv{i}")
        yield from self.head.named_params(f"{prefix}.head")

    def classify(self, x, frozen=False):
        """(B,1,Q,N) features -> (B,S) logits; ``frozen`` detaches the params."""
        h = x
        for layer in self.convs:
            h = ad.relu(layer.forward(h, frozen=frozen))
        pooled = ad.mean(h, axis=-1)  # average over time
        flat = ad.reshape(pooled, (h.shape[0], self.pooled_dim))
        return self.head.forward(flat, frozen=frozen)


def ce_term(clf, x, labels):
    """Cross-entropy of the classifier on real features (trains the classifier)."""
    return ad.softmax_cross_entropy(clf.classify(x.detach()), labels)


def mi_term(clf, decoded, labels):
    """Mean log-probability of the conditioning code under the frozen classifier.

    Ranges in (-inf, 0]; enters the minimized total negated, so maximizing it
    pushes decoded outputs to carry their speaker code.
    """
    return ad.mul(ad.softmax_cross_entropy(clf.classify(decoded, frozen=True), labels), -1.0)


def classifier_terms(base, clf, x, z, xbar, code_idx, code_rng):
    """(mi, ce, rand_idx) for a batch whose encode/decode is already done.

    The MI term averages the reconstruction path (true code as label) and a
    conversion decode to uniformly drawn random target codes. ``xconv`` is
    decoded here because it depends on the random codes.
    """
    rand_idx = (
        code_rng.integers(0, base.n_speakers, size=x.shape[0])
        if code_rng is not None
        else np.asarray(code_idx)
    )
    xconv = base.decode(z, batch_code(rand_idx, base.n_speakers, base.dtype))
    mi = ad.mul(ad.add(mi_term(clf, xbar, code_idx), mi_term(clf, xconv, rand_idx)), 0.5)
    ce = ce_term(clf, x, code_idx)
    return mi, ce, rand_idx


def acvae_total_loss(base, clf, x, code_idx, weights, rng=None, code_rng=None):
    """VAE objective plus weighted MI and CE terms; returns (total, parts).

    With both weights zero the classifier is never evaluated and the graph is
    exactly the plain VAE one. ``parts`` holds floats for logging.
    """
    code = batch_code(code_idx, base.n_speakers, base.dtype)
    mu, logvar, z = base.encode(x, rng=rng)
    xbar = base.decode(z, code)
    q, n = x.shape[2], x.shape[3]
    l_recon = ad.mul(ad.mse(xbar, x), 0.5 * q * n)
    l_lat = ad.kl_std_normal(mu, logvar)
    total = ad.add(l_recon, l_lat)
    parts = {"recon": l_recon.item(), "lat": l_lat.item(), "mi": 0.0, "ce": 0.0}
    use_clf = clf is not None and (weights.lambda_mi != 0.0 or weights.lambda_ce != 0.0)
    if use_clf:
        mi, ce, _ = classifier_terms(base, clf, x, z, xbar, code_idx, code_rng)
        parts["mi"] = mi.item()
        parts["ce"] = ce.item()
        total = ad.add(total, ad.mul(mi, -weights.lambda_mi))
        total = ad.add(total, ad.mul(ce, weights.lambda_ce))
    return total, parts
