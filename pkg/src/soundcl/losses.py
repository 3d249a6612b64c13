"""Training losses.

All losses are means over the batch and sums over bins/classes. BCE inputs
are clamped to [1e-7, 1 - 1e-7] before the logs, which is part of the loss
contract.
"""

from __future__ import annotations

from .tensor import Tensor

BCE_EPS = 1e-7


def cross_entropy(logits: Tensor, targets: Tensor) -> Tensor:
    """Mean cross-entropy between row-wise logits and target distributions.

    ``targets`` may be one-hot or soft rows (each summing to 1), which is
    what distillation against a frozen teacher requires.
    """
    if logits.shape != targets.shape:
        raise ValueError(
            f"logits shape {logits.shape} != targets shape {targets.shape}"
        )
    log_probs = logits.log_softmax()
    per_sample = -(targets * log_probs).sum(axis=-1)
    return per_sample.mean()


def bce_per_sample(recon: Tensor, target: Tensor) -> Tensor:
    """Per-bin binary cross-entropy summed over bins, one value per sample.

    Inputs live in [0,1]; both sides of the log are clamped at ``BCE_EPS``.
    For 2-D input the first axis is the batch; for 3-D it is ``B x C x L``.
    """
    if recon.shape != target.shape:
        raise ValueError(
            f"recon shape {recon.shape} != target shape {target.shape}"
        )
    r = recon.clip(BCE_EPS, 1.0 - BCE_EPS)
    bin_loss = -(target * r.log() + (1.0 - target) * (1.0 - r).log())
    if bin_loss.ndim == 1:
        return bin_loss.sum()
    return bin_loss.reshape(bin_loss.shape[0], -1).sum(axis=1)


def bce(recon: Tensor, target: Tensor) -> Tensor:
    """Summed-over-bins BCE, mean over the batch."""
    per = bce_per_sample(recon, target)
    return per if per.ndim == 0 else per.mean()


def kl_per_sample(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, diag(exp(logvar))) || N(0, I)) per sample, summed over dims."""
    if mu.shape != logvar.shape:
        raise ValueError(f"mu shape {mu.shape} != logvar shape {logvar.shape}")
    term = (mu * mu + logvar.exp() - logvar - 1.0) * 0.5
    if term.ndim == 1:
        return term.sum()
    return term.sum(axis=-1)


def kl_to_unit_gaussian(mu: Tensor, logvar: Tensor) -> Tensor:
    """Per-sample KL reduced to its batch mean."""
    per = kl_per_sample(mu, logvar)
    return per if per.ndim == 0 else per.mean()
