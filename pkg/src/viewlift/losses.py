"""Step-2 objectives: per-view feature loss, camera loss, and the weighted
total, plus ground-truth feature construction from degraded target views."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

ZERO_NORM_GUARD = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda_cos: float = 2.0
    lambda_feat: float = 10.0
    lambda_cam: float = 0.05

    def __post_init__(self):
        if min(self.lambda_cos, self.lambda_feat, self.lambda_cam) < 0.0:
            raise ValueError("loss weights must be non-negative")


def feature_loss(outputs, targets, lambda_cos: float = 2.0) -> torch.Tensor:
    """Average over views of per-element MSE plus a weighted (1 - cosine)
    term computed on the flattened per-view features.

    If either flattened feature has a vanishing norm the cosine is treated as
    zero (orthogonal), contributing the full ``lambda_cos`` penalty.
    """
    if len(outputs) != len(targets) or len(outputs) == 0:
        raise ValueError("need matching, non-empty view lists")
    total = None
    for out, tgt in zip(outputs, targets):
        if out.shape != tgt.shape:
            raise ValueError(f"shape mismatch {tuple(out.shape)} vs {tuple(tgt.shape)}")
        mse = torch.mean((out - tgt) ** 2)
        a, b = out.reshape(-1), tgt.reshape(-1)
        na, nb = torch.linalg.vector_norm(a), torch.linalg.vector_norm(b)
        if float(na) < ZERO_NORM_GUARD or float(nb) < ZERO_NORM_GUARD:
            cos = torch.zeros((), dtype=out.dtype)
        else:
            cos = torch.dot(a, b) / (na * nb)
        term = mse + lambda_cos * (1.0 - cos)
        total = term if total is None else total + term
    return total / len(outputs)


def camera_loss(pred, real) -> torch.Tensor:
    """Squared L2 norm of the difference between two 25-vectors."""
    pred = torch.as_tensor(pred)
    real = torch.as_tensor(real, dtype=pred.dtype)
    if pred.shape != real.shape or pred.reshape(-1).shape[0] != 25:
        raise ValueError(f"expected matching 25-vectors, got {tuple(pred.shape)} vs {tuple(real.shape)}")
    return torch.sum((pred - real) ** 2)


def total_loss(l_sd, l_feat, l_cam, weights: LossWeights | None = None) -> torch.Tensor:
    weights = weights or LossWeights()
    return l_sd + weights.lambda_feat * l_feat + weights.lambda_cam * l_cam


def make_target_features(encoder, image: np.ndarray, spec, t: int, rng) -> torch.Tensor:
    """Encode a target view degraded with the same spec as the input view.

    The degradation parameters are shared with the input view; only the noise
    realization comes from ``rng``. Returns a detached (C, H, W) map.
    """
    from .degrade import degrade

    lq = degrade(image, spec, rng)
    batch = torch.from_numpy(lq.transpose(2, 0, 1)).unsqueeze(0).float()
    with torch.no_grad():
        feat = encoder(batch, torch.tensor([t]))
    return feat[0]
