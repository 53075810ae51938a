"""Binary cross-entropy objectives.

Per-sample losses are averaged over the batch for each component before the
components are summed. There are no weighting coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .model import PredictionRecord

EPS = 1e-7


@dataclass
class LossValue:
    total: torch.Tensor
    diagnosis: torch.Tensor
    lesion: torch.Tensor | None = None

    def breakdown(self) -> dict[str, float | None]:
        return {
            "loss": self.total.item(),
            "loss_diag": self.diagnosis.item(),
            "loss_lesion": None if self.lesion is None else self.lesion.item(),
        }


def bce(p, t, eps: float = EPS) -> torch.Tensor:
    """Elementwise ``-[t log p + (1 - t) log(1 - p)]`` with ``p`` clamped to [eps, 1 - eps]."""
    if not torch.is_tensor(p):
        p = torch.tensor(p, dtype=torch.float64)
    t = torch.as_tensor(t, dtype=p.dtype, device=p.device)
    p = p.clamp(eps, 1.0 - eps)
    return -(t * torch.log(p) + (1.0 - t) * torch.log1p(-p))


def diagnostic_loss(record: PredictionRecord, d) -> torch.Tensor:
    return bce(record.diagnosis_prob, d).mean()


def lesion_loss(record: PredictionRecord, l) -> torch.Tensor:
    if record.lesion_probs is None:
        raise ValueError("record carries no lesion predictions")
    probs = record.lesion_probs
    l = torch.as_tensor(l, dtype=probs.dtype)
    if l.shape != probs.shape:
        raise ValueError(f"lesion targets of shape {tuple(l.shape)} do not match predictions {tuple(probs.shape)}")
    # mean over lesions is the 1/N sum; mean over the batch follows
    return bce(probs, l).mean(dim=-1).mean()


def combined_loss(record: PredictionRecord, d, l) -> LossValue:
    if l is None:
        raise ValueError("combined loss needs lesion labels")
    diag = diagnostic_loss(record, d)
    les = lesion_loss(record, l)
    return LossValue(diag + les, diag, les)


def baseline_loss(record: PredictionRecord, d) -> torch.Tensor:
    return diagnostic_loss(record, d)
