"""Mean ROC figures: one merged curve per method, fold-mean AUC in the legend."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation.roc import RocCurve  # noqa: E402


def plot_roc(
    curves: Mapping[str, RocCurve],
    path: str | Path,
    *,
    title: str = "Mean ROC curves",
    legend_auc: Mapping[str, str] | None = None,
    dpi: int = 150,
) -> Path:
    """Draw each labelled curve as a step line with the chance diagonal underneath.

    ``legend_auc`` supplies the text shown next to each label (normally the
    fold mean±std); without it the curve's own area is printed.
    """
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    ax.plot([0, 1], [0, 1], linestyle="--", color="0.6", linewidth=1, label="chance")
    for label, c in curves.items():
        auc_txt = (legend_auc or {}).get(label, f"{c.auc * 100:.2f}")
        ax.plot(c.fpr, c.tpr, linewidth=1.6, label=f"{label} (AUC {auc_txt})")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.01)
    ax.set_xlabel("False Positive Rate")
    ax.set_ylabel("True Positive Rate")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    # pin metadata so repeated runs give byte-identical files
    fig.savefig(path, dpi=dpi, metadata={"Software": None})
    plt.close(fig)
    return path
