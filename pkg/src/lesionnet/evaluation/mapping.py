"""Cross-schema transfer of lesion predictions and labels (maximum / logical OR pooling)."""

from __future__ import annotations

import numpy as np

from ..schema import SchemaError, SchemaMapping


def _apply(values: np.ndarray, mapping: SchemaMapping, axis: int) -> np.ndarray:
    if values.shape[axis] != len(mapping.source):
        raise SchemaError(
            f"lesion axis has {values.shape[axis]} entries; mapping source {mapping.source.name!r} "
            f"has {len(mapping.source)}"
        )
    cols = [np.take(values, list(idx), axis=axis).max(axis=axis) for idx in mapping.plan]
    return np.stack(cols, axis=axis)


def map_predictions_cross_schema(probs, mapping: SchemaMapping, source=None, axis: int = -1) -> np.ndarray:
    """Lesion probabilities in ``mapping.source`` order -> ``mapping.target`` order.

    Works on a single vector, a batch, or an activation-map stack (pass the
    channel ``axis``). ``source`` is the schema the probabilities came from;
    when given it must equal the mapping's source.
    """
    if source is not None and source != mapping.source:
        raise SchemaError(f"predictions are in schema {source.name!r}, mapping expects {mapping.source.name!r}")
    return _apply(np.asarray(probs, dtype=np.float64), mapping, axis)


def map_gt_cross_schema(flags, mapping: SchemaMapping, source=None, axis: int = -1) -> np.ndarray:
    """Binary labels (or binary masks stacked on ``axis``) in source order -> target order by OR."""
    if source is not None and source != mapping.source:
        raise SchemaError(f"labels are in schema {source.name!r}, mapping expects {mapping.source.name!r}")
    a = np.asarray(flags)
    if a.size and not np.all(np.isin(a, (0, 1))):
        raise ValueError("ground-truth flags must be binary")
    return _apply(a.astype(np.uint8), mapping, axis)
