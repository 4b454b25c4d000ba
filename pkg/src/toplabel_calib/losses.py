"""Top-label losses: every positive is a binary event (correct or not)."""

from __future__ import annotations

import numpy as np

EPS = 1e-6


def _prepare(p, is_tp):
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    is_tp = np.asarray(is_tp, dtype=bool).reshape(-1)
    if p.shape != is_tp.shape:
        raise ValueError("confidences and TP flags differ in length")
    if p.size == 0:
        raise ValueError("loss of an empty sample is undefined")
    return p, is_tp


def nll_terms(p, is_tp) -> np.ndarray:
    p, is_tp = _prepare(p, is_tp)
    p = np.clip(p, EPS, 1.0 - EPS)
    return -np.where(is_tp, np.log(p), np.log1p(-p))


def brier_terms(p, is_tp) -> np.ndarray:
    p, is_tp = _prepare(p, is_tp)
    return np.where(is_tp, (1.0 - p) ** 2, p ** 2)


def loss_nll(p, is_tp) -> float:
    """-sum_TP log p - sum_FP log(1 - p), with p clipped to [1e-6, 1 - 1e-6]."""
    return float(np.sum(nll_terms(p, is_tp)))


def loss_brier(p, is_tp) -> float:
    return float(np.sum(brier_terms(p, is_tp)))


LOSSES = {"nll": loss_nll, "brier": loss_brier}
LOSS_TERMS = {"nll": nll_terms, "brier": brier_terms}


def get_loss(kind: str):
    try:
        return LOSSES[kind]
    except KeyError:
        raise ValueError(f"unknown loss {kind!r}; expected one of {sorted(LOSSES)}") from None
