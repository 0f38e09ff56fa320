"""Loss terms: hierarchy-aware embedding, domain, margin ranking, and their sum."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .model import LOGIT_EPS

EMB_FLOOR = 1e-8


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, value=None):
        super().__init__(f"loss term {term} is not finite ({value})")
        self.term = term


@dataclass
class LossWeights:
    lambda1: float = 0.05
    lambda2: float = 0.05
    delta: float = 0.0
    margin: float = 0.1
    curvature: float = 1.0

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if min(self.lambda1, self.lambda2, self.delta) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.curvature != 1.0:
            raise ValueError("only curvature 1 is supported")


@dataclass
class BatchLossReport:
    L_emb: float
    L_d: float
    L_pred: float
    L_reg: float
    L_total: float
    grad_norms: dict = field(default_factory=dict)
    disc_input_norms: list = field(default_factory=list)
    degenerate: int = 0
    emb_clamped: bool = False
    bce_specific: float = float("nan")
    bce_shared: float = float("nan")


def degree_weights(degrees, max_degree=None) -> np.ndarray:
    """(max(d) - d) / max(d): 0 for the most connected node, 1 for an isolated one."""
    d = np.asarray(degrees, dtype=np.float64)
    m = float(np.max(d)) if max_degree is None else float(max_degree)
    if m <= 0:
        return np.ones_like(d)
    return (m - d) / m


@dataclass
class NodeGroup:
    """Batch nodes of one side (users or items) of one domain."""

    specific: ad.Var   # S rows, (N, d_f)
    shared: ad.Var     # S-hat rows, (N, d_f)
    weights: np.ndarray  # per-node deviation weights, (N,)


def root(group: NodeGroup) -> np.ndarray:
    """Mean of (S + S-hat)/2 over the group, as a constant (no gradient)."""
    return np.mean(0.5 * (group.specific.value + group.shared.value), axis=0)


def weighted_deviation(group: NodeGroup) -> ad.Var:
    """(1/N) sum_n w_n ||S_n - root||^2 with a detached root."""
    tape = group.specific.tape
    diff = group.specific - tape.const(root(group)[None, :])
    dev = ad.sum(ad.square(diff), axis=1, keepdims=True)
    w = tape.const(np.asarray(group.weights, dtype=np.float64)[:, None])
    return ad.mean(dev * w)


def hierarchy_embedding_loss(groups: list[NodeGroup]) -> tuple[ad.Var, bool]:
    """1 / sqrt(sum of weighted deviations over the four node groups).

    Returns the loss and whether the denominator hit its 1e-8 floor.
    """
    total = None
    for g in groups:
        if g.specific.shape[0] < 2:
            raise ValueError("each node group needs at least two nodes")
        t = weighted_deviation(g)
        total = t if total is None else total + t
    clamped = bool(total.value <= EMB_FLOOR)
    return 1.0 / ad.sqrt(ad.clip(total, EMB_FLOOR)), clamped


def domain_loss(d_S: ad.Var, d_T: ad.Var, d_S_tilde: ad.Var, d_T_tilde: ad.Var) -> ad.Var:
    """Source is label 0, target label 1; each term averages over its own batch."""
    def c(x):
        return ad.clip(x, LOGIT_EPS, 1.0 - LOGIT_EPS)

    return -(ad.mean(ad.log(1.0 - c(d_S))) + ad.mean(ad.log(1.0 - c(d_S_tilde)))
             + ad.mean(ad.log(c(d_T))) + ad.mean(ad.log(c(d_T_tilde))))


def specific_bce(d_S: np.ndarray, d_T: np.ndarray) -> float:
    """Plain-number BCE of the specific-feature path."""
    s = np.clip(d_S, LOGIT_EPS, 1 - LOGIT_EPS)
    t = np.clip(d_T, LOGIT_EPS, 1 - LOGIT_EPS)
    return float(0.5 * (-np.mean(np.log(1 - s)) - np.mean(np.log(t))))


def ranking_loss(p_pos, p_neg, margin: float = 0.1) -> ad.Var:
    """max(p_pos^2 - p_neg^2 + margin, 0), elementwise."""
    tape = p_pos.tape if isinstance(p_pos, ad.Var) else p_neg.tape
    p_pos = tape._wrap(p_pos)
    p_neg = tape._wrap(p_neg)
    return ad.maxzero(ad.square(p_pos) - ad.square(p_neg) + margin)


def total_loss(L_emb, L_d, L_pred, theta_norm, w: LossWeights) -> ad.Var:
    for name, term in (("L_emb", L_emb), ("L_d", L_d), ("L_pred", L_pred), ("theta", theta_norm)):
        val = float(np.asarray(term.value).sum())
        if not math.isfinite(val):
            raise NonFiniteLossError(name, val)
    return w.lambda1 * L_emb + w.lambda2 * L_d + L_pred + w.delta * theta_norm
