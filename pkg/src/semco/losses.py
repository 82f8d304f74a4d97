"""Scoring, masking, pseudo-labelling and the five training losses.

All loss functions take torch tensors (numpy arrays are converted) and are
differentiable in the prediction arguments.  Masks and pseudo-labels are
computed from weak-view outputs and treated as constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .grouping import LabelGrouping

DEFAULT_TEMP = 0.1


def _t(x, like=None):
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if isinstance(like, torch.Tensor) else torch.float64
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def cosine_loss(z, z_hat):
    """``1 - cos(z, z_hat)`` row-wise; a scalar for 1-D inputs."""
    z_hat = _t(z_hat)
    z = _t(z, z_hat).to(z_hat.dtype)
    nz, nh = z.norm(dim=-1), z_hat.norm(dim=-1)
    if torch.any(nz == 0) or torch.any(nh == 0):
        raise ValueError("cosine loss is undefined for a zero vector")
    return 1.0 - (z * z_hat).sum(-1) / (nz * nh)


def class_scores(q, M, temp: float = DEFAULT_TEMP):
    """Softmax over cosine similarities to the rows of ``M``, sharpened by ``temp``."""
    q = _t(q)
    M = _t(M, q).to(q.dtype)
    qn = q.norm(dim=-1, keepdim=True)
    if torch.any(qn == 0):
        raise ValueError("class scores are undefined for a zero prediction")
    cos = (q / qn) @ (M / M.norm(dim=-1, keepdim=True)).T
    return torch.softmax(cos / temp, dim=-1)


def semantic_mask(g, tau_e: float = 0.70):
    g = np.asarray(g, dtype=np.float64)
    return (g.max(axis=-1) >= tau_e).astype(np.int64)


def onehot_mask(p_weak, tau_o: float = 0.95):
    p = np.asarray(p_weak, dtype=np.float64)
    return (p.max(axis=-1) >= tau_o).astype(np.int64)


def pseudo_embedding(p, grouping: LabelGrouping, M) -> np.ndarray:
    """Class-score-weighted mean of the member rows of the winning group."""
    p = np.asarray(p, dtype=np.float64)
    M = np.asarray(getattr(M, "vectors", M), dtype=np.float64)
    single = p.ndim == 1
    p2 = np.atleast_2d(p)
    G = grouping.matrix_G
    winner = np.argmax(p2 @ G, axis=1)
    weights = p2 * G[:, winner].T
    totals = weights.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        raise ValueError("winning group has zero total score")
    out = (weights / totals) @ M
    return out[0] if single else out


@dataclass
class UnlabeledOutcomes:
    """Per-sample pseudo-labelling decisions for one unlabeled batch.

    ``pseudo_emb`` rows and ``pseudo_class`` entries are only meaningful
    where the matching mask is 1 (``NaN`` rows / ``-1`` otherwise).
    """

    p: np.ndarray  # n x K semantic-head class scores
    g: np.ndarray  # n x Q group scores
    eta_sc: np.ndarray
    eta_oh: np.ndarray
    pseudo_emb: np.ndarray  # n x d
    pseudo_class: np.ndarray  # one-hot head hard label
    sc_class: np.ndarray  # argmax of p
    oh_conf: np.ndarray

    def __len__(self):
        return len(self.eta_sc)


@torch.no_grad()
def compute_outcomes(
    emb_weak, logits_weak, M, grouping: LabelGrouping, temp=DEFAULT_TEMP, tau_e=0.70, tau_o=0.95
) -> UnlabeledOutcomes:
    M = np.asarray(getattr(M, "vectors", M), dtype=np.float64)
    p = class_scores(_t(emb_weak).double(), M, temp).numpy()
    g = p @ grouping.matrix_G
    eta_sc = semantic_mask(g, tau_e)
    p_oh = torch.softmax(_t(logits_weak).double(), dim=-1).numpy()
    eta_oh = onehot_mask(p_oh, tau_o)
    pseudo_emb = np.full((len(p), M.shape[1]), np.nan)
    if eta_sc.any():
        pseudo_emb[eta_sc == 1] = pseudo_embedding(p[eta_sc == 1], grouping, M)
    pseudo_class = np.where(eta_oh == 1, p_oh.argmax(axis=1), -1)
    return UnlabeledOutcomes(
        p, g, eta_sc, eta_oh, pseudo_emb, pseudo_class, p.argmax(axis=1), p_oh.max(axis=1)
    )


def _targets(M, labels, like):
    M = _t(getattr(M, "vectors", M), like).to(like.dtype)
    labels = labels if isinstance(labels, torch.Tensor) else torch.as_tensor(np.asarray(labels))
    if labels.ndim == 2:
        return labels.to(like.dtype) @ M
    return M[labels.long()]


def semantic_sup_loss(M, labels, emb_preds):
    """Mean cosine loss between true label embeddings and predicted embeddings."""
    emb_preds = _t(emb_preds)
    return cosine_loss(_targets(M, labels, emb_preds), emb_preds).mean()


def _masked_mean(values_fn, mask, n, like):
    mask = torch.as_tensor(np.asarray(mask)).bool()
    if not mask.any():
        return like.sum() * 0.0
    return values_fn(mask).sum() / n


def semantic_unsup_loss(pseudo_embs, masks_sc, emb_preds_strong):
    """Masked cosine loss against pseudo-embeddings, averaged over the whole batch."""
    emb_preds_strong = _t(emb_preds_strong)
    n = emb_preds_strong.shape[0]
    targets = _t(pseudo_embs, emb_preds_strong).to(emb_preds_strong.dtype)
    return _masked_mean(
        lambda m: cosine_loss(targets[m], emb_preds_strong[m]), masks_sc, n, emb_preds_strong
    )


def onehot_sup_loss(labels, logits):
    logits = _t(logits)
    labels = labels if isinstance(labels, torch.Tensor) else torch.as_tensor(np.asarray(labels))
    if labels.ndim == 2:
        return -(labels.to(logits.dtype) * F.log_softmax(logits, dim=-1)).sum(-1).mean()
    return F.cross_entropy(logits, labels.long())


def onehot_unsup_loss(pseudo_classes, masks_oh, logits_strong):
    logits_strong = _t(logits_strong)
    n = logits_strong.shape[0]
    classes = torch.as_tensor(np.asarray(pseudo_classes)).long()
    return _masked_mean(
        lambda m: F.cross_entropy(logits_strong[m], classes[m], reduction="none"),
        masks_oh,
        n,
        logits_strong,
    )


def cotrain_terms(outcomes: UnlabeledOutcomes, M, emb_preds_strong, logits_strong):
    """The two halves of the co-training loss.

    The semantic head learns the one-hot head's confident labels and the
    one-hot head learns the semantic head's; a sample both are confident
    about contributes to both halves, whether or not they agree.
    """
    emb_preds_strong = _t(emb_preds_strong)
    logits_strong = _t(logits_strong)
    n = emb_preds_strong.shape[0]
    oh_classes = np.where(outcomes.eta_oh == 1, outcomes.pseudo_class, 0)
    to_sc = _masked_mean(
        lambda m: cosine_loss(_targets(M, oh_classes, emb_preds_strong)[m], emb_preds_strong[m]),
        outcomes.eta_oh,
        n,
        emb_preds_strong,
    )
    to_oh = onehot_unsup_loss(outcomes.sc_class, outcomes.eta_sc, logits_strong)
    return to_sc, to_oh


def cotrain_loss(outcomes: UnlabeledOutcomes, M, emb_preds_strong, logits_strong):
    to_sc, to_oh = cotrain_terms(outcomes, M, emb_preds_strong, logits_strong)
    return to_sc + to_oh


@dataclass
class LossBreakdown:
    l_sc_s: object
    l_sc_u: object
    l_oh_s: object
    l_oh_u: object
    l_co_sc: object
    l_co_oh: object
    total: object
    lambda_u: float
    lambda_co: float
    sc_scale: float

    @property
    def l_co(self):
        return self.l_co_sc + self.l_co_oh

    def as_floats(self) -> dict[str, float]:
        names = ("l_sc_s", "l_sc_u", "l_oh_s", "l_oh_u", "l_co", "total")
        return {k: float(torch.as_tensor(getattr(self, k)).detach()) for k in names}


def total_loss(
    l_sc_s, l_sc_u, l_oh_s, l_oh_u, l_co_sc, l_co_oh=0.0, lambda_u=1.0, lambda_co=1.0, sc_scale=3.0
) -> LossBreakdown:
    """Weighted sum of the five losses.

    ``sc_scale`` multiplies every term that trains the semantic head,
    including its half of the co-training loss.
    """
    total = (
        sc_scale * l_sc_s
        + l_oh_s
        + lambda_u * (sc_scale * l_sc_u + l_oh_u)
        + lambda_co * (sc_scale * l_co_sc + l_co_oh)
    )
    return LossBreakdown(
        l_sc_s, l_sc_u, l_oh_s, l_oh_u, l_co_sc, l_co_oh, total, lambda_u, lambda_co, sc_scale
    )
