"""Distance heads: subspace-regression classification plus two baselines.

The regression head represents each class by the span of its embedded
support columns S (M x K).  A query embedding e is scored by the ridge
regression residual

    d(e, S) = || e - S (S^T S + lam1 I)^{-1} S^T e ||_2

i.e. the distance from e to the (regularized) projection onto span(S).
Class posteriors are a softmax over negated distances, and the training
loss adds a pairwise subspace-orthogonalization penalty

    sum_{i != j} ||S_i^T S_j||_F^2 / (||S_i||_F^2 ||S_j||_F^2)

over ordered pairs.  Prototype (distance to the support mean) and cosine
(mean negated cosine similarity) heads provide baselines under the same
episode protocol.

Every head exposes the loss as tape ops (for training) and a plain-numpy
``distances_np`` twin (for evaluation); tests pin the two paths together.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff, linalg
from .autodiff import Tape, Var
from .errors import ContractError, DegenerateSubspaceError, ShapeError


@dataclass
class Hyper:
    """Episode-shape counts and the two loss hyperparameters."""

    n_way: int = 5
    k_shot: int = 5
    q_queries: int = 16
    lambda1: float = 1e-3
    lambda2: float = 1e-2

    def __post_init__(self):
        if self.n_way < 2:
            raise ContractError(f"n_way must be >= 2, got {self.n_way}")
        if self.k_shot < 1 or self.q_queries < 1:
            raise ContractError("k_shot and q_queries must be >= 1")
        if self.lambda1 < 0.0 or self.lambda2 < 0.0:
            raise ContractError("lambda1 and lambda2 must be nonnegative")


@dataclass
class ClassSubspace:
    """Per-class support matrix S, its transpose, and the projector P."""

    class_id: int
    s: Var        # M x K
    st: Var       # K x M (kept for the penalty terms)
    p: Var        # M x M


def build_subspace(support_embeds: Var, lambda1: float, class_id: int = 0) -> ClassSubspace:
    """P = S (S^T S + lambda1 I)^{-1} S^T, recorded on the tape.

    With lambda1 = 0 the caller guarantees S has full column rank; a
    rank-deficient S then surfaces as a conditioning error from the solve.
    """
    s = support_embeds
    m, k = s.shape
    if m < k:
        raise ContractError(f"need embedding dim >= shots, got M={m} < K={k}")
    st = autodiff.transpose(s)
    gram = autodiff.matmul(st, s)
    if lambda1 != 0.0:
        gram = autodiff.add_diag(gram, lambda1)
    p = autodiff.matmul(s, autodiff.solve_spd(gram, st))
    return ClassSubspace(class_id, s, st, p)


def build_projector_np(s: np.ndarray, lambda1: float) -> np.ndarray:
    """Tape-free twin of build_subspace's projector."""
    s = linalg.as_matrix(s)
    gram = s.T @ s
    if lambda1 != 0.0:
        gram = gram + lambda1 * np.eye(s.shape[1])
    return s @ linalg.solve_spd(gram, linalg.transpose(s))


def regression_distance(e: Var, sub: ClassSubspace) -> Var:
    """|| e - P e ||_2 for a single M x 1 query embedding."""
    if e.shape[1] != 1 or e.shape[0] != sub.p.shape[0]:
        raise ShapeError(f"query shape {e.shape} does not match projector {sub.p.shape}")
    return autodiff.l2_norm(autodiff.sub(e, autodiff.matmul(sub.p, e)))


def regression_distances_np(s: np.ndarray, queries: np.ndarray, lambda1: float) -> np.ndarray:
    """Residual norms for all query columns at once (1 x B row).

    Solves (S^T S + lambda1 I) A = S^T Q and measures ||Q - S A|| per
    column, which avoids materializing the M x M projector.
    """
    s = linalg.as_matrix(s)
    queries = linalg.as_matrix(queries)
    gram = s.T @ s
    if lambda1 != 0.0:
        gram = gram + lambda1 * np.eye(s.shape[1])
    coeff = linalg.solve_spd(gram, s.T @ queries)
    resid = queries - s @ coeff
    return np.sqrt(np.sum(resid * resid, axis=0, keepdims=True))


def posterior(query_embed: Var, subs: Sequence[ClassSubspace]) -> Var:
    """Softmax over negated distances, stabilized through logsumexp."""
    if len(subs) < 2:
        raise ContractError(f"posterior needs at least 2 classes, got {len(subs)}")
    neg_d = autodiff.vstack([
        autodiff.neg(regression_distance(query_embed, sub)) for sub in subs
    ])
    log_z = autodiff.logsumexp(neg_d)
    return autodiff.exp(autodiff.sub_scalar(neg_d, log_z))


def softmax_neg_np(distances: np.ndarray) -> np.ndarray:
    """exp(-d) / sum exp(-d) along axis 0, stabilized."""
    neg = -linalg.as_matrix(distances)
    m = np.max(neg, axis=0, keepdims=True)
    e = np.exp(neg - m)
    return e / np.sum(e, axis=0, keepdims=True)


def ortho_penalty(subs: Sequence[ClassSubspace]) -> Var:
    """Ordered-pair sum of ||S_i^T S_j||_F^2 / (||S_i||_F^2 ||S_j||_F^2).

    The summand is symmetric in (i, j), so the ordered sum is twice the
    unordered sum; we compute each unordered pair once and scale by 2.
    """
    if len(subs) < 2:
        raise ContractError(f"penalty needs at least 2 subspaces, got {len(subs)}")
    tape = subs[0].s.tape
    norms_sq = []
    for sub in subs:
        nsq = autodiff.frobenius_norm_sq(sub.s)
        if nsq.value[0, 0] == 0.0:
            raise DegenerateSubspaceError(
                f"class {sub.class_id} has an all-zero support matrix")
        norms_sq.append(nsq)
    total: Var | None = None
    for i in range(len(subs)):
        for j in range(i + 1, len(subs)):
            cross = autodiff.frobenius_norm_sq(autodiff.matmul(subs[i].st, subs[j].s))
            term = autodiff.div(cross, autodiff.mul(norms_sq[i], norms_sq[j]))
            total = term if total is None else autodiff.add(total, term)
    return autodiff.scale(total, 2.0)


def ortho_penalty_np(supports: Sequence[np.ndarray]) -> float:
    """Tape-free double-loop twin of ortho_penalty (ordered pairs)."""
    total = 0.0
    norms = [linalg.frobenius_norm_sq(s) for s in supports]
    for i, si in enumerate(supports):
        for j, sj in enumerate(supports):
            if i == j:
                continue
            total += linalg.frobenius_norm_sq(si.T @ sj) / (norms[i] * norms[j])
    return total


def _check_labels(labels: np.ndarray, n_way: int, count: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != (count,):
        raise ShapeError(f"expected {count} query labels, got shape {labels.shape}")
    if labels.min() < 1 or labels.max() > n_way:
        raise ContractError(
            f"query labels must lie in 1..{n_way}, got range "
            f"[{labels.min()}, {labels.max()}]")
    return labels - 1


def cross_entropy_from_distances(dist_matrix: Var, labels: np.ndarray, n_way: int) -> Var:
    """Mean over queries of d_true + logsumexp(-d), the negative log posterior.

    ``dist_matrix`` is N x B with one column per query; ``labels`` are
    1-based class indices of length B.
    """
    n, b = dist_matrix.shape
    if n != n_way:
        raise ShapeError(f"distance matrix has {n} rows for {n_way} classes")
    rows = _check_labels(labels, n_way, b)
    picked = autodiff.pick(dist_matrix, rows)
    lse = autodiff.lse_cols(autodiff.neg(dist_matrix))
    return autodiff.scale(autodiff.sum_all(autodiff.add(picked, lse)), 1.0 / b)


def regression_distance_rows(subs: Sequence[ClassSubspace], query: Var) -> Var:
    """N x B matrix of residual norms, one row per class subspace."""
    rows = []
    for sub in subs:
        resid = autodiff.sub(query, autodiff.matmul(sub.p, query))
        rows.append(autodiff.col_norms(resid))
    return autodiff.vstack(rows)


def episode_loss(query_embeds: Var, labels, subs: Sequence[ClassSubspace],
                 hyper: Hyper) -> Var:
    """Mean negative log posterior over all queries plus the weighted penalty."""
    dist = regression_distance_rows(subs, query_embeds)
    loss = cross_entropy_from_distances(dist, labels, hyper.n_way)
    if hyper.lambda2 != 0.0:
        loss = autodiff.add(loss, autodiff.scale(ortho_penalty(subs), hyper.lambda2))
    return loss


# -- heads -------------------------------------------------------------------


class RegressionHead:
    """Classify by regression-error distance to class subspaces."""

    name = "regression"

    def episode_loss(self, support_cols: Sequence[Var], query: Var,
                     labels, hyper: Hyper) -> Var:
        subs = [
            build_subspace(s, hyper.lambda1, class_id=i + 1)
            for i, s in enumerate(support_cols)
        ]
        return episode_loss(query, labels, subs, hyper)

    def distances_np(self, support_cols: Sequence[np.ndarray], query: np.ndarray,
                     hyper: Hyper) -> np.ndarray:
        return np.vstack([
            regression_distances_np(s, query, hyper.lambda1) for s in support_cols
        ])


def proto_distance(e: Var, support: Var) -> Var:
    """Euclidean distance from e to the mean of the support columns."""
    k = support.shape[1]
    ones = support.tape.leaf(np.full((k, 1), 1.0 / k))
    centroid = autodiff.matmul(support, ones)
    return autodiff.l2_norm(autodiff.sub(e, centroid))


class ProtoHead:
    """Classify by distance to the per-class support centroid."""

    name = "proto"

    def distance_rows(self, support_cols: Sequence[Var], query: Var,
                      hyper: Hyper) -> Var:
        rows = []
        for s in support_cols:
            k = s.shape[1]
            ones = s.tape.leaf(np.full((k, 1), 1.0 / k))
            centroid = autodiff.matmul(s, ones)
            rows.append(autodiff.col_norms(
                autodiff.add_col(query, autodiff.neg(centroid))))
        return autodiff.vstack(rows)

    def episode_loss(self, support_cols: Sequence[Var], query: Var,
                     labels, hyper: Hyper) -> Var:
        dist = self.distance_rows(support_cols, query, hyper)
        return cross_entropy_from_distances(dist, labels, hyper.n_way)

    def distances_np(self, support_cols: Sequence[np.ndarray], query: np.ndarray,
                     hyper: Hyper) -> np.ndarray:
        rows = []
        for s in support_cols:
            diff = query - np.mean(s, axis=1, keepdims=True)
            rows.append(np.sqrt(np.sum(diff * diff, axis=0, keepdims=True)))
        return np.vstack(rows)


def cosine_score(e: Var, support: Var) -> Var:
    """Mean over support columns of cos(e, s_k); in [-1, 1]."""
    k = support.shape[1]
    e_hat = autodiff.col_normalize(e)
    s_hat = autodiff.col_normalize(support)
    sims = autodiff.matmul(autodiff.transpose(s_hat), e_hat)  # K x 1
    ones = support.tape.leaf(np.full((1, k), 1.0 / k))
    return autodiff.matmul(ones, sims)


class CosineHead:
    """Classify by mean cosine similarity, negated to act as a distance."""

    name = "cosine"

    def distance_rows(self, support_cols: Sequence[Var], query: Var,
                      hyper: Hyper) -> Var:
        q_hat = autodiff.col_normalize(query)
        rows = []
        for s in support_cols:
            k = s.shape[1]
            s_hat = autodiff.col_normalize(s)
            sims = autodiff.matmul(autodiff.transpose(s_hat), q_hat)  # K x B
            ones = s.tape.leaf(np.full((1, k), 1.0 / k))
            rows.append(autodiff.neg(autodiff.matmul(ones, sims)))
        return autodiff.vstack(rows)

    def episode_loss(self, support_cols: Sequence[Var], query: Var,
                     labels, hyper: Hyper) -> Var:
        dist = self.distance_rows(support_cols, query, hyper)
        return cross_entropy_from_distances(dist, labels, hyper.n_way)

    def distances_np(self, support_cols: Sequence[np.ndarray], query: np.ndarray,
                     hyper: Hyper) -> np.ndarray:
        def unit(a):
            norms = np.sqrt(np.sum(a * a, axis=0, keepdims=True))
            return a / np.where(norms > 0.0, norms, 1.0)

        q_hat = unit(query)
        rows = []
        for s in support_cols:
            sims = unit(s).T @ q_hat
            rows.append(-np.mean(sims, axis=0, keepdims=True))
        return np.vstack(rows)


HEADS = {cls.name: cls for cls in (RegressionHead, ProtoHead, CosineHead)}


def make_head(name: str):
    try:
        return HEADS[name]()
    except KeyError:
        raise ContractError(
            f"unknown head {name!r}; expected one of {sorted(HEADS)}") from None


def predict_np(distances: np.ndarray) -> np.ndarray:
    """1-based predicted labels: argmin distance, ties to the lowest index."""
    return np.argmin(distances, axis=0) + 1
