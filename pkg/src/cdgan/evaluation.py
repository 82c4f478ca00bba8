"""Disentanglement scoring: encode held-out images with the class-feature
head, cluster with k-means, and score the clustering against true labels
with optimal-assignment accuracy, normalized mutual information and the
adjusted Rand index.  All metric arithmetic runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .autodiff import Tensor
from .errors import ContractError, ValidationError
from .models import ModelBundle, encoder_forward


@dataclass
class ClusterReport:
    """Scores from the clustering protocol; best over `runs` k-means runs."""

    acc: float
    nmi: float
    ari: float
    cluster_sizes: list[int]
    inter_class_cosine: float
    n_test: int
    runs: int

    def to_dict(self) -> dict:
        return {
            "acc": self.acc, "nmi": self.nmi, "ari": self.ari,
            "cluster_sizes": list(self.cluster_sizes),
            "inter_class_cosine": self.inter_class_cosine,
            "n_test": self.n_test, "runs": self.runs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterReport":
        return cls(acc=float(d["acc"]), nmi=float(d["nmi"]), ari=float(d["ari"]),
                   cluster_sizes=[int(x) for x in d["cluster_sizes"]],
                   inter_class_cosine=float(d["inter_class_cosine"]),
                   n_test=int(d["n_test"]), runs=int(d["runs"]))


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (x * x).sum(axis=1)[:, None] + (centers * centers).sum(axis=1)[None, :]
    d -= 2.0 * (x @ centers.T)
    return np.maximum(d, 0.0)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    centers[0] = x[rng.integers(n)]
    closest = _sq_dists(x, centers[:1]).min(axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            centers[j] = x[rng.integers(n)]
        else:
            centers[j] = x[rng.choice(n, p=closest / total)]
        closest = np.minimum(closest, _sq_dists(x, centers[j:j + 1]).min(axis=1))
    return centers


def _lloyd(x: np.ndarray, k: int, max_iter: int,
           rng: np.random.Generator) -> tuple[np.ndarray, float]:
    centers = _kmeans_pp(x, k, rng)
    assign = np.full(x.shape[0], -1)
    for _ in range(max_iter):
        dists = _sq_dists(x, centers)
        new_assign = dists.argmin(axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = assign == j
            if members.any():
                centers[j] = x[members].mean(axis=0)
            else:
                # revive an empty cluster from the point farthest from its center
                farthest = dists[np.arange(x.shape[0]), assign].argmax()
                centers[j] = x[farthest]
    inertia = float(_sq_dists(x, centers)[np.arange(x.shape[0]), assign].sum())
    return assign, inertia


def kmeans(features: np.ndarray, k: int, restarts: int = 1, max_iter: int = 100,
           rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; best of `restarts` by inertia."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError(f"features must be 2-d, got shape {x.shape}")
    if k < 1 or x.shape[0] < k:
        raise ValidationError(f"need N >= k >= 1, got N={x.shape[0]}, k={k}")
    rng = rng if rng is not None else np.random.default_rng(0)
    best_assign, best_inertia = None, np.inf
    for _ in range(max(restarts, 1)):
        assign, inertia = _lloyd(x, k, max_iter, rng)
        if inertia < best_inertia:
            best_assign, best_inertia = assign, inertia
    return best_assign


def _contingency(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    pred_ids, pred_inv = np.unique(pred, return_inverse=True)
    truth_ids, truth_inv = np.unique(truth, return_inverse=True)
    table = np.zeros((pred_ids.size, truth_ids.size), dtype=np.int64)
    np.add.at(table, (pred_inv, truth_inv), 1)
    return table


def _check_lengths(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ContractError(
            f"prediction and truth must be equal-length vectors, "
            f"got {pred.shape} vs {truth.shape}")
    return pred, truth


def clustering_accuracy(pred, truth) -> float:
    """Fraction matched under the best injective cluster -> class mapping."""
    pred, truth = _check_lengths(pred, truth)
    if np.unique(pred).size > 64 or np.unique(truth).size > 64:
        raise ContractError("clustering_accuracy supports at most 64 distinct labels")
    table = _contingency(pred, truth)
    rows, cols = linear_sum_assignment(-table)
    return float(table[rows, cols].sum()) / pred.size


def nmi(pred, truth) -> float:
    """Mutual information normalized by the geometric mean of the entropies.

    Conventions: 0 when exactly one partition is trivial, 1 when both are.
    """
    pred, truth = _check_lengths(pred, truth)
    table = _contingency(pred, truth).astype(np.float64)
    n = table.sum()

    # entropies from raw counts; a trivial partition is exactly 0 so the
    # convention branches fire reliably
    def entropy(counts):
        nz = counts[counts > 0]
        if nz.size <= 1:
            return 0.0
        return max(float(np.log(n) - (nz * np.log(nz)).sum() / n), 0.0)

    h_pred = entropy(table.sum(axis=1))
    h_truth = entropy(table.sum(axis=0))
    if h_pred == 0.0 and h_truth == 0.0:
        return 1.0
    if h_pred == 0.0 or h_truth == 0.0:
        return 0.0
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))
    nz = table > 0
    mi = float((table[nz] * (np.log(n * table[nz]) - np.log(outer[nz]))).sum()) / n
    return float(np.clip(mi / np.sqrt(h_pred * h_truth), 0.0, 1.0))


def ari(pred, truth) -> float:
    """Adjusted Rand index by pair counting on the contingency table."""
    pred, truth = _check_lengths(pred, truth)
    if pred.size < 2:
        raise ContractError("ari needs at least 2 points")
    table = _contingency(pred, truth)

    def comb2(x):
        return x * (x - 1) / 2.0

    index = comb2(table).sum()
    sum_rows = comb2(table.sum(axis=1)).sum()
    sum_cols = comb2(table.sum(axis=0)).sum()
    total = comb2(np.int64(pred.size))
    # scaled by `total` so numerator and denominator stay integer-valued
    num = total * index - sum_rows * sum_cols
    den = total * (sum_rows + sum_cols) / 2.0 - sum_rows * sum_cols
    if den == 0.0:
        # only happens when both partitions are trivial in the same way
        return 1.0
    return float(num / den)


def uniformity_diagnostic(f: np.ndarray, labels) -> float:
    """Mean cosine similarity over all cross-class feature pairs.

    Near 1 flags collapsed class features; well-spread classes sit near
    or below 0.
    """
    f = np.asarray(f, dtype=np.float64)
    labels = np.asarray(labels)
    if np.unique(labels).size < 2:
        raise ValidationError("uniformity_diagnostic needs at least 2 classes")
    norms = np.linalg.norm(f, axis=1, keepdims=True)
    unit = f / np.maximum(norms, 1e-12)
    cos = unit @ unit.T
    cross = labels[:, None] != labels[None, :]
    return float(cos[cross].mean())


def evaluate(bundle: ModelBundle, test_images: np.ndarray, test_labels,
             k: int, runs: int = 5, rng: Optional[np.random.Generator] = None,
             max_iter: int = 100, per_metric_best: bool = True) -> ClusterReport:
    """Cluster encoder features of a labeled test set and score the result.

    Reports the best score per metric across `runs` k-means runs; with
    per_metric_best=False it instead reports all three scores from the
    single run with the highest accuracy.
    """
    test_labels = np.asarray(test_labels)
    if test_labels.ndim != 1 or test_labels.size != test_images.shape[0]:
        raise ContractError("test set must be labeled, one label per image")
    rng = rng if rng is not None else np.random.default_rng(0)

    f = encoder_forward(bundle, Tensor(test_images)).f.values.astype(np.float64)
    scored = []
    for _ in range(max(runs, 1)):
        assign = kmeans(f, k, restarts=1, max_iter=max_iter, rng=rng)
        scored.append((
            clustering_accuracy(assign, test_labels),
            nmi(assign, test_labels),
            ari(assign, test_labels),
            assign,
        ))

    best_by_acc = max(scored, key=lambda s: s[0])
    if per_metric_best:
        acc = max(s[0] for s in scored)
        nmi_score = max(s[1] for s in scored)
        ari_score = max(s[2] for s in scored)
    else:
        acc, nmi_score, ari_score = best_by_acc[0], best_by_acc[1], best_by_acc[2]

    sizes = np.bincount(best_by_acc[3], minlength=k).tolist()
    return ClusterReport(
        acc=float(acc), nmi=float(nmi_score), ari=float(ari_score),
        cluster_sizes=sizes,
        inter_class_cosine=uniformity_diagnostic(f, test_labels),
        n_test=int(test_labels.size), runs=int(runs))
