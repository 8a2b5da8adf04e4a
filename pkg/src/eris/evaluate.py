"""Evaluation diagnostics: classification metrics, calibration, rank
alignment of uncertainty with energy, and feature-dependence matrices.

All metrics are pure functions of their inputs. The dependence matrices are
the disentanglement diagnostics: Pearson correlations catch linear coupling
between encoder features, the histogram mutual-information estimate catches
nonlinear coupling as well.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, asdict

import numpy as np
from scipy import stats

from .data import TimeSeriesDataset
from .model import ModelParams, domain_energy_batch, encode, variance_head_batch
from .train import evaluate_accuracy

logger = logging.getLogger(__name__)

DEFAULT_ECE_BINS = 15
DEFAULT_MI_BINS = 16


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    macro_precision: float
    macro_recall: float
    ece: float
    dse_rank_corr: float

    def to_json(self, config_echo: dict | None = None) -> str:
        payload = {k: float(v) for k, v in asdict(self).items()}
        payload["config"] = config_echo or {}
        return json.dumps(payload, indent=2, sort_keys=True)


def classification_metrics(preds, labels, n_classes: int) -> tuple[float, float, float, float]:
    """(accuracy, macro_f1, macro_precision, macro_recall) over n_classes.

    Macro averages run over all n_classes; a class absent from both preds and
    labels contributes zero to each average (logged as a warning).
    """
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.size == 0 or preds.shape != labels.shape:
        raise ValueError("preds and labels must be equal-length and non-empty")
    accuracy = float(np.mean(preds == labels))
    precisions = np.zeros(n_classes)
    recalls = np.zeros(n_classes)
    f1s = np.zeros(n_classes)
    for c in range(n_classes):
        tp = int(np.sum((preds == c) & (labels == c)))
        fp = int(np.sum((preds == c) & (labels != c)))
        fn = int(np.sum((preds != c) & (labels == c)))
        if tp + fp + fn == 0:
            logger.warning("class %d absent from labels and predictions; counted as 0", c)
            continue
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        precisions[c] = p
        recalls[c] = r
        f1s[c] = 2 * p * r / (p + r) if p + r else 0.0
    return accuracy, float(f1s.mean()), float(precisions.mean()), float(recalls.mean())


def ece(confidences, correct, bins: int = DEFAULT_ECE_BINS) -> float:
    """Expected calibration error over equal-width confidence bins.

    Sum over non-empty bins of (bin weight) * |bin accuracy - bin mean
    confidence|. Confidences must lie in [0, 1].
    """
    conf = np.asarray(confidences, dtype=np.float64)
    corr = np.asarray(correct, dtype=np.float64)
    if conf.shape != corr.shape or conf.size == 0:
        raise ValueError("confidences and correct must be equal-length and non-empty")
    if np.any(conf < 0) or np.any(conf > 1):
        raise ValueError("confidences must lie in [0, 1]")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    idx = np.minimum((conf * bins).astype(np.int64), bins - 1)
    total = 0.0
    n = conf.size
    for b in range(bins):
        mask = idx == b
        n_b = int(mask.sum())
        if n_b == 0:
            continue
        total += (n_b / n) * abs(corr[mask].mean() - conf[mask].mean())
    return float(total)


def dse_rank_correlation(sigma_scores: np.ndarray, neg_e_d: np.ndarray) -> float:
    """Spearman rank correlation between the two per-domain score vectors.

    Average ranks are used for ties. Either input being constant makes the
    correlation degenerate: 0 is returned and a warning logged.
    """
    a = np.asarray(sigma_scores, dtype=np.float64)
    b = np.asarray(neg_e_d, dtype=np.float64)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("inputs must be equal-length with at least 2 entries")
    if np.all(a == a[0]) or np.all(b == b[0]):
        logger.warning("degenerate rank correlation: constant input, returning 0")
        return 0.0
    ra = stats.rankdata(a, method="average")
    rb = stats.rankdata(b, method="average")
    ra = ra - ra.mean()
    rb = rb - rb.mean()
    return float(np.sum(ra * rb) / np.sqrt(np.sum(ra * ra) * np.sum(rb * rb)))


def dse_rank_diagnostic(params: ModelParams, ds: TimeSeriesDataset,
                        chunk: int = 256) -> float:
    """Dataset-level rank alignment of inverse variance norm with -energy.

    Per domain d: the variance 'vector' is the collection of sigma^2[d] over
    all evaluation samples (L2 norm taken, then inverted), and the energy is
    the mean of E_d[d] over the same samples.
    """
    n_d = params.arch.n_domains
    sq_sums = np.zeros(n_d)
    e_sums = np.zeros(n_d)
    count = 0
    for start in range(0, ds.num_samples, chunk):
        sl = slice(start, min(start + chunk, ds.num_samples))
        f0 = encode(params, ds.samples[sl])
        sigma2 = variance_head_batch(params, f0)
        e_d, _ = domain_energy_batch(params, f0)
        sq_sums += np.sum(sigma2 * sigma2, axis=0)
        e_sums += np.sum(e_d, axis=0)
        count += f0.shape[0]
    sigma_norms = np.sqrt(sq_sums)
    return dse_rank_correlation(1.0 / sigma_norms, -e_sums / count)


def feature_correlation_matrix(features: np.ndarray) -> np.ndarray:
    """Pearson correlation between feature columns; [n, b] -> [b, b].

    Zero-variance features get zero off-diagonal entries and a unit diagonal
    (logged as a warning) instead of NaNs.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need a [n, b] matrix with n >= 2")
    stds = x.std(axis=0)
    dead = stds == 0
    if np.any(dead):
        logger.warning("%d zero-variance feature(s) in correlation matrix", int(dead.sum()))
    safe = np.where(dead, 1.0, stds)
    z = (x - x.mean(axis=0)) / safe
    corr = (z.T @ z) / x.shape[0]
    corr[dead, :] = 0.0
    corr[:, dead] = 0.0
    np.fill_diagonal(corr, 1.0)
    return np.clip(corr, -1.0, 1.0)


def _bin_indices(col: np.ndarray, bins: int) -> np.ndarray:
    lo, hi = col.min(), col.max()
    if hi == lo:
        return np.zeros(col.shape, dtype=np.int64)
    idx = ((col - lo) / (hi - lo) * bins).astype(np.int64)
    return np.minimum(idx, bins - 1)


def mutual_information_matrix(features: np.ndarray, bins: int = DEFAULT_MI_BINS) -> np.ndarray:
    """Plug-in histogram mutual information between feature pairs, in nats.

    Equal-width bins per feature; the diagonal holds each feature's entropy
    estimate. Degenerate features (all mass in one bin) yield zero MI rows
    and are logged.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need a [n, b] matrix with n >= 2")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    n, b = x.shape
    idx = np.column_stack([_bin_indices(x[:, j], bins) for j in range(b)])
    marg = np.zeros((b, bins))
    for j in range(b):
        marg[j] = np.bincount(idx[:, j], minlength=bins) / n
    degenerate = (marg > 0).sum(axis=1) <= 1
    if np.any(degenerate):
        logger.warning("%d degenerate feature(s) in MI matrix", int(degenerate.sum()))
    mi = np.zeros((b, b))
    for j in range(b):
        pj = marg[j]
        nz = pj > 0
        mi[j, j] = float(-np.sum(pj[nz] * np.log(pj[nz])))
    for j in range(b):
        if degenerate[j]:
            continue
        for k in range(j + 1, b):
            if degenerate[k]:
                continue
            joint = np.bincount(idx[:, j] * bins + idx[:, k],
                                minlength=bins * bins).reshape(bins, bins) / n
            outer = np.outer(marg[j], marg[k])
            nz = joint > 0
            val = float(np.sum(joint[nz] * np.log(joint[nz] / outer[nz])))
            mi[j, k] = mi[k, j] = max(val, 0.0)
    return mi


def disentanglement_summary(params: ModelParams, ds: TimeSeriesDataset,
                            mi_bins: int = DEFAULT_MI_BINS) -> tuple[float, float]:
    """(mean |off-diagonal correlation|, mean off-diagonal MI) of encoder features."""
    if ds.num_samples == 0:
        raise ValueError("dataset is empty")
    f0 = encode(params, ds.samples)
    corr = feature_correlation_matrix(f0)
    mi = mutual_information_matrix(f0, mi_bins)
    off = ~np.eye(corr.shape[0], dtype=bool)
    return float(np.mean(np.abs(corr[off]))), float(np.mean(mi[off]))


def export_embeddings(params: ModelParams, ds: TimeSeriesDataset, path: str,
                      chunk: int = 256) -> None:
    """CSV of encoder features: class, domain, f_0 .. f_{b-1} per sample."""
    b = params.arch.encoding_dim
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class", "domain"] + [f"f_{j}" for j in range(b)])
        for start in range(0, ds.num_samples, chunk):
            sl = slice(start, min(start + chunk, ds.num_samples))
            f0 = encode(params, ds.samples[sl])
            for row, k, d in zip(f0, ds.class_labels[sl], ds.domain_labels[sl]):
                writer.writerow([int(k), int(d)] + ["%.17g" % v for v in row])


def save_matrix_csv(matrix: np.ndarray, path: str) -> None:
    """Plain CSV grid of a matrix with full-precision values."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        for row in np.atleast_2d(matrix):
            writer.writerow(["%.17g" % v for v in row])


def evaluate_model(params: ModelParams, ds: TimeSeriesDataset,
                   ece_bins: int = DEFAULT_ECE_BINS) -> MetricsReport:
    """Full metrics report for a trained model on an evaluation set."""
    preds, confs = evaluate_accuracy(params, ds)
    acc, f1, prec, rec = classification_metrics(preds, ds.class_labels, params.arch.n_classes)
    calibration = ece(confs, preds == ds.class_labels, ece_bins)
    rank_corr = dse_rank_diagnostic(params, ds)
    return MetricsReport(accuracy=acc, macro_f1=f1, macro_precision=prec,
                         macro_recall=rec, ece=calibration, dse_rank_corr=rank_corr)
