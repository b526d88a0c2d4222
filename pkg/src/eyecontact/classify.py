"""Feature classification: PCA keeping a variance fraction, followed by a
class-weighted linear SVM.

The SVM minimizes the L2-regularized weighted hinge loss

    J(w, b) = 0.5 * ||w||^2 + C * sum_i cw(y_i) * max(0, 1 - y_i * (w . x_i + b))

by sequential minimal optimization on the dual (maximal-violating-pair
working sets, per-sample box bounds C * cw(y_i) carrying the class
weights).  The solver is fully deterministic: ties in pair selection break
by index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, PipelineError

POSITIVE = 1
NEGATIVE = -1


@dataclass
class PcaModel:
    mean: np.ndarray                 # (D,)
    components: np.ndarray           # (k, D), orthonormal rows
    explained_variance: np.ndarray   # (k,), descending

    @property
    def n_components(self):
        return self.components.shape[0]

    @property
    def input_dim(self):
        return self.components.shape[1]


@dataclass
class SvmModel:
    weights: np.ndarray              # (k,)
    bias: float
    class_weights: dict = field(default_factory=dict)  # {+1: w, -1: w}
    C: float = 1.0

    @property
    def input_dim(self):
        return self.weights.shape[0]


def pca_fit(features, retain: float = 0.95) -> PcaModel:
    """Fit PCA keeping the smallest number of components whose cumulative
    explained-variance ratio reaches ``retain``.

    Args:
        features: (N, D) array, N >= 2, finite.
        retain: target cumulative variance ratio in (0, 1].
    """
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise PipelineError("pca_fit needs at least 2 samples")
    if not np.all(np.isfinite(X)):
        raise PipelineError("pca_fit requires finite features")
    if not 0.0 < retain <= 1.0:
        raise PipelineError(f"retain must be in (0, 1], got {retain}")

    n = X.shape[0]
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    var = s**2 / (n - 1)
    total = var.sum()
    if total <= 0.0:
        raise PipelineError("zero total variance: nothing to retain")

    rank = int(np.sum(s > s[0] * 1e-10))
    ratio = np.cumsum(var) / total
    # tiny slack so an exact boundary (ratio == retain) counts as reached
    k = int(np.searchsorted(ratio, retain - 1e-12) + 1)
    k = min(k, rank)
    return PcaModel(mean=mean, components=vt[:k].copy(), explained_variance=var[:k].copy())


def pca_project(model: PcaModel, x) -> np.ndarray:
    """Project a D-vector (or an (N, D) batch) into the PCA subspace."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.input_dim:
        raise PipelineError(
            f"dimension mismatch: got {x.shape[-1]}, model expects {model.input_dim}"
        )
    return (x - model.mean) @ model.components.T


def resolve_class_weights(labels, weighting) -> dict:
    """Per-class loss weights: 'balanced' gives N / (2 * N_c), 'none' gives 1,
    and a (w_pos, w_neg) pair is taken as-is."""
    labels = np.asarray(labels)
    if weighting == "none":
        return {POSITIVE: 1.0, NEGATIVE: 1.0}
    if weighting == "balanced":
        n = labels.size
        return {
            POSITIVE: n / (2.0 * np.sum(labels == POSITIVE)),
            NEGATIVE: n / (2.0 * np.sum(labels == NEGATIVE)),
        }
    w_pos, w_neg = weighting
    return {POSITIVE: float(w_pos), NEGATIVE: float(w_neg)}


def svm_objective(model: SvmModel, samples, labels) -> float:
    """The primal objective: weighted hinge loss plus 0.5 ||w||^2."""
    X = np.asarray(samples, dtype=float)
    y = np.asarray(labels, dtype=float)
    cw = np.where(y > 0, model.class_weights[POSITIVE], model.class_weights[NEGATIVE])
    margins = y * (X @ model.weights + model.bias)
    hinge = np.maximum(0.0, 1.0 - margins)
    reg = 0.5 * (model.weights @ model.weights)
    return float(reg + model.C * np.sum(cw * hinge))


def svm_train(
    samples,
    labels,
    C: float = 1.0,
    weighting="balanced",
    max_iter_factor: int = 1000,
    tol: float = 1e-3,
) -> SvmModel:
    """Train the weighted linear SVM by SMO on the dual.

    The equality-constrained dual (bias unregularized) is solved with
    maximal-violating-pair working sets; per-sample upper bounds
    C * cw(y_i) carry the class weights.  Converged when the maximal KKT
    violation drops to ``tol``; raises ConvergenceError carrying the final
    violation if the iteration budget (max_iter_factor * N pair updates)
    is exhausted first.  Fully deterministic: no randomness, ties break by
    sample index.

    Args:
        samples: (N, k) feature matrix.
        labels: length-N array of +1 / -1.
        C: hinge-loss multiplier.
        weighting: 'balanced', 'none', or a (w_pos, w_neg) pair.
    """
    X = np.asarray(samples, dtype=float)
    y = np.asarray(labels, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise PipelineError("samples/labels shape mismatch")
    if X.shape[0] < 2:
        raise PipelineError("svm_train needs at least 2 samples")
    if not (np.any(y == POSITIVE) and np.any(y == NEGATIVE)):
        raise PipelineError("svm_train needs both classes present")
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise PipelineError("labels must be +1 or -1")

    cw = resolve_class_weights(y, weighting)
    upper = C * np.where(y > 0, cw[POSITIVE], cw[NEGATIVE])

    n, k = X.shape
    alpha = np.zeros(n)
    w = np.zeros(k)
    margins = np.zeros(n)             # X @ w, maintained incrementally

    gap = np.inf
    for _ in range(max_iter_factor * n):
        # KKT criterion per sample: crit = y - X w; feasible ascent exists
        # while max(crit over I_up) - min(crit over I_low) > tol
        crit = y - margins
        can_up = ((y > 0) & (alpha < upper)) | ((y < 0) & (alpha > 0))
        can_lo = ((y < 0) & (alpha < upper)) | ((y > 0) & (alpha > 0))
        up_vals = np.where(can_up, crit, -np.inf)
        lo_vals = np.where(can_lo, crit, np.inf)
        i = int(np.argmax(up_vals))
        j = int(np.argmin(lo_vals))
        gap = up_vals[i] - lo_vals[j]
        if gap <= tol:
            break

        # two-variable subproblem along the feasible direction
        # alpha_i += y_i t, alpha_j -= y_j t
        diff = X[i] - X[j]
        quad = max(diff @ diff, 1e-12)
        t = gap / quad
        if y[i] > 0:
            t = min(t, upper[i] - alpha[i])
        else:
            t = min(t, alpha[i])
        if y[j] > 0:
            t = min(t, alpha[j])
        else:
            t = min(t, upper[j] - alpha[j])
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        w += t * diff
        margins += t * (X @ diff)
    else:
        raise ConvergenceError(
            f"SVM did not converge within {max_iter_factor * n} pair updates "
            f"(KKT violation {gap:.3g})",
            gap=float(gap),
        )

    # bias from the free support vectors, or the KKT midpoint
    crit = y - margins
    free = (alpha > 1e-12 * upper.max()) & (alpha < upper - 1e-12 * upper.max())
    if np.any(free):
        bias = float(np.mean(crit[free]))
    else:
        can_up = ((y > 0) & (alpha < upper)) | ((y < 0) & (alpha > 0))
        can_lo = ((y < 0) & (alpha < upper)) | ((y > 0) & (alpha > 0))
        hi = np.max(np.where(can_up, crit, -np.inf))
        lo = np.min(np.where(can_lo, crit, np.inf))
        bias = float((hi + lo) / 2.0)
    return SvmModel(weights=w, bias=bias, class_weights=cw, C=C)


def svm_predict(model: SvmModel, x):
    """Label and decision value for a k-vector; score 0 counts as +1.

    Accepts an (N, k) batch, returning (labels, scores) arrays.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.input_dim:
        raise PipelineError(
            f"dimension mismatch: got {x.shape[-1]}, model expects {model.input_dim}"
        )
    score = x @ model.weights + model.bias
    if x.ndim == 1:
        s = float(score)
        return (POSITIVE if s >= 0.0 else NEGATIVE), s
    labels = np.where(score >= 0.0, POSITIVE, NEGATIVE)
    return labels, score
