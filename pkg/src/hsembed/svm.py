"""Linear C-SVM on explicit feature vectors.

The binary solver runs coordinate ascent on the box-constrained dual of
the L1-hinge problem

    min_w 0.5 ||w||^2 + C sum_i max(0, 1 - y_i (w.phi_i + b)),

with the bias handled as an appended constant-1 feature (so it is
regularized; this keeps the dual a simple box problem and the optimum
unique). Multiclass is one-vs-one with majority voting, ties resolved
toward the smallest class id. Model selection is a stratified 5-fold grid
search over C = 2^i, i in [-15, 15].
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateDataError,
    FormatError,
    NumericalError,
    ParameterError,
    ShapeError,
    TruncationError,
)

KKT_TOLERANCE = 1e-4
MAX_EPOCHS = 1000


@dataclass
class SolverDiagnostics:
    """Convergence record of one binary solve."""

    alphas: np.ndarray
    dual_objectives: list[float]
    kkt_violation: float
    epochs: int
    converged: bool


@dataclass
class BinarySeparator:
    """One linear decision function sign(w.phi + b)."""

    weights: np.ndarray
    bias: float
    c_value: float
    diagnostics: SolverDiagnostics | None = None

    def decision(self, features: np.ndarray) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if features.shape[1] != self.weights.shape[0]:
            raise ShapeError(
                f"feature dim {features.shape[1]} != separator dim {self.weights.shape[0]}"
            )
        return features @ self.weights + self.bias


def train_binary(
    features: np.ndarray,
    labels: np.ndarray,
    c: float,
    tol: float = KKT_TOLERANCE,
    max_epochs: int = MAX_EPOCHS,
    seed: int = 0,
) -> BinarySeparator:
    """Train one hinge-loss separator by dual coordinate ascent.

    Deterministic for a fixed example ordering and seed: sweep order per
    epoch comes from a seeded generator. Stops when the largest projected
    gradient magnitude over a sweep is at most ``tol``.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"features must be a 2-D matrix, got {x.shape}")
    if y.shape != (x.shape[0],):
        raise ShapeError(f"labels must be ({x.shape[0]},), got {y.shape}")
    if not np.isfinite(x).all():
        raise NumericalError("features contain non-finite values")
    if c <= 0:
        raise ParameterError(f"C must be positive, got {c}")
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise ParameterError("labels must be +1 or -1")
    if (y > 0).sum() == 0 or (y < 0).sum() == 0:
        raise DegenerateDataError("need at least one example of each sign")

    n = x.shape[0]
    xb = np.concatenate([x, np.ones((n, 1))], axis=1)
    alpha = np.zeros(n)
    rng = np.random.default_rng(seed)
    objectives: list[float] = []
    kkt = np.inf
    converged = False
    epochs = 0

    # Two update paths with the same iterate sequence: when examples are
    # fewer than feature dims, maintain the dual gradient via the Gram
    # matrix (O(n) per step); otherwise maintain the primal vector
    # (O(dim) per step). The path is a function of the input shape only.
    gram_mode = n <= xb.shape[1]
    if gram_mode:
        xy = xb * y[:, None]
        q = xy @ xy.T
        q_diag = np.diag(q).copy()
        grad = -np.ones(n)  # Q alpha - 1 at alpha = 0
    else:
        q_diag = np.einsum("ij,ij->i", xb, xb)
        w = np.zeros(xb.shape[1])
    # a sweep that still violates KKT by more than tol gains at least
    # ~tol^2 / (2 q_max) unless it is numerically stagnant
    stall_gain = tol * tol / (8.0 * float(q_diag.max()))

    stalled = 0
    for epoch in range(max_epochs):
        epochs = epoch + 1
        max_pg = 0.0
        for i in rng.permutation(n):
            g = grad[i] if gram_mode else y[i] * (w @ xb[i]) - 1.0
            a = alpha[i]
            if a <= 0.0:
                pg = min(g, 0.0)
            elif a >= c:
                pg = max(g, 0.0)
            else:
                pg = g
            apg = abs(pg)
            if apg > max_pg:
                max_pg = apg
            if apg > 1e-14:
                a_new = min(max(a - g / q_diag[i], 0.0), c)
                if a_new != a:
                    if gram_mode:
                        grad += (a_new - a) * q[i]
                    else:
                        w += (a_new - a) * y[i] * xb[i]
                    alpha[i] = a_new
        if gram_mode:
            objectives.append(float(0.5 * (alpha.sum() - alpha @ grad)))
        else:
            objectives.append(float(alpha.sum() - 0.5 * (w @ w)))
        kkt = max_pg
        if max_pg <= tol:
            converged = True
            break
        # numerically stagnant sweeps cannot make further progress
        if len(objectives) >= 2 and objectives[-1] - objectives[-2] <= stall_gain:
            stalled += 1
            if stalled >= 3:
                break
        else:
            stalled = 0
    if not converged:
        warnings.warn(
            "dual solver stopped at the epoch cap before reaching the KKT tolerance",
            RuntimeWarning,
            stacklevel=2,
        )
    if gram_mode:
        w = xy.T @ alpha
    diag = SolverDiagnostics(alpha, objectives, float(kkt), epochs, converged)
    return BinarySeparator(w[:-1].copy(), float(w[-1]), float(c), diag)


@dataclass
class SvmModel:
    """One-vs-one collection of binary separators."""

    classes: tuple[int, ...]
    pairs: list[tuple[int, int]]
    separators: list[BinarySeparator]
    feature_dim: int


def train_multiclass(
    features: np.ndarray,
    labels: np.ndarray,
    c: float,
    classes: list[int] | None = None,
    tol: float = KKT_TOLERANCE,
    max_epochs: int = MAX_EPOCHS,
    seed: int = 0,
) -> SvmModel:
    """Train one separator per unordered class pair.

    In each pair the smaller class id plays the +1 role. ``classes`` may
    name the expected class set; a named class without examples is an
    error.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ShapeError(f"features {x.shape} and labels {y.shape} are inconsistent")
    present = sorted(int(v) for v in np.unique(y))
    if classes is None:
        classes = present
    else:
        classes = sorted(int(v) for v in classes)
        missing = sorted(set(classes) - set(present))
        if missing:
            raise DegenerateDataError(f"classes without examples: {missing}")
    if len(classes) < 2:
        raise DegenerateDataError("need at least two classes")

    pairs = list(combinations(classes, 2))
    separators = []
    for a, b in pairs:
        mask = (y == a) | (y == b)
        signs = np.where(y[mask] == a, 1.0, -1.0)
        separators.append(
            train_binary(x[mask], signs, c, tol=tol, max_epochs=max_epochs, seed=seed)
        )
    return SvmModel(tuple(classes), pairs, separators, x.shape[1])


def decision_matrix(model: SvmModel, features: np.ndarray) -> np.ndarray:
    """Pairwise decision values, one column per class pair."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[1] != model.feature_dim:
        raise ShapeError(
            f"feature dim {features.shape[1]} != model dim {model.feature_dim}"
        )
    return np.stack([sep.decision(features) for sep in model.separators], axis=1)


def predict_table(model: SvmModel, features: np.ndarray) -> np.ndarray:
    """Majority-vote class ids for each feature row; ties go to the
    smallest class id."""
    decisions = decision_matrix(model, features)
    n = decisions.shape[0]
    class_index = {cls: k for k, cls in enumerate(model.classes)}
    votes = np.zeros((n, len(model.classes)), dtype=np.int64)
    for p, (a, b) in enumerate(model.pairs):
        wins_a = decisions[:, p] >= 0
        votes[wins_a, class_index[a]] += 1
        votes[~wins_a, class_index[b]] += 1
    # argmax takes the first maximum, i.e. the smallest class id
    winners = np.argmax(votes, axis=1)
    classes = np.asarray(model.classes)
    return classes[winners]


def predict(model: SvmModel, feature: np.ndarray) -> int:
    """Class id of a single feature vector."""
    return int(predict_table(model, np.atleast_2d(feature))[0])


# ---------------------------------------------------------------------------
# Cross-validated grid search
# ---------------------------------------------------------------------------


def default_c_grid() -> list[float]:
    """C = 2^i for i in [-15, 15] (31 values)."""
    return [float(2.0**i) for i in range(-15, 16)]


@dataclass
class CvReport:
    """Grid of (C, mean validation accuracy) and the selected C."""

    grid: list[tuple[float, float]]
    best_c: float


@dataclass
class SvmConfig:
    """Classifier choice for pipelines: a fixed C, or grid search when None."""

    c: float | None = None
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.c is not None and self.c <= 0:
            raise ParameterError(f"C must be positive, got {self.c}")
        if self.folds < 2:
            raise ParameterError(f"folds must be >= 2, got {self.folds}")


def _stratified_folds(labels: np.ndarray, folds: int, rng: np.random.Generator) -> np.ndarray:
    fold_of = np.empty(labels.shape[0], dtype=np.int64)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        fold_of[idx] = np.arange(idx.size) % folds
    return fold_of


def cross_validate(
    features: np.ndarray,
    labels: np.ndarray,
    folds: int = 5,
    seed: int = 0,
    grid: list[float] | None = None,
    tol: float = KKT_TOLERANCE,
    max_epochs: int = MAX_EPOCHS,
) -> CvReport:
    """Stratified k-fold accuracy over the C grid; ties prefer smaller C.

    Classes with fewer examples than folds land in distinct folds; a
    validation example whose class is absent from the training split is
    skipped in the count.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if np.unique(y).size < 2:
        raise DegenerateDataError("cross-validation needs at least two classes")
    grid = default_c_grid() if grid is None else list(grid)
    rng = np.random.default_rng(seed)
    fold_of = _stratified_folds(y, folds, rng)

    results = []
    best_c, best_acc = None, -1.0
    with warnings.catch_warnings():
        # extreme grid corners legitimately stop at the epoch cap
        warnings.filterwarnings("ignore", message="dual solver stopped")
        for c in grid:
            accs = []
            for f in range(folds):
                val = fold_of == f
                if not val.any() or val.all():
                    continue
                y_tr = y[~val]
                present = set(int(v) for v in np.unique(y_tr))
                if len(present) < 2:
                    continue
                model = train_multiclass(
                    x[~val], y_tr, c, tol=tol, max_epochs=max_epochs, seed=seed
                )
                countable = np.array([int(v) in present for v in y[val]])
                if not countable.any():
                    continue
                preds = predict_table(model, x[val][countable])
                accs.append(float(np.mean(preds == y[val][countable])))
            mean_acc = float(np.mean(accs)) if accs else 0.0
            results.append((float(c), mean_acc))
            if mean_acc > best_acc:
                best_acc, best_c = mean_acc, float(c)
    return CvReport(results, best_c)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_model(model: SvmModel, basename: str | Path) -> tuple[Path, Path]:
    """JSON header (classes, dims, C) + binary block of stacked weights/biases."""
    basename = Path(basename)
    json_path = basename.with_suffix(".json")
    bin_path = basename.with_suffix(".bin")
    header = {
        "kind": "svm_model",
        "classes": list(model.classes),
        "feature_dim": model.feature_dim,
        "c_values": [sep.c_value for sep in model.separators],
    }
    json_path.write_text(json.dumps(header, sort_keys=True, indent=1) + "\n")
    block = np.stack(
        [np.concatenate([sep.weights, [sep.bias]]) for sep in model.separators]
    )
    block.astype("<f8").tofile(bin_path)
    return json_path, bin_path


def load_model(basename: str | Path) -> SvmModel:
    basename = Path(basename)
    json_path = basename.with_suffix(".json")
    bin_path = basename.with_suffix(".bin")
    try:
        header = json.loads(json_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read model header {json_path}: {exc}") from exc
    if header.get("kind") != "svm_model":
        raise FormatError(f"{json_path}: not a model header")
    classes = tuple(int(c) for c in header["classes"])
    dim = int(header["feature_dim"])
    pairs = list(combinations(classes, 2))
    c_values = [float(v) for v in header["c_values"]]
    if len(c_values) != len(pairs):
        raise FormatError(f"{json_path}: expected {len(pairs)} separators")
    block = np.fromfile(bin_path, dtype="<f8")
    if block.size != len(pairs) * (dim + 1):
        raise TruncationError(
            f"{bin_path}: expected {len(pairs) * (dim + 1)} values, found {block.size}"
        )
    block = block.reshape(len(pairs), dim + 1)
    separators = [
        BinarySeparator(block[k, :dim].copy(), float(block[k, dim]), c_values[k])
        for k in range(len(pairs))
    ]
    return SvmModel(classes, pairs, separators, dim)
