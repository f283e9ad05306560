"""Confusion-matrix metrics and the seeded Monte-Carlo evaluation protocol.

The protocol repeatedly samples a tiny per-class training set from the
labeled pixels, trains a one-vs-one linear SVM on the configured feature
table, scores the held-out labeled pixels and aggregates overall accuracy,
average (per-class) accuracy and the chance-corrected kappa statistic as
mean +/- sample standard deviation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbeddingConfig, FeatureTable, build_feature_table
from .errors import (
    ContractViolation,
    DegenerateDataError,
    ParameterError,
    ShapeError,
    UndefinedInputError,
)
from .hsi import GroundTruthMap, HyperspectralImage
from .morphology import MorphoProfileConfig
from .svm import SvmConfig, cross_validate, predict_table, train_multiclass


def confusion_matrix(
    predicted: np.ndarray, truth: np.ndarray, n_classes: int
) -> np.ndarray:
    """Count matrix with rows = true class, columns = predicted class.

    Pixels whose truth label is 0 (unlabeled) are excluded. Labels must
    lie in 1..n_classes otherwise.
    """
    predicted = np.asarray(predicted).ravel()
    truth = np.asarray(truth).ravel()
    if predicted.shape != truth.shape:
        raise ShapeError(f"length mismatch: {predicted.shape} vs {truth.shape}")
    if n_classes < 1:
        raise ParameterError(f"n_classes must be >= 1, got {n_classes}")
    mask = truth > 0
    t = truth[mask]
    p = predicted[mask]
    if (t > n_classes).any():
        raise ContractViolation("truth label out of range 1..n_classes")
    if ((p < 1) | (p > n_classes)).any():
        raise ContractViolation("predicted label out of range 1..n_classes")
    flat = (t - 1) * n_classes + (p - 1)
    counts = np.bincount(flat.astype(np.int64), minlength=n_classes * n_classes)
    return counts.reshape(n_classes, n_classes)


def overall_accuracy(counts: np.ndarray) -> float:
    """Fraction of correctly classified pixels (trace over total)."""
    counts = np.asarray(counts)
    total = counts.sum()
    if total == 0:
        raise UndefinedInputError("overall accuracy is undefined for an empty matrix")
    return float(np.trace(counts) / total)


def average_accuracy(counts: np.ndarray) -> float:
    """Mean of the per-class correct fractions."""
    counts = np.asarray(counts)
    row_sums = counts.sum(axis=1)
    empty = np.flatnonzero(row_sums == 0)
    if empty.size:
        raise UndefinedInputError(
            f"average accuracy is undefined: class {int(empty[0]) + 1} has no pixels"
        )
    return float(np.mean(np.diag(counts) / row_sums))


def kappa(counts: np.ndarray) -> float:
    """Agreement corrected by chance: (Po - Pe) / (1 - Pe), Pe from the
    marginal products over total^2. Returns 0 when Pe = 1."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total == 0:
        raise UndefinedInputError("kappa is undefined for an empty matrix")
    po = np.trace(counts) / total
    pe = float(np.sum(counts.sum(axis=1) * counts.sum(axis=0)) / total**2)
    if pe >= 1.0:
        return 0.0
    return float((po - pe) / (1.0 - pe))


# ---------------------------------------------------------------------------
# Monte-Carlo protocol
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class McProtocol:
    """How to sample training pixels and how often.

    ``fixed_test`` optionally pins the evaluation to given flat pixel
    indices (training is then sampled from the remaining labeled pixels).
    ``eval_on_train`` is a sanity mode that scores the training pixels
    themselves.
    """

    runs: int = 20
    per_class: int = 5
    seed: int = 0
    eval_on_train: bool = False
    fixed_test: np.ndarray | None = None

    def __post_init__(self):
        if self.runs < 1:
            raise ParameterError(f"runs must be >= 1, got {self.runs}")
        if self.per_class < 1:
            raise ParameterError(f"per_class must be >= 1, got {self.per_class}")
        if self.fixed_test is not None:
            idx = np.asarray(self.fixed_test, dtype=np.int64)
            idx.flags.writeable = False
            object.__setattr__(self, "fixed_test", idx)


@dataclass(frozen=True)
class ClassifierSpec:
    """Feature method plus classifier settings for the protocol."""

    method: str = "meanmap"
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    mp: MorphoProfileConfig | None = None
    svm: SvmConfig = field(default_factory=SvmConfig)


@dataclass
class McSummary:
    """Per-run metrics (fractions in [0, 1]) and their aggregates."""

    method: str
    params: dict
    oa: list[float]
    aa: list[float]
    kappa: list[float]
    best_c: list[float]

    @staticmethod
    def _mean(xs: list[float]) -> float:
        return float(np.mean(xs))

    @staticmethod
    def _std(xs: list[float]) -> float:
        return float(np.std(xs, ddof=1)) if len(xs) > 1 else 0.0

    def mean(self) -> dict:
        return {
            "oa": self._mean(self.oa),
            "aa": self._mean(self.aa),
            "kappa": self._mean(self.kappa),
        }

    def std(self) -> dict:
        return {
            "oa": self._std(self.oa),
            "aa": self._std(self.aa),
            "kappa": self._std(self.kappa),
        }

    def to_dict(self) -> dict:
        """JSON form; accuracy values as full-precision percentages."""
        pct = lambda v: 100.0 * v
        mean, std = self.mean(), self.std()
        return {
            "method": self.method,
            "params": self.params,
            "runs": [
                {"oa": pct(o), "aa": pct(a), "kappa": pct(k)}
                for o, a, k in zip(self.oa, self.aa, self.kappa)
            ],
            "mean": {k: pct(v) for k, v in mean.items()},
            "std": {k: pct(v) for k, v in std.items()},
            "best_c": self.best_c,
        }


def sample_training_indices(
    gt: GroundTruthMap,
    per_class: int,
    rng: np.random.Generator,
    exclude: np.ndarray | None = None,
) -> np.ndarray:
    """Flat indices of ``per_class`` labeled pixels per class, sampled
    without replacement."""
    labels = gt.labels.ravel()
    allowed = np.ones(labels.size, dtype=bool)
    if exclude is not None:
        allowed[np.asarray(exclude, dtype=np.int64)] = False
    picks = []
    for cls in range(1, gt.n_classes + 1):
        pool = np.flatnonzero((labels == cls) & allowed)
        if pool.size < per_class:
            raise DegenerateDataError(
                f"class {cls} has {pool.size} available pixels, needs {per_class}"
            )
        picks.append(rng.choice(pool, size=per_class, replace=False))
    return np.concatenate(picks)


def run_split(
    table: FeatureTable,
    labels_flat: np.ndarray,
    train_idx: np.ndarray,
    test_idx: np.ndarray,
    n_classes: int,
    svm_cfg: SvmConfig,
) -> tuple[np.ndarray, float]:
    """Train on the given rows and predict the test rows.

    Returns (predictions, C actually used). Grid search runs on the
    training rows when the config has no fixed C.
    """
    x_tr = table.values[train_idx]
    y_tr = labels_flat[train_idx]
    if svm_cfg.c is None:
        report = cross_validate(x_tr, y_tr, folds=svm_cfg.folds, seed=svm_cfg.seed)
        c = report.best_c
    else:
        c = svm_cfg.c
    model = train_multiclass(
        x_tr, y_tr, c, classes=list(range(1, n_classes + 1)), seed=svm_cfg.seed
    )
    return predict_table(model, table.values[test_idx]), float(c)


def monte_carlo_protocol(
    image: HyperspectralImage,
    gt: GroundTruthMap,
    protocol: McProtocol,
    classifier: ClassifierSpec,
    table: FeatureTable | None = None,
) -> McSummary:
    """Run the seeded multi-run evaluation and aggregate the metrics.

    Features are built once (they do not depend on the split); per-run
    seeds derive from the protocol seed and the run index, so reruns are
    reproducible and runs are order-independent.
    """
    if gt.labels.shape != (image.height, image.width):
        raise ShapeError("ground truth dimensions do not match the image")
    n_classes = gt.n_classes
    if n_classes < 2:
        raise DegenerateDataError("protocol needs at least two labeled classes")
    labels_flat = gt.labels.ravel()
    counts = gt.class_counts()
    if (counts == 0).any():
        missing = int(np.flatnonzero(counts == 0)[0]) + 1
        raise DegenerateDataError(f"class {missing} has no labeled pixels")
    needed = protocol.per_class if protocol.eval_on_train else protocol.per_class + 1
    if protocol.fixed_test is None and (counts < needed).any():
        small = int(np.flatnonzero(counts < needed)[0]) + 1
        raise DegenerateDataError(
            f"class {small} has {int(counts[small - 1])} labeled pixels, "
            f"needs at least {needed}"
        )

    if table is None:
        table = build_feature_table(
            image, classifier.method, classifier.embedding, classifier.mp
        )

    oas, aas, kappas, cs = [], [], [], []
    for run in range(protocol.runs):
        rng = np.random.default_rng(np.random.SeedSequence([protocol.seed, run]))
        train_idx = sample_training_indices(
            gt, protocol.per_class, rng, exclude=protocol.fixed_test
        )
        if protocol.eval_on_train:
            test_idx = train_idx
        elif protocol.fixed_test is not None:
            test_idx = protocol.fixed_test
        else:
            in_train = np.zeros(labels_flat.size, dtype=bool)
            in_train[train_idx] = True
            test_idx = np.flatnonzero((labels_flat > 0) & ~in_train)
        preds, c_used = run_split(
            table, labels_flat, train_idx, test_idx, n_classes, classifier.svm
        )
        cm = confusion_matrix(preds, labels_flat[test_idx], n_classes)
        oas.append(overall_accuracy(cm))
        aas.append(average_accuracy(cm))
        kappas.append(kappa(cm))
        cs.append(c_used)

    params = dict(table.meta)
    params["per_class"] = protocol.per_class
    params["runs"] = protocol.runs
    return McSummary(classifier.method, params, oas, aas, kappas, cs)


def format_summary_table(summaries: list[McSummary]) -> str:
    """Text table with kernel / parameters / OA / kappa / AA columns,
    percentages to one decimal."""
    rows = [("kernel", "parameters", "OA", "kappa", "AA")]
    for s in summaries:
        mean, std = s.mean(), s.std()
        parts = []
        if "patch_side" in s.params and s.method in ("meanmap", "convmeanmap", "mp_x_meanmap"):
            parts.append(f"s={s.params['patch_side']}")
        if "n_features" in s.params:
            parts.append(f"N={s.params['n_features']}")
        cell = lambda key: f"{100 * mean[key]:.1f} +- {100 * std[key]:.1f}"
        rows.append((s.method, " ".join(parts), cell("oa"), cell("kappa"), cell("aa")))
    widths = [max(len(r[i]) for r in rows) for i in range(5)]
    lines = []
    for k, r in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)).rstrip())
        if k == 0:
            lines.append("-" * (sum(widths) + 8))
    return "\n".join(lines) + "\n"
