"""Emote-code classifier: per-source embedding, PCA, logistic regression.

The three context sources (previous question, patient response, target
finding) are embedded independently, reduced with separately fitted PCA
models, and concatenated into the input of a multinomial logistic
regression.  Keeping the per-source blocks separate in the weight matrix
lets attribution decompose every class logit into per-source
contributions plus the bias, which is the main interpretability handle.

Training is deterministic: PCA is an exact eigendecomposition and the
regression starts from zeros under a fixed-tolerance BFGS, so retraining
on identical data reproduces the model bit for bit.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .embedding import Embedder, HashingEmbedder
from .emotes import CLASS_ORDER, ContextTriple, EmoteDatasetRow
from .errors import ContractError, RankError, TrainingError

SOURCES = ("previous_question", "patient_response", "target_finding")

DEFAULT_COMPONENTS = 70
DEFAULT_C = 10.0
GRADIENT_TOLERANCE = 1e-6
MAX_ITERATIONS = 1000


# -- principal component analysis ------------------------------------------------

@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    def __post_init__(self) -> None:
        if self.components.ndim != 2:
            raise ContractError("components must be a k x dim matrix")
        gram = self.components @ self.components.T
        if not np.allclose(gram, np.eye(self.k), atol=1e-8):
            raise ContractError("component rows must be orthonormal")

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def dim(self) -> int:
        return self.components.shape[1]

    def transform(self, vector: np.ndarray) -> np.ndarray:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise ContractError(
                f"expected a vector of length {self.dim}, got shape {vector.shape}")
        return self.components @ (vector - self.mean)


def data_rank(vectors: np.ndarray) -> int:
    """Rank of the centered sample matrix."""
    centered = vectors - vectors.mean(axis=0)
    singular = np.linalg.svd(centered, compute_uv=False)
    if singular.size == 0 or singular[0] == 0.0:
        return 0
    tol = singular[0] * max(centered.shape) * np.finfo(np.float64).eps
    return int(np.sum(singular > tol))


def fit_pca(vectors: np.ndarray, k: int) -> PcaModel:
    """Top-k eigenvectors of the unbiased sample covariance.

    Rows are ordered by explained variance descending and sign-normalized
    so each row's largest-magnitude entry is positive.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2:
        raise ContractError("expected a 2-D sample matrix")
    n, dim = vectors.shape
    if k < 1:
        raise ContractError("k must be at least 1")
    if n < 2:
        raise RankError("need at least 2 samples to fit a covariance")
    rank = data_rank(vectors)
    if k > rank:
        raise RankError(f"k={k} exceeds the data rank {rank}")
    mean = vectors.mean(axis=0)
    centered = vectors - mean
    covariance = centered.T @ centered / (n - 1)
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    order = np.argsort(eigenvalues)[::-1][:k]
    components = eigenvectors[:, order].T.copy()
    variances = np.maximum(eigenvalues[order], 0.0)
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(mean=mean, components=components,
                    explained_variance=variances)


# -- multinomial logistic regression ----------------------------------------------

@dataclass(frozen=True)
class LogRegModel:
    weights: np.ndarray
    biases: np.ndarray
    class_order: tuple[str, ...]

    def __post_init__(self) -> None:
        k_classes = self.weights.shape[0]
        if self.biases.shape != (k_classes,) or len(self.class_order) != k_classes:
            raise ContractError("weights, biases, and class order disagree on "
                                "the number of classes")
        if not (np.all(np.isfinite(self.weights))
                and np.all(np.isfinite(self.biases))):
            raise ContractError("model parameters must be finite")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.weights @ np.asarray(x, dtype=np.float64) + self.biases

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.logits(x))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    exp = np.exp(shifted)
    return exp / exp.sum()


def balanced_weights(y: np.ndarray, n_classes: int) -> np.ndarray:
    """w_c = N / (K * N_c); every class must appear."""
    y = np.asarray(y)
    counts = np.bincount(y, minlength=n_classes)
    if np.any(counts == 0):
        missing = [str(c) for c in np.flatnonzero(counts == 0)]
        raise ContractError(f"classes absent from y: {', '.join(missing)}")
    return len(y) / (n_classes * counts.astype(np.float64))


def logreg_loss_and_grad(params: np.ndarray, X: np.ndarray, y: np.ndarray,
                         sample_weights: np.ndarray, C: float,
                         n_classes: int) -> tuple[float, np.ndarray]:
    """Weighted mean cross-entropy plus (1/(2C)) * ||W||^2, biases unpenalized.

    Normalizing the data term by N makes the loss invariant to duplicating
    every sample, so the fitted decision function is too.
    """
    n, dim = X.shape
    W = params[: n_classes * dim].reshape(n_classes, dim)
    b = params[n_classes * dim:]
    logits = X @ W.T + b
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    probs = exp / exp.sum(axis=1, keepdims=True)
    log_probs = logits - np.log(exp.sum(axis=1, keepdims=True))
    data_loss = -np.sum(sample_weights * log_probs[np.arange(n), y]) / n
    penalty = float(np.sum(W * W)) / (2.0 * C)
    delta = probs
    delta[np.arange(n), y] -= 1.0
    delta *= sample_weights[:, None]
    grad_W = delta.T @ X / n + W / C
    grad_b = delta.sum(axis=0) / n
    return data_loss + penalty, np.concatenate([grad_W.ravel(), grad_b])


def fit_logreg(X: np.ndarray, y: np.ndarray, C: float = DEFAULT_C,
               class_weights: np.ndarray | None = None,
               n_classes: int | None = None,
               class_order: tuple[str, ...] | None = None) -> LogRegModel:
    """Full-batch BFGS from zero init, gradient max-norm tolerance 1e-6."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if C <= 0:
        raise ContractError("C must be positive")
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ContractError("X must be 2-D with one label per row")
    k_classes = n_classes if n_classes is not None else int(y.max()) + 1
    weights = (np.asarray(class_weights, dtype=np.float64)
               if class_weights is not None
               else balanced_weights(y, k_classes))
    if weights.shape != (k_classes,):
        raise ContractError(f"expected {k_classes} class weights")
    counts = np.bincount(y, minlength=k_classes)
    if np.any(counts == 0):
        missing = [str(c) for c in np.flatnonzero(counts == 0)]
        raise ContractError(f"classes absent from y: {', '.join(missing)}")
    sample_weights = weights[y]
    dim = X.shape[1]
    result = minimize(
        logreg_loss_and_grad,
        np.zeros(k_classes * dim + k_classes),
        args=(X, y, sample_weights, C, k_classes),
        method="BFGS",
        jac=True,
        options={"gtol": GRADIENT_TOLERANCE, "maxiter": MAX_ITERATIONS},
    )
    params = result.x
    order = (tuple(class_order) if class_order is not None
             else tuple(str(i) for i in range(k_classes)))
    if len(order) != k_classes:
        raise ContractError("class order length disagrees with the label range")
    return LogRegModel(
        weights=params[: k_classes * dim].reshape(k_classes, dim),
        biases=params[k_classes * dim:],
        class_order=order,
    )


# -- the assembled classifier ------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    k: int = DEFAULT_COMPONENTS
    C: float = DEFAULT_C
    seed: int = 0
    weighting: str = "balanced"

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ContractError("k must be at least 1")
        if self.C <= 0:
            raise ContractError("C must be positive")
        if self.weighting not in ("balanced", "uniform"):
            raise ContractError(f"unknown weighting scheme {self.weighting!r}")


@dataclass(frozen=True)
class Attribution:
    """Per-class, per-source logit contributions: bias + row sum = logit."""
    contributions: np.ndarray
    biases: np.ndarray
    logits: np.ndarray
    class_order: tuple[str, ...]
    sources: tuple[str, ...] = SOURCES


@dataclass(frozen=True)
class EmotionClassifier:
    embedder: Embedder
    pcas: tuple[PcaModel, PcaModel, PcaModel]
    logreg: LogRegModel
    config: TrainConfig

    def __post_init__(self) -> None:
        total = sum(p.k for p in self.pcas)
        if self.logreg.weights.shape[1] != total:
            raise ContractError("regression width disagrees with the PCA blocks")

    def featurize(self, triple: ContextTriple) -> tuple[np.ndarray, tuple[np.ndarray, ...]]:
        texts = (triple.previous_question, triple.patient_response,
                 triple.target_finding)
        blocks = tuple(pca.transform(self.embedder.embed(text))
                       for pca, text in zip(self.pcas, texts))
        return np.concatenate(blocks), blocks

    def predict(self, triple: ContextTriple,
                min_confidence: float | None = None) -> tuple[str, np.ndarray]:
        """Argmax class and the probability vector; ties go to the earlier class.

        With min_confidence set, any prediction whose top probability falls
        short is replaced by the first class (the neutral code).
        """
        vector, _ = self.featurize(triple)
        probs = self.logreg.predict_proba(vector)
        index = int(np.argmax(probs))
        if min_confidence is not None and probs[index] < min_confidence:
            index = 0
        return self.logreg.class_order[index], probs

    def attribute(self, triple: ContextTriple) -> Attribution:
        vector, blocks = self.featurize(triple)
        logits = self.logreg.logits(vector)
        contributions = np.empty((self.logreg.n_classes, len(blocks)))
        offset = 0
        for j, block in enumerate(blocks):
            width = block.shape[0]
            contributions[:, j] = self.logreg.weights[:, offset:offset + width] @ block
            offset += width
        return Attribution(contributions=contributions,
                           biases=self.logreg.biases.copy(),
                           logits=logits,
                           class_order=self.logreg.class_order)


def train(rows: list[EmoteDatasetRow], embedder: Embedder,
          config: TrainConfig = TrainConfig()) -> EmotionClassifier:
    """Fit the per-source PCAs and the regression on a labeled emote dataset."""
    if not rows:
        raise TrainingError("training set is empty")
    present = {row.code for row in rows}
    missing = [code for code in CLASS_ORDER if code not in present]
    if missing:
        raise TrainingError(f"codes absent from training data: {', '.join(missing)}")

    per_source = []
    for source in SOURCES:
        texts = [getattr(row.context, source) for row in rows]
        per_source.append(np.stack([embedder.embed(t) for t in texts]))

    k = min(config.k, embedder.dim, *(data_rank(m) for m in per_source))
    if k < config.k:
        warnings.warn(f"PCA components clamped from {config.k} to {k} "
                      f"(limited by data rank or embedding width)")
    if k < 1:
        raise TrainingError("training data has no variance to reduce")
    pcas = tuple(fit_pca(matrix, k) for matrix in per_source)

    X = np.stack([
        np.concatenate([pca.transform(matrix[i])
                        for pca, matrix in zip(pcas, per_source)])
        for i in range(len(rows))
    ])
    y = np.array([CLASS_ORDER.index(row.code) for row in rows])
    class_weights = (np.ones(len(CLASS_ORDER))
                     if config.weighting == "uniform"
                     else balanced_weights(y, len(CLASS_ORDER)))
    logreg = fit_logreg(X, y, C=config.C, class_weights=class_weights,
                        n_classes=len(CLASS_ORDER), class_order=CLASS_ORDER)
    effective = TrainConfig(k=k, C=config.C, seed=config.seed,
                            weighting=config.weighting)
    return EmotionClassifier(embedder=embedder, pcas=pcas, logreg=logreg,
                             config=effective)


# -- evaluation ---------------------------------------------------------------------

@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class EvaluationReport:
    class_order: tuple[str, ...]
    confusion: tuple[tuple[int, ...], ...]
    accuracy: float
    per_class: dict[str, ClassMetrics] = field(compare=False)
    macro_f1: float = 0.0
    weighted_f1: float = 0.0
    pr_auc_macro: float | None = None


def report_from_confusion(matrix, class_order: tuple[str, ...],
                          pr_auc_macro: float | None = None) -> EvaluationReport:
    """Metrics derived purely from a confusion matrix (rows true, cols predicted)."""
    m = np.asarray(matrix, dtype=np.int64)
    k = len(class_order)
    if m.shape != (k, k):
        raise ContractError(f"expected a {k}x{k} confusion matrix, got {m.shape}")
    total = int(m.sum())
    if total == 0:
        raise ContractError("confusion matrix is empty")
    per_class: dict[str, ClassMetrics] = {}
    f1s = []
    supports = []
    for i, name in enumerate(class_order):
        tp = int(m[i, i])
        support = int(m[i].sum())
        predicted = int(m[:, i].sum())
        precision = tp / predicted if predicted else 0.0
        recall = tp / support if support else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall else 0.0)
        per_class[name] = ClassMetrics(precision, recall, f1, support)
        f1s.append(f1)
        supports.append(support)
    supports_arr = np.array(supports, dtype=np.float64)
    weighted = float(np.dot(f1s, supports_arr) / supports_arr.sum())
    return EvaluationReport(
        class_order=tuple(class_order),
        confusion=tuple(tuple(int(v) for v in row) for row in m),
        accuracy=float(np.trace(m)) / total,
        per_class=per_class,
        macro_f1=float(np.mean(f1s)),
        weighted_f1=weighted,
        pr_auc_macro=pr_auc_macro,
    )


def average_precision(truth: np.ndarray, scores: np.ndarray) -> float:
    """Area under the precision-recall curve by the step interpolation."""
    truth = np.asarray(truth, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    positives = int(truth.sum())
    if positives == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    hits = truth[order]
    tp = np.cumsum(hits)
    ranks = np.arange(1, len(hits) + 1)
    precision = tp / ranks
    return float(np.sum(precision[hits]) / positives)


def evaluate(classifier: EmotionClassifier,
             rows: list[EmoteDatasetRow]) -> EvaluationReport:
    if not rows:
        raise ContractError("evaluation set is empty")
    order = classifier.logreg.class_order
    k = len(order)
    matrix = np.zeros((k, k), dtype=np.int64)
    prob_rows = np.empty((len(rows), k))
    truths = np.empty(len(rows), dtype=np.int64)
    for i, row in enumerate(rows):
        code, probs = classifier.predict(row.context)
        truths[i] = order.index(row.code)
        matrix[truths[i], order.index(code)] += 1
        prob_rows[i] = probs
    aps = [average_precision(truths == j, prob_rows[:, j]) for j in range(k)]
    return report_from_confusion(matrix, order,
                                 pr_auc_macro=float(np.mean(aps)))


def render_report(report: EvaluationReport) -> str:
    """Plain-text metrics table plus the confusion matrix."""
    lines = []
    width = max(len(name) for name in report.class_order) + 2
    header = f"{'':<{width}}{'precision':>10}{'recall':>10}{'f1':>10}{'support':>10}"
    lines.append(header)
    for name in report.class_order:
        m = report.per_class[name]
        lines.append(f"{name:<{width}}{m.precision:>10.2f}{m.recall:>10.2f}"
                     f"{m.f1:>10.2f}{m.support:>10d}")
    lines.append("")
    lines.append(f"accuracy     {report.accuracy:.4f}")
    lines.append(f"macro F1     {report.macro_f1:.4f}")
    lines.append(f"weighted F1  {report.weighted_f1:.4f}")
    if report.pr_auc_macro is not None:
        lines.append(f"PR-AUC (macro, one-vs-rest)  {report.pr_auc_macro:.4f}")
    lines.append("")
    lines.append("confusion (rows true, columns predicted):")
    names = report.class_order
    lines.append(f"{'':<{width}}" + "".join(f"{n:>12}" for n in names))
    for name, row in zip(names, report.confusion):
        lines.append(f"{name:<{width}}" + "".join(f"{v:>12d}" for v in row))
    return "\n".join(lines)


# -- model files --------------------------------------------------------------------

MODEL_FORMAT = "emotion-classifier"
MODEL_VERSION = 1


def save_classifier(path: Path | str, classifier: EmotionClassifier) -> None:
    embedder = classifier.embedder
    spec = getattr(embedder, "spec", None)
    if spec is None:
        spec = {"kind": "remote", "dim": embedder.dim}
    record = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "embedder": spec,
        "sources": list(SOURCES),
        "class_order": list(classifier.logreg.class_order),
        "config": {
            "k": classifier.config.k,
            "C": classifier.config.C,
            "seed": classifier.config.seed,
            "weighting": classifier.config.weighting,
        },
        "pca": [
            {
                "mean": pca.mean.tolist(),
                "components": pca.components.tolist(),
                "explained_variance": pca.explained_variance.tolist(),
            }
            for pca in classifier.pcas
        ],
        "weights": classifier.logreg.weights.tolist(),
        "biases": classifier.logreg.biases.tolist(),
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(record, handle)
        handle.write("\n")


def load_classifier(path: Path | str,
                    embedder: Embedder | None = None) -> EmotionClassifier:
    with open(path, encoding="utf-8") as handle:
        record = json.load(handle)
    if record.get("format") != MODEL_FORMAT:
        raise ContractError("not an emotion-classifier model file")
    if record.get("version") != MODEL_VERSION:
        raise ContractError(f"unsupported model version {record.get('version')!r}")
    spec = record["embedder"]
    if embedder is None:
        if spec["kind"] != "hashing":
            raise ContractError(
                f"model references a {spec['kind']!r} embedder; pass one explicitly")
        embedder = HashingEmbedder(dim=spec["dim"])
    if embedder.dim != spec["dim"]:
        raise ContractError(f"embedder width {embedder.dim} does not match the "
                            f"model's {spec['dim']}")
    pcas = tuple(
        PcaModel(
            mean=np.array(block["mean"], dtype=np.float64),
            components=np.array(block["components"], dtype=np.float64),
            explained_variance=np.array(block["explained_variance"],
                                        dtype=np.float64),
        )
        for block in record["pca"]
    )
    cfg = record["config"]
    return EmotionClassifier(
        embedder=embedder,
        pcas=pcas,
        logreg=LogRegModel(
            weights=np.array(record["weights"], dtype=np.float64),
            biases=np.array(record["biases"], dtype=np.float64),
            class_order=tuple(record["class_order"]),
        ),
        config=TrainConfig(k=cfg["k"], C=cfg["C"], seed=cfg["seed"],
                           weighting=cfg["weighting"]),
    )
