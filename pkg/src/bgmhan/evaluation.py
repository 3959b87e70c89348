"""Classification metrics and the TF-IDF + logistic-regression baseline."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

_WORD = re.compile(r"\w+")


class MetricError(ValueError):
    pass


class FitError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricReport:
    precision: float
    recall: float
    f1: float
    accuracy: float
    per_class: dict
    confusion: ConfusionMatrix
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num: int, den: int, what: str, warnings: list) -> float:
    if den == 0:
        warnings.append(f"{what} undefined (0/0), reported as 0")
        return 0.0
    return num / den


def compute_metrics(preds, labels) -> MetricReport:
    """Per-class precision/recall/F1, their unweighted (macro) means, and accuracy."""
    p = np.asarray(preds).astype(int).ravel()
    y = np.asarray(labels).astype(int).ravel()
    if p.shape != y.shape:
        raise MetricError(f"{p.size} predictions vs {y.size} labels")
    if p.size == 0:
        raise MetricError("no samples to score")
    cm = ConfusionMatrix(
        tp=int(np.sum((p == 1) & (y == 1))),
        fp=int(np.sum((p == 1) & (y == 0))),
        tn=int(np.sum((p == 0) & (y == 0))),
        fn=int(np.sum((p == 0) & (y == 1))),
    )
    warnings: list = []
    per_class = {}
    for cls, (hit, false_pos, miss) in {1: (cm.tp, cm.fp, cm.fn), 0: (cm.tn, cm.fn, cm.fp)}.items():
        prec = _ratio(hit, hit + false_pos, f"precision of class {cls}", warnings)
        rec = _ratio(hit, hit + miss, f"recall of class {cls}", warnings)
        f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
        per_class[cls] = ClassScores(prec, rec, f1, hit + miss)
    macro = lambda attr: (getattr(per_class[0], attr) + getattr(per_class[1], attr)) / 2.0  # noqa: E731
    return MetricReport(
        precision=macro("precision"),
        recall=macro("recall"),
        f1=macro("f1"),
        accuracy=(cm.tp + cm.tn) / cm.total,
        per_class=per_class,
        confusion=cm,
        warnings=warnings,
    )


# ---------------------------------------------------------------------------
# TF-IDF


def word_tokens(text: str) -> list[str]:
    return _WORD.findall(text.lower())


class TfidfVectorizer:
    """Raw term counts times smoothed idf ``ln((1 + D) / (1 + df)) + 1``, rows L2-normalized."""

    def __init__(self):
        self.vocabulary: dict[str, int] = {}
        self.idf: np.ndarray | None = None

    def fit(self, docs) -> "TfidfVectorizer":
        docs = list(docs)
        if not docs or not any(word_tokens(d) for d in docs):
            raise FitError("TF-IDF needs a non-empty training corpus")
        df: Counter = Counter()
        for d in docs:
            df.update(set(word_tokens(d)))
        terms = sorted(df)
        self.vocabulary = {t: i for i, t in enumerate(terms)}
        n = len(docs)
        self.idf = np.array([math.log((1 + n) / (1 + df[t])) + 1.0 for t in terms])
        return self

    def transform(self, docs) -> np.ndarray:
        if self.idf is None:
            raise FitError("vectorizer is not fitted")
        docs = list(docs)
        X = np.zeros((len(docs), len(self.vocabulary)))
        for i, d in enumerate(docs):
            for tok, c in Counter(word_tokens(d)).items():
                j = self.vocabulary.get(tok)
                if j is not None:
                    X[i, j] = c
        X *= self.idf
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        np.divide(X, norms, out=X, where=norms > 0)
        return X

    def fit_transform(self, docs) -> np.ndarray:
        docs = list(docs)
        return self.fit(docs).transform(docs)


# ---------------------------------------------------------------------------
# logistic regression


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def logistic_loss_and_grad(X, y, w, b, lam: float = 0.0):
    """Mean log loss plus ``lam * ||w||^2`` and its gradient in (w, b)."""
    z = X @ w + b
    p = _sigmoid(z)
    # log(1 + e^z) - y z, written stably
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z)) + lam * float(w @ w)
    r = (p - y) / len(y)
    return loss, X.T @ r + 2 * lam * w, float(np.sum(r))


@dataclass
class LogRegWeights:
    w: np.ndarray
    b: float
    losses: list


def logreg_train(X, y, steps: int = 500, lr: float = 1.0, lam: float = 1e-4) -> LogRegWeights:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise FitError("feature matrix has non-finite entries")
    w = np.zeros(X.shape[1])
    b = 0.0
    losses = []
    rising = 0
    for _ in range(steps):
        loss, gw, gb = logistic_loss_and_grad(X, y, w, b, lam)
        if losses and loss > losses[-1]:
            rising += 1
            if rising >= 10:
                raise DivergenceError(f"loss rose for 10 consecutive steps (lr={lr}); try a smaller learning rate")
        else:
            rising = 0
        losses.append(loss)
        w -= lr * gw
        b -= lr * gb
    return LogRegWeights(w, b, losses)


def logreg_predict(X, weights: LogRegWeights) -> np.ndarray:
    return (_sigmoid(np.asarray(X) @ weights.w + weights.b) >= 0.5).astype(int)


def tfidf_baseline(train_profiles, test_profiles, steps: int = 500, lr: float = 1.0, lam: float = 1e-4) -> MetricReport:
    """Fit TF-IDF on the training split only, train logistic regression, score the test split."""
    vec = TfidfVectorizer().fit(p.text() for p in train_profiles)
    Xtr = vec.transform(p.text() for p in train_profiles)
    weights = logreg_train(Xtr, [p.label for p in train_profiles], steps, lr, lam)
    preds = logreg_predict(vec.transform(p.text() for p in test_profiles), weights)
    return compute_metrics(preds, [p.label for p in test_profiles])
