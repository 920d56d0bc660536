"""Repeated k-fold cross-validation, metrics, per-subject reports and paired tests."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats as _stats

from . import features as _features
from .core import EpochSet, FatigueClass
from .model import (FatigueNetConfig, SingleClassError, build_fatigue_net, train_fatigue_net,
                    train_psd_svm)
from .nn import TrainConfig

log = logging.getLogger(__name__)

MODEL_KINDS = ("hybrid", "psd_svm")
EXACT_MAX_N = 25
N_CLASSES = len(FatigueClass)


# --------------------------------------------------------------------------- folds

@dataclass(eq=False)
class FoldPlan:
    n: int
    k: int
    repeats: int
    seed: int
    stratified: bool
    folds: list           # folds[repeat][fold] -> sorted validation indices

    def splits(self):
        """Yield ``(repeat, fold, train_idx, val_idx)`` in (repeat, fold) order."""
        for r, rep in enumerate(self.folds):
            for f, val in enumerate(rep):
                train = np.concatenate([rep[j] for j in range(self.k) if j != f])
                yield r, f, np.sort(train), val

    def __len__(self):
        return self.k * self.repeats


def make_fold_plan(n: int, k: int = 5, repeats: int = 4, seed: int = 0, labels=None,
                   stratified: bool = True) -> FoldPlan:
    """Shuffled k-fold partitions, one independent shuffle per repeat.

    With ``labels`` and ``stratified`` each class is spread round-robin over
    the folds, so class counts per fold also differ by at most one.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise ValueError(f"cannot split {n} items into {k} folds")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    use_strata = stratified and labels is not None
    if labels is not None and len(labels) != n:
        raise ValueError("labels length does not match n")
    rng = np.random.default_rng(seed)
    folds = []
    for _ in range(repeats):
        if use_strata:
            lab = np.asarray(labels)
            order = np.concatenate([rng.permutation(np.flatnonzero(lab == c))
                                    for c in np.unique(lab)])
            # continue the round-robin where the previous class stopped
            assign = np.empty(n, dtype=int)
            assign[order] = np.arange(n) % k
            folds.append([np.flatnonzero(assign == f) for f in range(k)])
        else:
            perm = rng.permutation(n)
            folds.append([np.sort(p) for p in np.array_split(perm, k)])
    return FoldPlan(n, k, repeats, seed, use_strata, folds)


# --------------------------------------------------------------------------- metrics

@dataclass
class Metrics:
    accuracy: float
    confusion: np.ndarray           # [true, predicted]
    precision: np.ndarray
    recall: np.ndarray

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_classes: int = N_CLASSES) -> "Metrics":
        y_true = np.asarray(y_true, dtype=int)
        y_pred = np.asarray(y_pred, dtype=int)
        if y_true.shape != y_pred.shape or y_true.size == 0:
            raise ValueError("need equally sized, non-empty label arrays")
        conf = np.zeros((n_classes, n_classes), dtype=int)
        np.add.at(conf, (y_true, y_pred), 1)
        tp = np.diag(conf).astype(float)
        col, row = conf.sum(axis=0), conf.sum(axis=1)
        precision = np.divide(tp, col, out=np.zeros(n_classes), where=col > 0)
        recall = np.divide(tp, row, out=np.zeros(n_classes), where=row > 0)
        return cls(float(tp.sum() / conf.sum()), conf, precision, recall)

    def to_dict(self):
        return {"accuracy": self.accuracy, "confusion": self.confusion.tolist(),
                "precision": self.precision.tolist(), "recall": self.recall.tolist()}


@dataclass
class FoldResult:
    repeat: int
    fold: int
    metrics: Optional[Metrics] = None
    failure: Optional[str] = None
    history: Optional[dict] = None

    @property
    def ok(self) -> bool:
        return self.metrics is not None

    def to_dict(self):
        return {"repeat": self.repeat, "fold": self.fold,
                "metrics": self.metrics.to_dict() if self.metrics else None,
                "failure": self.failure, "history": self.history}


@dataclass
class CVResult:
    model_kind: str
    folds: list = field(default_factory=list)

    @property
    def failed(self) -> list:
        return [f for f in self.folds if not f.ok]

    @property
    def accuracy(self) -> float:
        accs = [f.metrics.accuracy for f in self.folds if f.ok]
        return float(np.mean(accs)) if accs else float("nan")

    @property
    def confusion(self) -> np.ndarray:
        return sum((f.metrics.confusion for f in self.folds if f.ok),
                   np.zeros((N_CLASSES, N_CLASSES), dtype=int))

    def to_dict(self):
        return {"model_kind": self.model_kind, "accuracy": self.accuracy,
                "confusion": self.confusion.tolist(),
                "folds": [f.to_dict() for f in self.folds]}


# --------------------------------------------------------------------------- CV runner

@dataclass
class CVSettings:
    train: TrainConfig = field(default_factory=TrainConfig)
    net: FatigueNetConfig = field(default_factory=FatigueNetConfig)
    svm_lambda: float = 3e-2
    svm_epochs: int = 20
    welch_seg_len: int = 100
    welch_overlap: float = 0.5


def fold_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def _run_fold(kind, data: EpochSet, feats, train_idx, val_idx, settings: CVSettings, seed: int):
    y_tr = data.labels[train_idx]
    if len(np.unique(y_tr)) < 2:
        raise SingleClassError(f"training fold holds a single class ({int(y_tr[0])})")
    if kind == "psd_svm":
        svm = train_psd_svm(feats[train_idx], y_tr, settings.svm_lambda,
                            settings.svm_epochs, seed=seed)
        return svm.predict(feats[val_idx]), None
    cfg = replace(settings.train, seed=seed)
    net = build_fatigue_net(settings.net, seed=seed, dtype=np.dtype(cfg.dtype))
    # fixed epoch budget; the validation fold is scored once, after training
    model, hist = train_fatigue_net(net, data.subset(train_idx), cfg, early_stopping=False)
    return model.predict(data.data[val_idx]), hist.to_dict()


def _fold_job(args):
    kind, data, feats, r, f, tr, va, settings, seed = args
    try:
        pred, hist = _run_fold(kind, data, feats, tr, va, settings, seed)
        return FoldResult(r, f, Metrics.from_predictions(data.labels[va], pred), history=hist)
    except (SingleClassError, ValueError, FloatingPointError) as exc:
        log.warning("fold r%d f%d failed: %s", r, f, exc)
        return FoldResult(r, f, failure=f"{type(exc).__name__}: {exc}")


def run_cv(data: EpochSet, model_kind: str, plan: FoldPlan,
           settings: CVSettings | None = None, seed: int = 0, stream: int = 0,
           jobs: int = 1) -> CVResult:
    """Train and validate ``model_kind`` on every split of ``plan``.

    The hybrid net is trained for a fixed number of epochs; the validation
    fold never influences training and is scored once at the end.  Each fold draws its own seed
    from ``(seed, stream, repeat, fold)``; folds may run in ``jobs`` worker
    processes and are gathered in (repeat, fold) order.
    """
    if model_kind not in MODEL_KINDS:
        raise ValueError(f"model_kind must be one of {MODEL_KINDS}")
    if plan.n != len(data):
        raise ValueError(f"fold plan covers {plan.n} items, dataset has {len(data)}")
    settings = settings or CVSettings()
    feats = None
    if model_kind == "psd_svm":
        feats = _features.feature_matrix(data.data, seg_len=settings.welch_seg_len,
                                         overlap=settings.welch_overlap)
    jobs_args = [(model_kind, data, feats, r, f, tr, va, settings, fold_seed(seed, stream, r, f))
                 for r, f, tr, va in plan.splits()]
    if jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            folds = list(ex.map(_fold_job, jobs_args))
    else:
        folds = [_fold_job(a) for a in jobs_args]
    return CVResult(model_kind, folds)


def run_subject_cv(data: EpochSet, model_kinds: Sequence[str] = MODEL_KINDS, k: int = 5,
                   repeats: int = 4, seed: int = 0, settings: CVSettings | None = None,
                   stratified: bool = True, jobs: int = 1) -> "SubjectReport":
    """Per-subject CV for each model kind; one independently trained model per fold."""
    results = {}
    for s_idx, subj in enumerate(data.subject_ids):
        sub = data.for_subject(subj)
        plan = make_fold_plan(len(sub), k, repeats, fold_seed(seed, s_idx), sub.labels, stratified)
        results[subj] = {kind: run_cv(sub, kind, plan, settings, seed, stream=s_idx, jobs=jobs)
                         for kind in model_kinds}
        log.info("%s: %s", subj, {kd: round(r.accuracy, 4) for kd, r in results[subj].items()})
    return SubjectReport.from_results(results)


# --------------------------------------------------------------------------- reporting

@dataclass(eq=False)
class SubjectReport:
    """Rows = subjects, columns = models (Table-I layout)."""

    subjects: list
    models: list
    accuracy: np.ndarray                    # [n_subjects, n_models]
    details: dict = field(default_factory=dict)

    @classmethod
    def from_results(cls, results: dict) -> "SubjectReport":
        subjects = list(results)
        models = list(next(iter(results.values()))) if results else []
        acc = np.array([[results[s][m].accuracy for m in models] for s in subjects])
        return cls(subjects, models, acc, results)

    def column(self, model: str) -> np.ndarray:
        return self.accuracy[:, self.models.index(model)]

    @property
    def mean(self) -> np.ndarray:
        return self.accuracy.mean(axis=0)

    @property
    def std(self) -> np.ndarray:
        """Sample standard deviation across subjects (ddof = 1)."""
        return self.accuracy.std(axis=0, ddof=1)

    @property
    def any_failed(self) -> bool:
        return any(r.failed for per in self.details.values() for r in per.values())

    def p_values(self, reference: str) -> dict:
        ref = self.column(reference)
        return {m: paired_significance(ref, self.column(m)) for m in self.models if m != reference}

    def to_csv(self, reference: str | None = None, digits: int = 4,
               provenance: dict | None = None) -> str:
        buf = io.StringIO()
        if provenance:
            buf.write("# " + json.dumps(provenance, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["subject", *self.models])
        fmt = f"{{:.{digits}f}}"
        for s, row in zip(self.subjects, self.accuracy):
            w.writerow([s, *(fmt.format(v) for v in row)])
        w.writerow(["Avg.", *(fmt.format(v) for v in self.mean)])
        w.writerow(["Std.", *(fmt.format(v) for v in self.std)])
        if reference is not None:
            pv = self.p_values(reference)
            w.writerow(["p-value", *("" if m == reference else f"{pv[m]:.6g}" for m in self.models)])
        return buf.getvalue()

    def to_json(self, reference: str | None = None, provenance: dict | None = None) -> str:
        doc = {"provenance": provenance, "subjects": self.subjects, "models": self.models,
               "accuracy": self.accuracy.tolist(), "mean": self.mean.tolist(),
               "std": self.std.tolist(),
               "p_values": self.p_values(reference) if reference else None,
               "folds": {s: {m: r.to_dict() for m, r in per.items()}
                         for s, per in self.details.items()}}
        return json.dumps(doc, indent=2, default=_json_default)

    def save(self, out_dir, reference: str | None = None, provenance: dict | None = None):
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.csv").write_text(self.to_csv(reference, provenance=provenance))
        (d / "report.json").write_text(self.to_json(reference, provenance) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")


def load_table_csv(path_or_text) -> SubjectReport:
    """Read a subject x model accuracy table; summary rows and ``#`` comments are skipped."""
    text = path_or_text
    if isinstance(path_or_text, Path) or (isinstance(path_or_text, str) and "\n" not in path_or_text):
        text = Path(path_or_text).read_text()
    rows = [r for r in csv.reader(line for line in text.splitlines()
                                  if line.strip() and not line.lstrip().startswith("#"))]
    header, body = rows[0], rows[1:]
    summary = {"avg.", "std.", "p-value", "avg", "std"}
    body = [r for r in body if r[0].strip().lower() not in summary]
    acc = np.array([[float(v) for v in r[1:]] for r in body])
    return SubjectReport([r[0] for r in body], header[1:], acc)


# --------------------------------------------------------------------------- Wilcoxon

def _signed_rank_null(ranks2: np.ndarray) -> np.ndarray:
    """Exact null counts of the doubled positive-rank sum (each sign equally likely)."""
    total = int(ranks2.sum())
    counts = np.zeros(total + 1, dtype=object)     # python ints: exact for any n
    counts[0] = 1
    for r in ranks2:
        r = int(r)
        counts[r:] = counts[r:] + counts[:total + 1 - r]
    return counts


def paired_significance(acc_a, acc_b) -> float:
    """Two-sided Wilcoxon signed-rank p-value for paired samples.

    Zero differences are dropped; tied magnitudes get average ranks.  Up to
    25 non-zero pairs the p-value comes from the exact permutation
    distribution (which accounts for ties), beyond that from the normal
    approximation with tie correction.
    """
    a = np.asarray(acc_a, dtype=np.float64)
    b = np.asarray(acc_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-D and equally long")
    if len(a) < 5:
        raise ValueError("need at least 5 pairs")
    # rounding stops float noise (a + 0.01 - a) from breaking genuine ties
    d = np.round(b - a, 12)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return 1.0
    ranks = _stats.rankdata(np.abs(d))
    w_plus = ranks[d > 0].sum()
    if n <= EXACT_MAX_N:
        ranks2 = np.rint(2 * ranks).astype(int)
        counts = _signed_rank_null(ranks2)
        w2 = int(round(2 * w_plus))
        total = 2 ** n
        lower = sum(counts[:w2 + 1])
        upper = sum(counts[w2:])
        p = 2 * min(lower, upper) / total
        return float(min(1.0, p))
    mean = n * (n + 1) / 4
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - (tie_counts ** 3 - tie_counts).sum() / 48
    z = (w_plus - mean) / math.sqrt(var)
    return float(min(1.0, 2 * _stats.norm.sf(abs(z))))
