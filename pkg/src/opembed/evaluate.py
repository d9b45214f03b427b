"""Cross-validated evaluation over the (task x featurization x model) grid.

Per fold, everything fitted is fitted on the train fifth only: feature
schema, z-score stats, admission threshold, reducers, and the embedding
network. The embedding_from_full_log flag relaxes that for the schema and
encoder (they need no labels), mirroring how an unlabeled plan log would
be used in production.
"""

from __future__ import annotations

import csv
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import classifiers as clf_mod
from . import nn
from .featurize import FeatureSchema, build_schema, encode, extract_triples, schema_hash
from .hourglass import DEFAULT_HIDDEN, Encoder, HourglassSpec, build, cut_off, train_embedding
from .plans import Corpus, iter_nodes, subcorpus, walk_operators
from .reducers import fit_fa, fit_pca, transform_fa, transform_pca
from .tasks import (
    ADMISSION_CLASSES,
    CARD_CLASSES,
    FoldPlan,
    TaskSpec,
    label_admission,
    label_card,
    label_user,
)

MODELS = ("logreg", "knn", "rf", "svm", "dummy")


def parse_featurization(name: str) -> tuple[str, int | None]:
    """"sparse" or "<kind>-<dim>" with kind in {neural, pca, fa}."""
    if name == "sparse":
        return "sparse", None
    if "-" in name:
        kind, _, dim = name.partition("-")
        if kind in ("neural", "pca", "fa") and dim.isdigit() and int(dim) > 0:
            return kind, int(dim)
    raise ValueError(
        f"bad featurization {name!r}; want sparse, neural-<k>, pca-<k>, or fa-<k>"
    )


@dataclass
class FittedFeaturization:
    name: str
    kind: str
    dim: int
    transform: object               # callable (n, sparse_dim) -> (n, dim)
    digest: str | None = None
    encoder: Encoder | None = None
    reducer: object | None = None


def fit_featurization(
    name: str,
    schema: FeatureSchema,
    X_train: np.ndarray,
    triples=None,
    sgd: nn.SgdConfig | None = None,
    hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN,
    seed: int = 0,
) -> FittedFeaturization:
    """Fit one featurization on train-side data. neural-<k> needs triples."""
    kind, dim = parse_featurization(name)
    if kind == "sparse":
        return FittedFeaturization(
            name, kind, schema.total_dim, lambda X: X, schema_hash(schema)
        )
    if kind == "neural":
        if triples is None:
            raise ValueError("neural featurization needs training triples")
        spec = HourglassSpec(
            input_dim=schema.total_dim,
            hidden_dims=hidden_dims,
            embedding_dim=dim,
            seed=seed,
        )
        enet = build(spec, schema)
        train_embedding(enet, triples, sgd or nn.SgdConfig())
        encoder = cut_off(enet)
        return FittedFeaturization(
            name, kind, dim, encoder, encoder.schema_digest, encoder=encoder
        )
    if kind == "pca":
        model = fit_pca(X_train, dim, seed=seed)
        return FittedFeaturization(
            name, kind, dim, lambda X: transform_pca(model, X), reducer=model
        )
    model = fit_fa(X_train, dim)
    return FittedFeaturization(
        name, kind, dim, lambda X: transform_fa(model, X), reducer=model
    )


def _train_model(model: str, s: clf_mod.LabeledSet, seed: int) -> clf_mod.Classifier:
    if model == "logreg":
        return clf_mod.train_logreg(s, seed=seed)
    if model == "knn":
        return clf_mod.train_knn(s)
    if model == "rf":
        return clf_mod.train_rf(s, seed=seed)
    if model == "svm":
        return clf_mod.train_linsvm(s, seed=seed)
    if model == "dummy":
        return clf_mod.train_dummy(s)
    raise ValueError(f"unknown model {model!r}; want one of {MODELS}")


def _task_labels(
    spec: TaskSpec, train: Corpus, test: Corpus
) -> tuple[list[str], list[str], tuple[str, ...], float | None]:
    if spec.task == "admission":
        y_train, threshold = label_admission(train, spec.percentile)
        y_test, _ = label_admission(test, spec.percentile, threshold=threshold)
        return y_train, y_test, ADMISSION_CLASSES, threshold
    if spec.task == "card":
        return label_card(train, spec.factor), label_card(test, spec.factor), CARD_CLASSES, None
    y_train = label_user(train)
    seen: dict[str, None] = {}
    for lab in y_train:
        seen.setdefault(lab)
    return y_train, label_user(test), tuple(seen), None


@dataclass
class CellResult:
    task: str
    featurization: str
    model: str
    fold: int
    accuracy: float
    prior: float
    recalls: dict[str, float]
    mean_infer_ms: float
    train_seconds: float
    threshold: float | None = None


@dataclass
class EvalReport:
    spec: TaskSpec
    strategy: str
    classes: tuple[str, ...]
    cells: list[CellResult] = field(default_factory=list)

    def median_rows(self) -> list[dict]:
        """One row per (featurization, model): median over the folds."""
        keys: list[tuple[str, str]] = []
        for cell in self.cells:
            key = (cell.featurization, cell.model)
            if key not in keys:
                keys.append(key)
        rows = []
        for feat, model in keys:
            sub = [c for c in self.cells if (c.featurization, c.model) == (feat, model)]
            rows.append(
                {
                    "task": self.spec.task,
                    "featurization": feat,
                    "model": model,
                    "folds": len(sub),
                    "accuracy": float(np.median([c.accuracy for c in sub])),
                    "prior": float(np.median([c.prior for c in sub])),
                    "mean_infer_ms": float(np.median([c.mean_infer_ms for c in sub])),
                }
            )
        return rows

    def to_csv(self, path, timings: bool = True) -> None:
        """Long-form per-fold cells, one recall column per class.

        timings=False drops the wall-clock columns so identical seeds yield
        byte-identical files.
        """
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            timing_cols = ["mean_infer_ms", "train_seconds"] if timings else []
            writer.writerow(
                ["task", "strategy", "featurization", "model", "fold", "accuracy",
                 "prior"] + timing_cols + [f"recall_{c}" for c in self.classes]
            )
            for c in self.cells:
                timing_vals = [repr(c.mean_infer_ms), repr(c.train_seconds)] if timings else []
                writer.writerow(
                    [self.spec.task, self.strategy, c.featurization, c.model, c.fold,
                     repr(c.accuracy), repr(c.prior)]
                    + timing_vals
                    + [repr(c.recalls.get(cls, float("nan"))) for cls in self.classes]
                )

    def medians_to_csv(self, path, timings: bool = True) -> None:
        rows = self.median_rows()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            timing_cols = ["mean_infer_ms"] if timings else []
            writer.writerow(["task", "featurization", "model", "folds", "accuracy",
                             "prior"] + timing_cols)
            for r in rows:
                timing_vals = [repr(r["mean_infer_ms"])] if timings else []
                writer.writerow([r["task"], r["featurization"], r["model"], r["folds"],
                                 repr(r["accuracy"]), repr(r["prior"])] + timing_vals)

    def format_table(self) -> str:
        rows = self.median_rows()
        lines = [
            f"task={self.spec.task} strategy={self.strategy} "
            f"(median over {len(set(c.fold for c in self.cells))} folds)",
            f"{'featurization':<14} {'model':<8} {'accuracy':>9} {'prior':>9} {'infer ms':>10}",
        ]
        for r in rows:
            lines.append(
                f"{r['featurization']:<14} {r['model']:<8} "
                f"{r['accuracy']:>9.4f} {r['prior']:>9.4f} {r['mean_infer_ms']:>10.4f}"
            )
        return "\n".join(lines) + "\n"


def _encode_ops(schema: FeatureSchema, corpus: Corpus, tally: Counter) -> np.ndarray:
    return np.stack(
        [encode(schema, item.node, tally) for item in walk_operators(corpus)]
    )


def evaluate(
    corpus: Corpus,
    spec: TaskSpec,
    featurizations: list[str],
    models: list[str],
    plan: FoldPlan,
    sgd: nn.SgdConfig | None = None,
    hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN,
    embedding_from_full_log: bool = False,
    infer_sample: int = 100,
    seed: int = 0,
) -> EvalReport:
    """Train on each fold's train fifth, test on its test side, and record
    accuracy, per-class recall, the test-side prior of the train-majority
    class, and single-item inference latency.

    With embedding_from_full_log the schema and the embedding are fit once on
    the whole (unlabeled) corpus and shared by every fold; classifiers and the
    pca/fa reductions still see only the fold's train fifth.
    """
    for name in featurizations:
        parse_featurization(name)
    wants_neural = any(parse_featurization(n)[0] == "neural" for n in featurizations)

    full_schema = None
    full_rows = None
    offsets = None
    shared_fits: dict[str, FittedFeaturization] = {}
    if embedding_from_full_log:
        full_schema = build_schema(corpus)
        full_rows = _encode_ops(full_schema, corpus, Counter())
        counts = [sum(1 for _ in iter_nodes(rec.root)) for rec in corpus.records]
        offsets = np.concatenate(([0], np.cumsum(counts)))
        triples_all = extract_triples(full_schema, corpus) if wants_neural else None
        for name in featurizations:
            if parse_featurization(name)[0] == "neural":
                shared_fits[name] = fit_featurization(
                    name, full_schema, full_rows, triples_all, sgd, hidden_dims, seed
                )

    def rows_for(qs: np.ndarray) -> np.ndarray:
        return np.concatenate([np.arange(offsets[q], offsets[q + 1]) for q in qs])

    report = None
    for fold_idx, (train_q, test_q) in enumerate(plan.folds):
        sub_train = subcorpus(corpus, train_q)
        sub_test = subcorpus(corpus, test_q)

        y_train, y_test, classes, threshold = _task_labels(spec, sub_train, sub_test)
        if report is None:
            report = EvalReport(spec, plan.strategy, classes)

        triples = None
        if embedding_from_full_log:
            schema = full_schema
            X_train = full_rows[rows_for(train_q)]
            X_test = full_rows[rows_for(test_q)]
        else:
            schema = build_schema(sub_train)
            tally: Counter = Counter()
            X_train = _encode_ops(schema, sub_train, tally)
            X_test = _encode_ops(schema, sub_test, tally)
            if wants_neural:
                triples = extract_triples(schema, sub_train)

        majority = Counter(y_train).most_common()
        top = max(c for _, c in majority)
        majority_label = min(
            (lab for lab, c in majority if c == top), key=classes.index
        )
        y_test_arr = np.array(y_test)
        prior = float(np.mean(y_test_arr == majority_label))

        for feat_name in featurizations:
            if feat_name in shared_fits:
                fitted = shared_fits[feat_name]
            else:
                fitted = fit_featurization(
                    feat_name, schema, X_train, triples, sgd, hidden_dims, seed
                )
            F_train = fitted.transform(X_train)
            F_test = fitted.transform(X_test)
            train_set = clf_mod.make_labeled_set(
                F_train, y_train, classes,
                clf_mod.FeatProvenance(fitted.kind, fitted.digest),
            )
            for model in models:
                t0 = time.perf_counter()
                clf = _train_model(model, train_set, seed)
                train_seconds = time.perf_counter() - t0
                preds = np.array(clf_mod.predict(clf, F_test))
                accuracy = float(np.mean(preds == y_test_arr))
                recalls = {}
                for cls in classes:
                    mask = y_test_arr == cls
                    if mask.any():
                        recalls[cls] = float(np.mean(preds[mask] == cls))
                stats = clf_mod.measure_inference(
                    clf, F_test[: min(infer_sample, len(F_test))]
                )
                report.cells.append(
                    CellResult(
                        spec.task, feat_name, model, fold_idx, accuracy, prior,
                        recalls, stats.mean_ms, train_seconds, threshold,
                    )
                )
    return report
