"""Task label derivation and cross-validation fold plans.

Tasks label individual operators: admission (above/below a latency
percentile), cardinality estimate quality (under/correct/over by a factor
threshold), and which user submitted the query. Folds are built over query
indices with a one-fifth train side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CoverageError
from .featurize import FeatureSchema, encode
from .plans import Corpus, QueryRecord, iter_nodes, walk_operators

ADMISSION_CLASSES = ("ok", "slow")
CARD_CLASSES = ("correct", "over", "under")
TASKS = ("admission", "card", "user")


@dataclass(frozen=True)
class TaskSpec:
    task: str
    percentile: float = 95.0
    factor: float = 2.0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if not 0 < self.percentile < 100:
            raise ValueError("percentile must be in (0, 100)")
        if self.factor <= 1:
            raise ValueError("factor must be > 1")


def nearest_rank_percentile(values, p: float) -> float:
    """p-th percentile by the nearest-rank method: value at rank
    ceil(p/100 * n) of the ascending sort."""
    arr = np.sort(np.asarray(values, dtype=np.float64))
    if arr.size == 0:
        raise ValueError("no values")
    rank = math.ceil(p / 100.0 * arr.size)
    return float(arr[max(rank, 1) - 1])


def label_admission(
    corpus: Corpus, p: float = 95.0, threshold: float | None = None
) -> tuple[list[str], float]:
    """Operator labels ("ok" | "slow") + the threshold used.

    With threshold=None the threshold is the nearest-rank p-th percentile
    of this corpus's operator latencies; pass a train-side threshold to
    label a test corpus without leaking.
    """
    latencies = []
    missing = 0
    for item in walk_operators(corpus):
        if item.node.actual_latency_ms is None:
            missing += 1
        else:
            latencies.append(item.node.actual_latency_ms)
    if missing:
        raise CoverageError(
            f"{missing} operators lack actual_latency_ms; admission labels need full coverage"
        )
    if threshold is None:
        threshold = nearest_rank_percentile(latencies, p)
    labels = ["slow" if lat > threshold else "ok" for lat in latencies]
    return labels, threshold


def label_card(corpus: Corpus, f: float = 2.0) -> list[str]:
    """Operator labels: "over" if plan_rows >= f*actual, "under" if
    actual >= f*plan_rows, else "correct". Zero counts on either side get
    +1 smoothing on both before the ratio test."""
    labels = []
    missing = 0
    for item in walk_operators(corpus):
        node = item.node
        if node.actual_rows is None:
            missing += 1
            continue
        plan, actual = node.plan_rows, node.actual_rows
        if min(plan, actual) == 0:
            plan, actual = plan + 1.0, actual + 1.0
        if plan >= f * actual:
            labels.append("over")
        elif actual >= f * plan:
            labels.append("under")
        else:
            labels.append("correct")
    if missing:
        raise CoverageError(
            f"{missing} operators lack actual_rows; cardinality labels need full coverage"
        )
    return labels


def label_user(corpus: Corpus) -> list[str]:
    """Each operator labeled with its query's user_label, walk order."""
    return [item.record.user_label for item in walk_operators(corpus)]


def flag_query(
    classifier,
    schema: FeatureSchema,
    record: QueryRecord,
    transform=None,
    positive: str = "slow",
) -> str:
    """"flag" if the classifier marks any operator of the query positive,
    else "admit". transform maps encoded rows to the classifier's feature
    space (None = raw sparse)."""
    from .classifiers import predict

    X = np.stack([encode(schema, node) for node in iter_nodes(record.root)])
    if transform is not None:
        X = transform(X)
    preds = predict(classifier, X)
    return "flag" if any(p == positive for p in preds) else "admit"


@dataclass
class FoldPlan:
    """Per-fold (train, test) query-index arrays; train is the one-fifth."""

    strategy: str
    seed: int
    folds: list[tuple[np.ndarray, np.ndarray]]

    def __len__(self) -> int:
        return len(self.folds)


def make_folds(
    corpus: Corpus, strategy: str, seed: int = 0, n_folds: int = 5
) -> FoldPlan:
    """Build the cross-validation plan over query indices.

    random: seeded permutation split into fifths, each fifth trains once.
    temporal: sliding one-fifth train windows; every train query precedes
      every test query in arrival order.
    by_group: whole user_label groups are shuffled and greedy-balanced into
      n_folds buckets; each bucket trains once, so no group ever appears on
      both sides.
    """
    n = len(corpus)
    if n < n_folds:
        raise ValueError(f"need at least {n_folds} queries, corpus has {n}")
    folds: list[tuple[np.ndarray, np.ndarray]] = []
    if strategy == "random":
        rng = np.random.default_rng([seed, 31])
        parts = np.array_split(rng.permutation(n), n_folds)
        for i in range(n_folds):
            train = np.sort(parts[i])
            test = np.sort(np.concatenate([parts[j] for j in range(n_folds) if j != i]))
            folds.append((train, test))
    elif strategy == "temporal":
        fifth = n // n_folds
        if fifth == 0:
            raise ValueError("too few queries for temporal folds")
        for i in range(n_folds):
            start = i * (n - fifth) // n_folds
            train = np.arange(start, start + fifth)
            test = np.arange(start + fifth, n)
            if len(test) == 0:
                raise ValueError("temporal fold has an empty test side")
            folds.append((train, test))
    elif strategy == "by_group":
        groups: dict[str, list[int]] = {}
        for i, rec in enumerate(corpus.records):
            groups.setdefault(rec.user_label, []).append(i)
        keys = list(groups)
        if len(keys) < n_folds:
            raise ValueError(
                f"by_group needs at least {n_folds} distinct user_label groups, "
                f"corpus has {len(keys)}"
            )
        rng = np.random.default_rng([seed, 37])
        order = [keys[j] for j in rng.permutation(len(keys))]
        buckets: list[list[int]] = [[] for _ in range(n_folds)]
        for key in order:
            smallest = min(range(n_folds), key=lambda b: (len(buckets[b]), b))
            buckets[smallest].extend(groups[key])
        for i in range(n_folds):
            train = np.sort(np.array(buckets[i], dtype=np.intp))
            test = np.sort(
                np.concatenate(
                    [np.array(buckets[j], dtype=np.intp) for j in range(n_folds) if j != i]
                )
            )
            folds.append((train, test))
    else:
        raise ValueError(f"unknown fold strategy {strategy!r}")
    return FoldPlan(strategy, seed, folds)


def assert_leak_free(plan: FoldPlan, corpus: Corpus) -> None:
    """Raise AssertionError if any fold violates its separation contract."""
    for train, test in plan.folds:
        overlap = np.intersect1d(train, test)
        assert overlap.size == 0, f"fold shares queries {overlap[:5]}"
        if plan.strategy == "temporal":
            assert train.max() < test.min(), "temporal fold: train not before test"
        if plan.strategy == "by_group":
            train_groups = {corpus.records[i].user_label for i in train}
            test_groups = {corpus.records[i].user_label for i in test}
            shared = train_groups & test_groups
            assert not shared, f"groups on both sides: {sorted(shared)[:3]}"
