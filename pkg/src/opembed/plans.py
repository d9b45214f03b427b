"""Canonical query-plan tree model and corpus file ingestion.

The canonical plan file is a UTF-8 JSON document::

    {"queries": [{"query_id": "...", "user": "..." | null, "plan": <node>}, ...]}

where each ``<node>`` carries the operator fields by snake_case name plus a
``"children"`` list.  Costs are in optimizer units, latency in milliseconds,
rows in tuples.  Unknown keys are ignored with a warning.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .errors import PlanFormatError

log = logging.getLogger(__name__)

# Scalar fields every operator carries (optimizer estimates).
CORE_NUMERIC_FIELDS = (
    "plan_width",
    "plan_rows",
    "plan_buffers",
    "estimated_ios",
    "total_cost",
)

# Optional fields, by kind.  Absent means "does not apply to this operator";
# zero-filling happens in the featurizer, never here.
OPTIONAL_NUMERIC_FIELDS = ("hash_buckets", "actual_rows", "actual_latency_ms")
OPTIONAL_CATEGORICAL_FIELDS = (
    "join_type",
    "parent_relationship",
    "hash_algorithm",
    "sort_key",
    "sort_method",
    "relation_name",
    "index_name",
    "agg_strategy",
    "agg_operator",
)
OPTIONAL_BOOLEAN_FIELDS = ("scan_direction", "partial_mode")
ATTR_STAT_FIELDS = ("attr_mins", "attr_medians", "attr_maxs")

_KNOWN_NODE_KEYS = (
    {"node_type", "children"}
    | set(CORE_NUMERIC_FIELDS)
    | set(OPTIONAL_NUMERIC_FIELDS)
    | set(OPTIONAL_CATEGORICAL_FIELDS)
    | set(OPTIONAL_BOOLEAN_FIELDS)
    | set(ATTR_STAT_FIELDS)
)


@dataclass
class PlanNode:
    """One operator in a query plan, with optional runtime ground truth."""

    node_type: str
    plan_width: float = 0.0
    plan_rows: float = 0.0
    plan_buffers: float = 0.0
    estimated_ios: float = 0.0
    total_cost: float = 0.0
    join_type: Optional[str] = None
    parent_relationship: Optional[str] = None
    hash_buckets: Optional[float] = None
    hash_algorithm: Optional[str] = None
    sort_key: Optional[str] = None
    sort_method: Optional[str] = None
    relation_name: Optional[str] = None
    index_name: Optional[str] = None
    scan_direction: Optional[bool] = None
    attr_mins: Optional[tuple[float, ...]] = None
    attr_medians: Optional[tuple[float, ...]] = None
    attr_maxs: Optional[tuple[float, ...]] = None
    agg_strategy: Optional[str] = None
    partial_mode: Optional[bool] = None
    agg_operator: Optional[str] = None
    actual_rows: Optional[float] = None
    actual_latency_ms: Optional[float] = None
    children: list["PlanNode"] = field(default_factory=list)


@dataclass
class QueryRecord:
    """A single executed query: id, optional submitting user, plan tree."""

    query_id: str
    user_label: Optional[str]
    root: PlanNode


@dataclass
class Corpus:
    """An ordered workload of query records; list order is arrival order."""

    records: list[QueryRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def arrival_order(self) -> range:
        return range(len(self.records))


@dataclass(frozen=True)
class WalkItem:
    """One operator plus its (truncated) first and second children."""

    record: QueryRecord
    node: PlanNode
    child1: Optional[PlanNode]
    child2: Optional[PlanNode]


@dataclass
class CorpusSummary:
    n_queries: int
    n_operators: int
    operator_counts: Counter
    depth_counts: Counter
    latency_coverage: float
    actual_rows_coverage: float
    user_label_coverage: float


def _check_scalar(value, name: str, path: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise PlanFormatError(f"{path}: field {name!r} is not a number: {value!r}")
    if not math.isfinite(v) or v < 0:
        raise PlanFormatError(f"{path}: field {name!r} must be finite and >= 0, got {v}")
    return v


def _parse_node(obj, path: str) -> PlanNode:
    if not isinstance(obj, dict):
        raise PlanFormatError(f"{path}: plan node must be an object")
    if "node_type" not in obj:
        raise PlanFormatError(f"{path}: missing required field 'node_type'")

    unknown = set(obj) - _KNOWN_NODE_KEYS
    if unknown:
        log.warning("%s: ignoring unknown keys %s", path, sorted(unknown))

    node = PlanNode(node_type=str(obj["node_type"]))
    for name in CORE_NUMERIC_FIELDS:
        if name in obj and obj[name] is not None:
            setattr(node, name, _check_scalar(obj[name], name, path))
    for name in OPTIONAL_NUMERIC_FIELDS:
        if obj.get(name) is not None:
            setattr(node, name, _check_scalar(obj[name], name, path))
    for name in OPTIONAL_CATEGORICAL_FIELDS:
        if obj.get(name) is not None:
            setattr(node, name, str(obj[name]))
    for name in OPTIONAL_BOOLEAN_FIELDS:
        if obj.get(name) is not None:
            setattr(node, name, bool(obj[name]))
    for name in ATTR_STAT_FIELDS:
        if obj.get(name) is not None:
            seq = obj[name]
            if not isinstance(seq, list):
                raise PlanFormatError(f"{path}: field {name!r} must be a list of numbers")
            setattr(node, name, tuple(float(v) for v in seq))

    for i, child in enumerate(obj.get("children") or []):
        node.children.append(_parse_node(child, f"{path}.children[{i}]"))
    return node


def load_corpus(path, format: str = "canonical") -> Corpus:
    """Load a canonical plan file, preserving document order as arrival order.

    Raises :class:`PlanFormatError` with node-path context on parse errors or
    invariant violations (negative/non-finite numerics, missing node_type).
    """
    if format != "canonical":
        raise ValueError(f"unsupported corpus format: {format!r}")
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise PlanFormatError(f"{path}: line {e.lineno} col {e.colno}: {e.msg}") from e

    if not isinstance(doc, dict) or "queries" not in doc:
        raise PlanFormatError(f"{path}: top level must be an object with a 'queries' list")

    corpus = Corpus()
    seen_ids: set[str] = set()
    for i, q in enumerate(doc["queries"]):
        qpath = f"queries[{i}]"
        if "query_id" not in q or "plan" not in q:
            raise PlanFormatError(f"{qpath}: needs 'query_id' and 'plan'")
        qid = str(q["query_id"])
        if qid in seen_ids:
            raise PlanFormatError(f"{qpath}: duplicate query_id {qid!r}")
        seen_ids.add(qid)
        user = q.get("user")
        root = _parse_node(q["plan"], f"{qpath}.plan")
        corpus.records.append(QueryRecord(qid, None if user is None else str(user), root))
    return corpus


def _node_to_dict(node: PlanNode) -> dict:
    d: dict = {"node_type": node.node_type}
    for name in CORE_NUMERIC_FIELDS:
        d[name] = getattr(node, name)
    for name in OPTIONAL_NUMERIC_FIELDS + OPTIONAL_CATEGORICAL_FIELDS + OPTIONAL_BOOLEAN_FIELDS:
        v = getattr(node, name)
        if v is not None:
            d[name] = v
    for name in ATTR_STAT_FIELDS:
        v = getattr(node, name)
        if v is not None:
            d[name] = list(v)
    d["children"] = [_node_to_dict(c) for c in node.children]
    return d


def corpus_to_dict(corpus: Corpus) -> dict:
    return {
        "queries": [
            {"query_id": r.query_id, "user": r.user_label, "plan": _node_to_dict(r.root)}
            for r in corpus.records
        ]
    }


def save_corpus(corpus: Corpus, path) -> None:
    """Write a corpus back to the canonical plan-file format."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(corpus_to_dict(corpus), f, indent=1)
        f.write("\n")


def iter_nodes(root: PlanNode) -> Iterator[PlanNode]:
    """Depth-first pre-order traversal of one plan tree."""
    stack = [root]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.children))


def walk_operators(corpus: Corpus) -> Iterator[WalkItem]:
    """Yield one item per operator, pre-order per query in arrival order.

    A node's first two children are carried along; children beyond the second
    are truncated, and missing children are ``None``.
    """
    for record in corpus.records:
        for node in iter_nodes(record.root):
            c1 = node.children[0] if len(node.children) >= 1 else None
            c2 = node.children[1] if len(node.children) >= 2 else None
            yield WalkItem(record, node, c1, c2)


def _tree_depth(node: PlanNode) -> int:
    if not node.children:
        return 1
    return 1 + max(_tree_depth(c) for c in node.children)


def summarize(corpus: Corpus) -> CorpusSummary:
    """Per-corpus counts: operators by type, tree depths, label coverage."""
    op_counts: Counter = Counter()
    depth_counts: Counter = Counter()
    n_ops = 0
    n_lat = 0
    n_rows = 0
    for record in corpus.records:
        depth_counts[_tree_depth(record.root)] += 1
        for node in iter_nodes(record.root):
            n_ops += 1
            op_counts[node.node_type] += 1
            if node.actual_latency_ms is not None:
                n_lat += 1
            if node.actual_rows is not None:
                n_rows += 1
    n_users = sum(1 for r in corpus.records if r.user_label is not None)
    return CorpusSummary(
        n_queries=len(corpus.records),
        n_operators=n_ops,
        operator_counts=op_counts,
        depth_counts=depth_counts,
        latency_coverage=n_lat / n_ops if n_ops else 0.0,
        actual_rows_coverage=n_rows / n_ops if n_ops else 0.0,
        user_label_coverage=n_users / len(corpus.records) if corpus.records else 0.0,
    )


def subcorpus(corpus: Corpus, query_indices) -> Corpus:
    """A new corpus holding the selected records, in the given order."""
    return Corpus(records=[corpus.records[i] for i in query_indices])
