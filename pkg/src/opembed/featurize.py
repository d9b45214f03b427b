"""Corpus-derived sparse operator encoding.

The schema is rebuilt from whatever corpus it is given: categorical
vocabularies are the observed value sets (first-appearance order), numeric
slots are z-scored with stats from the operators where the field applies,
and anything inapplicable to a node encodes as zeros.
"""

from __future__ import annotations

import csv
import hashlib
import json
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import SchemaError
from .plans import (
    ATTR_STAT_FIELDS,
    CORE_NUMERIC_FIELDS,
    OPTIONAL_BOOLEAN_FIELDS,
    OPTIONAL_CATEGORICAL_FIELDS,
    Corpus,
    PlanNode,
    walk_operators,
)

NUMERIC, BOOLEAN, CATEGORICAL = "numeric", "boolean", "categorical"

# layout order: operator identity first, then the per-operator property
# blocks roughly as EXPLAIN presents them
_CATEGORICAL_ORDER = (
    "node_type",
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

STDDEV_SENTINEL = 1.0


@dataclass(frozen=True)
class SlotSpec:
    name: str
    kind: str
    group: str | None = None  # categorical group, if any


@dataclass(frozen=True)
class FeatureSchema:
    slots: tuple[SlotSpec, ...]
    total_dim: int
    vocab: dict[str, dict[str, int]]       # group -> value -> slot index
    groups: dict[str, tuple[int, int]]     # group -> (start, stop)
    stats: dict[int, tuple[float, float]]  # numeric slot -> (mean, stddev)
    attr_width: int
    core_base: int                         # slot index of plan_width
    hb_slot: int | None                    # hash_buckets slot, if observed
    attr_base: int | None                  # first attr_mins slot, if any
    bool_slots: dict[str, int]

    def segments(self) -> tuple[tuple[str, int, int], ...]:
        """Partition of [0, total_dim) into loss segments.

        Contiguous numeric slots merge into one mse segment; each boolean
        slot is a bce segment; each categorical group is a softmax segment.
        """
        segs: list[tuple[str, int, int]] = []
        i = 0
        while i < self.total_dim:
            slot = self.slots[i]
            if slot.kind == CATEGORICAL:
                start, stop = self.groups[slot.group]
                segs.append(("softmax", start, stop))
                i = stop
            elif slot.kind == BOOLEAN:
                segs.append(("bce", i, i + 1))
                i += 1
            else:
                j = i
                while j < self.total_dim and self.slots[j].kind == NUMERIC:
                    j += 1
                segs.append(("mse", i, j))
                i = j
        return tuple(segs)


def _attr_values(node: PlanNode, field: str) -> tuple[float, ...] | None:
    return getattr(node, field)


def build_schema(corpus: Corpus) -> FeatureSchema:
    """Derive the sparse layout, vocabularies and z-score stats from a corpus."""
    if len(corpus) == 0:
        raise SchemaError("cannot build a schema from an empty corpus")

    nodes = [item.node for item in walk_operators(corpus)]

    vocab_values: dict[str, list[str]] = {g: [] for g in _CATEGORICAL_ORDER}
    seen: dict[str, set] = {g: set() for g in _CATEGORICAL_ORDER}
    attr_width = 0
    has_hash_buckets = False
    observed_bools = {f: False for f in OPTIONAL_BOOLEAN_FIELDS}
    for node in nodes:
        if node.node_type not in seen["node_type"]:
            seen["node_type"].add(node.node_type)
            vocab_values["node_type"].append(node.node_type)
        for field in OPTIONAL_CATEGORICAL_FIELDS:
            value = getattr(node, field)
            if value is not None and value not in seen[field]:
                seen[field].add(value)
                vocab_values[field].append(value)
        if node.hash_buckets is not None:
            has_hash_buckets = True
        for field in ATTR_STAT_FIELDS:
            values = _attr_values(node, field)
            if values is not None:
                attr_width = max(attr_width, len(values))
        for field in OPTIONAL_BOOLEAN_FIELDS:
            if getattr(node, field) is not None:
                observed_bools[field] = True

    slots: list[SlotSpec] = []
    vocab: dict[str, dict[str, int]] = {}
    groups: dict[str, tuple[int, int]] = {}

    def add_group(group: str) -> None:
        values = vocab_values[group]
        if not values:
            return
        start = len(slots)
        vocab[group] = {}
        for value in values:
            vocab[group][value] = len(slots)
            slots.append(SlotSpec(f"{group}={value}", CATEGORICAL, group))
        groups[group] = (start, len(slots))

    add_group("node_type")
    core_base = len(slots)
    for name in CORE_NUMERIC_FIELDS:
        slots.append(SlotSpec(name, NUMERIC))
    add_group("join_type")
    add_group("parent_relationship")
    hb_slot = None
    if has_hash_buckets:
        hb_slot = len(slots)
        slots.append(SlotSpec("hash_buckets", NUMERIC))
    add_group("hash_algorithm")
    add_group("sort_key")
    add_group("sort_method")
    add_group("relation_name")
    attr_base = len(slots) if attr_width else None
    for field in ATTR_STAT_FIELDS:
        for j in range(attr_width):
            slots.append(SlotSpec(f"{field}[{j}]", NUMERIC))
    add_group("index_name")
    bool_slots: dict[str, int] = {}
    if observed_bools["scan_direction"]:
        bool_slots["scan_direction"] = len(slots)
        slots.append(SlotSpec("scan_direction", BOOLEAN))
    add_group("agg_strategy")
    if observed_bools["partial_mode"]:
        bool_slots["partial_mode"] = len(slots)
        slots.append(SlotSpec("partial_mode", BOOLEAN))
    add_group("agg_operator")

    schema = FeatureSchema(
        slots=tuple(slots),
        total_dim=len(slots),
        vocab=vocab,
        groups=groups,
        stats={},
        attr_width=attr_width,
        core_base=core_base,
        hb_slot=hb_slot,
        attr_base=attr_base,
        bool_slots=bool_slots,
    )

    # z-score stats over the operators where each numeric field applies
    stats: dict[int, tuple[float, float]] = {}
    collected: dict[int, list[float]] = {
        i: [] for i, s in enumerate(schema.slots) if s.kind == NUMERIC
    }
    for node in nodes:
        for raw, idx in _numeric_raws(schema, node):
            collected[idx].append(raw)
    for idx, values in collected.items():
        if not values:
            stats[idx] = (0.0, STDDEV_SENTINEL)
            continue
        arr = np.asarray(values, dtype=np.float64)
        mean = float(arr.mean())
        std = float(arr.std())
        if std < 1e-12:
            std = STDDEV_SENTINEL
        stats[idx] = (mean, std)
    object.__setattr__(schema, "stats", stats)
    return schema


def _numeric_raws(schema: FeatureSchema, node: PlanNode):
    """Yield (raw value, slot index) for every numeric field applicable to node."""
    for k, field in enumerate(CORE_NUMERIC_FIELDS):
        yield float(getattr(node, field)), schema.core_base + k
    if node.hash_buckets is not None and schema.hb_slot is not None:
        yield float(node.hash_buckets), schema.hb_slot
    if schema.attr_base is not None:
        for f, field in enumerate(ATTR_STAT_FIELDS):
            values = _attr_values(node, field)
            if values is None:
                continue
            if len(values) > schema.attr_width:
                raise SchemaError(
                    f"{field} has {len(values)} entries; schema fixes width "
                    f"at {schema.attr_width}"
                )
            for j, raw in enumerate(values):
                yield float(raw), schema.attr_base + f * schema.attr_width + j


def encode(
    schema: FeatureSchema, node: PlanNode, tally: Counter | None = None
) -> np.ndarray:
    """Encode one operator as a dense float vector in schema layout.

    Unknown categorical values leave their group all-zero and bump
    ``tally[group]`` when a tally is supplied.
    """
    vec = np.zeros(schema.total_dim, dtype=np.float64)

    def set_categorical(group: str, value: str | None) -> None:
        if value is None or group not in schema.vocab:
            return
        idx = schema.vocab[group].get(value)
        if idx is None:
            if tally is not None:
                tally[group] += 1
            return
        vec[idx] = 1.0

    set_categorical("node_type", node.node_type)
    for field in OPTIONAL_CATEGORICAL_FIELDS:
        set_categorical(field, getattr(node, field))
    for raw, idx in _numeric_raws(schema, node):
        mean, std = schema.stats[idx]
        vec[idx] = (raw - mean) / std
    for field, idx in schema.bool_slots.items():
        value = getattr(node, field)
        if value is not None:
            vec[idx] = 1.0 if value else 0.0
    return vec


def check_vector(schema: FeatureSchema, vec: np.ndarray) -> list[str]:
    """Return invariant violations for an encoded vector (empty list = valid)."""
    problems = []
    if vec.shape != (schema.total_dim,):
        return [f"wrong shape {vec.shape}, want ({schema.total_dim},)"]
    if not np.all(np.isfinite(vec)):
        problems.append("non-finite entries")
    for group, (start, stop) in schema.groups.items():
        seg = vec[start:stop]
        if not np.all(np.isin(seg, (0.0, 1.0))):
            problems.append(f"group {group} has values outside {{0,1}}")
        if seg.sum() > 1.0:
            problems.append(f"group {group} has more than one active slot")
    for i, slot in enumerate(schema.slots):
        if slot.kind == BOOLEAN and vec[i] not in (0.0, 1.0):
            problems.append(f"boolean slot {slot.name} = {vec[i]!r}")
    return problems


@dataclass(frozen=True)
class TrainingTriple:
    """Operator encoding plus its (up to two) child encodings."""

    x: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    c1_present: bool
    c2_present: bool


def extract_triples(
    schema: FeatureSchema, corpus: Corpus, tally: Counter | None = None
) -> list[TrainingTriple]:
    """One triple per operator; missing children are zero vectors with masks."""
    zero = np.zeros(schema.total_dim, dtype=np.float64)
    triples = []
    for item in walk_operators(corpus):
        x = encode(schema, item.node, tally)
        c1 = encode(schema, item.child1, tally) if item.child1 is not None else zero
        c2 = encode(schema, item.child2, tally) if item.child2 is not None else zero
        triples.append(
            TrainingTriple(x, c1, c2, item.child1 is not None, item.child2 is not None)
        )
    return triples


def stack_triples(
    triples: list[TrainingTriple],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Stack triples into (X, C1, C2, mask) arrays; mask is (n, 2) booleans."""
    X = np.stack([t.x for t in triples])
    C1 = np.stack([t.c1 for t in triples])
    C2 = np.stack([t.c2 for t in triples])
    mask = np.array([[t.c1_present, t.c2_present] for t in triples], dtype=bool)
    return X, C1, C2, mask


def _schema_payload(schema: FeatureSchema) -> dict:
    return {
        "slots": [
            {"name": s.name, "kind": s.kind, "group": s.group} for s in schema.slots
        ],
        "vocab": {g: list(v.keys()) for g, v in schema.vocab.items()},
        "stats": {
            str(idx): [schema.stats[idx][0], schema.stats[idx][1]]
            for idx in sorted(schema.stats)
        },
        "attr_width": schema.attr_width,
        "total_dim": schema.total_dim,
    }


def schema_hash(schema: FeatureSchema) -> str:
    payload = json.dumps(_schema_payload(schema), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def schema_to_json(schema: FeatureSchema) -> str:
    payload = _schema_payload(schema)
    payload["hash"] = schema_hash(schema)
    return json.dumps(payload, indent=1)


def schema_from_json(text: str) -> FeatureSchema:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"schema JSON is invalid: {exc}") from exc
    try:
        slots = tuple(
            SlotSpec(d["name"], d["kind"], d.get("group")) for d in payload["slots"]
        )
        vocab: dict[str, dict[str, int]] = {}
        groups: dict[str, tuple[int, int]] = {}
        for group, values in payload["vocab"].items():
            vocab[group] = {}
            indices = []
            for i, slot in enumerate(slots):
                if slot.group == group:
                    indices.append(i)
            for value, idx in zip(values, indices):
                vocab[group][value] = idx
            groups[group] = (indices[0], indices[-1] + 1)
        stats = {int(k): (v[0], v[1]) for k, v in payload["stats"].items()}
        by_name = {slot.name: i for i, slot in enumerate(slots)}
        schema = FeatureSchema(
            slots=slots,
            total_dim=int(payload["total_dim"]),
            vocab=vocab,
            groups=groups,
            stats=stats,
            attr_width=int(payload["attr_width"]),
            core_base=by_name[CORE_NUMERIC_FIELDS[0]],
            hb_slot=by_name.get("hash_buckets"),
            attr_base=by_name.get(f"{ATTR_STAT_FIELDS[0]}[0]"),
            bool_slots={
                slot.name: i for i, slot in enumerate(slots) if slot.kind == BOOLEAN
            },
        )
    except (KeyError, IndexError, TypeError) as exc:
        raise SchemaError(f"schema JSON is missing fields: {exc}") from exc
    if "hash" in payload and payload["hash"] != schema_hash(schema):
        raise SchemaError(
            f"schema hash mismatch: stored {payload['hash'][:12]}..., "
            f"recomputed {schema_hash(schema)[:12]}..."
        )
    if schema.total_dim != len(slots):
        raise SchemaError("total_dim disagrees with slot count")
    return schema


def export_csv(schema: FeatureSchema, vectors: np.ndarray, path) -> None:
    """Write encoded rows as CSV with slot names as the header."""
    vectors = np.atleast_2d(vectors)
    if vectors.shape[1] != schema.total_dim:
        raise SchemaError(
            f"vectors have {vectors.shape[1]} columns, schema wants {schema.total_dim}"
        )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([s.name for s in schema.slots])
        for row in vectors:
            writer.writerow([repr(float(v)) for v in row])
