"""Single-file model store for schemas, encoders, reducers, and classifiers.

Bundle layout: 4-byte magic, little-endian u32 format version, little-endian
u64 header length, canonical JSON header (UTF-8), then the arrays packed as
little-endian 64-bit values. Headers are serialized with sorted keys and no
whitespace and arrays are laid out in sorted name order, so saving the same
object twice produces identical bytes and save->load->save round-trips.

Relative bundle paths resolve against the OPEMBED_STORE directory when that
environment variable is set.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from . import nn
from .classifiers import Classifier, FeatProvenance
from .errors import BundleError
from .featurize import FeatureSchema, schema_from_json, schema_to_json
from .hourglass import Encoder
from .reducers import FaModel, PcaModel

MAGIC = b"OPEB"
VERSION = 1
KINDS = ("schema", "encoder", "pca", "fa", "classifier")


def _jsonable(obj):
    """Coerce numpy scalars/arrays nested in JSON-bound structures."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def resolve_store_path(path) -> Path:
    p = Path(path)
    root = os.environ.get("OPEMBED_STORE")
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _array_dtype(arr: np.ndarray) -> str:
    if np.issubdtype(arr.dtype, np.floating):
        return "<f8"
    if np.issubdtype(arr.dtype, np.integer):
        return "<i8"
    raise BundleError(f"unsupported array dtype {arr.dtype}")


def save_bundle(path, kind: str, body: dict, arrays: dict[str, np.ndarray] | None = None) -> Path:
    """Write one bundle atomically; returns the resolved target path."""
    if kind not in KINDS:
        raise BundleError(f"unknown bundle kind {kind!r}")
    arrays = arrays or {}
    manifest = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        dtype = _array_dtype(arrays[name])
        block = np.ascontiguousarray(arrays[name], dtype=dtype).tobytes()
        manifest.append(
            {"name": name, "dtype": dtype, "shape": list(arrays[name].shape),
             "offset": offset, "nbytes": len(block)}
        )
        blobs.append(block)
        offset += len(block)
    header = dict(_jsonable(body))
    header["kind"] = kind
    header["arrays"] = manifest
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()

    target = resolve_store_path(path)
    if target.parent != Path(""):
        target.parent.mkdir(parents=True, exist_ok=True)
    tmp = target.with_name(target.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for block in blobs:
            fh.write(block)
    os.replace(tmp, target)
    return target


def load_bundle(path, expected_kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    target = resolve_store_path(path)
    try:
        raw = target.read_bytes()
    except OSError as exc:
        raise BundleError(f"cannot read bundle {target}: {exc}") from exc
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise BundleError(f"not a model bundle: {target}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise BundleError(f"unsupported bundle version {version} (expected {VERSION})")
    (header_len,) = struct.unpack_from("<Q", raw, 8)
    try:
        header = json.loads(raw[16:16 + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BundleError(f"corrupt bundle header in {target}: {exc}") from exc
    kind = header.get("kind")
    if expected_kind is not None and kind != expected_kind:
        raise BundleError(f"expected a {expected_kind} bundle, got {kind!r}")
    blob_start = 16 + header_len
    arrays = {}
    for entry in header.get("arrays", ()):
        start = blob_start + entry["offset"]
        stop = start + entry["nbytes"]
        if stop > len(raw):
            raise BundleError(f"truncated bundle: {target}")
        arr = np.frombuffer(raw[start:stop], dtype=entry["dtype"])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return header, arrays


def check_schema_hash(expected: str, found: str, context: str) -> None:
    """Refuse mismatched schema lineages with both hash prefixes visible."""
    if expected != found:
        raise BundleError(
            f"schema hash mismatch for {context}: "
            f"expected {expected[:12]}, found {found[:12]}"
        )


# -- schema -------------------------------------------------------------

def save_schema_bundle(path, schema: FeatureSchema, meta: dict | None = None) -> Path:
    payload = json.loads(schema_to_json(schema))
    body = {"schema": payload, "schema_hash": payload["hash"], "meta": meta or {}}
    return save_bundle(path, "schema", body)


def load_schema_bundle(path) -> tuple[FeatureSchema, dict]:
    header, _ = load_bundle(path, "schema")
    schema = schema_from_json(json.dumps(header["schema"]))
    return schema, header


# -- encoder ------------------------------------------------------------

def save_encoder_bundle(
    path, encoder: Encoder, schema: FeatureSchema | None = None, meta: dict | None = None
) -> Path:
    """Persist the trunk; passing the schema embeds it so the bundle can
    featurize raw plans on its own."""
    layers = []
    arrays: dict[str, np.ndarray] = {}
    for i, layer in enumerate(encoder.trunk.layers):
        layers.append({"layer_norm": layer.apply_layer_norm, "relu": layer.apply_relu})
        arrays[f"layer{i}_W"] = layer.W
        arrays[f"layer{i}_b"] = layer.b
        if layer.apply_layer_norm:
            arrays[f"layer{i}_gain"] = layer.gain
            arrays[f"layer{i}_beta"] = layer.beta
    body = {
        "schema_hash": encoder.schema_digest,
        "embedding_dim": encoder.embedding_dim,
        "pre_activation": encoder.pre_activation,
        "layers": layers,
        "meta": meta or {},
    }
    if schema is not None:
        payload = json.loads(schema_to_json(schema))
        check_schema_hash(encoder.schema_digest, payload["hash"], "embedded schema")
        body["schema"] = payload
    return save_bundle(path, "encoder", body, arrays)


def bundle_schema(header: dict) -> FeatureSchema | None:
    """Rebuild the schema embedded in a bundle header, if any."""
    if "schema" not in header:
        return None
    return schema_from_json(json.dumps(header["schema"]))


def load_encoder_bundle(path) -> tuple[Encoder, dict]:
    header, arrays = load_bundle(path, "encoder")
    layers = []
    for i, spec in enumerate(header["layers"]):
        ln = bool(spec["layer_norm"])
        layers.append(
            nn.DenseLayer(
                W=arrays[f"layer{i}_W"],
                b=arrays[f"layer{i}_b"],
                apply_layer_norm=ln,
                apply_relu=bool(spec["relu"]),
                gain=arrays[f"layer{i}_gain"] if ln else None,
                beta=arrays[f"layer{i}_beta"] if ln else None,
            )
        )
    encoder = Encoder(
        trunk=nn.Network(layers),
        embedding_dim=int(header["embedding_dim"]),
        schema_digest=header["schema_hash"],
        pre_activation=bool(header["pre_activation"]),
    )
    return encoder, header


# -- reducers -----------------------------------------------------------

def save_pca_bundle(path, model: PcaModel, schema_hash: str, meta: dict | None = None) -> Path:
    arrays = {
        "mean": model.mean,
        "components": model.components,
        "explained_variance": model.explained_variance,
    }
    body = {"schema_hash": schema_hash, "meta": meta or {}}
    return save_bundle(path, "pca", body, arrays)


def load_pca_bundle(path) -> tuple[PcaModel, dict]:
    header, arrays = load_bundle(path, "pca")
    model = PcaModel(arrays["mean"], arrays["components"], arrays["explained_variance"])
    return model, header


def save_fa_bundle(path, model: FaModel, schema_hash: str, meta: dict | None = None) -> Path:
    body = {
        "schema_hash": schema_hash,
        "dim": model.dim,
        "clusters": [list(c) for c in model.clusters],
        "meta": meta or {},
    }
    return save_bundle(path, "fa", body)


def load_fa_bundle(path) -> tuple[FaModel, dict]:
    header, _ = load_bundle(path, "fa")
    clusters = tuple(tuple(int(i) for i in c) for c in header["clusters"])
    model = FaModel(clusters=clusters, dim=int(header["dim"]))
    return model, header


# -- classifiers --------------------------------------------------------

def save_classifier_bundle(path, clf: Classifier, meta: dict | None = None) -> Path:
    arrays: dict[str, np.ndarray] = {}
    extra: dict = {}
    if clf.kind in ("logreg", "linsvm"):
        arrays["W"] = clf.params["W"]
        arrays["b"] = clf.params["b"]
    elif clf.kind == "knn":
        arrays["X"] = clf.params["X"]
        arrays["y"] = clf.params["y"]
        extra["k"] = clf.params["k"]
    elif clf.kind == "rf":
        extra["trees"] = clf.params["trees"]
    elif clf.kind == "dummy":
        extra["majority"] = clf.params["majority"]
    else:
        raise BundleError(f"unknown classifier kind {clf.kind!r}")
    prov = None
    if clf.provenance is not None:
        prov = {"kind": clf.provenance.kind, "digest": clf.provenance.digest}
    body = {
        "model": clf.kind,
        "classes": list(clf.classes),
        "dim": clf.dim,
        "provenance": prov,
        "extra": extra,
        "meta": meta or {},
    }
    return save_bundle(path, "classifier", body, arrays)


def load_classifier_bundle(path) -> tuple[Classifier, dict]:
    header, arrays = load_bundle(path, "classifier")
    kind = header["model"]
    extra = header.get("extra", {})
    if kind in ("logreg", "linsvm"):
        params = {"W": arrays["W"], "b": arrays["b"]}
    elif kind == "knn":
        params = {"X": arrays["X"], "y": arrays["y"].astype(np.intp), "k": int(extra["k"])}
    elif kind == "rf":
        params = {"trees": extra["trees"]}
    elif kind == "dummy":
        params = {"majority": int(extra["majority"])}
    else:
        raise BundleError(f"unknown classifier kind {kind!r}")
    prov = None
    if header.get("provenance"):
        prov = FeatProvenance(header["provenance"]["kind"], header["provenance"].get("digest"))
    clf = Classifier(kind, tuple(header["classes"]), int(header["dim"]), params, prov)
    return clf, header
