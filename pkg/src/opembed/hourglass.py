"""Hourglass embedding network: a trunk that narrows to the embedding layer
plus two single-affine prediction heads, one per child.

Training minimizes head1 loss against child 1 plus head2 loss against
child 2, with missing children as zero vectors (default) or skipped rows
(masked mode). After training the heads are cut off and the trunk is the
operator encoder; the published embedding is the post-LN/ReLU activation
of the embedding layer (a pre-activation variant is available).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import SchemaError, TrainingDivergedError
from .featurize import (
    FeatureSchema,
    TrainingTriple,
    encode,
    schema_hash,
    stack_triples,
)
from .plans import Corpus, PlanNode, walk_operators

DEFAULT_HIDDEN = (256, 256, 128, 128, 64, 64)


@dataclass(frozen=True)
class HourglassSpec:
    input_dim: int
    hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN
    embedding_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.input_dim <= 0 or self.embedding_dim <= 0:
            raise ValueError("dimensions must be positive")
        if any(d <= 0 for d in self.hidden_dims):
            raise ValueError("hidden dims must be positive")
        if self.hidden_dims and self.embedding_dim >= min(self.hidden_dims):
            raise ValueError(
                f"embedding_dim {self.embedding_dim} must be smaller than the "
                f"narrowest hidden layer ({min(self.hidden_dims)})"
            )


@dataclass
class EmbeddingNetwork:
    trunk: nn.Network       # input -> ... -> embedding, LN+ReLU throughout
    head1: nn.Network       # embedding -> input_dim, plain affine
    head2: nn.Network
    loss_spec: nn.LossSpec
    schema_digest: str
    spec: HourglassSpec


def build(spec: HourglassSpec, schema: FeatureSchema) -> EmbeddingNetwork:
    """Assemble the trunk and both heads with seeded He initialization."""
    if spec.input_dim != schema.total_dim:
        raise ValueError(
            f"spec input_dim {spec.input_dim} != schema total_dim {schema.total_dim}"
        )
    dims = [spec.input_dim, *spec.hidden_dims, spec.embedding_dim]
    layers = []
    for i, (din, dout) in enumerate(zip(dims, dims[1:])):
        rng = np.random.default_rng([spec.seed, 101, i])
        layers.append(nn.dense_layer(rng, din, dout, layer_norm=True, relu=True))
    heads = []
    for h in range(2):
        rng = np.random.default_rng([spec.seed, 202, h])
        heads.append(
            nn.Network([nn.dense_layer(rng, spec.embedding_dim, spec.input_dim)])
        )
    return EmbeddingNetwork(
        trunk=nn.Network(layers),
        head1=heads[0],
        head2=heads[1],
        loss_spec=nn.LossSpec(schema.segments()),
        schema_digest=schema_hash(schema),
        spec=spec,
    )


def _head_pass(
    head: nn.Network,
    spec: nn.LossSpec,
    E: np.ndarray,
    C: np.ndarray,
    present: np.ndarray,
    masked: bool,
) -> tuple[float, list[nn.LayerGrads], np.ndarray]:
    """One head's loss, parameter grads, and gradient w.r.t. the embedding.

    In masked mode rows whose child is absent are dropped from this head's
    loss; the returned loss keeps whole-batch mean semantics.
    """
    n = len(E)
    trace = nn.forward(head, E)
    pred = trace.activations[-1]
    if masked:
        m = int(present.sum())
        if m == 0:
            zero_grads = [
                nn.LayerGrads(np.zeros_like(l.W), np.zeros_like(l.b))
                for l in head.layers
            ]
            return 0.0, zero_grads, np.zeros_like(E)
        sub_loss = nn.loss(spec, pred[present], C[present])
        dout = np.zeros_like(pred)
        dout[present] = nn.output_grad(spec, pred[present], C[present]) * (m / n)
        head_loss = sub_loss * (m / n)
    else:
        head_loss = nn.loss(spec, pred, C)
        dout = nn.output_grad(spec, pred, C)
    grads, dE = nn.backprop_layers(head, trace, dout)
    return head_loss, grads, dE


def train_embedding(
    enet: EmbeddingNetwork,
    triples: list[TrainingTriple],
    cfg: nn.SgdConfig,
    masked: bool = False,
) -> tuple[EmbeddingNetwork, list[float]]:
    """Train trunk and heads jointly to predict both children; returns the
    network and the mean batch loss per epoch."""
    if not triples:
        raise ValueError("no training triples")
    X, C1, C2, mask = stack_triples(triples)
    if X.shape[1] != enet.spec.input_dim:
        raise ValueError(
            f"triples have dim {X.shape[1]}, network wants {enet.spec.input_dim}"
        )
    rng = np.random.default_rng(cfg.seed)
    spec = enet.loss_spec
    velocity = None
    if cfg.momentum > 0:
        velocity = {
            "trunk": nn.zero_velocity(enet.trunk),
            "h1": nn.zero_velocity(enet.head1),
            "h2": nn.zero_velocity(enet.head2),
        }
    trace_losses: list[float] = []
    for epoch in range(cfg.epochs):
        batch_losses = []
        for b, idx in enumerate(nn.iter_batches(len(X), cfg, rng)):
            trunk_trace = nn.forward(enet.trunk, X[idx])
            E = trunk_trace.activations[-1]
            l1, g1, dE1 = _head_pass(enet.head1, spec, E, C1[idx], mask[idx, 0], masked)
            l2, g2, dE2 = _head_pass(enet.head2, spec, E, C2[idx], mask[idx, 1], masked)
            total = l1 + l2
            if not np.isfinite(total):
                raise TrainingDivergedError(epoch, b)
            gt, _ = nn.backprop_layers(enet.trunk, trunk_trace, dE1 + dE2)
            lr, mom = cfg.learning_rate, cfg.momentum
            nn.sgd_step(enet.trunk, gt, lr, mom, velocity["trunk"] if velocity else None)
            nn.sgd_step(enet.head1, g1, lr, mom, velocity["h1"] if velocity else None)
            nn.sgd_step(enet.head2, g2, lr, mom, velocity["h2"] if velocity else None)
            batch_losses.append(total)
        trace_losses.append(float(np.mean(batch_losses)))
    return enet, trace_losses


def predict_children(
    enet: EmbeddingNetwork, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Decoded head outputs (softmax groups normalized, booleans sigmoided)."""
    E = nn.predict(enet.trunk, x)
    y1 = nn.predict(enet.head1, E)
    y2 = nn.predict(enet.head2, E)
    return (
        nn.decode_probabilities(enet.loss_spec, y1),
        nn.decode_probabilities(enet.loss_spec, y2),
    )


@dataclass
class Encoder:
    """The trained trunk, detached from the prediction heads."""

    trunk: nn.Network
    embedding_dim: int
    schema_digest: str
    pre_activation: bool = False

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return nn.predict(self.trunk, x)


def _copy_layer(layer: nn.DenseLayer, strip_activation: bool = False) -> nn.DenseLayer:
    if strip_activation:
        return nn.DenseLayer(layer.W.copy(), layer.b.copy(), False, False)
    return nn.DenseLayer(
        layer.W.copy(),
        layer.b.copy(),
        layer.apply_layer_norm,
        layer.apply_relu,
        None if layer.gain is None else layer.gain.copy(),
        None if layer.beta is None else layer.beta.copy(),
    )


def cut_off(enet: EmbeddingNetwork, pre_activation: bool = False) -> Encoder:
    """Drop the heads; copy the trunk so later training cannot leak in.

    With pre_activation the embedding layer's LN and ReLU are stripped and
    the raw affine output is the embedding.
    """
    layers = [_copy_layer(l) for l in enet.trunk.layers[:-1]]
    layers.append(_copy_layer(enet.trunk.layers[-1], strip_activation=pre_activation))
    return Encoder(
        trunk=nn.Network(layers),
        embedding_dim=enet.spec.embedding_dim,
        schema_digest=enet.schema_digest,
        pre_activation=pre_activation,
    )


def _check_schema(encoder: Encoder, schema: FeatureSchema) -> None:
    digest = schema_hash(schema)
    if digest != encoder.schema_digest:
        raise SchemaError(
            f"encoder was trained against schema {encoder.schema_digest[:12]}..., "
            f"got {digest[:12]}..."
        )


def embed(encoder: Encoder, schema: FeatureSchema, node) -> np.ndarray:
    """Embed one operator (a PlanNode or an already-encoded vector)."""
    _check_schema(encoder, schema)
    x = encode(schema, node) if isinstance(node, PlanNode) else np.asarray(node)
    return encoder(x)


@dataclass
class EmbeddedDataset:
    """One row per operator: embedding, optional label, provenance."""

    embeddings: np.ndarray           # (n, embedding_dim)
    labels: list | None
    ids: list[str]                   # "<query_id>#<pre-order index>"
    query_index: np.ndarray          # (n,) index into corpus.records

    def __len__(self) -> int:
        return len(self.embeddings)


def embed_corpus(
    encoder: Encoder,
    schema: FeatureSchema,
    corpus: Corpus,
    labeler=None,
) -> EmbeddedDataset:
    """Embed every operator in walk order.

    labeler may be a callable taking a WalkItem, or a sequence of labels
    aligned with walk order, or None.
    """
    _check_schema(encoder, schema)
    items = list(walk_operators(corpus))
    X = np.stack([encode(schema, item.node) for item in items])
    E = encoder(X)
    qid_to_index = {id(rec): i for i, rec in enumerate(corpus.records)}
    query_index = np.empty(len(items), dtype=np.intp)
    ids = []
    counters: dict[int, int] = {}
    for row, item in enumerate(items):
        qi = qid_to_index[id(item.record)]
        query_index[row] = qi
        k = counters.get(qi, 0)
        counters[qi] = k + 1
        ids.append(f"{item.record.query_id}#{k}")
    if labeler is None:
        labels = None
    elif callable(labeler):
        labels = [labeler(item) for item in items]
    else:
        labels = list(labeler)
        if len(labels) != len(items):
            raise ValueError(
                f"{len(labels)} labels for {len(items)} operators"
            )
    return EmbeddedDataset(E, labels, ids, query_index)


def project_2d(dataset) -> np.ndarray:
    """PCA projection of the embeddings (or any row matrix) to 2 columns."""
    from .reducers import fit_pca, transform_pca

    X = dataset.embeddings if isinstance(dataset, EmbeddedDataset) else np.asarray(dataset)
    model = fit_pca(X, 2)
    return transform_pca(model, X)
