from dataclasses import replace

import numpy as np
import pytest

from opembed import nn
from opembed.errors import SchemaError
from opembed.featurize import build_schema, encode, extract_triples
from opembed.hourglass import (
    DEFAULT_HIDDEN,
    Encoder,
    HourglassSpec,
    build,
    cut_off,
    embed,
    embed_corpus,
    predict_children,
    project_2d,
    train_embedding,
)
from opembed.plans import walk_operators
from opembed.synth import SynthConfig, generate


@pytest.fixture(scope="module")
def sorted_corpus():
    """Every join is a MergeJoin and every MergeJoin child is Sort-wrapped,
    with wrappers passing numerics through so structure is the only signal."""
    cfg = replace(
        SynthConfig(),
        n_queries=150,
        seed=11,
        join_kind_weights=(1.0, 0.0, 0.0),
        merge_join_sort_prob=1.0,
        wrapper_pass_through=True,
    )
    return generate(cfg)


@pytest.fixture(scope="module")
def sorted_run(sorted_corpus):
    schema = build_schema(sorted_corpus)
    triples = extract_triples(schema, sorted_corpus)
    spec = HourglassSpec(
        schema.total_dim, hidden_dims=(64, 32), embedding_dim=16, seed=0
    )
    enet = build(spec, schema)
    enet, trace = train_embedding(enet, triples, nn.SgdConfig(epochs=80, seed=0))
    return schema, enet, trace


def test_build_layer_dims_follow_spec(schema60):
    d = schema60.total_dim
    enet = build(HourglassSpec(d), schema60)
    dims = [d, *DEFAULT_HIDDEN, 32]
    assert [l.W.shape for l in enet.trunk.layers] == [
        (dout, din) for din, dout in zip(dims, dims[1:])
    ]
    for layer in enet.trunk.layers:
        assert layer.apply_layer_norm and layer.apply_relu
    for head in (enet.head1, enet.head2):
        assert len(head.layers) == 1
        assert head.layers[0].W.shape == (d, 32)
        assert not head.layers[0].apply_layer_norm
        assert not head.layers[0].apply_relu


def test_build_small_embedding_dim(schema60):
    spec = HourglassSpec(schema60.total_dim, hidden_dims=(64, 32), embedding_dim=8)
    enet = build(spec, schema60)
    x = np.zeros(schema60.total_dim)
    assert nn.predict(enet.trunk, x).shape == (8,)


def test_build_rejects_embedding_wider_than_trunk():
    with pytest.raises(ValueError):
        HourglassSpec(300, embedding_dim=64)
    with pytest.raises(ValueError):
        HourglassSpec(300, embedding_dim=100)


def test_build_rejects_schema_dim_mismatch(schema60):
    spec = HourglassSpec(schema60.total_dim + 1, hidden_dims=(64, 32), embedding_dim=8)
    with pytest.raises(ValueError, match="total_dim"):
        build(spec, schema60)


def test_training_recovers_sort_context(sorted_corpus, sorted_run):
    schema, enet, _ = sorted_run
    type_slots = {
        s.name.split("=", 1)[1]: i
        for i, s in enumerate(schema.slots)
        if s.name.startswith("node_type=")
    }
    assert "Sort" in type_slots
    mj = np.stack(
        [
            encode(schema, item.node)
            for item in walk_operators(sorted_corpus)
            if item.node.node_type == "MergeJoin"
        ]
    )
    assert len(mj) > 100
    for probs in predict_children(enet, mj):
        mass = {t: probs[:, i].mean() for t, i in type_slots.items()}
        others = [v for t, v in mass.items() if t != "Sort"]
        assert mass["Sort"] > max(others)


def test_training_halves_initial_loss():
    corpus = generate(SynthConfig(n_queries=420, seed=5))
    schema = build_schema(corpus)
    triples = extract_triples(schema, corpus)[:2000]
    assert len(triples) == 2000
    spec = HourglassSpec(
        schema.total_dim, hidden_dims=(64, 32), embedding_dim=16, seed=0
    )
    enet = build(spec, schema)
    # full-batch descent so the epoch-1 entry is the pre-update loss
    cfg = nn.SgdConfig(
        epochs=100, seed=0, learning_rate=0.1, momentum=0.9, batch_size=2000
    )
    _, trace = train_embedding(enet, triples, cfg)
    assert len(trace) == 100
    assert trace[-1] < 0.5 * trace[0]


def test_zero_epochs_leaves_network_at_init(schema60, corpus60):
    triples = extract_triples(schema60, corpus60)
    spec = HourglassSpec(schema60.total_dim, hidden_dims=(48, 40), embedding_dim=8)
    fresh = build(spec, schema60)
    trained, trace = train_embedding(
        build(spec, schema60), triples, nn.SgdConfig(epochs=0)
    )
    assert trace == []
    for a, b in zip(fresh.trunk.layers, trained.trunk.layers):
        assert np.array_equal(a.W, b.W) and np.array_equal(a.b, b.b)
    assert np.array_equal(fresh.head1.layers[0].W, trained.head1.layers[0].W)
    assert np.array_equal(fresh.head2.layers[0].W, trained.head2.layers[0].W)


def test_train_rejects_empty_and_mismatched_triples(
    schema60, corpus60, sorted_run
):
    spec = HourglassSpec(schema60.total_dim, hidden_dims=(48, 40), embedding_dim=8)
    enet = build(spec, schema60)
    with pytest.raises(ValueError, match="triples"):
        train_embedding(enet, [], nn.SgdConfig(epochs=1))
    other_schema, other_net, _ = sorted_run
    assert other_schema.total_dim != schema60.total_dim
    triples = extract_triples(schema60, corpus60)
    with pytest.raises(ValueError, match="dim"):
        train_embedding(other_net, triples, nn.SgdConfig(epochs=1))


def test_cut_off_reproduces_trunk_activation(sorted_run, rng):
    schema, enet, _ = sorted_run
    encoder = cut_off(enet)
    X = rng.normal(size=(40, schema.total_dim))
    direct = nn.predict(enet.trunk, X)
    assert np.array_equal(encoder(X), direct)
    again = cut_off(enet)
    assert np.array_equal(again(X), direct)


def test_cut_off_default_embedding_dim(schema60):
    enet = build(HourglassSpec(schema60.total_dim), schema60)
    encoder = cut_off(enet)
    assert encoder.embedding_dim == 32
    assert encoder(np.zeros(schema60.total_dim)).shape == (32,)


def test_cut_off_detaches_from_later_training(schema60, corpus60, rng):
    spec = HourglassSpec(schema60.total_dim, hidden_dims=(48, 40), embedding_dim=8)
    enet = build(spec, schema60)
    encoder = cut_off(enet)
    X = rng.normal(size=(5, schema60.total_dim))
    before = encoder(X).copy()
    triples = extract_triples(schema60, corpus60)[:200]
    train_embedding(enet, triples, nn.SgdConfig(epochs=1, seed=7))
    assert np.array_equal(encoder(X), before)


def test_cut_off_pre_activation_strips_final_norm(sorted_run, rng):
    schema, enet, _ = sorted_run
    post = cut_off(enet)
    pre = cut_off(enet, pre_activation=True)
    X = rng.normal(size=(60, schema.total_dim))
    post_out = post(X)
    pre_out = pre(X)
    assert (post_out >= 0).all()
    assert (pre_out < 0).any()
    last = enet.trunk.layers[-1]
    manual = nn.predict(nn.Network(enet.trunk.layers[:-1]), X) @ last.W.T + last.b
    assert np.allclose(pre_out, manual, atol=1e-12)


def test_embed_zero_vector_is_finite(sorted_run):
    schema, enet, _ = sorted_run
    encoder = cut_off(enet)
    e = embed(encoder, schema, np.zeros(schema.total_dim))
    assert e.shape == (encoder.embedding_dim,)
    assert np.isfinite(e).all()


def test_embed_is_pure(sorted_corpus, sorted_run):
    schema, enet, _ = sorted_run
    encoder = cut_off(enet)
    node = sorted_corpus.records[0].root
    assert np.array_equal(
        embed(encoder, schema, node), embed(encoder, schema, node)
    )


def test_embed_rejects_foreign_schema(sorted_run, corpus60):
    schema, enet, _ = sorted_run
    encoder = cut_off(enet)
    other = build_schema(corpus60)
    with pytest.raises(SchemaError, match="schema"):
        embed(encoder, other, np.zeros(other.total_dim))


def test_embed_corpus_rows_and_ids(sorted_corpus, sorted_run):
    schema, enet, _ = sorted_run
    encoder = cut_off(enet)
    ds = embed_corpus(encoder, schema, sorted_corpus)
    n_ops = sum(1 for _ in walk_operators(sorted_corpus))
    assert len(ds) == n_ops
    assert ds.embeddings.shape == (n_ops, encoder.embedding_dim)
    assert ds.labels is None
    first = sorted_corpus.records[0]
    n_first = sum(1 for it in walk_operators(sorted_corpus) if it.record is first)
    assert ds.ids[0] == f"{first.query_id}#0"
    assert ds.ids[n_first - 1] == f"{first.query_id}#{n_first - 1}"
    assert ds.ids[n_first].endswith("#0")
    assert (ds.query_index[:n_first] == 0).all()


def test_embed_corpus_labelers(sorted_corpus, sorted_run):
    schema, enet, _ = sorted_run
    encoder = cut_off(enet)
    by_call = embed_corpus(
        encoder, schema, sorted_corpus, labeler=lambda it: it.node.node_type
    )
    seq = [it.node.node_type for it in walk_operators(sorted_corpus)]
    by_seq = embed_corpus(encoder, schema, sorted_corpus, labeler=seq)
    assert by_call.labels == by_seq.labels == seq
    with pytest.raises(ValueError, match="labels"):
        embed_corpus(encoder, schema, sorted_corpus, labeler=seq[:-1])


def _mean_dist(P, Q):
    return np.sqrt(((P[:, None, :] - Q[None, :, :]) ** 2).sum(-1)).mean()


def test_embeddings_cluster_by_node_type(sorted_corpus, sorted_run):
    schema, enet, _ = sorted_run
    encoder = cut_off(enet)
    ds = embed_corpus(
        encoder, schema, sorted_corpus, labeler=lambda it: it.node.node_type
    )
    lab = np.array(ds.labels)
    a = ds.embeddings[lab == "SeqScan"][:150]
    b = ds.embeddings[lab == "MergeJoin"][:150]
    assert len(a) > 20 and len(b) > 20
    intra = 0.5 * (_mean_dist(a, a) + _mean_dist(b, b))
    inter = _mean_dist(a, b)
    assert intra < inter


def test_logreg_on_embeddings_tracks_head_accuracy(sorted_corpus, sorted_run):
    """Retraining just the last layer: a logistic regression on encoder
    outputs should reach within 2 points of the head's own accuracy on the
    first-child node-type target."""
    from opembed.classifiers import make_labeled_set, predict as clf_predict, train_logreg

    schema, enet, _ = sorted_run
    slot_list = sorted(
        (
            (i, s.name.split("=", 1)[1])
            for i, s in enumerate(schema.slots)
            if s.name.startswith("node_type=")
        )
    )
    idxs = [i for i, _ in slot_list]
    names = [t for _, t in slot_list]
    items = [it for it in walk_operators(sorted_corpus) if it.child1 is not None]
    X = np.stack([encode(schema, it.node) for it in items])
    truth = [it.child1.node_type for it in items]
    p1, _ = predict_children(enet, X)
    head_pred = [names[int(np.argmax(p1[r, idxs]))] for r in range(len(items))]
    head_acc = np.mean([a == b for a, b in zip(head_pred, truth)])
    E = cut_off(enet)(X)
    clf = train_logreg(make_labeled_set(E, truth), seed=0)
    lr_acc = np.mean([a == b for a, b in zip(clf_predict(clf, E), truth)])
    assert lr_acc >= head_acc - 0.02


def test_project_2d_shape(sorted_corpus, sorted_run):
    schema, enet, _ = sorted_run
    ds = embed_corpus(cut_off(enet), schema, sorted_corpus)
    P = project_2d(ds)
    assert P.shape == (len(ds), 2)


def test_project_2d_preserves_distances_of_planar_data(rng):
    X = rng.normal(size=(50, 2)) @ np.array([[2.0, 0.3], [0.1, 1.5]])
    P = project_2d(X)
    dx = np.sqrt(((X[:, None] - X[None, :]) ** 2).sum(-1))
    dp = np.sqrt(((P[:, None] - P[None, :]) ** 2).sum(-1))
    assert np.allclose(dx, dp, atol=1e-6)


def test_project_2d_keeps_planted_clusters(rng):
    a = rng.normal(size=(60, 16)) * 0.3
    b = rng.normal(size=(60, 16)) * 0.3 + 2.0
    P = project_2d(np.vstack([a, b]))
    pa, pb = P[:60], P[60:]
    intra = 0.5 * (_mean_dist(pa, pa) + _mean_dist(pb, pb))
    inter = _mean_dist(pa, pb)
    assert intra < inter
