import json

import pytest

from opembed.errors import PlanFormatError
from opembed.plans import (
    Corpus,
    PlanNode,
    QueryRecord,
    corpus_to_dict,
    iter_nodes,
    load_corpus,
    save_corpus,
    subcorpus,
    summarize,
    walk_operators,
)
from opembed.synth import SynthConfig, generate, ground_truth


def scan(rows=100.0, **kw):
    return PlanNode(node_type="SeqScan", plan_rows=rows, total_cost=rows * 0.01, **kw)


def test_load_counts_preserved(tmp_path):
    doc = {
        "queries": [
            {
                "query_id": "a",
                "plan": {
                    "node_type": "MergeJoin",
                    "plan_rows": 10,
                    "children": [
                        {"node_type": "SeqScan", "plan_rows": 5},
                        {"node_type": "SeqScan", "plan_rows": 7},
                    ],
                },
            },
            {
                "query_id": "b",
                "plan": {
                    "node_type": "Sort",
                    "plan_rows": 3,
                    "children": [{"node_type": "SeqScan", "plan_rows": 3}],
                },
            },
        ]
    }
    path = tmp_path / "two.json"
    path.write_text(json.dumps(doc))
    corpus = load_corpus(path)
    assert len(corpus) == 2
    assert len(list(walk_operators(corpus))) == 5


def test_load_empty_is_fine(tmp_path):
    path = tmp_path / "empty.json"
    path.write_text(json.dumps({"queries": []}))
    corpus = load_corpus(path)
    assert len(corpus) == 0
    assert list(walk_operators(corpus)) == []


def test_negative_cost_names_offending_node(tmp_path):
    doc = {
        "queries": [
            {
                "query_id": "a",
                "plan": {
                    "node_type": "Sort",
                    "children": [{"node_type": "SeqScan", "total_cost": -1}],
                },
            }
        ]
    }
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(PlanFormatError) as err:
        load_corpus(path)
    assert "children[0]" in str(err.value)
    assert "total_cost" in str(err.value)


def test_walk_leaf_has_no_children():
    rec = QueryRecord("q", None, scan())
    (item,) = walk_operators(Corpus([rec]))
    assert item.node.node_type == "SeqScan"
    assert item.child1 is None and item.child2 is None


def test_walk_truncates_to_first_two_children():
    node = PlanNode(node_type="Append", children=[scan(1), scan(2), scan(3)])
    items = list(walk_operators(Corpus([QueryRecord("q", None, node)])))
    top = items[0]
    assert top.child1.plan_rows == 1
    assert top.child2.plan_rows == 2
    assert len(items) == 4


def test_walk_preorder_binary_join():
    join = PlanNode(node_type="HashJoin", children=[scan(1), scan(2)])
    items = list(walk_operators(Corpus([QueryRecord("q", None, join)])))
    assert [it.node.node_type for it in items] == ["HashJoin", "SeqScan", "SeqScan"]
    assert items[0].child1 is items[1].node
    assert items[0].child2 is items[2].node


def test_summarize_chain_depth():
    chain = scan()
    for _ in range(3):
        chain = PlanNode(node_type="Sort", plan_rows=1.0, children=[chain])
    summary = summarize(Corpus([QueryRecord("q", None, chain)]))
    assert summary.n_operators == 4
    assert summary.depth_counts == {4: 1}


def test_summarize_latency_coverage_zero():
    corpus = Corpus([QueryRecord("q", None, scan())])
    assert summarize(corpus).latency_coverage == 0.0


def test_summarize_matches_generator_bookkeeping():
    cfg = SynthConfig(n_queries=80, seed=7)
    corpus = generate(cfg)
    truth = ground_truth(cfg)
    summary = summarize(corpus)
    assert summary.n_queries == truth.n_queries == 80
    assert summary.n_operators == truth.n_operators
    assert summary.operator_counts == truth.op_type_counts


def test_save_load_round_trip(tmp_path, corpus60):
    path = tmp_path / "c.json"
    save_corpus(corpus60, path)
    again = load_corpus(path)
    assert corpus_to_dict(again) == corpus_to_dict(corpus60)


def test_subcorpus_selects_in_given_order(corpus60):
    sub = subcorpus(corpus60, [5, 2, 9])
    assert [r.query_id for r in sub.records] == [
        corpus60.records[i].query_id for i in (5, 2, 9)
    ]


def test_iter_nodes_is_preorder():
    join = PlanNode(node_type="HashJoin", children=[scan(1), scan(2)])
    root = PlanNode(node_type="Aggregate", children=[join])
    types = [n.node_type for n in iter_nodes(root)]
    assert types == ["Aggregate", "HashJoin", "SeqScan", "SeqScan"]
