"""Accuracy, bound diagnostics, exports, and multi-seed aggregation."""

import numpy as np
import pytest

from embmask import DomainDataset, Mlp, accuracy, aggregate_runs, bound_terms, split_model
from embmask.errors import ContractError, UsageError
from embmask.evaluate import export_embeddings, export_masks, predict_logits
from embmask.synthbench import Oracle


def _affine_split(w, b, split_index=0):
    model = Mlp([w.shape[0], w.shape[1]], seed=0)
    model.store.set_value("w0", w)
    model.store.set_value("b0", b)
    return split_model(model, split_index)


def _oracle(shared, specific):
    return Oracle(
        shared_dims=list(shared),
        specific_dims=list(specific),
        class_means=np.zeros((2, len(shared))),
        domain_maps={},
        unseen_map=np.zeros((len(specific), len(shared))),
    )


def test_accuracy_label_revealing_logits():
    rng = np.random.default_rng(0)
    labels = rng.integers(3, size=30)
    x = np.eye(3)[labels]  # identity predictor reads the label off directly
    split = _affine_split(np.eye(3), np.zeros(3))
    assert accuracy(split, DomainDataset(x, labels, 0)) == 1.0


def test_accuracy_constant_predictor_is_chance_level():
    rng = np.random.default_rng(1)
    n, c = 2000, 4
    labels = rng.integers(c, size=n)
    split = _affine_split(np.zeros((3, c)), np.array([9.0, 0.0, 0.0, 0.0]))
    acc = accuracy(split, DomainDataset(rng.normal(size=(n, 3)), labels, 0))
    assert abs(acc - 1.0 / c) <= 3.0 * np.sqrt((1 / c) * (1 - 1 / c) / n)


def test_accuracy_all_ones_mask_identical_to_none():
    rng = np.random.default_rng(2)
    split = _affine_split(rng.normal(size=(4, 3)), rng.normal(size=3))
    data = DomainDataset(rng.normal(size=(50, 4)), rng.integers(3, size=50), 0)
    assert accuracy(split, data) == accuracy(split, data, np.ones(4))
    assert (predict_logits(split, data.features) == predict_logits(split, data.features, np.ones(4))).all()


def test_accuracy_empty_data_rejected():
    split = _affine_split(np.ones((2, 2)), np.zeros(2))
    with pytest.raises(UsageError):
        accuracy(split, DomainDataset(np.ones((0, 2)), np.zeros(0, dtype=int), 0))


def test_accuracy_sample_order_invariant():
    rng = np.random.default_rng(3)
    split = _affine_split(rng.normal(size=(3, 2)), rng.normal(size=2))
    x = rng.normal(size=(40, 3))
    y = rng.integers(2, size=40)
    perm = rng.permutation(40)
    assert accuracy(split, DomainDataset(x, y, 0)) == accuracy(split, DomainDataset(x[perm], y[perm], 0))


# -- bound diagnostics ------------------------------------------------------------


def test_bound_all_ones_mask_is_zero():
    rng = np.random.default_rng(4)
    split = _affine_split(rng.normal(size=(6, 3)), rng.normal(size=3))
    z = rng.normal(size=(20, 6))
    report = bound_terms(split, _oracle(range(3), range(3, 6)), z, np.ones_like(z))
    assert report.ge == 0.0 and report.term_sh == 0.0 and report.term_sp == 0.0
    assert report.violation_count == 0


@pytest.mark.parametrize("kind", ["L2", "L1"])
def test_bound_holds_on_random_instances(kind):
    rng = np.random.default_rng(5)
    oracle = _oracle(range(3), range(3, 6))
    for _ in range(50):
        split = _affine_split(rng.normal(size=(6, 4)), rng.normal(size=4))
        z = rng.normal(size=(10, 6))
        masks = rng.uniform(size=(10, 6))
        report = bound_terms(split, oracle, z, masks, kind)
        assert report.violation_count == 0


def test_bound_rejects_non_affine_predictor():
    model = Mlp([4, 5, 2], seed=0)
    split = split_model(model, 0)  # predictor = two layers
    z = np.ones((3, 4))
    with pytest.raises(ContractError):
        bound_terms(split, _oracle(range(2), range(2, 4)), z, np.ones((3, 4)))


def test_bound_rejects_missing_oracle_dims():
    rng = np.random.default_rng(6)
    split = _affine_split(rng.normal(size=(4, 2)), rng.normal(size=2))
    oracle = _oracle(range(2), range(2, 4))
    oracle.shared_dims = None
    with pytest.raises(ContractError):
        bound_terms(split, oracle, np.ones((2, 4)), np.ones((2, 4)))


def test_bound_rejects_bad_distance_or_shapes():
    rng = np.random.default_rng(7)
    split = _affine_split(rng.normal(size=(4, 2)), rng.normal(size=2))
    oracle = _oracle(range(2), range(2, 4))
    with pytest.raises(UsageError):
        bound_terms(split, oracle, np.ones((2, 4)), np.ones((2, 4)), "L3")
    with pytest.raises(UsageError):
        bound_terms(split, oracle, np.ones((2, 4)), np.ones((3, 4)))


# -- exports ------------------------------------------------------------------------


def test_export_embeddings_rows_and_zero_mask(tmp_path):
    rng = np.random.default_rng(8)
    split = _affine_split(rng.normal(size=(3, 2)), rng.normal(size=2))
    data = DomainDataset(rng.normal(size=(7, 3)), rng.integers(2, size=7), 4)
    path = tmp_path / "emb.csv"
    export_embeddings(split, data, str(path), masks=np.zeros(3))
    lines = path.read_text().splitlines()
    assert len(lines) == 8
    assert lines[0] == "id,label,domain,e0,e1,e2"
    for line in lines[1:]:
        assert line.split(",")[3:] == ["0", "0", "0"]


def test_export_embeddings_deterministic_bytes(tmp_path):
    rng = np.random.default_rng(9)
    split = _affine_split(rng.normal(size=(3, 2)), rng.normal(size=2))
    data = DomainDataset(rng.normal(size=(5, 3)), rng.integers(2, size=5), 0)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    export_embeddings(split, data, str(a))
    export_embeddings(split, data, str(b))
    assert a.read_bytes() == b.read_bytes()


def test_export_masks_layout(tmp_path):
    masks = np.random.default_rng(10).uniform(size=(4, 3))
    path = tmp_path / "masks.csv"
    export_masks(masks, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "id,m0,m1,m2"
    assert len(lines) == 5


# -- aggregation -----------------------------------------------------------------------


def test_aggregate_single_run():
    out = aggregate_runs([{"unseen": 0.7}], [0])
    assert out.per_domain_mean["unseen"] == 0.7
    assert out.per_domain_stderr["unseen"] == 0.0


def test_aggregate_two_runs_hand_oracle():
    out = aggregate_runs([{"unseen": 0.8}, {"unseen": 0.9}], [0, 1])
    np.testing.assert_allclose(out.per_domain_mean["unseen"], 0.85, atol=1e-15)
    np.testing.assert_allclose(out.per_domain_stderr["unseen"], 0.05, atol=1e-12)


def test_aggregate_identical_runs_zero_stderr():
    out = aggregate_runs([{"a": 0.5}] * 4, [0, 1, 2, 3])
    assert out.per_domain_stderr["a"] == 0.0


def test_aggregate_mismatched_domains_rejected():
    with pytest.raises(UsageError):
        aggregate_runs([{"a": 0.5}, {"b": 0.5}], [0, 1])
    with pytest.raises(UsageError):
        aggregate_runs([], [])
