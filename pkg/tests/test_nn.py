"""Models, parameter store, encoder/predictor split, and serialization."""

import hashlib

import numpy as np
import pytest

from embmask import Mlp, ParamStore, load_params, save_params, split_model
from embmask import tensor as T
from embmask.errors import ContractError, CorruptFileError, ShapeMismatchError, UsageError
from embmask.train import AdamState, optimizer_step

# sha256 of Mlp([4,3,2], seed=123).forward_np(linspace input), frozen at first run
GOLDEN_FORWARD_SHA = "65d07fe41994939cf434d4d8644d62e6bcf054279fd8c0e8c8457838c293cfe2"


def test_zero_weight_model_gives_zero_logits():
    model = Mlp([3, 2])
    for name in model.store.names():
        model.store.set_value(name, np.zeros_like(model.store[name]))
    out = model.forward_np(np.random.default_rng(0).normal(size=(4, 3)))
    np.testing.assert_array_equal(out, np.zeros((4, 2)))


def test_single_linear_layer_is_affine():
    model = Mlp([3, 2], seed=5)
    w, b = model.store["w0"], model.store["b0"]
    x = np.random.default_rng(1).normal(size=(6, 3))
    np.testing.assert_array_equal(model.forward_np(x), x @ w + b)


def test_forward_matches_golden_snapshot_bitwise():
    x = np.linspace(-1.0, 1.0, 12).reshape(3, 4)
    out = Mlp([4, 3, 2], seed=123).forward_np(x)
    assert hashlib.sha256(out.tobytes()).hexdigest() == GOLDEN_FORWARD_SHA


def test_forward_tensor_matches_numpy_bitwise():
    model = Mlp([4, 5, 3], seed=9)
    x = np.random.default_rng(2).normal(size=(7, 4))
    out_t = model.forward(T.Tensor(x), model.store.leaves()).data
    assert (out_t == model.forward_np(x)).all()


def test_forward_rejects_wrong_width():
    with pytest.raises(ShapeMismatchError):
        Mlp([4, 2]).forward_np(np.ones((3, 5)))


def test_bad_layer_sizes_rejected():
    with pytest.raises(UsageError):
        Mlp([4])
    with pytest.raises(UsageError):
        Mlp([4, 0, 2])


# -- ParamStore ---------------------------------------------------------------


def test_duplicate_param_name_rejected():
    store = ParamStore()
    store.add("w", np.ones(2))
    with pytest.raises(UsageError):
        store.add("w", np.ones(2))


def test_freeze_is_idempotent_and_total():
    model = Mlp([2, 2])
    assert not model.store.frozen
    model.store.freeze()
    model.store.freeze()
    assert model.store.frozen
    assert model.store.trainable_names() == []


def test_optimizer_step_rejects_frozen_params():
    model = Mlp([2, 2])
    model.store.freeze()
    grads = {"w0": np.ones((2, 2))}
    with pytest.raises(ContractError):
        optimizer_step(model.store, grads, AdamState(), 1e-3)


def test_checksum_tracks_values():
    model = Mlp([2, 2], seed=3)
    before = model.store.checksum()
    assert before == model.store.checksum()
    model.store.set_value("b0", np.array([1.0, 0.0]))
    assert model.store.checksum() != before


# -- split --------------------------------------------------------------------


def test_split_three_layer_at_two_has_affine_predictor():
    model = Mlp([4, 5, 6, 2], seed=0)
    split = split_model(model, 2)
    assert split.predictor_is_affine
    assert split.embedding_dim == 6


def test_default_split_keeps_last_layer_as_predictor():
    split = split_model(Mlp([4, 5, 2], seed=0))
    assert split.split_index == 1
    assert split.predictor_is_affine


def test_split_composition_identity_exact():
    model = Mlp([4, 6, 6, 3], seed=11)
    x = np.random.default_rng(4).normal(size=(100, 4))
    full = model.forward_np(x)
    for idx in range(model.n_layers):
        split = split_model(model, idx)
        assert (split.predict_np(split.encode_np(x)) == full).all()


def test_split_zero_is_identity_encoder():
    model = Mlp([4, 3], seed=2)
    split = split_model(model, 0)
    x = np.random.default_rng(5).normal(size=(8, 4))
    assert (split.encode_np(x) == x).all()


def test_split_out_of_range_rejected():
    model = Mlp([4, 3, 2])
    with pytest.raises(UsageError):
        split_model(model, 2)
    with pytest.raises(UsageError):
        split_model(model, -1)


def test_affine_params_only_for_single_layer_predictor():
    model = Mlp([4, 5, 3, 2], seed=0)
    with pytest.raises(ContractError):
        split_model(model, 1).predictor_affine_params()
    w, b = split_model(model, 2).predictor_affine_params()
    assert w.shape == (3, 2) and b.shape == (2,)


# -- serialization --------------------------------------------------------------


def test_save_load_round_trip_bitwise(tmp_path):
    model = Mlp([3, 4, 2], seed=7)
    model.store.freeze()
    path = str(tmp_path / "model")
    save_params(model.store, path)
    loaded = load_params(path)
    assert loaded.names() == model.store.names()
    for name in model.store.names():
        assert (loaded[name] == model.store[name]).all()
        assert loaded.is_trainable(name) == model.store.is_trainable(name)
    # save -> load -> save reproduces identical bytes
    save_params(loaded, str(tmp_path / "again"))
    for suffix in (".manifest", ".params"):
        a = (tmp_path / ("model" + suffix)).read_bytes()
        b = (tmp_path / ("again" + suffix)).read_bytes()
        assert a == b


def test_save_empty_store(tmp_path):
    path = str(tmp_path / "empty")
    save_params(ParamStore(), path)
    assert (tmp_path / "empty.params").read_bytes() == b""
    assert load_params(path).names() == []


def test_truncated_payload_raises(tmp_path):
    model = Mlp([3, 2], seed=1)
    path = str(tmp_path / "model")
    save_params(model.store, path)
    payload = (tmp_path / "model.params").read_bytes()
    (tmp_path / "model.params").write_bytes(payload[:-8])
    with pytest.raises(CorruptFileError):
        load_params(path)


def test_missing_files_raise(tmp_path):
    with pytest.raises(CorruptFileError):
        load_params(str(tmp_path / "nothing"))
