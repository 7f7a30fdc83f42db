"""Feed-forward models, the encoder/predictor split, freezing, serialization.

An ``Mlp`` is a stack of linear layers with relu between them and an identity
output. Parameters live in a ``ParamStore`` keyed by name with per-parameter
trainable flags; freezing flips the flag and the store's checksum makes the
freeze contract checkable (frozen bytes must survive a whole training run).
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import tensor as T
from .errors import ContractError, CorruptFileError, ShapeMismatchError, UsageError

Array = np.ndarray


@dataclass
class _Param:
    value: Array
    trainable: bool = True


class ParamStore:
    """Named parameter storage with trainable flags."""

    def __init__(self):
        self._params: dict[str, _Param] = {}

    def add(self, name: str, value: Array, trainable: bool = True) -> None:
        if name in self._params:
            raise UsageError(f"duplicate parameter name {name!r}")
        self._params[name] = _Param(np.asarray(value, dtype=np.float64), trainable)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Array:
        return self._params[name].value

    def set_value(self, name: str, value: Array) -> None:
        p = self._params[name]
        if p.value.shape != value.shape:
            raise ShapeMismatchError(
                f"set_value {name}: {p.value.shape} vs {value.shape}"
            )
        p.value = np.asarray(value, dtype=np.float64)

    def names(self) -> list[str]:
        return list(self._params)

    def trainable_names(self) -> list[str]:
        return [n for n, p in self._params.items() if p.trainable]

    def is_trainable(self, name: str) -> bool:
        return self._params[name].trainable

    def freeze(self) -> None:
        """Mark every parameter non-trainable. Idempotent."""
        for p in self._params.values():
            p.trainable = False

    @property
    def frozen(self) -> bool:
        return all(not p.trainable for p in self._params.values())

    @property
    def num_params(self) -> int:
        return sum(p.value.size for p in self._params.values())

    def leaves(self) -> dict[str, T.Tensor]:
        """Fresh leaf tensors for one forward/backward pass."""
        return {
            n: T.Tensor(p.value, requires_grad=p.trainable)
            for n, p in self._params.items()
        }

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self._params):
            p = self._params[name]
            h.update(name.encode())
            h.update(str(p.value.shape).encode())
            h.update(np.ascontiguousarray(p.value).tobytes())
        return h.hexdigest()

    def state_copy(self) -> dict[str, Array]:
        return {n: p.value.copy() for n, p in self._params.items()}

    def load_state(self, state: Mapping[str, Array]) -> None:
        for n, v in state.items():
            self.set_value(n, v.copy())


class Mlp:
    """Linear layers with relu on hidden outputs, identity on the last.

    Weight ``w{i}`` has shape (fan_in, fan_out); bias ``b{i}`` shape (fan_out,).
    Weights init uniform(-a, a), a = sqrt(6 / (fan_in + fan_out)); biases zero.
    """

    def __init__(
        self,
        layer_sizes: list[int],
        store: ParamStore | None = None,
        prefix: str = "",
        seed: int = 0,
        init: bool = True,
    ):
        if len(layer_sizes) < 2 or any(s < 1 for s in layer_sizes):
            raise UsageError(f"bad layer sizes {layer_sizes}")
        self.layer_sizes = list(layer_sizes)
        self.prefix = prefix
        self.store = store if store is not None else ParamStore()
        if init:
            rng = np.random.default_rng(seed)
            for i, (fi, fo) in enumerate(zip(layer_sizes, layer_sizes[1:])):
                a = np.sqrt(6.0 / (fi + fo))
                self.store.add(f"{prefix}w{i}", rng.uniform(-a, a, size=(fi, fo)))
                self.store.add(f"{prefix}b{i}", np.zeros(fo))

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @classmethod
    def from_store(cls, store: ParamStore, prefix: str = "") -> "Mlp":
        sizes: list[int] = []
        i = 0
        while f"{prefix}w{i}" in store:
            w = store[f"{prefix}w{i}"]
            if not sizes:
                sizes.append(w.shape[0])
            sizes.append(w.shape[1])
            i += 1
        if len(sizes) < 2:
            raise UsageError(f"no layers with prefix {prefix!r} in store")
        return cls(sizes, store=store, prefix=prefix, init=False)

    def _apply(
        self, x: T.Tensor, leaves: Mapping[str, T.Tensor], start: int, stop: int
    ) -> T.Tensor:
        h = x
        for i in range(start, stop):
            w = leaves[f"{self.prefix}w{i}"]
            b = leaves[f"{self.prefix}b{i}"]
            h = T.add_rowvec(T.matmul(h, w), b)
            if i < self.n_layers - 1:
                h = T.relu(h)
        return h

    def forward(self, x: T.Tensor, leaves: Mapping[str, T.Tensor]) -> T.Tensor:
        if x.shape[1] != self.layer_sizes[0]:
            raise ShapeMismatchError(
                f"input width {x.shape[1]} != model input dim {self.layer_sizes[0]}"
            )
        return self._apply(x, leaves, 0, self.n_layers)

    def _apply_np(self, x: Array, start: int, stop: int) -> Array:
        h = np.asarray(x, dtype=np.float64)
        for i in range(start, stop):
            h = h @ self.store[f"{self.prefix}w{i}"] + self.store[f"{self.prefix}b{i}"]
            if i < self.n_layers - 1:
                h = np.maximum(h, 0.0)
        return h

    def forward_np(self, x: Array) -> Array:
        """Inference-only forward on raw arrays; matches forward() bitwise."""
        if x.shape[1] != self.layer_sizes[0]:
            raise ShapeMismatchError(
                f"input width {x.shape[1]} != model input dim {self.layer_sizes[0]}"
            )
        return self._apply_np(x, 0, self.n_layers)


@dataclass
class SplitModel:
    """A frozen model split into encoder g and predictor c at a layer boundary.

    ``split_index`` counts linear layers in the encoder; 0 means an identity
    encoder (embedding space == input space), which keeps the oracle feature
    decomposition meaningful for bound diagnostics.
    """

    model: Mlp
    split_index: int

    def __post_init__(self):
        if not (0 <= self.split_index < self.model.n_layers):
            raise UsageError(
                f"split index {self.split_index} out of range for "
                f"{self.model.n_layers}-layer model"
            )

    @property
    def embedding_dim(self) -> int:
        return self.model.layer_sizes[self.split_index]

    @property
    def predictor_is_affine(self) -> bool:
        return self.model.n_layers - self.split_index == 1

    def encode_np(self, x: Array) -> Array:
        return self.model._apply_np(x, 0, self.split_index)

    def predict_np(self, z: Array) -> Array:
        return self.model._apply_np(z, self.split_index, self.model.n_layers)

    def predict_t(self, z: T.Tensor) -> T.Tensor:
        """Predictor forward on a tensor; parameters enter as constants."""
        leaves = {
            n: T.Tensor(self.model.store[n])
            for n in self.model.store.names()
        }
        return self.model._apply(z, leaves, self.split_index, self.model.n_layers)

    def predictor_affine_params(self) -> tuple[Array, Array]:
        if not self.predictor_is_affine:
            raise ContractError("predictor is not a single linear layer")
        i = self.split_index
        return (
            self.model.store[f"{self.model.prefix}w{i}"],
            self.model.store[f"{self.model.prefix}b{i}"],
        )


def split_model(model: Mlp, split_index: int | None = None) -> SplitModel:
    """Split a model into encoder/predictor; default keeps the last linear
    layer as the predictor, so the predictor is affine."""
    if split_index is None:
        split_index = model.n_layers - 1
    return SplitModel(model, split_index)


# -- serialization -----------------------------------------------------------
#
# Two files per store: ``<path>.manifest`` (text; one key/value line per
# parameter: name, shape, byte offset, trainable flag) and ``<path>.params``
# (flat little-endian float64 payload). Round-trip is bitwise exact.


def save_params(store: ParamStore, path: str) -> None:
    lines = [f"count={len(store.names())}"]
    payload = bytearray()
    for name in store.names():
        value = store[name]
        shape = "x".join(str(s) for s in value.shape) or "scalar"
        lines.append(
            f"name={name} shape={shape} offset={len(payload)} "
            f"trainable={int(store.is_trainable(name))}"
        )
        payload += np.ascontiguousarray(value, dtype="<f8").tobytes()
    with open(path + ".manifest", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(path + ".params", "wb") as fh:
        fh.write(bytes(payload))


def load_params(path: str) -> ParamStore:
    manifest = path + ".manifest"
    payload_path = path + ".params"
    if not os.path.exists(manifest) or not os.path.exists(payload_path):
        raise CorruptFileError(f"missing parameter files at {path!r}")
    with open(manifest) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("count="):
        raise CorruptFileError(f"bad manifest header in {manifest}")
    count = int(lines[0].split("=", 1)[1])
    entries = lines[1:]
    if len(entries) != count:
        raise CorruptFileError(
            f"manifest {manifest} declares {count} entries, found {len(entries)}"
        )
    with open(payload_path, "rb") as fh:
        payload = fh.read()

    store = ParamStore()
    expected_end = 0
    for ln in entries:
        fields = dict(tok.split("=", 1) for tok in ln.split())
        name = fields["name"]
        shape = (
            ()
            if fields["shape"] == "scalar"
            else tuple(int(s) for s in fields["shape"].split("x"))
        )
        offset = int(fields["offset"])
        trainable = bool(int(fields["trainable"]))
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        if offset + nbytes > len(payload):
            raise CorruptFileError(
                f"payload {payload_path} truncated: need {offset + nbytes} bytes, "
                f"have {len(payload)}"
            )
        value = np.frombuffer(
            payload, dtype="<f8", count=nbytes // 8, offset=offset
        ).reshape(shape)
        store.add(name, value.copy(), trainable=trainable)
        expected_end = max(expected_end, offset + nbytes)
    if expected_end != len(payload):
        raise CorruptFileError(
            f"payload {payload_path} length {len(payload)} != manifest total {expected_end}"
        )
    return store
