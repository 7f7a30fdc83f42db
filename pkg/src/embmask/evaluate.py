"""Accuracy evaluation, generalization-bound diagnostics, and CSV export.

The bound check is the empirical counterpart of the triangle-inequality
argument for linear predictors: with the embedding split additively into
zero-padded shared and specific parts (z = z_sh + z_sp) and W the
predictor's linear part,

    d(Wz + b, W(m*z) + b) <= d(W z_sh, W(m*z_sh)) + d(W z_sp, W(m*z_sp))

must hold per sample for any metric d. The per-part terms use W without the
bias: linearity c(a+b) = c(a) + c(b) only holds for the strictly linear map,
and including the bias would double-count it.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, UsageError
from .mask import MaskGenConfig, drop_probabilities, inference_mask
from .nn import Mlp, SplitModel
from .synthbench import DomainDataset, Oracle

Array = np.ndarray

DISTANCE_KINDS = ("L2", "L1")


def _rowdist(a: Array, b: Array, kind: str) -> Array:
    if kind == "L2":
        return np.linalg.norm(a - b, axis=1)
    if kind == "L1":
        return np.abs(a - b).sum(axis=1)
    raise UsageError(f"unknown distance kind {kind!r}")


def emg_masks(
    generator: Mlp, x: Array, cfg: MaskGenConfig, seed: int = 0
) -> Array:
    """Per-sample inference masks from the trained generator."""
    p = drop_probabilities(generator, x)
    rng = (
        np.random.default_rng(np.random.SeedSequence((seed, 0xE7)))
        if cfg.inference_mode == "sample_avg"
        else None
    )
    return inference_mask(p, cfg, rng)


def predict_logits(split: SplitModel, x: Array, masks: Array | None = None) -> Array:
    z = split.encode_np(x)
    if masks is not None:
        if masks.ndim == 1:
            masks = np.broadcast_to(masks, z.shape)
        z = z * masks
    return split.predict_np(z)


def accuracy(split: SplitModel, data: DomainDataset, masks: Array | None = None) -> float:
    """Fraction of argmax-correct predictions; argmax ties resolve to the
    lowest class index. ``masks`` is per-sample (n x d), a single global
    mask (d,), or None for the unmasked model."""
    if data.n == 0:
        raise UsageError("accuracy of empty dataset is undefined")
    logits = predict_logits(split, data.features, masks)
    preds = np.argmax(logits, axis=1)
    return float(np.mean(preds == data.labels))


@dataclass
class BoundReport:
    distance_kind: str
    ge: float
    term_sh: float
    term_sp: float
    violation_count: int
    n: int

    # Expectations over the unseen domain are estimated by the sample mean
    # over its finite sample; the integral itself is not computable.

    def to_dict(self) -> dict:
        return {
            "distance_kind": self.distance_kind,
            "ge": self.ge,
            "term_sh": self.term_sh,
            "term_sp": self.term_sp,
            "violation_count": self.violation_count,
            "n": self.n,
        }


def bound_terms(
    split: SplitModel,
    oracle: Oracle,
    z: Array,
    masks: Array,
    distance_kind: str = "L2",
) -> BoundReport:
    """Empirical generalization-error bound terms for an affine predictor.

    Requires the oracle shared/specific dimension lists (benchmark with
    mixing disabled, identity-encoder setup).
    """
    if distance_kind not in DISTANCE_KINDS:
        raise UsageError(f"unknown distance kind {distance_kind!r}")
    if not split.predictor_is_affine:
        raise ContractError("bound diagnostics require an affine predictor")
    if oracle is None or oracle.shared_dims is None or oracle.specific_dims is None:
        raise ContractError("bound diagnostics require the oracle dim decomposition")
    w, b = split.predictor_affine_params()
    z = np.asarray(z, dtype=np.float64)
    masks = np.asarray(masks, dtype=np.float64)
    if masks.shape != z.shape:
        raise UsageError(f"masks shape {masks.shape} != embeddings {z.shape}")

    sh = np.zeros_like(z)
    sh[:, oracle.shared_dims] = z[:, oracle.shared_dims]
    sp = np.zeros_like(z)
    sp[:, oracle.specific_dims] = z[:, oracle.specific_dims]

    ge = _rowdist(z @ w + b, (masks * z) @ w + b, distance_kind)
    t_sh = _rowdist(sh @ w, (masks * sh) @ w, distance_kind)
    t_sp = _rowdist(sp @ w, (masks * sp) @ w, distance_kind)
    violations = int(np.sum(ge > t_sh + t_sp + 1e-9))
    return BoundReport(
        distance_kind=distance_kind,
        ge=float(ge.mean()),
        term_sh=float(t_sh.mean()),
        term_sp=float(t_sp.mean()),
        violation_count=violations,
        n=len(z),
    )


def export_embeddings(
    split: SplitModel,
    data: DomainDataset,
    path: str,
    masks: Array | None = None,
) -> None:
    """CSV rows: sample id, label, domain index, then the (masked) embedding."""
    z = split.encode_np(data.features)
    if masks is not None:
        if masks.ndim == 1:
            masks = np.broadcast_to(masks, z.shape)
        z = z * masks + 0.0  # + 0.0 normalizes -0.0 in the text output
    d = z.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "domain"] + [f"e{i}" for i in range(d)])
        for i in range(data.n):
            writer.writerow(
                [i, int(data.labels[i]), data.domain_index]
                + [f"{v:.17g}" for v in z[i]]
            )


def export_masks(masks: Array, path: str) -> None:
    """One row per sample: sample id followed by the d mask values."""
    d = masks.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + [f"m{i}" for i in range(d)])
        for i, row in enumerate(masks):
            writer.writerow([i] + [f"{v:.17g}" for v in row])


@dataclass
class RunReport:
    per_domain_mean: dict[str, float] = field(default_factory=dict)
    per_domain_stderr: dict[str, float] = field(default_factory=dict)
    seeds: list[int] = field(default_factory=list)
    config_echo: dict = field(default_factory=dict)
    artifacts: list[str] = field(default_factory=list)

    def to_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(
                {
                    "per_domain_mean": self.per_domain_mean,
                    "per_domain_stderr": self.per_domain_stderr,
                    "seeds": self.seeds,
                    "config": self.config_echo,
                    "artifacts": self.artifacts,
                },
                fh,
                indent=1,
                sort_keys=True,
            )


def aggregate_runs(reports: list[dict[str, float]], seeds: list[int]) -> RunReport:
    """Mean and standard error (sample stddev / sqrt(#seeds)) per domain key."""
    if not reports:
        raise UsageError("need at least one report")
    keys = set(reports[0])
    for r in reports[1:]:
        if set(r) != keys:
            raise UsageError("reports cover different domain sets")
    out = RunReport(seeds=list(seeds))
    n = len(reports)
    for key in sorted(keys):
        vals = np.array([r[key] for r in reports])
        out.per_domain_mean[key] = float(vals.mean())
        out.per_domain_stderr[key] = (
            float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        )
    return out
