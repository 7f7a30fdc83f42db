"""Command-line front end.

One config file per command (strict flat key/value format, see config.py)
with ``--set key=value`` overrides. Every command writes into a fresh or
existing run directory whose artifacts are checksummed in a manifest, and is
idempotent given identical config and seed. Exit codes: 0 success, 2 missing
input artifact, 3 config parse error, 1 anything else.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

import numpy as np

from .baseline import sweep_mask_percent, permutation_importance, global_mask_from_scores
from .config import Field, load_config, parse_grid, parse_hidden
from .errors import ConfigError, EmbmaskError
from .evaluate import (
    RunReport,
    accuracy,
    bound_terms,
    emg_masks,
    export_embeddings,
    export_masks,
)
from .mask import MaskGenConfig
from .nn import Mlp, load_params, save_params, split_model
from .rundir import RunDirectory
from .synthbench import (
    BenchmarkSpec,
    DomainDataset,
    generate_benchmark,
    load_csv_dataset,
    load_oracle,
    save_csv_dataset,
    save_oracle,
)
from .train import TrainConfig, train_emg, train_erm

EXIT_OK = 0
EXIT_MISSING_ARTIFACT = 2
EXIT_CONFIG_ERROR = 3


class MissingArtifact(EmbmaskError):
    pass


# -- schemas -----------------------------------------------------------------

_COMMON = {
    "seed": Field(int, required=True),
    "out_dir": Field(str, required=True),
}

_BENCH = {
    "benchmark.num_classes": Field(int, 5),
    "benchmark.d_shared": Field(int, 8),
    "benchmark.d_specific": Field(int, 8),
    "benchmark.num_train_domains": Field(int, 3),
    "benchmark.samples_per_domain": Field(int, 1000),
    "benchmark.unseen_samples": Field(int, 1000),
    "benchmark.spurious_strength": Field(float, 0.9),
    "benchmark.noise_sigma": Field(float, 0.5),
    "benchmark.mixing": Field(bool, False),
}

_TRAIN = {
    "train.batch_size": Field(int, 64),
    "train.learning_rate": Field(float, 1e-3),
    "train.max_epochs": Field(int, 80),
    "train.patience": Field(int, 10),
    "train.val_fraction": Field(float, 0.2),
    "train.hard_target": Field(bool, False),
}

_MASK = {
    "mask.tau": Field(float, 0.1),
    "mask.inference_mode": Field(str, "noise_free"),
    "mask.sample_count": Field(int, 8),
    "mask.clamp_eps": Field(float, 1e-12),
}

_BASE = {
    "data.dir": Field(str, required=True),
    "base.model": Field(str, ""),
    "base.split_index": Field(int, -1),  # -1: last linear layer is predictor
}

SCHEMAS: dict[str, dict[str, Field]] = {
    "gen-data": {**_COMMON, **_BENCH},
    "train-erm": {
        **_COMMON,
        "data.dir": Field(str, required=True),
        "model.hidden": Field(str, "64"),
        **_TRAIN,
    },
    "train-emg": {
        **_COMMON,
        **_BASE,
        "emg.hidden": Field(str, "32"),
        # Short fit on purpose: trained to convergence the generator's
        # objective is minimized by the keep-everything mask, so the
        # filtering benefit lives in the early epochs.
        "emg.max_epochs": Field(int, 3),
        **_TRAIN,
        **_MASK,
    },
    "eval": {
        **_COMMON,
        **_BASE,
        "eval.mode": Field(str, "none"),
        "emg.model": Field(str, ""),
        "eval.mask_percent": Field(float, 50.0),
        "eval.repeats": Field(int, 5),
        **_MASK,
    },
    "sweep-global": {
        **_COMMON,
        **_BASE,
        "sweep.grid": Field(str, ",".join(str(p) for p in range(0, 95, 5))),
        "sweep.repeats": Field(int, 5),
    },
    "bound-check": {
        **_COMMON,
        **_BASE,
        "emg.model": Field(str, ""),
        "bound.distance": Field(str, "both"),
        **_MASK,
    },
    "export-embeddings": {
        **_COMMON,
        **_BASE,
        "export.which": Field(str, "unseen"),
        "eval.mode": Field(str, "none"),
        "emg.model": Field(str, ""),
        "eval.mask_percent": Field(float, 50.0),
        "eval.repeats": Field(int, 5),
        **_MASK,
    },
}


# -- shared helpers ------------------------------------------------------------


def _require_path(path: str, what: str) -> str:
    if not path:
        raise MissingArtifact(f"{what} not configured")
    if not os.path.exists(path):
        raise MissingArtifact(f"{what} not found: {path}")
    return path


def _require_model(prefix: str, what: str) -> str:
    if not prefix:
        raise MissingArtifact(f"{what} not configured")
    for suffix in (".manifest", ".params"):
        if not os.path.exists(prefix + suffix):
            raise MissingArtifact(f"{what} not found: {prefix}{suffix}")
    return prefix


def _load_data_dir(data_dir: str):
    _require_path(data_dir, "data directory")
    train_paths = sorted(glob.glob(os.path.join(data_dir, "train_domain_*.csv")))
    unseen_path = os.path.join(data_dir, "unseen.csv")
    oracle_path = os.path.join(data_dir, "oracle.json")
    if not train_paths or not os.path.exists(unseen_path):
        raise MissingArtifact(f"no benchmark CSVs in {data_dir}")
    oracle = load_oracle(oracle_path) if os.path.exists(oracle_path) else None

    def load(path: str) -> DomainDataset:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        feats = [c for c in header if c.startswith("f")]
        data = load_csv_dataset(path, feats, "label", "domain" if "domain" in header else None)
        data.oracle = oracle
        return data

    return [load(p) for p in train_paths], load(unseen_path), oracle


def _load_split(cfg):
    prefix = _require_model(cfg["base.model"], "base model")
    store = load_params(prefix)
    store.freeze()
    model = Mlp.from_store(store)
    idx = cfg["base.split_index"]
    return split_model(model, None if idx < 0 else idx)


def _snapshot(run: RunDirectory, cfg: dict) -> None:
    lines = [f"{k} = {cfg[k]}" for k in sorted(cfg)]
    run.write_text("config.txt", "\n".join(lines) + "\n")


def _mask_cfg(cfg) -> MaskGenConfig:
    return MaskGenConfig(
        tau=cfg["mask.tau"],
        inference_mode=cfg["mask.inference_mode"],
        sample_count=cfg["mask.sample_count"],
        clamp_eps=cfg["mask.clamp_eps"],
    )


def _train_cfg(cfg, seed: int, max_epochs_key: str = "train.max_epochs") -> TrainConfig:
    return TrainConfig(
        batch_size=cfg["train.batch_size"],
        learning_rate=cfg["train.learning_rate"],
        max_epochs=cfg[max_epochs_key],
        patience=cfg["train.patience"],
        val_fraction=cfg["train.val_fraction"],
        seed=seed,
        hard_target=cfg["train.hard_target"],
    )


# -- commands -------------------------------------------------------------------


def cmd_gen_data(cfg) -> int:
    spec = BenchmarkSpec(
        num_classes=cfg["benchmark.num_classes"],
        d_shared=cfg["benchmark.d_shared"],
        d_specific=cfg["benchmark.d_specific"],
        num_train_domains=cfg["benchmark.num_train_domains"],
        samples_per_domain=cfg["benchmark.samples_per_domain"],
        unseen_samples=cfg["benchmark.unseen_samples"],
        spurious_strength=cfg["benchmark.spurious_strength"],
        noise_sigma=cfg["benchmark.noise_sigma"],
        mixing=cfg["benchmark.mixing"],
        seed=cfg["seed"],
    )
    train, unseen, oracle = generate_benchmark(spec)
    run = RunDirectory(cfg["out_dir"])
    _snapshot(run, cfg)
    for d in train:
        name = f"train_domain_{d.domain_index}.csv"
        save_csv_dataset(d, run.file(name))
        run.register(name)
    save_csv_dataset(unseen, run.file("unseen.csv"))
    save_oracle(oracle, run.file("oracle.json"))
    run.register("unseen.csv", "oracle.json")
    run.finalize()
    return EXIT_OK


def cmd_train_erm(cfg) -> int:
    train_data, _unseen, _oracle = _load_data_dir(cfg["data.dir"])
    run = RunDirectory(cfg["out_dir"])
    _snapshot(run, cfg)
    tc = _train_cfg(cfg, cfg["seed"])
    hidden = parse_hidden(cfg["model.hidden"])
    dim = train_data[0].dim
    n_classes = int(max(d.labels.max() for d in train_data)) + 1
    model, trace = train_erm(tc, train_data, [dim, *hidden, n_classes])
    save_params(model.store, run.file("base_model"))
    trace.to_csv(run.file("erm_trace.csv"))
    run.register("base_model.manifest", "base_model.params", "erm_trace.csv")
    run.finalize()
    return EXIT_OK


def cmd_train_emg(cfg) -> int:
    split = _load_split(cfg)
    train_data, _unseen, _oracle = _load_data_dir(cfg["data.dir"])
    run = RunDirectory(cfg["out_dir"])
    _snapshot(run, cfg)
    hidden = parse_hidden(cfg["emg.hidden"])
    gen = Mlp(
        [train_data[0].dim, *hidden, split.embedding_dim],
        prefix="g.",
        seed=cfg["seed"] + 1,
    )
    tc = _train_cfg(cfg, cfg["seed"], max_epochs_key="emg.max_epochs")
    gen, trace = train_emg(split, gen, train_data, _mask_cfg(cfg), tc)
    save_params(gen.store, run.file("emg_model"))
    trace.to_csv(run.file("emg_trace.csv"))
    run.register("emg_model.manifest", "emg_model.params", "emg_trace.csv")
    run.finalize()
    return EXIT_OK


def cmd_eval(cfg) -> int:
    split = _load_split(cfg)
    train_data, unseen, _oracle = _load_data_dir(cfg["data.dir"])
    mode = cfg["eval.mode"]
    if mode not in ("none", "global", "emg"):
        raise ConfigError(f"unknown eval mode {mode!r}")
    gen = None
    if mode == "emg":
        gen_store = load_params(_require_model(cfg["emg.model"], "EMG model"))
        gen = Mlp.from_store(gen_store, prefix="g.")
    run = RunDirectory(cfg["out_dir"])
    _snapshot(run, cfg)

    global_mask = None
    if mode == "global":
        rng = np.random.default_rng(np.random.SeedSequence((cfg["seed"], 0x6B)))
        report = permutation_importance(split, train_data, cfg["eval.repeats"], rng)
        global_mask = global_mask_from_scores(report.scores, cfg["eval.mask_percent"])

    def masked_accuracy(data: DomainDataset) -> float:
        if mode == "none":
            return accuracy(split, data)
        if mode == "global":
            return accuracy(split, data, global_mask)
        masks = emg_masks(gen, data.features, _mask_cfg(cfg), seed=cfg["seed"])
        return accuracy(split, data, masks)

    report = RunReport(seeds=[cfg["seed"]], config_echo={k: str(v) for k, v in cfg.items()})
    for d in train_data:
        report.per_domain_mean[f"train_domain_{d.domain_index}"] = masked_accuracy(d)
        report.per_domain_stderr[f"train_domain_{d.domain_index}"] = 0.0
    pooled = DomainDataset(
        features=np.concatenate([d.features for d in train_data]),
        labels=np.concatenate([d.labels for d in train_data]),
        domain_index=-1,
    )
    report.per_domain_mean["train_pooled"] = masked_accuracy(pooled)
    report.per_domain_stderr["train_pooled"] = 0.0
    report.per_domain_mean["unseen"] = masked_accuracy(unseen)
    report.per_domain_stderr["unseen"] = 0.0
    report.to_json(run.file("report.json"))
    run.register("report.json")
    run.finalize()
    return EXIT_OK


def cmd_sweep_global(cfg) -> int:
    split = _load_split(cfg)
    train_data, unseen, _oracle = _load_data_dir(cfg["data.dir"])
    run = RunDirectory(cfg["out_dir"])
    _snapshot(run, cfg)
    rng = np.random.default_rng(np.random.SeedSequence((cfg["seed"], 0x6B)))
    table = sweep_mask_percent(
        split,
        train_data,
        unseen,
        percent_grid=parse_grid(cfg["sweep.grid"]),
        repeats=cfg["sweep.repeats"],
        rng=rng,
    )
    table.to_csv(run.file("sweep.csv"))
    run.register("sweep.csv")
    run.finalize()
    return EXIT_OK


def cmd_bound_check(cfg) -> int:
    split = _load_split(cfg)
    _train_data, unseen, oracle = _load_data_dir(cfg["data.dir"])
    if oracle is None:
        raise MissingArtifact(f"oracle.json missing in {cfg['data.dir']}")
    gen_store = load_params(_require_model(cfg["emg.model"], "EMG model"))
    gen = Mlp.from_store(gen_store, prefix="g.")
    run = RunDirectory(cfg["out_dir"])
    _snapshot(run, cfg)

    kinds = ("L1", "L2") if cfg["bound.distance"] == "both" else (cfg["bound.distance"],)
    z = split.encode_np(unseen.features)
    masks = emg_masks(gen, unseen.features, _mask_cfg(cfg), seed=cfg["seed"])
    reports = {k: bound_terms(split, oracle, z, masks, k).to_dict() for k in kinds}
    run.write_text("bound.json", json.dumps(reports, indent=1, sort_keys=True) + "\n")
    run.finalize()
    return EXIT_OK


def cmd_export_embeddings(cfg) -> int:
    split = _load_split(cfg)
    train_data, unseen, _oracle = _load_data_dir(cfg["data.dir"])
    mode = cfg["eval.mode"]
    gen = None
    if mode == "emg":
        gen_store = load_params(_require_model(cfg["emg.model"], "EMG model"))
        gen = Mlp.from_store(gen_store, prefix="g.")
    run = RunDirectory(cfg["out_dir"])
    _snapshot(run, cfg)

    if cfg["export.which"] == "train":
        datasets = train_data
    elif cfg["export.which"] == "unseen":
        datasets = [unseen]
    else:
        raise ConfigError(f"export.which must be train or unseen")

    global_mask = None
    if mode == "global":
        rng = np.random.default_rng(np.random.SeedSequence((cfg["seed"], 0x6B)))
        report = permutation_importance(split, train_data, cfg["eval.repeats"], rng)
        global_mask = global_mask_from_scores(report.scores, cfg["eval.mask_percent"])
    elif mode not in ("none", "emg"):
        raise ConfigError(f"unknown eval mode {mode!r}")

    for i, data in enumerate(datasets):
        name = f"embeddings_{data.domain_index}.csv"
        masks = None
        if mode == "global":
            masks = global_mask
        elif mode == "emg":
            masks = emg_masks(gen, data.features, _mask_cfg(cfg), seed=cfg["seed"])
            mask_name = f"masks_{data.domain_index}.csv"
            export_masks(masks, run.file(mask_name))
            run.register(mask_name)
        export_embeddings(split, data, run.file(name), masks)
        run.register(name)
    run.finalize()
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-erm": cmd_train_erm,
    "train-emg": cmd_train_emg,
    "eval": cmd_eval,
    "sweep-global": cmd_sweep_global,
    "bound-check": cmd_bound_check,
    "export-embeddings": cmd_export_embeddings,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="embmask",
        description="Embedding-mask domain generalization experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="flat key=value config file")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key",
        )
    args = parser.parse_args(argv)

    try:
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            overrides[key.strip()] = value.strip()
        cfg = load_config(args.config, SCHEMAS[args.command], overrides)
        if "EMBMASK_OUT_DIR" in os.environ:
            cfg["out_dir"] = os.environ["EMBMASK_OUT_DIR"]
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f'error code=3 msg="{exc}"', file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except MissingArtifact as exc:
        print(f'error code=2 msg="{exc}"', file=sys.stderr)
        return EXIT_MISSING_ARTIFACT
    except EmbmaskError as exc:
        print(f'error code=1 msg="{exc}"', file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
