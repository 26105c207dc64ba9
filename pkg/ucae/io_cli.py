"""
Datasets, checkpoints and the command-line surface.

CSV datasets: header `col_0,...,col_{dim-1}[,label]`, shortest round-trip
decimals, optional trailing integer class id expanded to one-hot.

Checkpoints (UCAE-CKPT v1) are text:
    UCAE-CKPT v1 <kind>
    meta <key> <value>
    tensor <name> <rows> <cols>
    <rows x cols hexadecimal float literals>
Hex floats make every round trip bit-exact.

Usage:
    python -m ucae.io_cli gen-data --config w4.cfg --out data/
    python -m ucae.io_cli train --domain d1 --data data/d1.csv --latent prior --config w4.cfg --out d1.ckpt
    python -m ucae.io_cli eval --models d1.ckpt d2.ckpt --data data/ --checks path,global,bound --report r.csv
"""

import argparse
import json
import logging
import os
import re
import sys
import tempfile
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ucae.config import ExperimentConfig, load_config, load_environment
from ucae.domain_model import DomainModel, build_domain_model, translate
from ucae.errors import (CheckpointError, ConfigError, DatasetError, DimensionError, NumericError,
                         PreconditionError, UcaeError, UsageError)
from ucae.linalg import PRNG_ALGORITHM, Matrix, Rng, as_matrix
from ucae.metrics import (check_global_consistency, check_path_consistency, check_transport_bound,
                          cluster_agreement, latent_feature_correlation, latent_prior_test, reconstruction_report)
from ucae.nn_core import LayerSpec, Mlp
from ucae.sem_world import DomainGen, SemSpec, make_sem, sample_coupled
from ucae.training import (LOG_COLUMNS, LabeledBatch, SampleBank, TrainConfig, TrainingLog, add_domain,
                           learn_latent_alternating, train_autoencoder)

logger = logging.getLogger(__name__)

FORMAT_VERSION = "v1"
MAGIC = "UCAE-CKPT"
KINDS = ("domain_model", "sem_spec", "sample_bank")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_CHECK_FAILED = 0, 1, 2, 3

CHECKS = ("path", "global", "bound", "recon", "latent", "cluster")
REPORT_COLUMNS = ["check", "domains", "statistic", "p_value", "lhs", "gamma", "term_src", "term_dst",
                  "recon", "rhs", "holds", "passed"]
RECON_THRESHOLD = 0.02


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Rows of one domain; labels, if present, are one-hot and align with rows."""
    name: str
    rows: Matrix
    labels: Optional[Matrix] = None

    def __post_init__(self):
        self.rows = as_matrix(self.rows, f"Dataset {self.name}")
        if self.labels is not None and self.labels.shape[0] != self.rows.shape[0]:
            raise DatasetError(f"dataset {self.name}: {self.labels.shape[0]} labels for {self.rows.shape[0]} rows")

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    @property
    def class_ids(self) -> Optional[np.ndarray]:
        return None if self.labels is None else np.argmax(self.labels, axis=1)

    def as_batch(self) -> LabeledBatch:
        return LabeledBatch(self.rows, self.labels)


def one_hot(class_ids: np.ndarray, label_dim: Optional[int] = None) -> Matrix:
    class_ids = np.asarray(class_ids, dtype=int)
    width = label_dim if label_dim is not None else int(class_ids.max()) + 1
    if class_ids.min() < 0 or class_ids.max() >= width:
        raise DatasetError(f"class ids must lie in [0, {width})")
    out = np.zeros((class_ids.shape[0], width))
    out[np.arange(class_ids.shape[0]), class_ids] = 1.0
    return out


def _atomic_write(path: str, text: str):
    """Write via a temp file in the same directory, then rename over `path`."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with tempfile.NamedTemporaryFile(mode="w", dir=directory, suffix=".tmp", delete=False, newline="") as f:
        f.write(text)
        temp_file = f.name
    os.replace(temp_file, path)


def _write_frame(frame: pd.DataFrame, path: str):
    _atomic_write(path, frame.to_csv(index=False, lineterminator="\n"))


def write_csv(dataset: Dataset, path: str):
    frame = pd.DataFrame(dataset.rows, columns=[f"col_{i}" for i in range(dataset.dim)])
    if dataset.labels is not None:
        frame["label"] = dataset.class_ids
    _write_frame(frame, path)


def read_csv(path: str, label_dim: Optional[int] = None) -> Dataset:
    """
    Parse a dataset CSV.

    Args:
        path: CSV file with header `col_0,...,col_{dim-1}[,label]`.
        label_dim: Width of the one-hot labels; defaults to max class id + 1.

    Returns:
        Dataset named after the file stem
    """
    name = os.path.splitext(os.path.basename(path))[0]
    try:
        frame = pd.read_csv(path, dtype=str, na_filter=False)
    except pd.errors.EmptyDataError:
        raise DatasetError(f"{path}: missing header") from None
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise DatasetError(f"{path}: ragged row ({e})", line=int(match.group(1)) if match else None) from None

    columns = list(frame.columns)
    has_label = bool(columns) and columns[-1] == "label"
    data_columns = columns[:-1] if has_label else columns
    if not data_columns or data_columns != [f"col_{i}" for i in range(len(data_columns))]:
        raise DatasetError(f"{path}: missing header (expected col_0,...,col_{{dim-1}}[,label])", line=1)

    ragged = frame.isna().any(axis=1).to_numpy()
    if ragged.any():
        raise DatasetError(f"{path}: ragged row", line=int(np.argmax(ragged)) + 2)

    rows = np.empty((len(frame), len(data_columns)))
    for j, column in enumerate(data_columns):
        for r, text in enumerate(frame[column].tolist()):
            try:
                rows[r, j] = float(text)
            except ValueError:
                raise DatasetError(f"{path}: non-numeric field '{text}' in {column}", line=r + 2) from None
    bad = ~np.isfinite(rows).all(axis=1)
    if bad.any():
        raise DatasetError(f"{path}: non-finite value", line=int(np.argmax(bad)) + 2)

    labels = None
    if has_label:
        ids = []
        for r, text in enumerate(frame["label"].tolist()):
            try:
                ids.append(int(text))
            except ValueError:
                raise DatasetError(f"{path}: non-integer label '{text}'", line=r + 2) from None
        labels = one_hot(np.array(ids, dtype=int), label_dim) if ids else np.zeros((0, label_dim or 0))
    return Dataset(name=name, rows=rows, labels=labels)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    kind: str
    meta: Dict[str, str] = field(default_factory=dict)
    tensors: Dict[str, Matrix] = field(default_factory=dict)


def _tensor_2d(value) -> Matrix:
    arr = np.asarray(value, dtype=np.float64)
    return arr.reshape(1, -1) if arr.ndim == 1 else arr


def write_checkpoint(ckpt: Checkpoint, path: str):
    if ckpt.kind not in KINDS:
        raise CheckpointError(f"unknown checkpoint kind '{ckpt.kind}'")
    lines = [f"{MAGIC} {FORMAT_VERSION} {ckpt.kind}"]
    for key, value in ckpt.meta.items():
        text = str(value)
        if "\n" in text or " " in key:
            raise CheckpointError(f"meta {key}: keys may not contain spaces, values may not contain newlines")
        lines.append(f"meta {key} {text}")
    for name, tensor in ckpt.tensors.items():
        arr = _tensor_2d(tensor)
        lines.append(f"tensor {name} {arr.shape[0]} {arr.shape[1]}")
        for row in arr:
            lines.append(" ".join(float(v).hex() for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "r") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    if not lines:
        raise CheckpointError(f"{path}: empty checkpoint")
    header = lines[0].split()
    if len(header) != 3 or header[0] != MAGIC:
        raise CheckpointError(f"{path}: not a {MAGIC} file")
    if header[1] != FORMAT_VERSION:
        raise CheckpointError(f"{path}: version mismatch (found {header[1]}, expected {FORMAT_VERSION})")
    if header[2] not in KINDS:
        raise CheckpointError(f"{path}: unknown kind '{header[2]}'")
    ckpt = Checkpoint(kind=header[2])

    i = 1
    while i < len(lines):
        line = lines[i]
        if not line.strip():
            i += 1
            continue
        if line.startswith("meta "):
            parts = line.split(" ", 2)
            ckpt.meta[parts[1]] = parts[2] if len(parts) > 2 else ""
            i += 1
        elif line.startswith("tensor "):
            parts = line.split()
            if len(parts) != 4:
                raise CheckpointError(f"{path}: malformed tensor header '{line}'")
            name, rows, cols = parts[1], int(parts[2]), int(parts[3])
            expected = rows * cols
            values: List[float] = []
            i += 1
            while i < len(lines) and len(values) < expected and not lines[i].startswith(("tensor ", "meta ")):
                for token in lines[i].split():
                    try:
                        values.append(float.fromhex(token))
                    except ValueError:
                        raise CheckpointError(f"{path}: tensor {name}: malformed hex float '{token}'") from None
                i += 1
            if len(values) != expected:
                raise CheckpointError(f"{path}: tensor {name}: expected {expected} values, found {len(values)}")
            ckpt.tensors[name] = np.array(values, dtype=np.float64).reshape(rows, cols)
        else:
            raise CheckpointError(f"{path}: unexpected line {i + 1}: '{line[:40]}'")
    return ckpt


def _base_meta(seed: int, extra: Optional[Dict[str, str]] = None) -> Dict[str, str]:
    meta = {"prng": PRNG_ALGORITHM, "seed": str(seed)}
    meta.update(extra or {})
    return meta


def _net_tensors(prefix: str, net: Mlp) -> Dict[str, Matrix]:
    tensors = {}
    for idx, (w, b) in enumerate(zip(net.weights, net.biases)):
        tensors[f"{prefix}.w{idx}"] = w
        tensors[f"{prefix}.b{idx}"] = b.reshape(1, -1)
    return tensors


def _net_from(ckpt: Checkpoint, prefix: str) -> Mlp:
    try:
        layers = [LayerSpec.parse(text) for text in ckpt.meta[f"{prefix}.layers"].split(";")]
    except KeyError:
        raise CheckpointError(f"checkpoint lacks meta {prefix}.layers") from None
    net = Mlp(layers)
    for idx, spec in enumerate(layers):
        w = ckpt.tensors.get(f"{prefix}.w{idx}")
        b = ckpt.tensors.get(f"{prefix}.b{idx}")
        if w is None or b is None:
            raise CheckpointError(f"checkpoint lacks tensor {prefix}.w{idx} / {prefix}.b{idx}")
        if w.shape != (spec.out_dim, spec.in_dim) or b.shape != (1, spec.out_dim):
            raise CheckpointError(f"tensor {prefix}.w{idx}: shape does not match layer {spec.describe()}")
        net.weights[idx] = w.copy()
        net.biases[idx] = b.reshape(-1).copy()
    return net


def model_checkpoint(model: DomainModel, seed: int = 0, extra: Optional[Dict[str, str]] = None) -> Checkpoint:
    if not model.trainable:
        raise CheckpointError(f"model {model.domain_id}: only neural models can be checkpointed")
    meta = _base_meta(seed, extra)
    meta.update({
        "domain_id": model.domain_id,
        "obs_dim": str(model.obs_dim),
        "noise_dim": str(model.noise_dim),
        "latent_dim": str(model.latent_dim),
        "label_dim": str(model.label_dim),
    })
    tensors = {}
    for prefix, net in (("encoder", model.encoder), ("decoder", model.decoder), ("discriminator", model.discriminator)):
        meta[f"{prefix}.layers"] = ";".join(spec.describe() for spec in net.layers)
        tensors.update(_net_tensors(prefix, net))
    return Checkpoint("domain_model", meta, tensors)


def sem_checkpoint(spec: SemSpec, extra: Optional[Dict[str, str]] = None) -> Checkpoint:
    meta = _base_meta(spec.seed, extra)
    meta.update({
        "latent_dim": str(spec.latent_dim),
        "cluster_sep": repr(float(spec.cluster_sep)),
        "label_dim": str(spec.label_dim),
        "domain_ids": ",".join(spec.domain_ids),
    })
    tensors = {}
    for i, gen in enumerate(spec.domains):
        meta[f"domain.{i}.obs_dim"] = str(gen.obs_dim)
        meta[f"domain.{i}.noise_dim"] = str(gen.noise_dim)
        meta[f"domain.{i}.warp_alpha"] = float(gen.warp_alpha).hex()
        tensors[f"domain.{i}.mix"] = gen.mix
        tensors[f"domain.{i}.offset"] = gen.offset.reshape(1, -1)
    return Checkpoint("sem_spec", meta, tensors)


def bank_checkpoint(bank: SampleBank, seed: int = 0, extra: Optional[Dict[str, str]] = None) -> Checkpoint:
    meta = _base_meta(seed, extra)
    meta.update({"origin": bank.origin, "frozen": "true" if bank.frozen else "false"})
    tensors = {"samples": bank.samples}
    if bank.labels is not None:
        tensors["labels"] = bank.labels
    return Checkpoint("sample_bank", meta, tensors)


def save_checkpoint(obj, path: str, seed: int = 0, extra: Optional[Dict[str, str]] = None):
    """Persist a DomainModel, SemSpec or SampleBank."""
    if isinstance(obj, DomainModel):
        ckpt = model_checkpoint(obj, seed, extra)
    elif isinstance(obj, SemSpec):
        ckpt = sem_checkpoint(obj, extra)
    elif isinstance(obj, SampleBank):
        ckpt = bank_checkpoint(obj, seed, extra)
    else:
        raise CheckpointError(f"cannot checkpoint object of type {type(obj).__name__}")
    write_checkpoint(ckpt, path)


def _meta_int(ckpt: Checkpoint, key: str) -> int:
    try:
        return int(ckpt.meta[key])
    except (KeyError, ValueError):
        raise CheckpointError(f"checkpoint meta '{key}' is missing or not an integer") from None


def load_checkpoint(path: str, expect: Optional[str] = None):
    """
    Load a checkpoint and rebuild the object it holds.

    Args:
        path: Checkpoint file.
        expect: Required kind; a different kind raises CheckpointError.
    """
    ckpt = read_checkpoint(path)
    if expect is not None and ckpt.kind != expect:
        raise CheckpointError(f"{path}: expected a {expect} checkpoint, found {ckpt.kind}")
    if ckpt.kind == "domain_model":
        return DomainModel(
            domain_id=ckpt.meta.get("domain_id", "?"),
            obs_dim=_meta_int(ckpt, "obs_dim"),
            noise_dim=_meta_int(ckpt, "noise_dim"),
            latent_dim=_meta_int(ckpt, "latent_dim"),
            encoder=_net_from(ckpt, "encoder"),
            decoder=_net_from(ckpt, "decoder"),
            discriminator=_net_from(ckpt, "discriminator"),
            label_dim=_meta_int(ckpt, "label_dim"),
        )
    if ckpt.kind == "sem_spec":
        ids = ckpt.meta.get("domain_ids", "").split(",")
        domains = []
        for i in range(len(ids)):
            if f"domain.{i}.mix" not in ckpt.tensors or f"domain.{i}.offset" not in ckpt.tensors:
                raise CheckpointError(f"{path}: tensor domain.{i}.mix/offset missing")
            domains.append(DomainGen(
                obs_dim=_meta_int(ckpt, f"domain.{i}.obs_dim"),
                noise_dim=_meta_int(ckpt, f"domain.{i}.noise_dim"),
                mix=ckpt.tensors[f"domain.{i}.mix"],
                offset=ckpt.tensors[f"domain.{i}.offset"].reshape(-1),
                warp_alpha=float.fromhex(ckpt.meta[f"domain.{i}.warp_alpha"]),
            ))
        return SemSpec(latent_dim=_meta_int(ckpt, "latent_dim"), domains=domains,
                       seed=_meta_int(ckpt, "seed"), cluster_sep=float(ckpt.meta.get("cluster_sep", "0.0")),
                       domain_ids=ids)
    if "samples" not in ckpt.tensors:
        raise CheckpointError(f"{path}: tensor samples missing")
    bank = SampleBank(samples=ckpt.tensors["samples"], origin=ckpt.meta.get("origin", "prior"),
                      labels=ckpt.tensors.get("labels"))
    return bank.freeze() if ckpt.meta.get("frozen") == "true" else bank


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--seed", type=int, default=None, help="Override the config seed")
    parser.add_argument("--quiet", action="store_true", help="Only log warnings and errors")
    parser.add_argument("--config", default=None, help="Flat key = value experiment config")


def _labels_flag(parser: argparse.ArgumentParser):
    parser.add_argument("--ignore-labels", action="store_true", help="Train unconditioned even if the CSV has labels")
    parser.add_argument("--label-dim", type=int, default=None,
                        help="One-hot label width (default: from world.ckpt beside the data, else max id + 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ucae", description="Multi-domain translation with uncoupled autoencoders")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", help="Generate a synthetic world and its datasets")
    _common(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="Train one domain's autoencoder")
    _common(p)
    p.add_argument("--domain", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--latent", default="prior", help="'prior' or a sample-bank checkpoint")
    p.add_argument("--noise-dim", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="Training-log CSV (default: <out>.log.csv)")
    _labels_flag(p)

    p = sub.add_parser("learn-latent", help="Learn a shared latent from two domains")
    _common(p)
    for side in ("a", "b"):
        p.add_argument(f"--domain-{side}", required=True)
        p.add_argument(f"--data-{side}", required=True)
        p.add_argument(f"--noise-dim-{side}", type=int, default=None)
        p.add_argument(f"--out-{side}", required=True)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--bank-size", type=int, default=None)
    p.add_argument("--out-bank", required=True)
    _labels_flag(p)

    p = sub.add_parser("add-domain", help="Train a new domain against a frozen bank")
    _common(p)
    p.add_argument("--domain", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--noise-dim", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None)
    _labels_flag(p)

    p = sub.add_parser("translate", help="Translate a CSV from one domain to another")
    _common(p)
    p.add_argument("--src", required=True)
    p.add_argument("--dst", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="Run consistency, bound and fit checks")
    _common(p)
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--data", required=True, help="Directory written by gen-data")
    p.add_argument("--checks", default="path,global,bound,recon,latent")
    p.add_argument("--bank", default=None, help="Latent bank used as prior (default: N(0, I))")
    p.add_argument("--report", required=True)

    p = sub.add_parser("report", help="Summarize a training-log CSV")
    _common(p)
    p.add_argument("--log", required=True)
    p.add_argument("--window", type=int, default=100)
    p.add_argument("--plot", default=None, help="Write loss curves to this image")

    p = sub.add_parser("correlate", help="Correlate observed features with latent dimensions")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    return parser


def setup_logging(quiet: bool):
    env = load_environment()
    level = logging.WARNING if quiet else (env["log_level"] or "INFO").upper()
    logging.basicConfig(level=level, format="%(asctime)s - %(levelname)s - %(name)s - %(message)s", force=True)


def _resolve(args) -> Tuple[ExperimentConfig, int]:
    cfg = load_config(args.config)
    env_seed = os.getenv("UCAE_SEED")
    seed = args.seed if args.seed is not None else (int(env_seed) if env_seed else cfg.world.seed)
    cfg.world.seed = cfg.train.seed = seed
    return cfg, seed


def _echo(cfg: ExperimentConfig, command: str, args) -> Dict[str, str]:
    meta = {"command": command}
    meta["args"] = json.dumps({k: v for k, v in sorted(vars(args).items()) if k not in ("quiet",)},
                              separators=(",", ":"))
    meta.update({f"config.{k}": v for k, v in cfg.echo().items()})
    return meta


def _new_model(domain_id: str, dataset: Dataset, noise_dim: int, train: TrainConfig, seed: int) -> DomainModel:
    return build_domain_model(domain_id, dataset.dim, noise_dim, train.latent_dim,
                              Rng(seed).split(f"init-{domain_id}"),
                              encoder_hidden=train.encoder_hidden, decoder_hidden=train.decoder_hidden,
                              disc_hidden=train.disc_hidden, activation=train.activation,
                              slope=train.leaky_slope,
                              label_dim=0 if dataset.labels is None else dataset.labels.shape[1])


def label_width(data_path: str, explicit: Optional[int] = None) -> Optional[int]:
    """
    One-hot width for the labels of a dataset CSV.

    An explicit width wins; otherwise the `label_dim` recorded in the
    world.ckpt written by gen-data next to the CSV (or one directory up,
    for the paired set). None falls back to max class id + 1.
    """
    if explicit is not None:
        return explicit
    directory = os.path.dirname(os.path.abspath(data_path))
    for candidate in (directory, os.path.dirname(directory)):
        world = os.path.join(candidate, "world.ckpt")
        if os.path.exists(world):
            width = int(read_checkpoint(world).meta.get("label_dim", "0"))
            return width or None
    return None


def _training_data(path: str, args) -> Dataset:
    dataset = read_csv(path, label_width(path, args.label_dim))
    if args.ignore_labels:
        dataset.labels = None
    return dataset


def _write_log(log: TrainingLog, path: str):
    _write_frame(log.to_frame(), path)
    logger.info(f"✓ Wrote training log {path}")


def cmd_gen_data(args) -> int:
    cfg, seed = _resolve(args)
    world = cfg.world
    rng = Rng(seed)
    spec = make_sem(world.latent_dim, world.domains, world.warp_alpha, rng.split("world"),
                    offset_scale=world.offset_scale, cluster_sep=world.cluster_sep)
    samples = sample_coupled(spec, world.samples, rng.split("samples"))
    echo = _echo(cfg, "gen-data", args)
    save_checkpoint(spec, os.path.join(args.out, "world.ckpt"), extra=echo)

    label_dim = spec.label_dim or None
    for domain_id, (rows, labels) in zip(spec.domain_ids, samples.marginals(rng.split("shuffle"))):
        write_csv(Dataset(domain_id, rows, None if labels is None else one_hot(labels, label_dim)),
                  os.path.join(args.out, f"{domain_id}.csv"))
    paired = os.path.join(args.out, "paired")
    paired_labels = None if samples.labels is None else one_hot(samples.labels, label_dim)
    for domain_id, rows in zip(spec.domain_ids, samples.xs):
        write_csv(Dataset(domain_id, rows, paired_labels), os.path.join(paired, f"{domain_id}.csv"))
    write_csv(Dataset("latent", samples.z, paired_labels), os.path.join(paired, "latent.csv"))
    logger.info(f"✓ Wrote {spec.k} marginal datasets and the paired evaluation set to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, seed = _resolve(args)
    dataset = _training_data(args.data, args)
    latent = None
    if args.latent != "prior":
        latent = load_checkpoint(args.latent, expect="sample_bank")
    noise_dim = cfg.train.noise_dim if args.noise_dim is None else args.noise_dim
    model = _new_model(args.domain, dataset, noise_dim, cfg.train, seed)
    log = train_autoencoder(model, dataset.as_batch(), latent, cfg.train, Rng(seed).split(f"train-{args.domain}"),
                            progress=not args.quiet)
    save_checkpoint(model, args.out, seed, _echo(cfg, "train", args))
    _write_log(log, args.log or f"{args.out}.log.csv")
    logger.info(f"✓ Saved model {args.domain} to {args.out}")
    return EXIT_OK


def cmd_learn_latent(args) -> int:
    cfg, seed = _resolve(args)
    data_a, data_b = _training_data(args.data_a, args), _training_data(args.data_b, args)
    noise_a = cfg.train.noise_dim if args.noise_dim_a is None else args.noise_dim_a
    noise_b = cfg.train.noise_dim if args.noise_dim_b is None else args.noise_dim_b
    model_a = _new_model(args.domain_a, data_a, noise_a, cfg.train, seed)
    model_b = _new_model(args.domain_b, data_b, noise_b, cfg.train, seed)
    rounds = args.rounds or cfg.train.rounds
    bank_size = args.bank_size or cfg.train.effective_bank_size
    model_a, model_b, bank = learn_latent_alternating(model_a, model_b, data_a.as_batch(), data_b.as_batch(),
                                                      cfg.train, rounds, bank_size, Rng(seed).split("learn-latent"),
                                                      progress=not args.quiet)
    echo = _echo(cfg, "learn-latent", args)
    save_checkpoint(model_a, args.out_a, seed, echo)
    save_checkpoint(model_b, args.out_b, seed, echo)
    save_checkpoint(bank, args.out_bank, seed, echo)
    logger.info(f"✓ Learned a shared latent over {rounds} rounds; bank of {len(bank)} codes in {args.out_bank}")
    return EXIT_OK


def cmd_add_domain(args) -> int:
    cfg, seed = _resolve(args)
    if os.path.exists(args.out):
        # existing checkpoints are never overwritten, so models of other domains stay untouched
        raise UsageError(f"add-domain: {args.out} already exists; refusing to overwrite an existing model")
    bank = load_checkpoint(args.bank, expect="sample_bank")
    dataset = _training_data(args.data, args)
    noise_dim = cfg.train.noise_dim if args.noise_dim is None else args.noise_dim
    model = _new_model(args.domain, dataset, noise_dim, cfg.train, seed)
    model, log = add_domain(model, dataset.as_batch(), bank, cfg.train, Rng(seed).split(f"train-{args.domain}"),
                            progress=not args.quiet, return_log=True)
    save_checkpoint(model, args.out, seed, _echo(cfg, "add-domain", args))
    _write_log(log, args.log or f"{args.out}.log.csv")
    logger.info(f"✓ Added domain {args.domain} without touching existing models")
    return EXIT_OK


def cmd_translate(args) -> int:
    _, seed = _resolve(args)
    src = load_checkpoint(args.src, expect="domain_model")
    dst = load_checkpoint(args.dst, expect="domain_model")
    if src.latent_dim != dst.latent_dim:
        raise UsageError(f"translate: {args.src} has latent_dim {src.latent_dim} but {args.dst} "
                         f"has latent_dim {dst.latent_dim}; models must share a latent space")
    dataset = read_csv(args.input)
    out = translate(src, dst, dataset.rows, Rng(seed).split("translate"))
    write_csv(Dataset(dst.domain_id, out), args.out)
    logger.info(f"✓ Translated {len(out)} rows {src.domain_id} -> {dst.domain_id} into {args.out}")
    return EXIT_OK


def _row(check: str, domains: str, **values) -> dict:
    row = {column: None for column in REPORT_COLUMNS}
    row.update(check=check, domains=domains, **values)
    return row


def run_checks(models: Sequence[DomainModel], marginals: Sequence[Dataset], checks: Sequence[str],
               cfg: ExperimentConfig, seed: int, bank: Optional[SampleBank] = None,
               paired: Optional[Sequence[Dataset]] = None) -> pd.DataFrame:
    """
    Run the requested checks and return one report row per check.

    `paired` is only read by the `cluster` check.
    """
    unknown = set(checks) - set(CHECKS)
    if unknown:
        raise UsageError(f"eval: unknown checks {sorted(unknown)}")
    alpha = cfg.check.alpha
    rng = Rng(seed).split("eval")
    ids = [m.domain_id for m in models]
    rows = []
    if "recon" in checks:
        for i, (model, data) in enumerate(zip(models, marginals)):
            rec = reconstruction_report(model, data.rows)
            rows.append(_row("recon", ids[i], statistic=rec["relative"], recon=rec["mse"],
                             passed=rec["relative"] < RECON_THRESHOLD))
    if "latent" in checks:
        for i, (model, data) in enumerate(zip(models, marginals)):
            res = latent_prior_test(model, data.rows, rng.split(f"latent-{i}"), cfg.check, bank)
            rows.append(_row("latent", ids[i], statistic=res.statistic, p_value=res.permutation_p,
                             passed=res.passed(alpha)))
    if "path" in checks and len(models) >= 3:
        k = len(models)
        for i in range(k):
            path = [i, (i + 1) % k, (i + 2) % k]
            res = check_path_consistency(models, path, marginals[i].rows, rng.split(f"path-{i}"), cfg.check)
            rows.append(_row("path", ">".join(ids[p] for p in path), statistic=res.statistic,
                             p_value=res.permutation_p, passed=res.passed(alpha)))
    if "global" in checks and len(models) >= 2:
        table = check_global_consistency(models, [d.rows for d in marginals], rng.split("global"), cfg.check)
        for (i, j), res in table.items():
            rows.append(_row("global", f"{ids[i]}|{ids[j]}", statistic=res.statistic, p_value=res.permutation_p,
                             passed=res.passed(alpha)))
    if "bound" in checks:
        for i, src in enumerate(models):
            for j, dst in enumerate(models):
                if i == j:
                    continue
                rep = check_transport_bound(src, dst, (marginals[i].rows, marginals[j].rows), bank,
                                            rng.split(f"bound-{i}-{j}"), cfg.check)
                rows.append(_row("bound", f"{ids[i]}>{ids[j]}", lhs=rep.lhs, gamma=rep.gamma,
                                 term_src=rep.term_src, term_dst=rep.term_dst, recon=rep.recon, rhs=rep.rhs,
                                 holds=rep.holds, passed=rep.holds))
    if "cluster" in checks:
        if paired is None or any(d.labels is None for d in paired):
            raise UsageError("eval: the cluster check needs a labelled paired set")
        for i, src in enumerate(models):
            for j, dst in enumerate(models):
                if i == j:
                    continue
                agreement = cluster_agreement(src, dst, paired[i].rows, paired[i].class_ids,
                                              marginals[j].rows, marginals[j].class_ids,
                                              rng.split(f"cluster-{i}-{j}"))
                rows.append(_row("cluster", f"{ids[i]}>{ids[j]}", statistic=agreement, passed=True))
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def _eval_data(path: str) -> Dataset:
    return read_csv(path, label_width(path))


def cmd_eval(args) -> int:
    cfg, seed = _resolve(args)
    checks = [c.strip() for c in args.checks.split(",") if c.strip()]
    models = [load_checkpoint(path, expect="domain_model") for path in args.models]
    d = models[0].latent_dim
    if any(m.latent_dim != d for m in models):
        raise UsageError("eval: all models must share latent_dim")
    marginals = [_eval_data(os.path.join(args.data, f"{m.domain_id}.csv")) for m in models]
    paired = None
    if "cluster" in checks:
        paired = [_eval_data(os.path.join(args.data, "paired", f"{m.domain_id}.csv")) for m in models]
    bank = load_checkpoint(args.bank, expect="sample_bank") if args.bank else None
    report = run_checks(models, marginals, checks, cfg, seed, bank, paired)
    _write_frame(report, args.report)
    failed = int((~report["passed"].astype(bool)).sum())
    logger.info(f"✓ Wrote {len(report)} check rows to {args.report} ({failed} failed)")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def summarize_log(frame: pd.DataFrame, window: int = 100) -> pd.DataFrame:
    """Final value and trailing-window mean of every loss column."""
    missing = set(LOG_COLUMNS) - set(frame.columns)
    if missing:
        raise DatasetError(f"training log lacks columns {sorted(missing)}")
    tail = frame.tail(window)
    return pd.DataFrame({
        "loss": LOG_COLUMNS[1:],
        "final": [float(frame[c].iloc[-1]) if len(frame) else float("nan") for c in LOG_COLUMNS[1:]],
        "window_mean": [float(tail[c].mean()) for c in LOG_COLUMNS[1:]],
    })


def cmd_report(args) -> int:
    frame = pd.read_csv(args.log)
    summary = summarize_log(frame, args.window)
    print(summary.to_string(index=False))
    if args.plot:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, axes = plt.subplots(1, 3, figsize=(12, 3))
        for ax, column in zip(axes, LOG_COLUMNS[1:]):
            ax.plot(frame["step"], frame[column])
            ax.set_title(column)
            ax.set_xlabel("step")
        fig.tight_layout()
        fig.savefig(args.plot)
        plt.close(fig)
        logger.info(f"✓ Saved loss curves to {args.plot}")
    return EXIT_OK


def cmd_correlate(args) -> int:
    cfg, _ = _resolve(args)
    model = load_checkpoint(args.model, expect="domain_model")
    table = latent_feature_correlation(model, read_csv(args.data).rows, cfg.check.alpha)
    _write_frame(table, args.out)
    logger.info(f"✓ {int(table['significant'].sum())} significant feature/latent pairs written to {args.out}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "learn-latent": cmd_learn_latent,
    "add-domain": cmd_add_domain,
    "translate": cmd_translate,
    "eval": cmd_eval,
    "report": cmd_report,
    "correlate": cmd_correlate,
}


def cli(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE
    setup_logging(args.quiet)
    try:
        return COMMANDS[args.command](args)
    except NumericError as e:
        logger.error(f"Numeric failure: {e}")
        return EXIT_NUMERIC
    except (UsageError, DimensionError, ConfigError, DatasetError, CheckpointError, PreconditionError) as e:
        logger.error(str(e))
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        logger.error(f"File error: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except UcaeError as e:
        logger.error(str(e))
        return EXIT_USAGE


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
