"""
Adversarial training of uncoupled autoencoders.

Implements:
- train_autoencoder: the per-domain loop (reconstruction + lambda * log f(E(x))
  for the autoencoder, log-loss ascent for the latent discriminator)
- learn_latent_alternating: two domains learn a shared latent when P_Z is
  unknown, each trained against the other's encoded bank
- add_domain: train one new domain against a frozen bank, touching nothing else
- label-conditioned discrimination via conditioned_discriminator_input

Every function takes exactly one DomainModel to train; other domains are
only ever seen through immutable SampleBanks.
"""

import logging
import math
from dataclasses import dataclass, field, fields
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from numpy.linalg import LinAlgError
from scipy.linalg import cholesky, solve_triangular
from scipy.special import expit, log_expit
from tqdm import tqdm

from ucae.domain_model import DomainModel, LatentCode, encode
from ucae.errors import DimensionError, NumericError, PreconditionError
from ucae.linalg import Matrix, Rng, as_matrix
from ucae.nn_core import Optimizer

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["step", "recon_loss", "gen_adv_loss", "disc_loss"]


@dataclass
class TrainConfig:
    """Hyperparameters of one training run. `lam` is the weight of the latent divergence term."""
    lam: float = 1.0
    batch_size: int = 256
    steps: int = 2000
    disc_steps_per_gen_step: int = 1
    gen_optimizer: str = "adam"
    gen_lr: float = 1e-3
    disc_optimizer: str = "adam"
    disc_lr: float = 1e-3
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # both learning rates decay linearly to lr * lr_decay over each run
    lr_decay: float = 0.1
    encoder_hidden: Tuple[int, ...] = (128, 128)
    decoder_hidden: Tuple[int, ...] = (128, 128)
    disc_hidden: Tuple[int, ...] = (64, 64)
    activation: str = "leaky_relu"
    leaky_slope: float = 0.2
    latent_dim: int = 2
    noise_dim: int = 0
    non_saturating: bool = False
    rounds: int = 5
    round_steps: Optional[int] = None
    bank_size: Optional[int] = None
    standardize_banks: bool = True
    log_every: int = 500
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.lam < 0:
            raise ValueError(f"TrainConfig: lambda must be >= 0, got {self.lam}")
        if self.batch_size < 2:
            raise ValueError(f"TrainConfig: batch_size must be >= 2, got {self.batch_size}")
        if self.steps < 0:
            raise ValueError(f"TrainConfig: steps must be >= 0, got {self.steps}")
        if self.disc_steps_per_gen_step < 1:
            raise ValueError("TrainConfig: disc_steps_per_gen_step must be >= 1")
        if self.rounds < 1:
            raise ValueError("TrainConfig: rounds must be >= 1")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError(f"TrainConfig: lr_decay must lie in (0, 1], got {self.lr_decay}")
        return self

    @property
    def effective_bank_size(self) -> int:
        return self.bank_size if self.bank_size is not None else 10 * self.batch_size

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class LabeledBatch:
    """Training rows of one domain, optionally with one-hot labels."""
    x: Matrix
    labels: Optional[Matrix] = None

    def __post_init__(self):
        self.x = as_matrix(self.x, "LabeledBatch")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.float64)
            if self.labels.shape[0] != self.x.shape[0]:
                raise DimensionError("LabeledBatch: labels must align with rows")
            if not np.allclose(self.labels.sum(axis=1), 1.0):
                raise ValueError("LabeledBatch: label rows must be one-hot")

    def __len__(self):
        return self.x.shape[0]

    @property
    def label_dim(self) -> int:
        return 0 if self.labels is None else self.labels.shape[1]


@dataclass
class SampleBank:
    """
    Empirical latent distribution used in place of an analytic P_Z.

    `origin` is "prior" or "encoded:<domain ids>". Frozen banks are read-only.
    """
    samples: Matrix
    origin: str = "prior"
    frozen: bool = False
    labels: Optional[Matrix] = None

    def __post_init__(self):
        # owned copies: freezing must not lock the caller's arrays
        self.samples = np.array(as_matrix(self.samples, "SampleBank"), dtype=np.float64, copy=True)
        if self.labels is not None:
            self.labels = np.array(self.labels, dtype=np.float64, copy=True)
        if self.labels is not None and self.labels.shape[0] != self.samples.shape[0]:
            raise DimensionError("SampleBank: labels must align with samples")
        if self.frozen:
            self._lock()

    def _lock(self):
        self.samples.flags.writeable = False
        if self.labels is not None:
            self.labels.flags.writeable = False

    def freeze(self) -> "SampleBank":
        self.frozen = True
        self._lock()
        return self

    def __len__(self):
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def draw(self, count: int, rng: Rng) -> Tuple[Matrix, Optional[Matrix]]:
        """Rows sampled with replacement, with their labels if the bank has any."""
        idx = rng.integers(len(self), count)
        labels = None if self.labels is None else self.labels[idx]
        return self.samples[idx], labels


@dataclass
class TrainingLog:
    """Per-step losses of one run."""
    domain_id: str
    rows: List[Tuple[int, float, float, float]] = field(default_factory=list)

    def record(self, step: int, recon: float, gen_adv: float, disc: float):
        self.rows.append((step, recon, gen_adv, disc))

    def __len__(self):
        return len(self.rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=LOG_COLUMNS)

    def tail_mean(self, column: str, window: int = 100) -> float:
        frame = self.to_frame()
        return float(frame[column].tail(window).mean())


def conditioned_discriminator_input(code: Union[LatentCode, Matrix], label: Optional[Matrix],
                                    label_dim: int = 0) -> Matrix:
    """
    Discriminator input [z, n, label].

    With label_dim == 0 the code is passed through unchanged.
    """
    flat = code.concat() if isinstance(code, LatentCode) else np.asarray(code, dtype=np.float64)
    if label_dim == 0:
        if label is not None and np.size(label) > 0:
            raise DimensionError("conditioned_discriminator_input: model is unconditioned but labels were given")
        return flat
    if label is None or label.shape[1] != label_dim:
        got = None if label is None else label.shape[1]
        raise DimensionError(f"conditioned_discriminator_input: expected label_dim {label_dim}, got {got}")
    return np.hstack([flat, label])


def _check_loss(value: float, what: str, step: int) -> float:
    if not math.isfinite(value):
        raise NumericError("train_autoencoder", f"{what} is not finite", step=step)
    return value


class AdversarialTrainer:
    """
    Owns one DomainModel and its two optimizers.

    Pipeline per step:
    1. generator_step: descend recon + lam * log f(E(x)) on encoder/decoder
    2. discriminator_step: ascend log f(E(x)) + log(1 - f(z, n)) on f
    """

    def __init__(self, model: DomainModel, cfg: TrainConfig):
        if not model.trainable:
            raise PreconditionError(f"AdversarialTrainer: model {model.domain_id} has no trainable networks")
        self.model = model
        self.cfg = cfg.validate()
        self.gen_opt = Optimizer(cfg.gen_optimizer, cfg.gen_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        self.disc_opt = Optimizer(cfg.disc_optimizer, cfg.disc_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    def generator_step(self, x: Matrix, labels: Optional[Matrix]) -> Tuple[float, float]:
        """
        One descent step on the encoder/decoder.

        Returns:
            (reconstruction loss, mean log f(E(x))) evaluated before the update
        """
        m = self.model
        batch = x.shape[0]
        h = m.encoder.forward(x)
        diff = m.decoder.forward(h) - x
        recon = float(np.mean(np.sum(diff * diff, axis=1)))
        grad_h = m.decoder.backward(2.0 * diff / batch)

        logits = m.discriminator.forward(conditioned_discriminator_input(h, labels, m.label_dim))
        adv = float(np.mean(log_expit(logits)))
        if self.cfg.lam > 0.0:
            if self.cfg.non_saturating:
                upstream = self.cfg.lam * expit(logits) / batch
            else:
                upstream = self.cfg.lam * expit(-logits) / batch
            grad_in = m.discriminator.backward(upstream)
            # discriminator parameters are not updated by the generator
            m.discriminator.zero_grad()
            grad_h = grad_h + grad_in[:, :m.code_dim]
        m.encoder.backward(grad_h)
        self.gen_opt.step(m.encoder)
        self.gen_opt.step(m.decoder)
        return recon, adv

    def discriminator_step(self, x: Matrix, labels: Optional[Matrix], prior_codes: Matrix,
                           prior_labels: Optional[Matrix]) -> float:
        """
        One ascent step on the discriminator objective.

        Returns:
            mean log f(E(x)) + mean log(1 - f(prior)) before the update
        """
        m = self.model
        batch = x.shape[0]
        encoded = conditioned_discriminator_input(m.encoder.predict(x), labels, m.label_dim)
        prior = conditioned_discriminator_input(prior_codes, prior_labels, m.label_dim)
        logits = m.discriminator.forward(np.vstack([encoded, prior]))
        s_enc, s_pri = logits[:batch], logits[batch:]
        objective = float(np.mean(log_expit(s_enc)) + np.mean(log_expit(-s_pri)))
        upstream = np.vstack([-expit(-s_enc) / batch, expit(s_pri) / prior.shape[0]])
        m.discriminator.backward(upstream)
        self.disc_opt.step(m.discriminator)
        return objective

    def set_learning_rates(self, step: int, steps: int):
        """Linear decay from the configured rates to rate * lr_decay at the last step."""
        cfg = self.cfg
        scale = 1.0 - (1.0 - cfg.lr_decay) * step / max(steps - 1, 1)
        self.gen_opt.learning_rate = cfg.gen_lr * scale
        self.disc_opt.learning_rate = cfg.disc_lr * scale

    def _prior_targets(self, count: int, latent: Optional[SampleBank], rng: Rng,
                       data_labels: Optional[Matrix]) -> Tuple[Matrix, Optional[Matrix]]:
        m = self.model
        if latent is None:
            z = rng.normal(count, m.latent_dim)
            bank_labels = None
        else:
            z, bank_labels = latent.draw(count, rng)
        noise = rng.normal(count, m.noise_dim) if m.noise_dim > 0 else np.zeros((count, 0))
        codes = np.hstack([z, noise])
        if m.label_dim == 0:
            return codes, None
        if bank_labels is not None:
            return codes, bank_labels
        # labels follow the empirical label distribution of the training data
        return codes, data_labels[rng.integers(data_labels.shape[0], count)]

    def run(self, data: LabeledBatch, latent: Optional[SampleBank], rng: Rng,
            steps: Optional[int] = None, progress: bool = False) -> TrainingLog:
        """Train for `steps` (default cfg.steps) and return the per-step log."""
        m, cfg = self.model, self.cfg
        steps = cfg.steps if steps is None else steps
        if len(data) == 0:
            raise PreconditionError(f"train_autoencoder: no training rows for domain {m.domain_id}")
        if data.x.shape[1] != m.obs_dim:
            raise DimensionError(f"train_autoencoder: data has {data.x.shape[1]} columns, model expects {m.obs_dim}")
        if data.label_dim != m.label_dim:
            raise DimensionError(f"train_autoencoder: data label_dim {data.label_dim} != model label_dim {m.label_dim}")
        if latent is not None and latent.dim != m.latent_dim:
            raise DimensionError(f"train_autoencoder: bank dim {latent.dim} != latent_dim {m.latent_dim}")
        if latent is not None and m.label_dim > 0 and latent.labels is not None \
                and latent.labels.shape[1] != m.label_dim:
            raise DimensionError("train_autoencoder: bank labels do not match the model's label_dim")

        log = TrainingLog(m.domain_id)
        batch_rng, prior_rng = rng.split("batch"), rng.split("prior")
        for step in tqdm(range(steps), desc=f"train {m.domain_id}", disable=not progress):
            self.set_learning_rates(step, steps)
            idx = batch_rng.integers(len(data), cfg.batch_size)
            x = data.x[idx]
            labels = None if data.labels is None else data.labels[idx]
            recon, adv = self.generator_step(x, labels)
            _check_loss(recon, "reconstruction loss", step)
            _check_loss(adv, "adversarial loss", step)
            disc = 0.0
            for _ in range(cfg.disc_steps_per_gen_step):
                codes, prior_labels = self._prior_targets(cfg.batch_size, latent, prior_rng, data.labels)
                disc = _check_loss(self.discriminator_step(x, labels, codes, prior_labels), "discriminator loss", step)
            log.record(step, recon, adv, disc)
            logger.debug(f"{m.domain_id} step {step}: recon={recon:.6g} adv={adv:.6g} disc={disc:.6g}")
            if cfg.log_every and (step + 1) % cfg.log_every == 0:
                logger.info(f"{m.domain_id} step {step + 1}/{steps}: recon={recon:.4g} "
                            f"adv={adv:.4g} disc={disc:.4g}")
        return log


def train_autoencoder(model: DomainModel, data: LabeledBatch, latent: Optional[SampleBank],
                      cfg: TrainConfig, rng: Rng, progress: bool = False) -> TrainingLog:
    """
    Train one domain's autoencoder against a latent prior.

    Args:
        model: The only model this call reads or writes.
        data: Unpaired rows of the domain (and labels if conditioned).
        latent: Bank of z samples, or None for the analytic N(0, I_d).
            Noise targets are always drawn from N(0, I_m).
        cfg: Hyperparameters.
        rng: Randomness for batches and prior targets.

    Returns:
        TrainingLog with one row per step
    """
    log = AdversarialTrainer(model, cfg).run(data, latent, rng, progress=progress)
    if len(log):
        logger.info(f"✓ Trained {model.domain_id} for {len(log)} steps "
                    f"(recon={log.tail_mean('recon_loss'):.4g}, disc={log.tail_mean('disc_loss'):.4g})")
    return log


def encode_bank(model: DomainModel, data: LabeledBatch, bank_size: int, rng: Rng) -> SampleBank:
    """pi^Z of the encodings of `bank_size` rows drawn with replacement."""
    idx = rng.integers(len(data), bank_size)
    z = encode(model, data.x[idx]).z
    labels = None if data.labels is None else data.labels[idx]
    return SampleBank(samples=z, origin=f"encoded:{model.domain_id}", labels=labels)


def standardize_bank(bank: SampleBank) -> SampleBank:
    """
    Affinely whiten a bank to zero mean and identity covariance.

    Row order and labels are kept. A rank-deficient bank (collapsed
    encoder) raises NumericError.
    """
    z = bank.samples
    centered = z - z.mean(axis=0)
    cov = np.atleast_2d(np.cov(centered, rowvar=False))
    try:
        chol = cholesky(cov, lower=True)
    except LinAlgError:
        raise NumericError("standardize_bank", f"bank {bank.origin} has a singular covariance") from None
    white = solve_triangular(chol, centered.T, lower=True).T
    return SampleBank(samples=white, origin=bank.origin, frozen=bank.frozen, labels=bank.labels)


def _union(banks: List[SampleBank], origin: str) -> SampleBank:
    labels = None
    if all(b.labels is not None for b in banks):
        labels = np.vstack([b.labels for b in banks])
    return SampleBank(samples=np.vstack([b.samples for b in banks]), origin=origin, labels=labels)


def learn_latent_alternating(model_a: DomainModel, model_b: DomainModel, data_a: LabeledBatch,
                             data_b: LabeledBatch, cfg: TrainConfig, rounds: int, bank_size: int,
                             rng: Rng, progress: bool = False) -> Tuple[DomainModel, DomainModel, SampleBank]:
    """
    Learn a shared latent for two domains when P_Z is unknown.

    An anchor pass first trains both models against N(0, I_d). Each of the
    `rounds` rounds then refreshes both banks from the current encoders and
    trains model_a against bank_b and model_b against bank_a. A closing pass
    trains both against the union of freshly encoded banks; that union is
    returned. With cfg.standardize_banks every refreshed bank is whitened,
    so the shared latent cannot drift in location or scale.

    Every pass lasts cfg.round_steps steps, or one epoch of the data.

    Returns:
        (model_a, model_b, frozen union bank both models were last trained against)
    """
    if model_a.latent_dim != model_b.latent_dim:
        raise DimensionError("learn_latent_alternating: models must share latent_dim")
    if rounds < 1:
        raise PreconditionError("learn_latent_alternating: rounds must be >= 1")
    trainer_a, trainer_b = AdversarialTrainer(model_a, cfg), AdversarialTrainer(model_b, cfg)
    steps_a = cfg.round_steps or math.ceil(len(data_a) / cfg.batch_size)
    steps_b = cfg.round_steps or math.ceil(len(data_b) / cfg.batch_size)

    def refresh(model: DomainModel, data: LabeledBatch, bank_rng: Rng) -> SampleBank:
        bank = encode_bank(model, data, bank_size, bank_rng)
        return (standardize_bank(bank) if cfg.standardize_banks else bank).freeze()

    def train_round(name: str, target_a: Optional[SampleBank], target_b: Optional[SampleBank], round_rng: Rng):
        log_a = trainer_a.run(data_a, target_a, round_rng.split("train"), steps=steps_a, progress=progress)
        log_b = trainer_b.run(data_b, target_b, round_rng.split("train"), steps=steps_b, progress=progress)
        logger.info(f"✓ Round {name}: {model_a.domain_id} recon={log_a.tail_mean('recon_loss'):.4g}, "
                    f"{model_b.domain_id} recon={log_b.tail_mean('recon_loss'):.4g}")

    train_round("anchor", None, None, rng.split("anchor"))
    for r in range(rounds):
        round_rng = rng.split(f"round-{r}")
        bank_b = refresh(model_b, data_b, round_rng.split("bank"))
        bank_a = refresh(model_a, data_a, round_rng.split("bank"))
        train_round(f"{r + 1}/{rounds}", bank_b, bank_a, round_rng)

    final_rng = rng.split("final-bank")
    union = _union([encode_bank(model_a, data_a, bank_size, final_rng.split("a")),
                    encode_bank(model_b, data_b, bank_size, final_rng.split("b"))],
                   f"encoded:{model_a.domain_id}+{model_b.domain_id}")
    bank = (standardize_bank(union) if cfg.standardize_banks else union).freeze()
    train_round("final (shared bank)", bank, bank, final_rng)
    return model_a, model_b, bank


def add_domain(new_model: DomainModel, new_data: LabeledBatch, frozen_bank: SampleBank,
               cfg: TrainConfig, rng: Rng, progress: bool = False,
               return_log: bool = False) -> Union[DomainModel, Tuple[DomainModel, TrainingLog]]:
    """
    Add a domain to an existing system without touching any existing model.

    The new model is trained exactly as train_autoencoder with the frozen
    bank as latent prior.
    """
    if not frozen_bank.frozen:
        raise PreconditionError("add_domain: the latent bank must be frozen")
    if frozen_bank.dim != new_model.latent_dim:
        raise DimensionError(f"add_domain: bank dim {frozen_bank.dim} != latent_dim {new_model.latent_dim}")
    log = train_autoencoder(new_model, new_data, frozen_bank, cfg, rng, progress=progress)
    return (new_model, log) if return_log else new_model

