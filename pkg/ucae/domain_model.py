"""
Per-domain model triple and the composition that turns autoencoders into translators.

X_{i->j} = D_j(pi^Z(E_i(x)), n_j) with n_j drawn fresh from N(0, I_{m_j}).
The source noise component is never read.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from ucae.errors import DimensionError, PreconditionError
from ucae.linalg import Matrix, Rng, as_matrix
from ucae.nn_core import Mlp, build_layers
from ucae.sem_world import OracleMap, SemSpec, linear_oracle_weights, oracle_autoencoder

logger = logging.getLogger(__name__)

Network = Union[Mlp, OracleMap]


@dataclass
class LatentCode:
    """
    A batch of codes: shared latent part z and domain noise part n.

    Concatenating [z, n] gives the encoder output it was split from.
    """
    z: Matrix
    n: Matrix

    def __post_init__(self):
        if self.z.shape[0] != self.n.shape[0]:
            raise DimensionError("LatentCode: z and n must have the same number of rows")

    def __len__(self):
        return self.z.shape[0]

    def concat(self) -> Matrix:
        return np.hstack([self.z, self.n])


@dataclass
class DomainModel:
    """Encoder (n -> d+m), decoder (d+m -> n) and latent discriminator ((d+m)+label_dim -> 1)."""
    domain_id: str
    obs_dim: int
    noise_dim: int
    latent_dim: int
    encoder: Network
    decoder: Network
    discriminator: Optional[Mlp] = None
    label_dim: int = 0

    def __post_init__(self):
        code = self.code_dim
        if self.encoder.out_dim != code or self.decoder.in_dim != code:
            raise DimensionError(
                f"DomainModel {self.domain_id}: encoder output and decoder input must be {code}"
            )
        if self.encoder.in_dim != self.obs_dim or self.decoder.out_dim != self.obs_dim:
            raise DimensionError(f"DomainModel {self.domain_id}: encoder/decoder must match obs_dim {self.obs_dim}")
        if self.discriminator is not None:
            if self.discriminator.in_dim != code + self.label_dim or self.discriminator.out_dim != 1:
                raise DimensionError(
                    f"DomainModel {self.domain_id}: discriminator must map {code + self.label_dim} -> 1"
                )

    @property
    def code_dim(self) -> int:
        return self.latent_dim + self.noise_dim

    @property
    def trainable(self) -> bool:
        return isinstance(self.encoder, Mlp) and isinstance(self.decoder, Mlp) and self.discriminator is not None


def build_domain_model(domain_id: str, obs_dim: int, noise_dim: int, latent_dim: int, rng: Rng,
                       encoder_hidden: Sequence[int] = (128, 128), decoder_hidden: Sequence[int] = (128, 128),
                       disc_hidden: Sequence[int] = (64, 64), activation: str = "leaky_relu",
                       slope: float = 0.2, label_dim: int = 0) -> DomainModel:
    """Freshly initialized trainable model for one domain."""
    code = latent_dim + noise_dim
    encoder = Mlp(build_layers(obs_dim, encoder_hidden, code, activation, slope), rng.split("encoder"))
    decoder = Mlp(build_layers(code, decoder_hidden, obs_dim, activation, slope), rng.split("decoder"))
    disc = Mlp(build_layers(code + label_dim, disc_hidden, 1, activation, slope), rng.split("discriminator"))
    return DomainModel(domain_id, obs_dim, noise_dim, latent_dim, encoder, decoder, disc, label_dim)


def oracle_domain_model(spec: SemSpec, i: int) -> DomainModel:
    """Frozen model whose encoder/decoder are the world's analytic inverse pair."""
    gen = spec.domains[i]
    encode, decode = oracle_autoencoder(spec, i)
    return DomainModel(spec.domain_ids[i], gen.obs_dim, gen.noise_dim, spec.latent_dim, encode, decode)


def linear_oracle_model(spec: SemSpec, i: int, rng: Rng, **kwargs) -> DomainModel:
    """
    Trainable model whose encoder and decoder are single affine layers set to the exact oracle.

    Only defined for warp-free domains.
    """
    gen = spec.domains[i]
    code = spec.latent_dim + gen.noise_dim
    (we, be), (wd, bd) = linear_oracle_weights(spec, i)
    encoder = Mlp(build_layers(gen.obs_dim, (), code))
    decoder = Mlp(build_layers(code, (), gen.obs_dim))
    encoder.weights[0], encoder.biases[0] = we, be
    decoder.weights[0], decoder.biases[0] = wd, bd
    label_dim = kwargs.pop("label_dim", 0)
    disc = Mlp(build_layers(code + label_dim, kwargs.pop("disc_hidden", (64, 64)), 1,
                            kwargs.pop("activation", "leaky_relu"), kwargs.pop("slope", 0.2)),
               rng.split("discriminator"))
    return DomainModel(spec.domain_ids[i], gen.obs_dim, gen.noise_dim, spec.latent_dim,
                       encoder, decoder, disc, label_dim)


def encode(model: DomainModel, x: Matrix) -> LatentCode:
    """Deterministic encoding, split into (z, n) at index d."""
    x = as_matrix(x, "encode")
    if x.shape[1] != model.obs_dim:
        raise DimensionError(f"encode: model {model.domain_id} expects {model.obs_dim} columns, got {x.shape[1]}")
    out = model.encoder.predict(x)
    d = model.latent_dim
    return LatentCode(z=out[:, :d], n=out[:, d:])


def decode(model: DomainModel, codes: LatentCode) -> Matrix:
    """Decoder forward on the concatenated [z, n]."""
    if codes.z.shape[1] != model.latent_dim or codes.n.shape[1] != model.noise_dim:
        raise DimensionError(
            f"decode: model {model.domain_id} expects codes ({model.latent_dim}, {model.noise_dim}), "
            f"got ({codes.z.shape[1]}, {codes.n.shape[1]})"
        )
    return model.decoder.predict(codes.concat())


def reconstruct(model: DomainModel, x: Matrix) -> Matrix:
    return decode(model, encode(model, x))


def translate(src: DomainModel, dst: DomainModel, x: Matrix, rng: Rng) -> Matrix:
    """
    Translate rows of `x` from the source domain into the destination domain.

    Args:
        src: Model of the source domain.
        dst: Model of the destination domain.
        x: Matrix (batch x src.obs_dim)
        rng: Source of the fresh destination noise.

    Returns:
        Matrix (batch x dst.obs_dim)
    """
    if src.latent_dim != dst.latent_dim:
        raise DimensionError(
            f"translate: latent dims differ ({src.domain_id}: {src.latent_dim}, {dst.domain_id}: {dst.latent_dim})"
        )
    z = encode(src, x).z
    if dst.noise_dim > 0:
        noise = rng.normal(z.shape[0], dst.noise_dim)
    else:
        noise = np.zeros((z.shape[0], 0))
    return decode(dst, LatentCode(z=z, n=noise))


def translate_path(models: Sequence[DomainModel], x: Matrix, rng: Rng) -> Matrix:
    """
    Left fold of translate over consecutive models.

    Hop 0 draws its noise from `rng` itself, so a one-hop path is exactly
    translate(models[0], models[1], x, rng). Hop h > 0 uses rng.split('hop-h').
    """
    if len(models) < 2:
        raise PreconditionError("translate_path: a path needs at least two models")
    d = models[0].latent_dim
    if any(m.latent_dim != d for m in models):
        raise DimensionError("translate_path: all models must share latent_dim")
    out = x
    for hop, (src, dst) in enumerate(zip(models[:-1], models[1:])):
        out = translate(src, dst, out, rng if hop == 0 else rng.split(f"hop-{hop}"))
    return out


class _ShiftedEncoder:
    """Encoder wrapper adding a constant to the latent (z) part of the output."""

    def __init__(self, inner: Network, latent_dim: int, shift: float):
        self.inner = inner
        self.in_dim = inner.in_dim
        self.out_dim = inner.out_dim
        self._offset = np.zeros(inner.out_dim)
        self._offset[:latent_dim] = shift

    def predict(self, x: Matrix) -> Matrix:
        return self.inner.predict(x) + self._offset

    forward = predict


def with_latent_shift(model: DomainModel, shift: float) -> DomainModel:
    """A deliberately corrupted copy whose encoder adds `shift` to every z coordinate."""
    return DomainModel(model.domain_id, model.obs_dim, model.noise_dim, model.latent_dim,
                       _ShiftedEncoder(model.encoder, model.latent_dim, shift), model.decoder,
                       model.discriminator, model.label_dim)
