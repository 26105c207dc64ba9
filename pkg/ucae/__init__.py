"""
Uncoupled adversarial autoencoders for multi-domain translation.

Each domain gets its own encoder/decoder pair trained against a shared
latent prior; translations compose one domain's encoder with another's
decoder. Synthetic structural-equation worlds provide ground truth, and
the metrics module checks path consistency, global consistency and the
transport bound on trained systems.
"""

from ucae.domain_model import DomainModel, LatentCode, build_domain_model, decode, encode, translate, translate_path
from ucae.errors import UcaeError
from ucae.linalg import Rng
from ucae.sem_world import SemSpec, make_sem, sample_coupled
from ucae.training import SampleBank, TrainConfig, add_domain, learn_latent_alternating, train_autoencoder

__all__ = [
    "DomainModel",
    "LatentCode",
    "Rng",
    "SampleBank",
    "SemSpec",
    "TrainConfig",
    "UcaeError",
    "add_domain",
    "build_domain_model",
    "decode",
    "encode",
    "learn_latent_alternating",
    "make_sem",
    "sample_coupled",
    "train_autoencoder",
    "translate",
    "translate_path",
]
