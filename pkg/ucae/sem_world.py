"""
Synthetic generative worlds X_i = f_i(Z, N_i) with known inverses.

Each domain maps the concatenated latent and noise vector through a matrix
with orthonormal columns, adds an offset, and applies the strictly
increasing warp u -> u + alpha*tanh(u). Both steps are injective, and the
oracle autoencoder inverts them analytically (bisection for the warp).

Z ~ N(0, I_d) and N_i ~ N(0, I_m_i). Two-cluster worlds shift the first
latent coordinate by +/- cluster_sep and carry the cluster as a label.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ucae.errors import ConvergenceError, DimensionError
from ucae.linalg import Matrix, Rng, as_matrix, check_finite

logger = logging.getLogger(__name__)

UNWARP_TOL = 1e-12
UNWARP_MAX_ITER = 200


@dataclass
class DomainGen:
    """Generator of one domain: f(z, n) = warp(mix @ [z; n] + offset)."""
    obs_dim: int
    noise_dim: int
    mix: Matrix
    offset: np.ndarray
    warp_alpha: float = 0.0

    def __post_init__(self):
        self.mix = np.asarray(self.mix, dtype=np.float64)
        self.offset = np.asarray(self.offset, dtype=np.float64).reshape(-1)
        if self.warp_alpha < 0.0:
            raise ValueError(f"DomainGen: warp_alpha must be >= 0, got {self.warp_alpha}")
        if self.mix.shape[0] != self.obs_dim or self.offset.shape[0] != self.obs_dim:
            raise DimensionError("DomainGen: mix rows and offset length must equal obs_dim")
        if self.obs_dim < self.mix.shape[1]:
            raise DimensionError(f"DomainGen: obs_dim {self.obs_dim} < d+m {self.mix.shape[1]}")

    @property
    def code_dim(self) -> int:
        return self.mix.shape[1]

    def warp(self, u: Matrix) -> Matrix:
        if self.warp_alpha == 0.0:
            return u
        return u + self.warp_alpha * np.tanh(u)

    def unwarp(self, y: Matrix) -> Matrix:
        """Invert the warp elementwise by bisection on [y - alpha, y + alpha]."""
        if self.warp_alpha == 0.0:
            return y
        lo = y - self.warp_alpha
        hi = y + self.warp_alpha
        for _ in range(UNWARP_MAX_ITER):
            mid = 0.5 * (lo + hi)
            above = self.warp(mid) > y
            hi = np.where(above, mid, hi)
            lo = np.where(above, lo, mid)
            if np.all(hi - lo <= UNWARP_TOL * np.maximum(1.0, np.abs(y))):
                return 0.5 * (lo + hi)
        raise ConvergenceError("unwarp", f"bisection did not reach {UNWARP_TOL} in {UNWARP_MAX_ITER} steps")

    def generate(self, codes: Matrix) -> Matrix:
        """Apply f to rows [z, n]."""
        return check_finite(self.warp(codes @ self.mix.T + self.offset), "DomainGen.generate")

    def invert(self, x: Matrix) -> Matrix:
        """Analytic left inverse of f: rows [z, n]."""
        return check_finite((self.unwarp(x) - self.offset) @ self.mix, "DomainGen.invert")


@dataclass
class SemSpec:
    """A full synthetic world: shared latent dim, per-domain generators, seed."""
    latent_dim: int
    domains: List[DomainGen]
    seed: int = 0
    cluster_sep: float = 0.0
    domain_ids: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.latent_dim < 1:
            raise DimensionError("SemSpec: latent_dim must be >= 1")
        if len(self.domains) < 1:
            raise DimensionError("SemSpec: at least one domain is required")
        if not self.domain_ids:
            self.domain_ids = [f"d{i + 1}" for i in range(len(self.domains))]
        if len(self.domain_ids) != len(self.domains):
            raise DimensionError("SemSpec: one id per domain is required")
        for gen in self.domains:
            if gen.code_dim != self.latent_dim + gen.noise_dim:
                raise DimensionError("SemSpec: mix columns must equal latent_dim + noise_dim")

    @property
    def k(self) -> int:
        return len(self.domains)

    @property
    def labelled(self) -> bool:
        return self.cluster_sep > 0.0

    @property
    def label_dim(self) -> int:
        """Width of the one-hot cluster labels; binary when labelled."""
        return 2 if self.labelled else 0

    def index(self, domain_id: str) -> int:
        return self.domain_ids.index(domain_id)


@dataclass
class CoupledSample:
    """One draw from the joint: shared z, per-domain noise and observations."""
    z: np.ndarray
    noises: List[np.ndarray]
    xs: List[np.ndarray]
    label: Optional[int] = None


@dataclass
class CoupledSamples:
    """
    A batch of joint draws stored column-wise.

    Row r of `z`, of every `noises[i]` and of every `xs[i]` is one coupled
    draw. The paired view is for evaluation only; training reads the
    independently shuffled marginals.
    """
    z: Matrix
    noises: List[Matrix]
    xs: List[Matrix]
    labels: Optional[np.ndarray] = None

    def __len__(self):
        return self.z.shape[0]

    def __getitem__(self, r: int) -> CoupledSample:
        return CoupledSample(
            z=self.z[r],
            noises=[n[r] for n in self.noises],
            xs=[x[r] for x in self.xs],
            label=None if self.labels is None else int(self.labels[r]),
        )

    def marginals(self, rng: Rng) -> List[Tuple[Matrix, Optional[np.ndarray]]]:
        """Per-domain (rows, labels) with an independent row order per domain."""
        views = []
        for i, x in enumerate(self.xs):
            order = rng.split(f"marginal-{i}").permutation(len(self))
            labels = None if self.labels is None else self.labels[order]
            views.append((x[order], labels))
        return views


def _orthonormal_columns(rng: Rng, rows: int, cols: int) -> Matrix:
    q, r = np.linalg.qr(rng.normal(rows, cols))
    # fix column signs so the factorization is unique
    signs = np.sign(np.diag(r))
    signs[signs == 0.0] = 1.0
    return q * signs


def make_sem(d: int, domain_dims: Sequence[Tuple[int, int]], warp_alpha: float, rng: Rng,
             offset_scale: float = 1.0, cluster_sep: float = 0.0) -> SemSpec:
    """
    Build a random world satisfying the injectivity assumption.

    Args:
        d: Shared latent dimension.
        domain_dims: (obs_dim, noise_dim) per domain, obs_dim >= d + noise_dim.
        warp_alpha: Strength of the monotone warp (0 gives a linear world).
        rng: Source of the mixing matrices and offsets.
        offset_scale: Standard deviation of the per-domain offsets.
        cluster_sep: If > 0, z_0 is shifted by +/- cluster_sep per label.

    Returns:
        SemSpec
    """
    if d < 1:
        raise DimensionError("make_sem: d must be >= 1")
    if warp_alpha < 0.0:
        raise ValueError("make_sem: warp_alpha must be >= 0")
    domains = []
    for i, (n, m) in enumerate(domain_dims):
        if n < d + m:
            raise DimensionError(f"make_sem: domain {i + 1} has obs_dim {n} < d + noise_dim {d + m}")
        child = rng.split(f"domain-{i}")
        mix = _orthonormal_columns(child.split("mix"), n, d + m)
        offset = offset_scale * child.split("offset").normal(1, n).reshape(-1)
        domains.append(DomainGen(n, m, mix, offset, warp_alpha))
    logger.info(f"✓ Built world with d={d} and {len(domains)} domains (warp_alpha={warp_alpha})")
    return SemSpec(latent_dim=d, domains=domains, seed=rng.seed, cluster_sep=cluster_sep)


def sample_latent(spec: SemSpec, count: int, rng: Rng) -> Tuple[Matrix, Optional[np.ndarray]]:
    """Draw z from the world's latent distribution; labels for two-cluster worlds."""
    z = rng.split("z").normal(count, spec.latent_dim)
    if not spec.labelled:
        return z, None
    labels = rng.split("label").integers(2, count)
    z[:, 0] += np.where(labels == 1, spec.cluster_sep, -spec.cluster_sep)
    return z, labels


def sample_coupled(spec: SemSpec, count: int, rng: Rng) -> CoupledSamples:
    """Draw `count` coupled samples: shared z, independent noise per domain."""
    if count < 1:
        raise ValueError("sample_coupled: count must be >= 1")
    z, labels = sample_latent(spec, count, rng)
    noises, xs = [], []
    for i, gen in enumerate(spec.domains):
        if gen.noise_dim > 0:
            noise = rng.split(f"noise-{i}").normal(count, gen.noise_dim)
        else:
            noise = np.zeros((count, 0))
        noises.append(noise)
        xs.append(gen.generate(np.hstack([z, noise])))
    return CoupledSamples(z=z, noises=noises, xs=xs, labels=labels)


class OracleMap:
    """
    A fixed, parameter-free map exposing the network interface used by DomainModel.

    `lipschitz` is a known global Lipschitz constant of the map, if any.
    """

    def __init__(self, fn: Callable[[Matrix], Matrix], in_dim: int, out_dim: int,
                 lipschitz: Optional[float] = None):
        self.fn = fn
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.lipschitz = lipschitz

    def forward(self, x: Matrix) -> Matrix:
        x = as_matrix(x, "OracleMap.forward")
        if x.shape[1] != self.in_dim:
            raise DimensionError(f"OracleMap.forward: expected {self.in_dim} columns, got {x.shape[1]}")
        return self.fn(x)

    predict = forward

    def lipschitz_upper_bound(self) -> float:
        if self.lipschitz is None:
            raise ValueError("OracleMap: no Lipschitz constant known")
        return self.lipschitz


def oracle_autoencoder(spec: SemSpec, i: int) -> Tuple[OracleMap, OracleMap]:
    """
    The analytic encoder/decoder pair of domain `i`.

    decode = f_i, encode = its inverse; encode(decode(c)) == c on codes and
    decode(encode(x)) == x on the image of f_i.

    Returns:
        (encode_fn, decode_fn) as OracleMaps
    """
    if not 0 <= i < spec.k:
        raise IndexError(f"oracle_autoencoder: no domain {i}")
    gen = spec.domains[i]
    encode = OracleMap(gen.invert, gen.obs_dim, gen.code_dim)
    decode = OracleMap(gen.generate, gen.code_dim, gen.obs_dim, lipschitz=1.0 + gen.warp_alpha)
    return encode, decode


def linear_oracle_weights(spec: SemSpec, i: int) -> Tuple[Tuple[Matrix, np.ndarray], Tuple[Matrix, np.ndarray]]:
    """
    Exact single-layer weights of the oracle pair for a warp-free domain.

    Returns:
        ((W_enc, b_enc), (W_dec, b_dec)) in (out x in) layout
    """
    gen = spec.domains[i]
    if gen.warp_alpha != 0.0:
        raise ValueError("linear_oracle_weights: domain is warped; no exact affine oracle exists")
    return (gen.mix.T.copy(), -gen.mix.T @ gen.offset), (gen.mix.copy(), gen.offset.copy())
