"""
Distribution distances, two-sample tests and the consistency/transport checkers.

- wasserstein1_exact: assignment solver on the Euclidean cost matrix
- sinkhorn_divergence: debiased entropic OT, log-domain iterations
- mmd_test: unbiased Gaussian-kernel MMD^2 with a permutation p-value
- check_path_consistency / check_global_consistency: Monte-Carlo checks
  on pushforward marginals from a common source sample
- check_transport_bound: every term of the Lipschitz transport bound

Checkers derive their randomness from position-based tags, never from
domain ids, so results do not depend on how domains are named.
"""

import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist, pdist
from scipy.special import logsumexp
from scipy.stats import pearsonr
from sklearn.metrics.pairwise import rbf_kernel
from sklearn.neighbors import NearestCentroid

from ucae.domain_model import DomainModel, LatentCode, decode, encode, reconstruct, translate, translate_path
from ucae.errors import BudgetError, ConvergenceError, DimensionError, PreconditionError
from ucae.linalg import Matrix, Rng, as_matrix

logger = logging.getLogger(__name__)

EXACT_OT_BUDGET = 2048


@dataclass
class CheckConfig:
    """Sample sizes and thresholds shared by the checkers."""
    eval_samples: int = 500
    n_permutations: int = 500
    alpha: float = 0.01
    bound_samples: int = 1000


@dataclass
class TwoSampleResult:
    """MMD statistic with its permutation p-value; `pointwise_gap` is set by the path checker."""
    statistic: float
    permutation_p: float
    n_permutations: int
    pointwise_gap: Optional[float] = None

    def passed(self, alpha: float = 0.01) -> bool:
        return self.permutation_p > alpha


@dataclass
class BoundReport:
    """lhs <= gamma*term_src + gamma*term_dst + recon."""
    lhs: float
    gamma: float
    term_src: float
    term_dst: float
    recon: float
    rhs: float
    holds: bool

    @classmethod
    def build(cls, lhs: float, gamma: float, term_src: float, term_dst: float, recon: float) -> "BoundReport":
        rhs = gamma * term_src + gamma * term_dst + recon
        return cls(lhs, gamma, term_src, term_dst, recon, rhs, bool(lhs <= rhs))


def _pair(a: Matrix, b: Matrix, operation: str) -> Tuple[Matrix, Matrix]:
    a, b = as_matrix(a, operation), as_matrix(b, operation)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"{operation}: dims differ ({a.shape[1]} vs {b.shape[1]})")
    return a, b


def wasserstein1_exact(a: Matrix, b: Matrix) -> float:
    """
    Exact W1 between two equal-size empirical measures.

    Solved as an assignment problem on the Euclidean cost matrix.
    """
    a, b = _pair(a, b, "wasserstein1_exact")
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"wasserstein1_exact: sample counts differ ({a.shape[0]} vs {b.shape[0]})")
    if a.shape[0] > EXACT_OT_BUDGET:
        raise BudgetError(f"wasserstein1_exact: {a.shape[0]} samples exceed the exact budget {EXACT_OT_BUDGET}")
    cost = cdist(a, b)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def _softmin(cost: Matrix, potential: np.ndarray, log_w: np.ndarray, epsilon: float) -> np.ndarray:
    """-eps * log sum_j w_j exp((potential_j - cost_ij) / eps), one value per row of `cost`."""
    return -epsilon * logsumexp(log_w[None, :] + (potential[None, :] - cost) / epsilon, axis=1)


def _epsilon_schedule(cost: Matrix, epsilon: float) -> List[float]:
    schedule = []
    eps = max(float(cost.max()), epsilon)
    while eps > epsilon:
        schedule.append(eps)
        eps *= 0.5
    return schedule + [epsilon]


def _marginal_error(log_w: np.ndarray, f: np.ndarray, f_next: np.ndarray, epsilon: float) -> float:
    # row sums of the plan are w_i * exp((f_i - f_next_i) / eps)
    return float(np.sum(np.exp(log_w) * np.abs(np.expm1((f - f_next) / epsilon))))


def _entropic_ot(cost: Matrix, epsilon: float, max_iter: int, tol: float, symmetric: bool = False) -> float:
    """
    Dual value of uniform-weight entropic OT, log-domain Sinkhorn with eps-scaling.

    Stops once the L1 violation of the row marginal is at most `tol` (the
    column marginal is exact after each g update). With `symmetric` the
    cost must be a self-cost C(a, a); the single potential is updated by
    averaging f <- (f + T(f)) / 2, which converges where plain alternation
    oscillates.
    """
    n, m = cost.shape
    log_a, log_b = np.full(n, -np.log(n)), np.full(m, -np.log(m))
    schedule = _epsilon_schedule(cost, epsilon)
    f, g = np.zeros(n), np.zeros(m)
    err = np.inf
    for level, eps in enumerate(schedule):
        final = level == len(schedule) - 1
        limit, target = (max_iter, tol) if final else (100, max(tol, 1e-3))
        for _ in range(limit):
            if symmetric:
                f_next = _softmin(cost, f, log_a, eps)
                err = _marginal_error(log_a, f, f_next, eps)
                if err <= target:
                    break
                f = 0.5 * (f + f_next)
            else:
                g = _softmin(cost.T, f, log_a, eps)
                f_next = _softmin(cost, g, log_b, eps)
                err = _marginal_error(log_a, f, f_next, eps)
                if err <= target:
                    break
                f = f_next
    if err > tol:
        raise ConvergenceError("sinkhorn_divergence",
                               f"marginal error {err:.3g} after {max_iter} iterations (epsilon={epsilon})")
    if symmetric:
        return float(2.0 * np.exp(log_a) @ f)
    return float(np.exp(log_a) @ f + np.exp(log_b) @ g)


def sinkhorn_divergence(a: Matrix, b: Matrix, epsilon: float, max_iter: int = 5000, tol: float = 1e-9) -> float:
    """
    Debiased entropic OT S(a,b) = OT(a,b) - OT(a,a)/2 - OT(b,b)/2 with Euclidean cost.

    Args:
        a, b: Samples with equal dims (counts may differ).
        epsilon: Entropic regularization, > 0.
        max_iter: Iterations allowed at the target epsilon.
        tol: Converged when the L1 marginal violation of each plan is at most this.
    """
    if epsilon <= 0:
        raise ValueError("sinkhorn_divergence: epsilon must be > 0")
    a, b = _pair(a, b, "sinkhorn_divergence")
    ab = _entropic_ot(cdist(a, b), epsilon, max_iter, tol)
    aa = _entropic_ot(cdist(a, a), epsilon, max_iter, tol, symmetric=True)
    bb = _entropic_ot(cdist(b, b), epsilon, max_iter, tol, symmetric=True)
    return ab - 0.5 * aa - 0.5 * bb


def wasserstein1(a: Matrix, b: Matrix) -> float:
    """Exact W1 within the solver budget, Sinkhorn (eps = 0.01 * median cost) beyond it."""
    a, b = _pair(a, b, "wasserstein1")
    if a.shape[0] == b.shape[0] and a.shape[0] <= EXACT_OT_BUDGET:
        return wasserstein1_exact(a, b)
    epsilon = 0.01 * float(np.median(cdist(a, b)))
    return sinkhorn_divergence(a, b, max(epsilon, 1e-12))


def mmd_test(a: Matrix, b: Matrix, rng: Rng, n_permutations: int = 500) -> TwoSampleResult:
    """
    Permutation two-sample test on the unbiased MMD^2 estimate.

    Gaussian kernel with bandwidth equal to the median pairwise distance of
    the pooled sample. p = (1 + #{permuted >= observed}) / (n_permutations + 1).
    """
    a, b = _pair(a, b, "mmd_test")
    m, n = a.shape[0], b.shape[0]
    if m < 2 or n < 2:
        raise DimensionError("mmd_test: each sample needs at least two rows")
    pooled = np.vstack([a, b])
    bandwidth = float(np.median(pdist(pooled)))
    if bandwidth == 0.0:
        raise PreconditionError("mmd_test: degenerate pooled sample (median pairwise distance is 0)")
    kernel = rbf_kernel(pooled, gamma=1.0 / (2.0 * bandwidth ** 2))
    diag = np.diag(kernel)

    def statistics(masks: np.ndarray) -> np.ndarray:
        # masks: (m+n, P) indicator of membership in the first sample
        other = 1.0 - masks
        k_masks, k_other = kernel @ masks, kernel @ other
        sxx = np.sum(masks * k_masks, axis=0) - diag @ masks
        syy = np.sum(other * k_other, axis=0) - diag @ other
        sxy = np.sum(masks * k_other, axis=0)
        return sxx / (m * (m - 1)) + syy / (n * (n - 1)) - 2.0 * sxy / (m * n)

    observed_mask = np.zeros((m + n, 1))
    observed_mask[:m] = 1.0
    observed = float(statistics(observed_mask)[0])

    exceed = 0
    chunk = 100
    for start in range(0, n_permutations, chunk):
        count = min(chunk, n_permutations - start)
        masks = np.zeros((m + n, count))
        for c in range(count):
            masks[rng.permutation(m + n)[:m], c] = 1.0
        exceed += int(np.sum(statistics(masks) >= observed))
    p = (1 + exceed) / (n_permutations + 1)
    return TwoSampleResult(statistic=observed, permutation_p=p, n_permutations=n_permutations)


def _subsample(x: Matrix, count: int, rng: Rng) -> Matrix:
    if x.shape[0] <= count:
        return x
    return x[rng.permutation(x.shape[0])[:count]]


def _ordered(models) -> List[DomainModel]:
    return list(models.values()) if isinstance(models, Mapping) else list(models)


def check_path_consistency(models, path: Sequence, data: Matrix, rng: Rng,
                           cfg: Optional[CheckConfig] = None) -> TwoSampleResult:
    """
    Compare translating `data` along `path` with translating it directly.

    Args:
        models: Mapping domain id -> DomainModel, or a sequence indexed by position.
        path: Domain keys i_1, ..., i_l with l >= 3.
        data: Rows of domain i_1.

    Returns:
        mmd_test between the two output samples, with the max pointwise gap
        between paired outputs.
    """
    cfg = cfg or CheckConfig()
    if len(path) < 3:
        raise PreconditionError("check_path_consistency: path must visit at least three domains")
    chain = [models[key] for key in path]
    x = _subsample(as_matrix(data, "check_path_consistency"), cfg.eval_samples, rng.split("subsample"))
    via_path = translate_path(chain, x, rng.split("path"))
    direct = translate(chain[0], chain[-1], x, rng.split("direct"))
    result = mmd_test(via_path, direct, rng.split("mmd"), cfg.n_permutations)
    result.pointwise_gap = float(np.max(np.abs(via_path - direct)))
    logger.info(f"Path consistency over {len(path)} domains: stat={result.statistic:.3g} "
                f"p={result.permutation_p:.3f} gap={result.pointwise_gap:.3g}")
    return result


def joint_sample(models: Sequence[DomainModel], source: int, x: Matrix, rng: Rng) -> Matrix:
    """
    Draws from Q^(source): encode x, decode its z into every other domain with fresh noise.

    Columns are the concatenation (x_1, ..., x_k) in model order.
    """
    src = models[source]
    z = encode(src, x).z
    blocks = []
    for j, dst in enumerate(models):
        if j == source:
            blocks.append(x)
            continue
        noise_rng = rng.split(f"target-{j}")
        noise = noise_rng.normal(z.shape[0], dst.noise_dim) if dst.noise_dim > 0 else np.zeros((z.shape[0], 0))
        blocks.append(decode(dst, LatentCode(z=z, n=noise)))
    return np.hstack(blocks)


def check_global_consistency(models, marginals, rng: Rng,
                             cfg: Optional[CheckConfig] = None) -> Dict[Tuple[int, int], TwoSampleResult]:
    """
    Pairwise tests between the joints Q^(i) built from each source domain.

    Args:
        models: Mapping or sequence of k >= 2 models.
        marginals: Rows per domain, keyed like `models`.

    Returns:
        {(i, i'): TwoSampleResult} over positions i < i'
    """
    cfg = cfg or CheckConfig()
    ordered = _ordered(models)
    rows = _ordered(marginals)
    if len(ordered) < 2:
        raise PreconditionError("check_global_consistency: at least two models are required")
    if len(rows) != len(ordered):
        raise DimensionError("check_global_consistency: one marginal per model is required")
    joints = []
    for i, (model, x) in enumerate(zip(ordered, rows)):
        source_rng = rng.split(f"source-{i}")
        sample = _subsample(as_matrix(x, "check_global_consistency"), cfg.eval_samples, source_rng.split("subsample"))
        joints.append(joint_sample(ordered, i, sample, source_rng))
    table = {}
    for i, j in combinations(range(len(ordered)), 2):
        table[(i, j)] = mmd_test(joints[i], joints[j], rng.split(f"mmd-{i}-{j}"), cfg.n_permutations)
        logger.info(f"Global consistency Q({i + 1}) vs Q({j + 1}): p={table[(i, j)].permutation_p:.3f}")
    return table


def prior_codes(model: DomainModel, count: int, rng: Rng, bank=None) -> Matrix:
    """(z, n) samples of the latent prior: z from the bank or N(0, I_d), n from N(0, I_m)."""
    if bank is None:
        z = rng.split("z").normal(count, model.latent_dim)
    else:
        z, _ = bank.draw(count, rng.split("z"))
    if model.noise_dim == 0:
        return z
    return np.hstack([z, rng.split("n").normal(count, model.noise_dim)])


def check_transport_bound(src: DomainModel, dst: DomainModel, marginals, prior, rng: Rng,
                          cfg: Optional[CheckConfig] = None) -> BoundReport:
    """
    Evaluate W(Q_{src->dst}, P_dst) <= gamma*W(E_src#P_src, prior_src) + gamma*W(prior_dst, E_dst#P_dst) + recon.

    Args:
        src, dst: Frozen models.
        marginals: (X_src, X_dst) rows.
        prior: SampleBank for z, or None for N(0, I_d).
        rng: Randomness for subsampling, translation noise and prior draws.

    Returns:
        BoundReport with gamma = Lipschitz upper bound of dst's decoder
    """
    cfg = cfg or CheckConfig()
    x_src, x_dst = (as_matrix(x, "check_transport_bound") for x in marginals)
    budget = min(cfg.bound_samples, EXACT_OT_BUDGET, x_src.shape[0], x_dst.shape[0])
    xs = _subsample(x_src, budget, rng.split("subsample-src"))
    xd = _subsample(x_dst, budget, rng.split("subsample-dst"))

    gamma = dst.decoder.lipschitz_upper_bound()
    lhs = wasserstein1_exact(translate(src, dst, xs, rng.split("translate")), xd)
    term_src = wasserstein1_exact(encode(src, xs).concat(), prior_codes(src, budget, rng.split("prior-src"), prior))
    term_dst = wasserstein1_exact(prior_codes(dst, budget, rng.split("prior-dst"), prior), encode(dst, xd).concat())
    recon = float(np.mean(np.linalg.norm(xd - reconstruct(dst, xd), axis=1)))
    report = BoundReport.build(lhs, gamma, term_src, term_dst, recon)
    logger.info(f"Transport bound {src.domain_id}->{dst.domain_id}: lhs={report.lhs:.4g} "
                f"rhs={report.rhs:.4g} holds={report.holds}")
    return report


def empirical_lipschitz(fn: Callable[[Matrix], Matrix], x: Matrix, rng: Rng, pairs: int = 10000) -> float:
    """Lower bound on the Lipschitz constant: max ||f(a)-f(b)|| / ||a-b|| over sampled row pairs."""
    x = as_matrix(x, "empirical_lipschitz")
    i = rng.split("i").integers(x.shape[0], pairs)
    j = rng.split("j").integers(x.shape[0], pairs)
    keep = np.linalg.norm(x[i] - x[j], axis=1) > 0
    i, j = i[keep], j[keep]
    fx = fn(x)
    ratios = np.linalg.norm(fx[i] - fx[j], axis=1) / np.linalg.norm(x[i] - x[j], axis=1)
    return float(ratios.max()) if ratios.size else 0.0


def reconstruction_report(model: DomainModel, x: Matrix) -> Dict[str, float]:
    """Reconstruction MSE (squared norm per row) and its ratio to the per-domain trace variance."""
    x = as_matrix(x, "reconstruction_report")
    diff = x - reconstruct(model, x)
    mse = float(np.mean(np.sum(diff * diff, axis=1)))
    trace_var = float(np.sum(np.var(x, axis=0)))
    return {"mse": mse, "trace_variance": trace_var, "relative": mse / trace_var if trace_var > 0 else float("inf")}


def latent_prior_test(model: DomainModel, x: Matrix, rng: Rng, cfg: Optional[CheckConfig] = None,
                      prior=None) -> TwoSampleResult:
    """MMD test between E#P_X and the latent prior (z from `prior` bank or N(0,I_d), n ~ N(0,I_m))."""
    cfg = cfg or CheckConfig()
    sample = _subsample(as_matrix(x, "latent_prior_test"), cfg.eval_samples, rng.split("subsample"))
    codes = encode(model, sample).concat()
    return mmd_test(codes, prior_codes(model, sample.shape[0], rng.split("prior"), prior),
                    rng.split("mmd"), cfg.n_permutations)


def translation_grid(models, data, rng: Rng) -> Dict[Tuple[int, int], Matrix]:
    """All k(k-1) ordered translations obtained by composing encoders and decoders."""
    ordered, rows = _ordered(models), _ordered(data)
    grid = {}
    for i, src in enumerate(ordered):
        for j, dst in enumerate(ordered):
            if i != j:
                grid[(i, j)] = translate(src, dst, rows[i], rng.split(f"grid-{i}-{j}"))
    return grid


def latent_feature_correlation(model: DomainModel, x: Matrix, alpha: float = 0.01) -> pd.DataFrame:
    """
    Pearson correlation of every observed coordinate with every latent dimension.

    Significance uses a Bonferroni correction over all (feature, latent) pairs.
    """
    x = as_matrix(x, "latent_feature_correlation")
    z = encode(model, x).z
    tests = x.shape[1] * z.shape[1]
    records = []
    for f in range(x.shape[1]):
        for k in range(z.shape[1]):
            if np.ptp(x[:, f]) == 0.0 or np.ptp(z[:, k]) == 0.0:
                r, p = 0.0, 1.0
            else:
                r, p = pearsonr(x[:, f], z[:, k])
            records.append({"feature": f, "latent": k, "r": float(r), "p": float(p),
                            "significant": bool(p * tests < alpha)})
    return pd.DataFrame.from_records(records)


def cluster_agreement(src: DomainModel, dst: DomainModel, x_src: Matrix, src_labels: np.ndarray,
                      dst_data: Matrix, dst_labels: np.ndarray, rng: Rng) -> float:
    """
    Fraction of translated rows whose nearest destination class centroid matches the source label.

    Class centroids are fitted on labelled destination rows.
    """
    centroids = NearestCentroid().fit(as_matrix(dst_data, "cluster_agreement"), np.asarray(dst_labels))
    predicted = centroids.predict(translate(src, dst, x_src, rng))
    return float(np.mean(predicted == np.asarray(src_labels)))
