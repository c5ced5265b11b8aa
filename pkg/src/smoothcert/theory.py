"""Gaussian logit-margin model: calculators and simulator.

Models an ensemble of k correlated classifiers whose logits at a fixed
input are jointly Gaussian: a clean component (classifier-to-classifier
variation, covariance cov_clean, inter-classifier correlation corr_clean)
plus a perturbation component (noise-to-noise variation, cov_perturb,
corr_perturb). From it: margin statistics of the soft-vote, the ensemble
variance-reduction ratio, Monte Carlo success probability, a Chebyshev
lower bound, the distribution of the certified radius, and estimation of
the model parameters from logit samples.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .bounds import binomial_pmf, gaussian_quantile, lower_conf_bound_batch
from .classifiers import DOMAIN_ORTHANT, DOMAIN_SYNTH, counter_stream, standard_normals

__all__ = [
    "GaussianLogitModel",
    "MarginStatistics",
    "OrthantEstimate",
    "RadiusDistribution",
    "TheorySweepRow",
    "margin_statistics",
    "margin_variances_closed_form",
    "variance_ratio",
    "success_probability_mc",
    "chebyshev_lower_bound",
    "radius_distribution",
    "estimate_model",
    "synthesize_logit_samples",
    "k_sweep",
    "write_model_csv",
    "read_model_csv",
    "write_logit_samples_csv",
    "read_logit_samples_csv",
]

_MC_CHUNK = 1 << 15


def _check_covariance(name: str, mat: np.ndarray, m: int) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.shape != (m, m):
        raise ValueError(f"{name} must be {m}x{m}")
    if not np.all(np.isfinite(mat)):
        raise ValueError(f"{name} must be finite")
    scale = max(1.0, float(np.abs(mat).max()))
    if np.abs(mat - mat.T).max() > 1e-9 * scale:
        raise ValueError(f"{name} must be symmetric")
    eigs = np.linalg.eigvalsh((mat + mat.T) / 2.0)
    if eigs.min() < -1e-10 * max(1.0, float(np.abs(eigs).max())):
        raise ValueError(f"{name} must be positive semidefinite")
    return (mat + mat.T) / 2.0


@dataclass(frozen=True, eq=False)
class GaussianLogitModel:
    """Per-classifier logit distribution at one input.

    mean: class-count vector of mean logits, first entry is the majority
    class by convention. cov_clean / cov_perturb: covariance of the clean
    and perturbation components. corr_clean / corr_perturb: correlation of
    those components across distinct classifiers, in [0, 1].
    """

    mean: np.ndarray
    cov_clean: np.ndarray
    cov_perturb: np.ndarray
    corr_clean: float
    corr_perturb: float

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        if mean.ndim != 1 or len(mean) < 2:
            raise ValueError("mean must be a vector of at least 2 logits")
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean must be finite")
        m = len(mean)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(
            self, "cov_clean", _check_covariance("cov_clean", self.cov_clean, m)
        )
        object.__setattr__(
            self, "cov_perturb", _check_covariance("cov_perturb", self.cov_perturb, m)
        )
        for name in ("corr_clean", "corr_perturb"):
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
            object.__setattr__(self, name, v)

    @property
    def class_count(self) -> int:
        return len(self.mean)


@dataclass(frozen=True, eq=False)
class MarginStatistics:
    """Mean and covariance of the soft-vote margins against class 0."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (len(mean), len(mean)):
            raise ValueError("covariance must be square and match mean")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)


def stacked_covariance(model: GaussianLogitModel, k: int) -> np.ndarray:
    """Joint covariance of the k classifiers' stacked logit vectors.

    Diagonal blocks are cov_perturb + cov_clean; off-diagonal blocks apply
    the inter-classifier correlations componentwise.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    within = model.cov_perturb + model.cov_clean
    between = model.corr_perturb * model.cov_perturb + model.corr_clean * model.cov_clean
    return np.kron(np.eye(k), within - between) + np.kron(np.ones((k, k)), between)


def margin_map(m: int, k: int) -> np.ndarray:
    """Matrix taking stacked logits to soft-vote margins against class 0."""
    d = np.zeros((m - 1, m * k))
    for row in range(m - 1):
        for member in range(k):
            d[row, member * m] = 1.0 / k
            d[row, member * m + row + 1] = -1.0 / k
    return d


def margin_statistics(model: GaussianLogitModel, k: int) -> MarginStatistics:
    """Soft-vote margin mean and covariance for an ensemble of size k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    m = model.class_count
    mean = model.mean[0] - model.mean[1:]
    d = margin_map(m, k)
    cov = d @ stacked_covariance(model, k) @ d.T
    return MarginStatistics(mean=mean, covariance=(cov + cov.T) / 2.0)


def margin_variances_closed_form(model: GaussianLogitModel, k: int):
    """Per-margin variances via the scalar reduction formula.

    Var[margin_i] = ratio(k, corr_perturb) * (P_11 + P_ii - 2 P_1i)
                  + ratio(k, corr_clean) * (C_11 + C_ii - 2 C_1i).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    vr_p = variance_ratio(k, model.corr_perturb)
    vr_c = variance_ratio(k, model.corr_clean)
    p, c = model.cov_perturb, model.cov_clean
    out = []
    for i in range(1, model.class_count):
        sp = p[0, 0] + p[i, i] - 2.0 * p[0, i]
        sc = c[0, 0] + c[i, i] - 2.0 * c[0, i]
        out.append(vr_p * sp + vr_c * sc)
    return np.array(out)


def variance_ratio(k: int, zeta):
    """Ensemble-to-single variance ratio (1 + zeta(k-1))/k.

    Fraction or integer zeta keeps the arithmetic exact (the result is a
    Fraction); float zeta returns a float. The ratio is 1 at k=1 and
    decreases toward zeta as k grows.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0 <= zeta <= 1:
        raise ValueError("zeta must lie in [0, 1]")
    if isinstance(zeta, (Fraction, int)) and not isinstance(zeta, bool):
        return (1 + Fraction(zeta) * (k - 1)) / k
    return (1.0 + float(zeta) * (k - 1)) / k


@dataclass(frozen=True)
class OrthantEstimate:
    """Monte Carlo estimate of a Gaussian positive-orthant probability."""

    estimate: float
    std_error: float
    draws: int


def _spectral_root(cov: np.ndarray) -> np.ndarray:
    """Square root of a PSD matrix; tiny negative eigenvalues are clipped."""
    eigvals, eigvecs = np.linalg.eigh((cov + cov.T) / 2.0)
    tol = 1e-10 * max(1.0, float(np.abs(eigvals).max()))
    if eigvals.min() < -tol:
        raise ValueError("covariance must be positive semidefinite")
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def success_probability_mc(
    stats: MarginStatistics,
    n_mc: int,
    seed: int,
    stream_tag: int = 0,
) -> OrthantEstimate:
    """P(all margins > 0) for the Gaussian margin distribution, by MC.

    Draws arrive in fixed-size chunks with per-chunk counter streams, so
    the estimate depends only on (seed, stream_tag, n_mc).
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    root = _spectral_root(stats.covariance)
    dim = len(stats.mean)
    wins = 0
    done = 0
    chunk_index = 0
    while done < n_mc:
        take = min(_MC_CHUNK, n_mc - done)
        stream = counter_stream(seed, DOMAIN_ORTHANT, chunk_index, stream_tag)
        g = standard_normals(stream, take * dim).reshape(take, dim)
        z = stats.mean + g @ root.T
        wins += int(np.all(z > 0.0, axis=1).sum())
        done += take
        chunk_index += 1
    estimate = wins / n_mc
    std_error = float(np.sqrt(estimate * (1.0 - estimate) / n_mc))
    return OrthantEstimate(estimate=estimate, std_error=std_error, draws=n_mc)


def chebyshev_lower_bound(stats: MarginStatistics) -> float:
    """Distribution-free lower bound on P(all margins > 0).

    max(0, 1 - sum Var[margin_i]/mean_i^2); requires every mean margin
    strictly positive.
    """
    mean = stats.mean
    if np.any(mean <= 0.0):
        raise ValueError("all mean margins must be strictly positive")
    total = float(np.sum(np.diag(stats.covariance) / mean**2))
    return max(0.0, 1.0 - total)


@dataclass(frozen=True)
class RadiusDistribution:
    """Distribution of the certified radius under binomial count draws.

    counts/radii/masses cover the outcomes that certify (radius > 0);
    abstain_mass pools every outcome whose radius statistic is
    nonpositive. expected_radius is E[radius * 1(radius > 0)].
    """

    counts: np.ndarray
    radii: np.ndarray
    masses: np.ndarray
    abstain_mass: float
    expected_radius: float
    n: int
    alpha: float
    sigma: float
    p1: float


def radius_distribution(
    p1: float, n: int, alpha: float, sigma: float
) -> RadiusDistribution:
    """Exact pmf of the certified radius when counts are Binomial(n, p1)."""
    if not 0.0 <= p1 <= 1.0:
        raise ValueError("p1 must lie in [0, 1]")
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly in (0, 1)")
    if not sigma > 0.0:
        raise ValueError("sigma must be positive")
    counts = np.arange(n + 1)
    p_lows = lower_conf_bound_batch(counts, n, 1.0 - alpha)
    masses = binomial_pmf(counts, n, p1)
    certifies = p_lows > 0.5
    radii = sigma * gaussian_quantile(p_lows[certifies])
    kept = masses[certifies]
    return RadiusDistribution(
        counts=counts[certifies],
        radii=radii,
        masses=kept,
        abstain_mass=float(masses[~certifies].sum()),
        expected_radius=float((radii * kept).sum()),
        n=n,
        alpha=alpha,
        sigma=sigma,
        p1=p1,
    )


# ---------------------------------------------------------------------------
# Parameter estimation from logit samples

_INTRA_FLOOR = 1e-6


def _median_ratio(cross_entries, intra: np.ndarray) -> float:
    """Median over entries of cross/intra, floored and clamped to [0, 1].

    Entries whose intra-classifier magnitude falls under a relative floor
    are excluded; if everything is floored out the components are
    numerically identical across classifiers and the correlation is 1.
    """
    magnitude = np.abs(intra)
    keep = magnitude >= _INTRA_FLOOR * max(magnitude.max(), np.finfo(float).tiny)
    if not keep.any():
        return 1.0
    ratios = np.concatenate([(cross[keep] / intra[keep]).ravel() for cross in cross_entries])
    return float(min(1.0, max(0.0, np.median(ratios))))


def estimate_model(clean, perturbed) -> GaussianLogitModel:
    """Fit the logit model from per-classifier clean and perturbed logits.

    clean: (L, m) one clean logit vector per classifier. perturbed:
    (L, n, m) logits of each classifier on the same n perturbed inputs.
    The mean and cov_clean come from the clean logits across classifiers;
    cov_perturb from the perturbation deviations (perturbed - clean),
    pooled; the correlations are median entrywise ratios of
    inter-classifier to intra-classifier covariance.
    """
    clean = np.asarray(clean, dtype=np.float64)
    perturbed = np.asarray(perturbed, dtype=np.float64)
    if clean.ndim != 2:
        raise ValueError("clean must be (classifiers, classes)")
    classifiers, m = clean.shape
    if classifiers < 2:
        raise ValueError("need at least 2 classifiers")
    if m < 2:
        raise ValueError("need at least 2 classes")
    if perturbed.shape[0] != classifiers or perturbed.shape[2:] != (m,):
        raise ValueError("perturbed must be (classifiers, perturbations, classes)")
    draws = perturbed.shape[1]
    if draws < 2:
        raise ValueError("need at least 2 perturbations per classifier")

    mean = clean.mean(axis=0)
    cov_clean = np.cov(clean.T, ddof=1)
    deviations = perturbed - clean[:, None, :]
    centered = deviations - deviations.mean(axis=1, keepdims=True)
    per_clf = np.einsum("lna,lnb->lab", centered, centered) / (draws - 1)
    cov_perturb = per_clf.mean(axis=0)

    cross_p = []
    cross_c = []
    clean_centered = clean - mean
    for a in range(classifiers):
        for b in range(a + 1, classifiers):
            cross_p.append(centered[a].T @ centered[b] / (draws - 1))
            outer = np.outer(clean_centered[a], clean_centered[b])
            cross_c.append((outer + outer.T) / 2.0)
    corr_perturb = _median_ratio(cross_p, cov_perturb)
    corr_clean = _median_ratio(cross_c, cov_clean)
    return GaussianLogitModel(
        mean=mean,
        cov_clean=cov_clean,
        cov_perturb=cov_perturb,
        corr_clean=corr_clean,
        corr_perturb=corr_perturb,
    )


def synthesize_logit_samples(
    model: GaussianLogitModel, classifiers: int, draws: int, seed: int
):
    """Draw (clean, perturbed) logit samples distributed per the model.

    Shared-plus-individual construction: each component is
    sqrt(corr) * common + sqrt(1 - corr) * individual, which yields the
    model's within- and between-classifier covariances exactly.
    """
    if classifiers < 2:
        raise ValueError("need at least 2 classifiers")
    if draws < 2:
        raise ValueError("need at least 2 perturbations per classifier")
    m = model.class_count
    root_c = _spectral_root(model.cov_clean)
    root_p = _spectral_root(model.cov_perturb)
    stream = counter_stream(seed, DOMAIN_SYNTH, 0, 0)
    total = m + classifiers * m + draws * m + classifiers * draws * m
    g = standard_normals(stream, total)
    pos = 0

    def take(shape):
        nonlocal pos
        count = int(np.prod(shape))
        block = g[pos : pos + count].reshape(shape)
        pos += count
        return block

    common_clean = take((m,))
    indiv_clean = take((classifiers, m))
    common_pert = take((draws, m))
    indiv_pert = take((classifiers, draws, m))

    wc, ic = np.sqrt(model.corr_clean), np.sqrt(1.0 - model.corr_clean)
    wp, ip = np.sqrt(model.corr_perturb), np.sqrt(1.0 - model.corr_perturb)
    clean = model.mean + (wc * common_clean + ic * indiv_clean) @ root_c.T
    shifts = wp * common_pert[None, :, :] + ip * indiv_pert
    perturbed = clean[:, None, :] + shifts @ root_p.T
    return clean, perturbed


# ---------------------------------------------------------------------------
# Sweeps and CSV interfaces


@dataclass(frozen=True)
class TheorySweepRow:
    k: int
    var_ratio_p: float
    var_ratio_c: float
    p1: float
    p1_se: float
    chebyshev: float
    expected_radius: float


def k_sweep(
    model: GaussianLogitModel,
    ks,
    *,
    n: int,
    alpha: float,
    sigma: float,
    n_mc: int,
    seed: int,
) -> list[TheorySweepRow]:
    """Ensemble-size sweep: variance ratios, success probability, radius.

    The Chebyshev column falls back to 0.0 when some mean margin is
    nonpositive (the bound's precondition fails there).
    """
    rows = []
    for k in ks:
        k = int(k)
        stats = margin_statistics(model, k)
        est = success_probability_mc(stats, n_mc, seed, stream_tag=k)
        if np.all(stats.mean > 0.0):
            cheb = chebyshev_lower_bound(stats)
        else:
            cheb = 0.0
        dist = radius_distribution(est.estimate, n, alpha, sigma)
        rows.append(
            TheorySweepRow(
                k=k,
                var_ratio_p=float(variance_ratio(k, model.corr_perturb)),
                var_ratio_c=float(variance_ratio(k, model.corr_clean)),
                p1=est.estimate,
                p1_se=est.std_error,
                chebyshev=cheb,
                expected_radius=dist.expected_radius,
            )
        )
    return rows


def write_model_csv(model: GaussianLogitModel, path) -> None:
    """Serialize a model as (field, row, col, value) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["field", "row", "col", "value"])
        for i, v in enumerate(model.mean):
            writer.writerow(["mean", i, 0, repr(float(v))])
        for name, mat in (
            ("cov_clean", model.cov_clean),
            ("cov_perturb", model.cov_perturb),
        ):
            for i in range(model.class_count):
                for j in range(model.class_count):
                    writer.writerow([name, i, j, repr(float(mat[i, j]))])
        writer.writerow(["corr_clean", 0, 0, repr(model.corr_clean)])
        writer.writerow(["corr_perturb", 0, 0, repr(model.corr_perturb)])


def read_model_csv(path) -> GaussianLogitModel:
    """Load a model written by write_model_csv."""
    cells: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["field", "row", "col", "value"]:
            raise ValueError("model CSV must have columns field,row,col,value")
        for line in reader:
            key = (line["field"], int(line["row"]), int(line["col"]))
            cells[key] = float(line["value"])
    mean_entries = sorted(k[1] for k in cells if k[0] == "mean")
    if not mean_entries or mean_entries != list(range(len(mean_entries))):
        raise ValueError("model CSV is missing mean entries")
    m = len(mean_entries)
    mean = np.array([cells[("mean", i, 0)] for i in range(m)])
    mats = {}
    for name in ("cov_clean", "cov_perturb"):
        mat = np.empty((m, m))
        for i in range(m):
            for j in range(m):
                try:
                    mat[i, j] = cells[(name, i, j)]
                except KeyError:
                    raise ValueError(f"model CSV is missing {name}[{i},{j}]") from None
        mats[name] = mat
    for name in ("corr_clean", "corr_perturb"):
        if (name, 0, 0) not in cells:
            raise ValueError(f"model CSV is missing {name}")
    return GaussianLogitModel(
        mean=mean,
        cov_clean=mats["cov_clean"],
        cov_perturb=mats["cov_perturb"],
        corr_clean=cells[("corr_clean", 0, 0)],
        corr_perturb=cells[("corr_perturb", 0, 0)],
    )


def write_logit_samples_csv(clean, perturbed, path) -> None:
    """Dump logit samples as (classifier_id, perturbation_id, class, logit).

    Clean rows carry perturbation_id -1.
    """
    clean = np.asarray(clean, dtype=np.float64)
    perturbed = np.asarray(perturbed, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["classifier_id", "perturbation_id", "class", "logit"])
        for l in range(clean.shape[0]):
            for c in range(clean.shape[1]):
                writer.writerow([l, -1, c, repr(float(clean[l, c]))])
        for l in range(perturbed.shape[0]):
            for j in range(perturbed.shape[1]):
                for c in range(perturbed.shape[2]):
                    writer.writerow([l, j, c, repr(float(perturbed[l, j, c]))])


def read_logit_samples_csv(path):
    """Load a dump written by write_logit_samples_csv -> (clean, perturbed)."""
    cells: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["classifier_id", "perturbation_id", "class", "logit"]:
            raise ValueError(
                "logit CSV must have columns classifier_id,perturbation_id,class,logit"
            )
        for line in reader:
            key = (int(line["classifier_id"]), int(line["perturbation_id"]), int(line["class"]))
            cells[key] = float(line["logit"])
    if not cells:
        raise ValueError("logit CSV is empty")
    classifiers = 1 + max(k[0] for k in cells)
    draws = 1 + max(k[1] for k in cells)
    m = 1 + max(k[2] for k in cells)
    clean = np.empty((classifiers, m))
    perturbed = np.empty((classifiers, draws, m))
    try:
        for l in range(classifiers):
            for c in range(m):
                clean[l, c] = cells[(l, -1, c)]
            for j in range(draws):
                for c in range(m):
                    perturbed[l, j, c] = cells[(l, j, c)]
    except KeyError as missing:
        raise ValueError(f"logit CSV is missing entry {missing}") from None
    return clean, perturbed
