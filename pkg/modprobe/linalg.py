"""Dense linear algebra and special functions used by the analysis pipeline.

PUBLIC API:
- sym_eig(a) -> EigenResult
- kmeans(points, k, seed) -> np.ndarray of labels
- spearman_rho(x, y) -> float
- spearman_matrix(x, y=None) -> np.ndarray of pairwise rank correlations
- chi2_sf(x, dof) / chi2_logsf(x, dof) -> float
- bates_cdf(x, n) -> float

All functions are pure; matrices are float64 numpy arrays in row-major order.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import special, stats
from sklearn.cluster import KMeans

from .errors import InvalidArgumentError, NumericFailureError, UndefinedCorrelationError

SYMMETRY_TOLERANCE = 1e-9
KMEANS_RESTARTS = 10
BATES_MAX_N = 25


@dataclass(frozen=True)
class EigenResult:
    """Full spectrum of a symmetric matrix, eigenvalues ascending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # column j pairs with eigenvalue j


def _as_finite_matrix(a: np.ndarray | list) -> np.ndarray:
    matrix = np.asarray(a, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise InvalidArgumentError(f"expected a square matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise InvalidArgumentError("matrix contains non-finite entries")
    return matrix


def sym_eig(a: np.ndarray | list) -> EigenResult:
    """Eigendecomposition of a dense symmetric matrix (LAPACK syevr via scipy)."""
    matrix = _as_finite_matrix(a)
    scale = max(1.0, float(np.abs(matrix).max(initial=0.0)))
    if np.abs(matrix - matrix.T).max(initial=0.0) > SYMMETRY_TOLERANCE * scale:
        raise InvalidArgumentError("matrix is not symmetric")

    try:
        values, vectors = scipy.linalg.eigh(matrix, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise NumericFailureError(f"symmetric eigensolver did not converge: {e}") from e

    return EigenResult(eigenvalues=values, eigenvectors=vectors)


def _first_appearance_labels(labels: np.ndarray) -> np.ndarray:
    """Renumber labels 0, 1, 2, ... in order of first appearance."""
    mapping: dict[int, int] = {}
    out = np.empty(len(labels), dtype=np.int64)
    for i, label in enumerate(labels):
        out[i] = mapping.setdefault(int(label), len(mapping))
    return out


def kmeans(points: np.ndarray | list, k: int, seed: int) -> np.ndarray:
    """Lloyd k-means with k-means++ seeding and 10 restarts, best inertia kept."""
    data = np.asarray(points, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    n_points = data.shape[0]
    if k < 1:
        raise InvalidArgumentError(f"k must be at least 1, got {k}")
    if k > n_points:
        raise InvalidArgumentError(f"k={k} exceeds the number of points ({n_points})")
    if k == 1:
        return np.zeros(n_points, dtype=np.int64)

    model = KMeans(
        n_clusters=k,
        init="k-means++",
        n_init=KMEANS_RESTARTS,
        algorithm="lloyd",
        random_state=seed,
    )
    labels = model.fit_predict(data)
    return _first_appearance_labels(labels)


def _standardized_ranks(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Midranks of each row, centered and scaled to unit norm; constant rows become 0."""
    ranks = stats.rankdata(x, method="average", axis=1)
    ranks -= ranks.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.einsum("ij,ij->i", ranks, ranks))
    constant = norms == 0.0
    ranks[~constant] /= norms[~constant, None]
    ranks[constant] = 0.0
    return ranks, constant


def spearman_rho(x: np.ndarray | list, y: np.ndarray | list) -> float:
    """Spearman correlation with midrank ties."""
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidArgumentError("sequences must be one-dimensional and of equal length")
    if len(a) < 2:
        raise InvalidArgumentError("need at least two observations")

    ranks, constant = _standardized_ranks(np.vstack([a, b]))
    if constant.any():
        raise UndefinedCorrelationError("correlation is undefined for a constant sequence")
    return float(np.clip(ranks[0] @ ranks[1], -1.0, 1.0))


def spearman_matrix(x: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
    """Pairwise Spearman correlations between the rows of x (and y).

    Rows are series, columns observations. Entries involving a constant row
    are 0 rather than undefined.
    """
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] < 2:
        raise InvalidArgumentError("series matrix must be 2-D with at least two observations")
    ranks_a, _ = _standardized_ranks(a)
    if y is None:
        return np.clip(ranks_a @ ranks_a.T, -1.0, 1.0)

    b = np.asarray(y, dtype=np.float64)
    if b.ndim != 2 or b.shape[1] != a.shape[1]:
        raise InvalidArgumentError("both series matrices need the same number of observations")
    ranks_b, _ = _standardized_ranks(b)
    return np.clip(ranks_a @ ranks_b.T, -1.0, 1.0)


def _check_chi2_args(x: float, dof: int) -> None:
    if not math.isfinite(x) or x < 0:
        raise InvalidArgumentError(f"chi-squared statistic must be finite and >= 0, got {x}")
    if dof < 1:
        raise InvalidArgumentError(f"degrees of freedom must be positive, got {dof}")


def chi2_sf(x: float, dof: int) -> float:
    """Chi-squared survival function, Q(dof/2, x/2)."""
    _check_chi2_args(x, dof)
    if x == 0:
        return 1.0
    return float(special.gammaincc(dof / 2.0, x / 2.0))


def chi2_logsf(x: float, dof: int) -> float:
    """Natural log of the chi-squared survival function, finite where chi2_sf underflows."""
    _check_chi2_args(x, dof)
    return float(stats.chi2.logsf(x, dof))


def _bates_lower(x: float, n: int) -> float:
    """P(mean of n uniforms <= x), alternating sum in log-magnitude form."""
    s = n * x
    log_norm = math.lgamma(n + 1)
    terms = []
    for k in range(int(math.floor(s)) + 1):
        base = s - k
        if base <= 0.0:
            continue
        log_mag = math.log(math.comb(n, k)) + n * math.log(base) - log_norm
        terms.append((-1.0) ** k * math.exp(log_mag))
    return math.fsum(terms)


def bates_cdf(x: float, n: int) -> float:
    """CDF of the Bates(n) distribution (mean of n independent uniforms)."""
    if not 0.0 <= x <= 1.0:
        raise InvalidArgumentError(f"Bates argument must lie in [0, 1], got {x}")
    if not 1 <= n <= BATES_MAX_N:
        raise InvalidArgumentError(f"Bates n must lie in [1, {BATES_MAX_N}], got {n}")

    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    if x > 0.5:
        value = 1.0 - _bates_lower(1.0 - x, n)
    else:
        value = _bates_lower(x, n)
    return min(1.0, max(0.0, value))
