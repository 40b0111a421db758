"""Moran's I basis functions, knot designs and the covariance structures of
the latent processes (exponential covariance for basis coefficients,
separable MCAR precision for the areal process)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import pdist, squareform

from .errors import InvalidArgument, NumericalError

JITTER = 1e-8
MAX_JITTER = 1e-4


@dataclass(frozen=True, eq=False)
class BasisSet:
    """Basis matrix ``G`` (n x r) with optional knots (r x 2)."""

    G: np.ndarray
    knots: Optional[np.ndarray] = None
    eigenvalues: Optional[np.ndarray] = None

    @property
    def r(self) -> int:
        return self.G.shape[1]

    def with_knots(self, knots) -> "BasisSet":
        knots = np.asarray(knots, dtype=float).reshape(-1, 2)
        if knots.shape[0] != self.r:
            raise InvalidArgument(f"need {self.r} knots, got {knots.shape[0]}")
        return BasisSet(self.G, knots, self.eigenvalues)


@dataclass(frozen=True)
class CovarianceParams:
    sigma2_eta: float
    phi: float

    def __post_init__(self):
        if not self.sigma2_eta > 0:
            raise InvalidArgument("sigma2_eta must be positive")
        if not self.phi >= 0:
            raise InvalidArgument("phi must be non-negative")


def _check_square_symmetric(W) -> np.ndarray:
    W = np.asarray(W.toarray() if sp.issparse(W) else W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise InvalidArgument("W must be square")
    if not np.allclose(W, W.T, rtol=0, atol=1e-12):
        raise InvalidArgument("W must be symmetric")
    return W


def morans_operator(W) -> np.ndarray:
    """Doubly centred adjacency ``(I - 11'/n) W (I - 11'/n)``."""
    W = _check_square_symmetric(W)
    n = W.shape[0]
    if n < 2:
        raise InvalidArgument("Moran operator needs at least two units")
    C = np.eye(n) - np.full((n, n), 1.0 / n)
    M = C @ W @ C
    return (M + M.T) / 2


def _canonical_signs(V: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    V = V.copy()
    for k in range(V.shape[1]):
        col = V[:, k]
        nz = np.flatnonzero(np.abs(col) > tol * max(np.abs(col).max(), 1e-300))
        if nz.size and col[nz[0]] < 0:
            V[:, k] = -col
    return V


def moran_basis(W, r: int) -> BasisSet:
    """First ``r`` eigenvectors of the Moran operator, largest eigenvalue first.

    Each column is flipped so that its first nonzero component is positive.
    """
    M = morans_operator(W)
    n = M.shape[0]
    if int(r) != r or r < 1 or r > n - 1:
        raise InvalidArgument(f"r must be an integer in [1, {n - 1}], got {r!r}")
    vals, vecs = np.linalg.eigh(M)
    order = np.argsort(-vals, kind="stable")[:r]
    G = _canonical_signs(vecs[:, order])
    return BasisSet(G, None, vals[order])


def select_knots(centroids, r: int, seed: int = 0, return_index: bool = False):
    """Space-filling subset of ``r`` centroids by greedy farthest-point search.

    The first knot is the centroid nearest the centre of the bounding box.
    The seed only breaks exact distance ties. Knots are returned in the
    original centroid order.
    """
    pts = np.asarray(centroids, dtype=float).reshape(-1, 2)
    n = pts.shape[0]
    if int(r) != r or r < 1 or r > n:
        raise InvalidArgument(f"r must be in [1, {n}], got {r!r}")
    rng = np.random.default_rng(seed)
    center = (pts.min(axis=0) + pts.max(axis=0)) / 2

    def pick(score):
        # maximise score; ties within rounding go to the rng
        best = score.max()
        cand = np.flatnonzero(score >= best - 1e-12 * max(1.0, abs(best)))
        return int(cand[0]) if cand.size == 1 else int(rng.choice(cand))

    chosen = [pick(-np.linalg.norm(pts - center, axis=1))]
    mind = np.linalg.norm(pts - pts[chosen[0]], axis=1)
    for _ in range(r - 1):
        score = mind.copy()
        score[chosen] = -np.inf
        k = pick(score)
        chosen.append(k)
        mind = np.minimum(mind, np.linalg.norm(pts - pts[k], axis=1))
    idx = np.sort(np.array(chosen))
    return (pts[idx], idx) if return_index else pts[idx]


def knot_distances(knots) -> np.ndarray:
    knots = np.asarray(knots, dtype=float).reshape(-1, 2)
    d = squareform(pdist(knots))
    if knots.shape[0] > 1 and np.min(d[np.triu_indices_from(d, k=1)]) <= 0:
        raise InvalidArgument("knots must be distinct")
    return d


def exp_correlation(dist: np.ndarray, phi: float):
    """Jittered correlation ``exp(-phi d) + j I`` and its lower Cholesky factor.

    The jitter starts at 1e-8 and is raised tenfold up to 1e-4 until the
    factorization succeeds. Returns ``(R, L)``.
    """
    base = np.exp(-phi * dist)
    jitter = JITTER
    while True:
        R = base + jitter * np.eye(base.shape[0])
        try:
            return R, np.linalg.cholesky(R)
        except np.linalg.LinAlgError:
            jitter *= 10
            if jitter > MAX_JITTER * (1 + 1e-12):
                raise NumericalError(f"exponential covariance not factorizable at phi={phi!r}")


def exp_covariance(knots, params: CovarianceParams) -> np.ndarray:
    """``K_ij = sigma2_eta * exp(-phi |c_i - c_j|)`` plus the jitter policy."""
    R, _ = exp_correlation(knot_distances(knots), params.phi)
    return params.sigma2_eta * R


class CarStructure:
    """Adjacency ``W`` and degree matrix ``D`` of a CAR prior.

    ``logdet(rho)`` uses the eigenvalues of ``D^-1/2 W D^-1/2`` computed once,
    so that ``log|D - rho W| = sum log d_i + sum log(1 - rho lam_i)``.
    """

    def __init__(self, W):
        W = _check_square_symmetric(W)
        if np.any(np.diag(W) != 0):
            raise InvalidArgument("W must have a zero diagonal")
        self.n = W.shape[0]
        self.W = sp.csr_matrix(W)
        self.d = W.sum(axis=1)
        if np.any(self.d <= 0):
            raise InvalidArgument("CAR structure needs every unit to have a neighbour")
        s = 1.0 / np.sqrt(self.d)
        self._lam = np.linalg.eigvalsh(s[:, None] * W * s[None, :])
        self._logdet_d = float(np.sum(np.log(self.d)))

    @property
    def D(self):
        return sp.diags(self.d)

    def Q(self, rho: float):
        """Sparse ``D - rho W``."""
        return (sp.diags(self.d) - rho * self.W).tocsr()

    def is_pd(self, rho: float) -> bool:
        return bool(np.all(1.0 - rho * self._lam > 0))

    def logdet(self, rho: float) -> float:
        t = 1.0 - rho * self._lam
        if np.any(t <= 0):
            raise InvalidArgument(f"D - rho W is not positive definite at rho={rho!r}")
        return self._logdet_d + float(np.sum(np.log(t)))

    def check_rho_bounds(self, lower: float, upper: float) -> None:
        for rho in (lower + 1e-6, upper - 1e-6):
            if not self.is_pd(rho):
                raise InvalidArgument(f"D - rho W is not positive definite at rho={rho!r}")


def t_matrix_inverse(tau: float) -> np.ndarray:
    """Inverse of ``[[1, tau], [tau, 1]]``."""
    return np.array([[1.0, -tau], [-tau, 1.0]]) / (1.0 - tau * tau)


class McarPrecision:
    """Precision ``Sigma^-1 (x) (D - rho W)`` of a variable-major MCAR vector.

    ``Sigma = nu2 T(tau)`` for two variables and ``Sigma = nu2`` for one.
    Never forms the dense Kronecker product.
    """

    def __init__(self, car: CarStructure, rho: float, tau: float, nu2: float, n_vars: int = 2):
        if n_vars not in (1, 2):
            raise InvalidArgument("n_vars must be 1 or 2")
        if not nu2 > 0:
            raise InvalidArgument("nu2 must be positive")
        if n_vars == 2 and not abs(tau) < 1:
            raise InvalidArgument("|tau| must be < 1")
        if not car.is_pd(rho):
            raise InvalidArgument(f"D - rho W is not positive definite at rho={rho!r}")
        self.car, self.rho, self.tau, self.nu2, self.n_vars = car, rho, tau, nu2, n_vars
        if n_vars == 2:
            self.sigma_inv = t_matrix_inverse(tau) / nu2
        else:
            self.sigma_inv = np.array([[1.0 / nu2]])
        self.Q = car.Q(rho)

    @property
    def dim(self) -> int:
        return self.n_vars * self.car.n

    def _blocks(self, psi):
        psi = np.asarray(psi, dtype=float)
        if psi.shape != (self.dim,):
            raise InvalidArgument(f"psi must have length {self.dim}")
        return psi.reshape(self.n_vars, self.car.n)

    def quad_form(self, psi) -> float:
        blocks = self._blocks(psi)
        Qb = np.stack([self.Q @ b for b in blocks])
        return float(np.einsum("ab,ai,bi->", self.sigma_inv, blocks, Qb))

    def matvec(self, psi) -> np.ndarray:
        blocks = self._blocks(psi)
        Qb = np.stack([self.Q @ b for b in blocks])
        return (self.sigma_inv @ Qb).reshape(-1)

    def logdet(self) -> float:
        n = self.car.n
        _, ld_sigma_inv = np.linalg.slogdet(self.sigma_inv)
        return n * ld_sigma_inv + self.n_vars * self.car.logdet(self.rho)

    def log_density(self, psi) -> float:
        """Zero-mean Gaussian log-density of ``psi`` under this precision."""
        return 0.5 * (self.logdet() - self.quad_form(psi) - self.dim * np.log(2 * np.pi))

    def sparse(self):
        return sp.kron(sp.csr_matrix(self.sigma_inv), self.Q, format="csr")


def mcar_precision(car: CarStructure, rho: float, tau: float, nu2: float,
                   n_vars: int = 2) -> McarPrecision:
    return McarPrecision(car, rho, tau, nu2, n_vars)
