"""The three multiscale hierarchies (SRE, MCAR, OH) and their univariate
reductions: configuration, unknowns, and log-density evaluations.

Data models on the observed supports are independent Gaussians whose means
aggregate the partition-scale mean through ``P1``/``P2`` and whose variances
are ``sigma_k^2 (P_k P_k')_ii``.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from .basis import (BasisSet, CarStructure, McarPrecision, exp_correlation,
                    knot_distances, moran_basis, select_knots)
from .errors import InvalidArgument, NumericalError
from .supports import ArealSupport, PartitionMatrix, diag_ppt

LOG_2PI = float(np.log(2 * np.pi))

_KIND_ALIASES = {
    "sre": "sre", "ms-sre": "sre",
    "mcar": "mcar", "ms-mcar": "mcar",
    "oh": "oh", "ms-oh": "oh",
}
KIND_LABELS = {"sre": "MS-SRE", "mcar": "MS-MCAR", "oh": "MS-OH"}


def normalize_kind(kind: str) -> str:
    try:
        return _KIND_ALIASES[str(kind).strip().lower()]
    except KeyError:
        raise InvalidArgument(f"unknown model kind {kind!r}") from None


@dataclass(frozen=True)
class Hyperparams:
    """Prior hyperparameters. Defaults are the flat choices of the simulation design."""

    sigma2_beta: float = 1e6
    a_eta: float = 1.0
    b_eta: float = 1.0
    a_sigma: float = 1.0
    b_sigma: float = 1.0
    a_nu: float = 1.0
    b_nu: float = 1.0
    a_phi: float = 0.0
    b_phi: float = 10.0
    a_rho: float = 0.0
    b_rho: float = 1.0
    a_tau: float = -1.0
    b_tau: float = 1.0

    def __post_init__(self):
        for name in ("sigma2_beta", "a_eta", "b_eta", "a_sigma", "b_sigma", "a_nu", "b_nu"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")
        for lo, hi in (("a_phi", "b_phi"), ("a_rho", "b_rho"), ("a_tau", "b_tau")):
            if not getattr(self, lo) < getattr(self, hi):
                raise InvalidArgument(f"empty interval ({lo}, {hi})")
        if self.a_phi < 0:
            raise InvalidArgument("a_phi must be non-negative")
        if self.a_tau < -1 or self.b_tau > 1:
            raise InvalidArgument("tau bounds must lie in [-1, 1]")
        if self.a_rho < 0 or self.b_rho > 1:
            raise InvalidArgument("rho bounds must lie in [0, 1]")

    def bounds(self, name: str) -> tuple[float, float]:
        return getattr(self, "a_" + name), getattr(self, "b_" + name)

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise InvalidArgument(f"unknown hyperparameters: {sorted(extra)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """One multiscale model.

    ``variables`` is ``(1, 2)`` for the bivariate model or ``(1,)``/``(2,)``
    for a univariate reduction. A univariate OH model is the univariate SRE
    model and is stored as such. ``basis2`` optionally supplies a distinct
    basis for the second variable of the SRE model; by default both share
    ``basis``.
    """

    kind: str
    P1: Optional[PartitionMatrix]
    P2: Optional[PartitionMatrix]
    basis: Optional[BasisSet] = None
    car: Optional[CarStructure] = None
    hyper: Hyperparams = field(default_factory=Hyperparams)
    variables: tuple = (1, 2)
    basis2: Optional[BasisSet] = None

    def __post_init__(self):
        kind = normalize_kind(self.kind)
        variables = tuple(sorted(int(v) for v in self.variables))
        if variables not in ((1, 2), (1,), (2,)):
            raise InvalidArgument(f"variables must be (1, 2), (1,) or (2,), got {self.variables!r}")
        if kind == "oh" and len(variables) == 1:
            kind = "sre"
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "variables", variables)
        Ps = {1: self.P1, 2: self.P2}
        n3 = None
        for k in variables:
            if Ps[k] is None:
                raise InvalidArgument(f"variable {k} needs a partition matrix")
            if n3 is not None and Ps[k].shape[1] != n3:
                raise InvalidArgument("P1 and P2 must share the fine support")
            n3 = Ps[k].shape[1]
        object.__setattr__(self, "n3", n3)
        if kind in ("sre", "oh"):
            if self.basis is None or self.basis.knots is None:
                raise InvalidArgument(f"{KIND_LABELS[kind]} needs a basis with knots")
            if self.basis.G.shape[0] != n3:
                raise InvalidArgument("basis rows must match the fine support size")
            if self.basis2 is not None and (self.basis2.G.shape != self.basis.G.shape):
                raise InvalidArgument("basis2 must have the same shape as basis")
            object.__setattr__(self, "knot_dist", knot_distances(self.basis.knots))
        else:
            if self.car is None:
                raise InvalidArgument("MS-MCAR needs a CAR structure")
            if self.car.n != n3:
                raise InvalidArgument("CAR structure size must match the fine support")
            self.car.check_rho_bounds(self.hyper.a_rho, self.hyper.b_rho)
        v, H = {}, {}
        for k in variables:
            v[k] = diag_ppt(Ps[k])
            if kind != "mcar":
                H[k] = Ps[k].matrix @ self.G(k)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "H", H)

    @property
    def label(self) -> str:
        return KIND_LABELS[self.kind]

    @property
    def bivariate(self) -> bool:
        return len(self.variables) == 2

    @property
    def r(self) -> int:
        return self.basis.r if self.basis is not None else 0

    def P(self, k: int) -> np.ndarray:
        return (self.P1 if k == 1 else self.P2).matrix

    def G(self, k: int) -> np.ndarray:
        """Basis used for variable ``k``'s mean (OH always uses the first)."""
        if k == 2 and self.kind == "sre" and self.basis2 is not None:
            return self.basis2.G
        return self.basis.G

    def psi_block(self, k: int) -> slice:
        j = self.variables.index(k)
        return slice(j * self.n3, (j + 1) * self.n3)

    def betas(self) -> list[str]:
        if self.kind == "oh":
            return ["beta0", "beta1", "beta2"]
        return [f"beta{k}" for k in self.variables]

    def variances(self) -> list[str]:
        names = [f"sigma2_{k}" for k in self.variables]
        return names + (["nu2"] if self.kind == "mcar" else ["sigma2_eta"])

    def bounded(self) -> list[str]:
        if self.kind == "mcar":
            return ["rho", "tau"] if self.bivariate else ["rho"]
        return ["phi"]

    def scalar_names(self) -> list[str]:
        return self.betas() + self.variances() + self.bounded()

    def process_name(self) -> str:
        return "psi" if self.kind == "mcar" else "eta"

    def process_dim(self) -> int:
        return len(self.variables) * self.n3 if self.kind == "mcar" else self.r


def make_spec(kind: str, P1: Optional[PartitionMatrix], P2: Optional[PartitionMatrix],
              fine: ArealSupport, r: int = 50, hyper: Optional[Hyperparams] = None,
              variables=(1, 2), knot_seed: int = 0) -> ModelSpec:
    """Build a model on the fine (partition) support, deriving the Moran basis
    and knots, or the CAR structure, from its adjacency and centroids."""
    kind = normalize_kind(kind)
    hyper = hyper or Hyperparams()
    if kind == "mcar":
        return ModelSpec(kind, P1, P2, car=CarStructure(fine.weights()), hyper=hyper,
                         variables=variables)
    basis = moran_basis(fine.weights(), r)
    knots = select_knots(fine.centroids, r, seed=knot_seed)
    return ModelSpec(kind, P1, P2, basis=basis.with_knots(knots), hyper=hyper,
                     variables=variables)


@dataclass
class Dataset:
    """Observed responses; ``NaN`` marks a missing value."""

    y1: Optional[np.ndarray] = None
    y2: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("y1", "y2"):
            y = getattr(self, name)
            if y is not None:
                setattr(self, name, np.asarray(y, dtype=float).reshape(-1))

    def y(self, k: int) -> np.ndarray:
        return self.y1 if k == 1 else self.y2

    def observed(self, k: int) -> np.ndarray:
        return np.flatnonzero(np.isfinite(self.y(k)))

    def validate(self, spec: ModelSpec) -> None:
        for k in spec.variables:
            y = self.y(k)
            if y is None:
                raise InvalidArgument(f"data for variable {k} is missing")
            n = spec.P(k).shape[0]
            if y.shape != (n,):
                raise InvalidArgument(f"y{k} has length {y.size}, support has {n} units")
            if spec.bivariate and self.observed(k).size == 0:
                raise InvalidArgument(f"y{k} has no observed values")


@dataclass
class ChainState:
    """Current values of every unknown. Unused fields are ignored by a model."""

    eta: Optional[np.ndarray] = None
    psi: Optional[np.ndarray] = None
    beta0: float = 0.0
    beta1: float = 0.0
    beta2: float = 0.0
    sigma2_1: float = 1.0
    sigma2_2: float = 1.0
    sigma2_eta: float = 1.0
    phi: float = 1.0
    rho: float = 0.5
    tau: float = 0.0
    nu2: float = 1.0

    def copy(self) -> "ChainState":
        return copy.deepcopy(self)

    def process(self) -> np.ndarray:
        return self.psi if self.psi is not None else self.eta

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


def observed_means(spec: ModelSpec, state: ChainState) -> dict:
    """Mean of each modelled variable on its observed support (all units)."""
    out = {}
    for k in spec.variables:
        if spec.kind == "mcar":
            out[k] = getattr(state, f"beta{k}") + spec.P(k) @ state.psi[spec.psi_block(k)]
        elif spec.kind == "oh" and k == 2:
            out[k] = state.beta0 + state.beta2 * (state.beta1 + spec.H[2] @ state.eta)
        else:
            out[k] = getattr(state, f"beta{k}") + spec.H[k] @ state.eta
    return out


def partition_means(spec: ModelSpec, state: ChainState) -> dict:
    """Mean of each modelled variable on the partition scale."""
    out = {}
    for k in spec.variables:
        if spec.kind == "mcar":
            out[k] = getattr(state, f"beta{k}") + state.psi[spec.psi_block(k)]
        elif spec.kind == "oh" and k == 2:
            out[k] = state.beta0 + state.beta2 * (state.beta1 + spec.G(1) @ state.eta)
        else:
            out[k] = getattr(state, f"beta{k}") + spec.G(k) @ state.eta
    return out


def _normal_logpdf(x, mean, var):
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def log_likelihood_pointwise(spec: ModelSpec, state: ChainState, data: Dataset,
                             variable: Optional[int] = None) -> np.ndarray:
    """Gaussian log-density of each observed datum.

    Observations are ordered by variable, then by unit; missing values are
    skipped. ``variable`` restricts the output to one response.
    """
    means = observed_means(spec, state)
    parts = []
    for k in spec.variables:
        if variable is not None and k != variable:
            continue
        idx = data.observed(k)
        var = getattr(state, f"sigma2_{k}") * spec.v[k][idx]
        parts.append(_normal_logpdf(data.y(k)[idx], means[k][idx], var))
    return np.concatenate(parts) if parts else np.empty(0)


def observation_labels(spec: ModelSpec, data: Dataset) -> np.ndarray:
    """Variable number of each entry returned by :func:`log_likelihood_pointwise`."""
    return np.concatenate([np.full(data.observed(k).size, k) for k in spec.variables])


def log_inv_gamma(x: float, a: float, b: float) -> float:
    if not x > 0:
        return -np.inf
    return a * np.log(b) - gammaln(a) - (a + 1) * np.log(x) - b / x


def _log_uniform(x: float, lo: float, hi: float) -> float:
    return -np.log(hi - lo) if lo <= x <= hi else -np.inf


def eta_log_density(spec: ModelSpec, eta: np.ndarray, sigma2_eta: float, phi: float) -> float:
    """``log MVN(eta; 0, sigma2_eta R(phi))``."""
    _, L = exp_correlation(spec.knot_dist, phi)
    z = solve_triangular(L, eta, lower=True)
    r = eta.size
    logdet = r * np.log(sigma2_eta) + 2 * np.sum(np.log(np.diag(L)))
    return -0.5 * (r * LOG_2PI + logdet + z @ z / sigma2_eta)


def log_prior(spec: ModelSpec, state: ChainState) -> float:
    """Joint log-density of the process prior and all parameter priors."""
    h = spec.hyper
    lp = 0.0
    for name in spec.betas():
        lp += _normal_logpdf(getattr(state, name), 0.0, h.sigma2_beta)
    for k in spec.variables:
        lp += log_inv_gamma(getattr(state, f"sigma2_{k}"), h.a_sigma, h.b_sigma)
    if spec.kind == "mcar":
        lp += log_inv_gamma(state.nu2, h.a_nu, h.b_nu)
        lp += _log_uniform(state.rho, h.a_rho, h.b_rho)
        if spec.bivariate:
            lp += _log_uniform(state.tau, h.a_tau, h.b_tau)
        if not np.isfinite(lp):
            return -np.inf
        try:
            prec = McarPrecision(spec.car, state.rho, state.tau, state.nu2, len(spec.variables))
        except InvalidArgument:
            return -np.inf
        return float(lp + prec.log_density(state.psi))
    lp += log_inv_gamma(state.sigma2_eta, h.a_eta, h.b_eta)
    lp += _log_uniform(state.phi, h.a_phi, h.b_phi)
    if not np.isfinite(lp):
        return -np.inf
    try:
        return float(lp + eta_log_density(spec, state.eta, state.sigma2_eta, state.phi))
    except NumericalError:
        return -np.inf


def log_joint(spec: ModelSpec, state: ChainState, data: Dataset) -> float:
    lp = log_prior(spec, state)
    if not np.isfinite(lp):
        return lp
    return lp + float(np.sum(log_likelihood_pointwise(spec, state, data)))


def sample_process(spec: ModelSpec, state: ChainState, rng: np.random.Generator) -> np.ndarray:
    """Draw ``eta`` or ``psi`` from its prior given the state's parameters."""
    if spec.kind == "mcar":
        n = spec.n3
        Q = spec.car.Q(state.rho).toarray()
        Lq = np.linalg.cholesky(Q)
        if spec.bivariate:
            Ls = np.linalg.cholesky(state.nu2 * np.array([[1.0, state.tau], [state.tau, 1.0]]))
        else:
            Ls = np.array([[np.sqrt(state.nu2)]])
        z = rng.standard_normal((len(spec.variables), n))
        # cov = Sigma (x) Q^-1: correlate across variables, then space
        x = Ls @ z
        return np.concatenate([solve_triangular(Lq.T, row, lower=False) for row in x])
    _, L = exp_correlation(spec.knot_dist, state.phi)
    return np.sqrt(state.sigma2_eta) * (L @ rng.standard_normal(spec.r))


def sample_prior(spec: ModelSpec, rng: np.random.Generator) -> ChainState:
    """Draw every unknown from the prior (hyperparameters must give proper priors)."""
    h = spec.hyper
    st = ChainState()
    for name in spec.betas():
        setattr(st, name, rng.normal(0.0, np.sqrt(h.sigma2_beta)))
    for k in spec.variables:
        setattr(st, f"sigma2_{k}", h.b_sigma / rng.gamma(h.a_sigma))
    if spec.kind == "mcar":
        st.nu2 = h.b_nu / rng.gamma(h.a_nu)
        st.rho = rng.uniform(h.a_rho, h.b_rho)
        st.tau = rng.uniform(h.a_tau, h.b_tau) if spec.bivariate else 0.0
        st.psi = sample_process(spec, st, rng)
    else:
        st.sigma2_eta = h.b_eta / rng.gamma(h.a_eta)
        st.phi = rng.uniform(h.a_phi, h.b_phi)
        st.eta = sample_process(spec, st, rng)
    return st


def sample_data(spec: ModelSpec, state: ChainState, rng: np.random.Generator) -> Dataset:
    """Draw observed-scale data from the data models."""
    means = observed_means(spec, state)
    ys = {}
    for k in spec.variables:
        sd = np.sqrt(getattr(state, f"sigma2_{k}") * spec.v[k])
        ys[k] = means[k] + sd * rng.standard_normal(means[k].size)
    return Dataset(ys.get(1), ys.get(2))
