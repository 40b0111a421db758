"""Metropolis-within-Gibbs sampler for the multiscale models.

Each sweep updates, in order: the process vector (``eta`` or ``psi``), the
intercepts, the variances, then the bounded parameters (``phi``, or ``rho``
and ``tau``) by random-walk Metropolis-Hastings. Every Gibbs block is an
exact draw from its full conditional.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .basis import McarPrecision, exp_correlation
from .errors import InvalidArgument, NumericalError
from .model import ChainState, Dataset, ModelSpec, observed_means

log = logging.getLogger(__name__)

TARGET_ACCEPT = 0.44


@dataclass
class McmcConfig:
    n_iter: int = 5000
    burn_in: int = 1000
    thin: int = 1
    seed: int = 0
    step_sizes: dict = field(default_factory=lambda: {"phi": 0.5, "rho": 0.05, "tau": 0.1})
    adapt: bool = True

    def __post_init__(self):
        if int(self.n_iter) != self.n_iter or self.n_iter < 1:
            raise InvalidArgument("n_iter must be a positive integer")
        if int(self.burn_in) != self.burn_in or not 0 <= self.burn_in < self.n_iter:
            raise InvalidArgument("burn_in must be an integer in [0, n_iter)")
        if int(self.thin) != self.thin or self.thin < 1:
            raise InvalidArgument("thin must be a positive integer")
        steps = {"phi": 0.5, "rho": 0.05, "tau": 0.1}
        steps.update(self.step_sizes or {})
        for name, s in steps.items():
            if not s > 0:
                raise InvalidArgument(f"step size for {name} must be positive")
        self.step_sizes = {k: float(v) for k, v in steps.items()}
        self.n_iter, self.burn_in, self.thin = int(self.n_iter), int(self.burn_in), int(self.thin)
        self.seed = int(self.seed)

    @property
    def n_kept(self) -> int:
        return len(range(self.burn_in, self.n_iter, self.thin))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PosteriorDraws:
    """Retained draws of one chain.

    ``scalars`` maps parameter names to 1-D arrays; ``process`` holds the
    ``eta`` or ``psi`` draws row by row.
    """

    kind: str
    variables: tuple
    scalars: dict
    process: np.ndarray
    acceptance: dict
    config: Optional[McmcConfig] = None
    chain: int = 0

    @property
    def n_draws(self) -> int:
        return self.process.shape[0]

    @property
    def process_name(self) -> str:
        return "psi" if self.kind == "mcar" else "eta"

    def state(self, i: int) -> ChainState:
        st = ChainState()
        for name, arr in self.scalars.items():
            setattr(st, name, float(arr[i]))
        setattr(st, self.process_name, np.array(self.process[i]))
        return st

    def columns(self) -> tuple[list[str], np.ndarray]:
        names = list(self.scalars)
        pname = self.process_name
        names += [f"{pname}[{j}]" for j in range(self.process.shape[1])]
        mat = np.column_stack([self.scalars[n] for n in self.scalars] + [self.process]) \
            if self.scalars else self.process
        return names, mat

    @classmethod
    def from_columns(cls, kind, variables, names, mat, acceptance=None, config=None, chain=0):
        mat = np.asarray(mat, dtype=float).reshape(-1, len(names))
        pname = "psi" if kind == "mcar" else "eta"
        scalars, proc = {}, []
        for j, name in enumerate(names):
            if name.startswith(pname + "["):
                proc.append(j)
            else:
                scalars[name] = mat[:, j].copy()
        return cls(kind, tuple(variables), scalars, mat[:, proc].copy(),
                   dict(acceptance or {}), config, chain)

    @classmethod
    def concatenate(cls, draws: list["PosteriorDraws"]) -> "PosteriorDraws":
        first = draws[0]
        scalars = {k: np.concatenate([d.scalars[k] for d in draws]) for k in first.scalars}
        return cls(first.kind, first.variables, scalars,
                   np.vstack([d.process for d in draws]), dict(first.acceptance), first.config, -1)


def _ig_draw(rng, shape, rate):
    return rate / rng.gamma(shape)


def _chol(A, what):
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise NumericalError(f"{what}: precision matrix not positive definite") from None


def draw_from_precision(precision: np.ndarray, b: np.ndarray, rng) -> np.ndarray:
    """Draw from ``MVN(A^-1 b, A^-1)`` given the precision ``A``.

    With ``A = L L'`` the draw is ``A^-1 b + L'^-1 z``.
    """
    L = _chol(precision, "MVN draw")
    mean = sla.cho_solve((L, True), b)
    z = rng.standard_normal(b.size)
    return mean + sla.solve_triangular(L.T, z, lower=False)


class _BandedPrecision:
    """Banded Cholesky for the MCAR conditional precision.

    Units are reordered by reverse Cuthill-McKee on the union of the
    adjacency and partition couplings, with the variables interleaved unit by
    unit, which keeps the bandwidth proportional to the graph's.
    """

    def __init__(self, pattern: sp.spmatrix, n_vars: int):
        n = pattern.shape[0]
        order = reverse_cuthill_mckee(sp.csr_matrix(pattern), symmetric_mode=True)
        perm = (np.asarray(order)[:, None] + n * np.arange(n_vars)[None, :]).reshape(-1)
        self.perm = perm
        self.inv = np.argsort(perm)
        full = sp.kron(np.ones((n_vars, n_vars)), pattern + sp.eye(n)).tocsr()[perm][:, perm].tocoo()
        self.u = int(np.max(np.abs(full.row - full.col))) if full.nnz else 0
        self.dim = n * n_vars
        self.use_band = self.u < self.dim // 3

    def factor(self, A: sp.spmatrix):
        if not self.use_band:
            return ("dense", _chol(A.toarray(), "psi update"))
        Ap = A.tocsr()[self.perm][:, self.perm].tocoo()
        keep = Ap.row <= Ap.col
        ab = np.zeros((self.u + 1, self.dim))
        ab[self.u + Ap.row[keep] - Ap.col[keep], Ap.col[keep]] = Ap.data[keep]
        try:
            return ("band", sla.cholesky_banded(ab, lower=False))
        except np.linalg.LinAlgError:
            raise NumericalError("psi update: precision matrix not positive definite") from None

    def draw(self, factor, b, rng, z=None):
        z = rng.standard_normal(self.dim) if z is None else z
        kind, F = factor
        if kind == "dense":
            mean = sla.cho_solve((F, True), b)
            return mean + sla.solve_triangular(F.T, z, lower=False)
        bp = b[self.perm]
        mean = sla.cho_solve_banded((F, False), bp)
        x = mean + sla.solve_banded((0, self.u), F, z)
        return x[self.inv]


class Sampler:
    """Full conditionals and sweep for one chain.

    ``set_data`` may be called between sweeps (used by joint-distribution
    tests that resample the data).
    """

    def __init__(self, spec: ModelSpec, data: Dataset, rng: np.random.Generator,
                 step_sizes: Optional[dict] = None):
        self.spec = spec
        self.rng = rng
        steps = McmcConfig().step_sizes if step_sizes is None else step_sizes
        self.log_steps = {name: float(np.log(steps[name])) for name in spec.bounded()}
        self._corr_cache = (None, None)
        self._band = None
        self.set_data(data)

    # -- data ---------------------------------------------------------------
    def set_data(self, data: Dataset) -> None:
        spec = self.spec
        data.validate(spec)
        self.data = data
        obs = {}
        for k in spec.variables:
            idx = data.observed(k)
            entry = {"idx": idx, "y": data.y(k)[idx], "v": spec.v[k][idx]}
            if spec.kind == "mcar":
                Pk = sp.csr_matrix(spec.P(k)[idx])
                entry["P"] = Pk
                entry["S"] = (Pk.T @ sp.diags(1.0 / entry["v"]) @ Pk).tocsr()
            else:
                entry["H"] = spec.H[k][idx]
            obs[k] = entry
        self.obs = obs
        if spec.kind == "mcar" and self._band is None:
            pattern = sp.csr_matrix(spec.car.W)
            for k in spec.variables:
                Pk = sp.csr_matrix(spec.P(k))
                pattern = pattern + abs(Pk.T @ Pk)
            self._band = _BandedPrecision(pattern, len(spec.variables))

    # -- helpers ------------------------------------------------------------
    def correlation(self, phi: float):
        """Cached ``(R, L, R^-1)`` of the jittered exponential correlation."""
        cached_phi, value = self._corr_cache
        if cached_phi != phi:
            R, L = exp_correlation(self.spec.knot_dist, phi)
            Rinv = sla.cho_solve((L, True), np.eye(R.shape[0]))
            value = (R, L, (Rinv + Rinv.T) / 2)
            self._corr_cache = (phi, value)
        return value

    def _residual_terms(self, name: str, state: ChainState):
        """``(coef, target, var)`` triples with ``target = coef * beta + noise``."""
        spec, s = self.spec, state
        terms = []
        if spec.kind == "oh":
            o1, o2 = self.obs[1], self.obs[2]
            g2 = s.beta1 + o2["H"] @ s.eta
            if name == "beta1":
                terms.append((1.0, o1["y"] - o1["H"] @ s.eta, s.sigma2_1 * o1["v"]))
                terms.append((s.beta2, o2["y"] - s.beta0 - s.beta2 * (o2["H"] @ s.eta),
                              s.sigma2_2 * o2["v"]))
            elif name == "beta2":
                terms.append((g2, o2["y"] - s.beta0, s.sigma2_2 * o2["v"]))
            elif name == "beta0":
                terms.append((1.0, o2["y"] - s.beta2 * g2, s.sigma2_2 * o2["v"]))
            else:
                raise InvalidArgument(f"{name} is not an intercept of {spec.label}")
            return terms
        k = int(name[-1])
        if name not in spec.betas():
            raise InvalidArgument(f"{name} is not an intercept of {spec.label}")
        o = self.obs[k]
        if spec.kind == "mcar":
            fit = o["P"] @ s.psi[spec.psi_block(k)]
        else:
            fit = o["H"] @ s.eta
        terms.append((1.0, o["y"] - fit, getattr(s, f"sigma2_{k}") * o["v"]))
        return terms

    # -- full conditionals --------------------------------------------------
    def eta_conditional(self, state: ChainState):
        """Precision matrix and linear term of the ``eta`` full conditional."""
        spec, s = self.spec, state
        _, _, Rinv = self.correlation(s.phi)
        A = Rinv / s.sigma2_eta
        b = np.zeros(spec.r)
        for k in spec.variables:
            o = self.obs[k]
            w = 1.0 / (getattr(s, f"sigma2_{k}") * o["v"])
            H = o["H"]
            if spec.kind == "oh" and k == 2:
                A = A + s.beta2 ** 2 * (H.T * w) @ H
                b = b + s.beta2 * H.T @ (w * (o["y"] - s.beta0 - s.beta1 * s.beta2))
            else:
                A = A + (H.T * w) @ H
                b = b + H.T @ (w * (o["y"] - getattr(s, f"beta{k}")))
        return (A + A.T) / 2, b

    def psi_conditional(self, state: ChainState):
        """Sparse precision and linear term of the ``psi`` full conditional."""
        spec, s = self.spec, state
        prior = McarPrecision(spec.car, s.rho, s.tau, s.nu2, len(spec.variables))
        blocks, b = [], []
        for k in spec.variables:
            o = self.obs[k]
            s2 = getattr(s, f"sigma2_{k}")
            blocks.append(o["S"] / s2)
            b.append(o["P"].T @ ((o["y"] - getattr(s, f"beta{k}")) / (s2 * o["v"])))
        A = sp.block_diag(blocks, format="csr") + prior.sparse()
        return A, np.concatenate(b)

    def beta_conditional(self, name: str, state: ChainState) -> tuple[float, float]:
        """Mean and variance of a Gaussian intercept conditional."""
        prec = 1.0 / self.spec.hyper.sigma2_beta
        lin = 0.0
        for coef, target, var in self._residual_terms(name, state):
            coef = np.broadcast_to(coef, target.shape)
            prec += float(np.sum(coef * coef / var))
            lin += float(np.sum(coef * target / var))
        return lin / prec, 1.0 / prec

    def sigma2_conditional(self, name: str, state: ChainState) -> tuple[float, float]:
        """Shape and rate of an inverse-gamma variance conditional."""
        spec, h, s = self.spec, self.spec.hyper, state
        if name == "sigma2_eta":
            _, _, Rinv = self.correlation(s.phi)
            return h.a_eta + spec.r / 2, h.b_eta + 0.5 * float(s.eta @ Rinv @ s.eta)
        if name == "nu2":
            unit = McarPrecision(spec.car, s.rho, s.tau, 1.0, len(spec.variables))
            return h.a_nu + spec.process_dim() / 2, h.b_nu + 0.5 * unit.quad_form(s.psi)
        k = int(name[-1])
        if name not in spec.variances():
            raise InvalidArgument(f"{name} is not a variance of {spec.label}")
        o = self.obs[k]
        mean = observed_means(spec, s)[k][o["idx"]]
        return h.a_sigma + o["idx"].size / 2, h.b_sigma + 0.5 * float(np.sum((o["y"] - mean) ** 2 / o["v"]))

    def bounded_log_target(self, name: str, value: float, state: ChainState) -> float:
        """Log full conditional (up to a constant) of ``phi``, ``rho`` or ``tau``."""
        spec, s = self.spec, state
        lo, hi = spec.hyper.bounds(name)
        if not lo <= value <= hi:
            return -np.inf
        if name == "phi":
            _, L = exp_correlation(spec.knot_dist, value)
            z = sla.solve_triangular(L, s.eta, lower=True)
            return float(-np.sum(np.log(np.diag(L))) - 0.5 * z @ z / s.sigma2_eta)
        rho = value if name == "rho" else s.rho
        tau = value if name == "tau" else s.tau
        try:
            prior = McarPrecision(spec.car, rho, tau, s.nu2, len(spec.variables))
        except InvalidArgument:
            return -np.inf
        return 0.5 * (prior.logdet() - prior.quad_form(s.psi))

    # -- updates ------------------------------------------------------------
    def update_eta(self, state: ChainState) -> np.ndarray:
        A, b = self.eta_conditional(state)
        state.eta = draw_from_precision(A, b, self.rng)
        return state.eta

    def update_psi(self, state: ChainState) -> np.ndarray:
        A, b = self.psi_conditional(state)
        state.psi = self._band.draw(self._band.factor(A), b, self.rng)
        return state.psi

    def update_beta(self, name: str, state: ChainState) -> float:
        mean, var = self.beta_conditional(name, state)
        value = mean + np.sqrt(var) * self.rng.standard_normal()
        setattr(state, name, float(value))
        return value

    def update_sigma2(self, name: str, state: ChainState) -> float:
        shape, rate = self.sigma2_conditional(name, state)
        value = float(_ig_draw(self.rng, shape, rate))
        setattr(state, name, value)
        return value

    def mh_update_bounded(self, name: str, state: ChainState) -> tuple[float, bool]:
        current = getattr(state, name)
        proposal = current + np.exp(self.log_steps[name]) * self.rng.standard_normal()
        u = self.rng.uniform()
        lo, hi = self.spec.hyper.bounds(name)
        if not lo <= proposal <= hi:
            return current, False
        try:
            lp_new = self.bounded_log_target(name, proposal, state)
        except NumericalError as exc:
            log.warning("rejecting %s=%r: %s", name, proposal, exc)
            return current, False
        lp_old = self.bounded_log_target(name, current, state)
        if u < mh_accept_probability(lp_old, lp_new):
            setattr(state, name, float(proposal))
            return float(proposal), True
        return current, False

    def sweep(self, state: ChainState, adapt_step: Optional[int] = None) -> dict:
        """One Gibbs sweep in place; returns ``{name: accepted}`` for MH steps.

        When ``adapt_step`` is given the MH scales move toward 0.44 acceptance
        with Robbins-Monro gain ``(adapt_step + 1) ** -0.6``.
        """
        spec = self.spec
        if spec.kind == "mcar":
            self.update_psi(state)
        else:
            self.update_eta(state)
        for name in spec.betas():
            self.update_beta(name, state)
        for name in spec.variances():
            self.update_sigma2(name, state)
        accepted = {}
        for name in spec.bounded():
            _, acc = self.mh_update_bounded(name, state)
            accepted[name] = acc
            if adapt_step is not None:
                gain = (adapt_step + 1) ** -0.6
                self.log_steps[name] += gain * (float(acc) - TARGET_ACCEPT)
        return accepted


def initial_state(spec: ModelSpec, data: Dataset) -> ChainState:
    """Data-scaled starting values inside every prior support."""
    h = spec.hyper
    st = ChainState()
    for k in spec.variables:
        y = data.y(k)[data.observed(k)]
        mean = float(np.mean(y)) if y.size else 0.0
        var = float(np.var(y, ddof=1)) if y.size > 1 else 0.0
        setattr(st, f"beta{k}", mean)
        setattr(st, f"sigma2_{k}", var / 2 if var > 0 else 1.0)
    if spec.kind == "oh":
        st.beta0, st.beta2 = 0.0, 1.0
    if spec.kind == "mcar":
        st.psi = np.zeros(spec.process_dim())
        st.rho = 0.5 if h.a_rho < 0.5 < h.b_rho else (h.a_rho + h.b_rho) / 2
        st.tau = 0.0 if h.a_tau < 0 < h.b_tau else (h.a_tau + h.b_tau) / 2
        st.nu2 = 1.0
    else:
        st.eta = np.zeros(spec.r)
        st.phi = (h.a_phi + h.b_phi) / 2
        st.sigma2_eta = 1.0
    return st


def chain_rng(seed: int, chain: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed) & (2 ** 64 - 1), int(chain)])


def run_chain(spec: ModelSpec, data: Dataset, config: McmcConfig, chain: int = 0,
              init: Optional[ChainState] = None) -> PosteriorDraws:
    """Run one chain; deterministic given ``config.seed`` and ``chain``."""
    rng = chain_rng(config.seed, chain)
    sampler = Sampler(spec, data, rng, config.step_sizes)
    state = initial_state(spec, data) if init is None else init.copy()
    names = spec.scalar_names()
    n_keep = config.n_kept
    scalars = {name: np.empty(n_keep) for name in names}
    process = np.empty((n_keep, spec.process_dim()))
    acc_count = {name: 0 for name in spec.bounded()}
    n_post = 0
    j = 0
    for it in range(config.n_iter):
        adapt = it if (config.adapt and it < config.burn_in) else None
        try:
            accepted = sampler.sweep(state, adapt_step=adapt)
        except (NumericalError, np.linalg.LinAlgError) as exc:
            raise NumericalError(f"chain {chain} failed at iteration {it}: {exc}",
                                 iteration=it, state=state.to_dict()) from exc
        if it >= config.burn_in:
            n_post += 1
            for name, acc in accepted.items():
                acc_count[name] += acc
            if (it - config.burn_in) % config.thin == 0:
                for name in names:
                    scalars[name][j] = getattr(state, name)
                process[j] = state.process()
                j += 1
    acceptance = {name: acc_count[name] / max(n_post, 1) for name in acc_count}
    acceptance.update({f"step_{name}": float(np.exp(v)) for name, v in sampler.log_steps.items()})
    return PosteriorDraws(spec.kind, spec.variables, scalars, process, acceptance, config, chain)


def run_chains(spec: ModelSpec, data: Dataset, config: McmcConfig, n_chains: int = 2,
               threads: int = 1) -> list[PosteriorDraws]:
    """Independent chains with substreams ``(seed, chain)``."""
    if threads <= 1 or n_chains == 1:
        return [run_chain(spec, data, config, c) for c in range(n_chains)]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(run_chain, spec, data, config, c) for c in range(n_chains)]
        return [f.result() for f in futures]


# Module-level forms of the individual updates.

def update_eta_sre(state, spec, data, rng):
    return Sampler(spec, data, rng).update_eta(state)


def update_eta_oh(state, spec, data, rng):
    return Sampler(spec, data, rng).update_eta(state)


def update_psi_mcar(state, spec, data, rng):
    return Sampler(spec, data, rng).update_psi(state)


def update_beta(target, state, spec, data, rng):
    return Sampler(spec, data, rng).update_beta(target, state)


def update_sigma2(target, state, spec, data, rng):
    return Sampler(spec, data, rng).update_sigma2(target, state)


def mh_update_bounded(target, state, spec, data, rng, step_size=None):
    steps = dict(McmcConfig().step_sizes)
    if step_size is not None:
        steps[target] = step_size
    return Sampler(spec, data, rng, steps).mh_update_bounded(target, state)


def mh_accept_probability(log_target_current: float, log_target_proposal: float) -> float:
    """Metropolis acceptance probability for a symmetric proposal."""
    if not np.isfinite(log_target_proposal):
        return 0.0
    return float(min(1.0, np.exp(log_target_proposal - log_target_current)))
