"""Simulation design: misaligned supports on the unit square, data generated
from each model's truth, and the truth-by-fit scenario grid.

Geometry
--------
``D1`` is a 10 x 10 grid. ``D2`` tiles every 0.2 x 0.2 block with the same
nine rectangles, cut at offsets 0.05 and 0.15 along each axis inside the
block: four 0.05 x 0.05 corners, four 0.1 x 0.05 edge pieces that cross the
block's internal ``D1`` boundary, and one 0.1 x 0.1 centre piece that
crosses both. The 5 x 5 blocks give 225 units, and the overlay of ``D1`` and
``D2`` is exactly the 20 x 20 grid ``DA``.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .errors import InvalidArgument, NumericalError
from .evaluate import rmse
from .model import (ChainState, Dataset, Hyperparams, KIND_LABELS, ModelSpec, make_spec,
                    normalize_kind, partition_means, sample_process)
from .predict import cos_predict
from .sampler import McmcConfig, run_chain
from .supports import (ArealSupport, PartitionMatrix, build_grid_support, build_partition_matrix,
                       rectangle_overlaps, rectangle_support)

log = logging.getLogger(__name__)

# cut points of the nine-piece motif inside one 0.2 x 0.2 block
MOTIF_CUTS = (0.0, 0.05, 0.15, 0.2)
BLOCK = 0.2


class SimSupports(NamedTuple):
    D1: ArealSupport
    D2: ArealSupport
    DA: ArealSupport
    P1: PartitionMatrix
    P2: PartitionMatrix


def motif_rectangles(x0: float = 0.0, y0: float = 0.0) -> list[tuple]:
    """The nine ``(x0, x1, y0, y1)`` pieces of one block, row-major from the bottom."""
    c = MOTIF_CUTS
    return [(x0 + c[i], x0 + c[i + 1], y0 + c[j], y0 + c[j + 1])
            for j in range(3) for i in range(3)]


def build_sim_supports() -> SimSupports:
    D1 = build_grid_support(10, 10)
    DA = build_grid_support(20, 20)
    rects, ids = [], []
    for by in range(5):
        for bx in range(5):
            for m, rect in enumerate(motif_rectangles(bx * BLOCK, by * BLOCK)):
                rects.append(rect)
                ids.append(f"b{by}{bx}m{m}")
    D2 = rectangle_support(ids, np.array(rects))
    P1 = build_partition_matrix(D1, DA, rectangle_overlaps(D1, DA))
    P2 = build_partition_matrix(D2, DA, rectangle_overlaps(D2, DA))
    return SimSupports(D1, D2, DA, P1, P2)


def build_toy_supports() -> SimSupports:
    """Tiny misaligned pair for checks: a 2 x 2 grid against a 2 x 2 grid cut
    at 0.25, whose overlay is a 3 x 3 grid with unequal cells."""
    D1 = build_grid_support(2, 2)
    cuts2 = (0.0, 0.25, 1.0)
    cutsA = (0.0, 0.25, 0.5, 1.0)

    def grid(cuts, prefix):
        rects = [(cuts[i], cuts[i + 1], cuts[j], cuts[j + 1])
                 for j in range(len(cuts) - 1) for i in range(len(cuts) - 1)]
        ids = [f"{prefix}{n}" for n in range(len(rects))]
        return rectangle_support(ids, np.array(rects))

    D2 = grid(cuts2, "c")
    DA = grid(cutsA, "a")
    P1 = build_partition_matrix(D1, DA, rectangle_overlaps(D1, DA))
    P2 = build_partition_matrix(D2, DA, rectangle_overlaps(D2, DA))
    return SimSupports(D1, D2, DA, P1, P2)


@dataclass(frozen=True)
class TruthParams:
    beta0: float = 0.0
    beta1: float = 2.0
    beta2: float = 5.0
    sigma2_eta: float = 1.0
    phi: float = 0.1
    rho: float = 0.9
    tau: float = 0.2
    nu2: float = 1.5
    snr: float = 5.0

    @classmethod
    def default(cls, kind: str) -> "TruthParams":
        if normalize_kind(kind) == "oh":
            return cls(beta0=0.0, beta1=2.0, beta2=2.0)
        return cls()

    def __post_init__(self):
        if not (self.sigma2_eta > 0 and self.nu2 > 0 and self.snr > 0 and self.phi >= 0):
            raise InvalidArgument("truth variances, phi and snr must be positive")
        if not (0 <= self.rho < 1 and -1 < self.tau < 1):
            raise InvalidArgument("truth rho/tau out of range")


@dataclass
class SimulatedData:
    kind: str
    data: Dataset
    y_a: dict          # partition-scale responses, the evaluation truth
    mean_a: dict       # noiseless partition-scale means
    state: ChainState  # realised truth, including calibrated noise variances


_SPEC_CACHE: dict = {}


def sim_spec(kind: str, supports: SimSupports, r: int = 50, hyper: Optional[Hyperparams] = None,
             variables=(1, 2), knot_seed: int = 0) -> ModelSpec:
    """Model on the simulation geometry, cached per process."""
    kind = normalize_kind(kind)
    r = min(r, supports.DA.n - 1)
    key = (id(supports.DA), kind, r, hyper, tuple(variables), knot_seed)
    if key not in _SPEC_CACHE:
        _SPEC_CACHE[key] = make_spec(kind, supports.P1, supports.P2, supports.DA, r=r,
                                     hyper=hyper, variables=variables, knot_seed=knot_seed)
    return _SPEC_CACHE[key]


def generate_dataset(kind: str, truth: Optional[TruthParams], supports: SimSupports, seed: int,
                     r: int = 50, spec: Optional[ModelSpec] = None) -> SimulatedData:
    """Draw one dataset from a model's hierarchy.

    The process is drawn from its prior, partition-scale responses get noise
    whose variance makes ``var(mean surface) / sigma^2`` equal to the SNR for
    each variable, and the observed data are their aggregates ``P_k Y_Ak``.
    """
    kind = normalize_kind(kind)
    truth = truth or TruthParams.default(kind)
    spec = spec or sim_spec(kind, supports, r)
    if spec.kind != kind or not spec.bivariate:
        raise InvalidArgument("generating spec must be the bivariate model of the same kind")
    rng = np.random.default_rng(seed)
    st = ChainState(beta0=truth.beta0, beta1=truth.beta1, beta2=truth.beta2,
                    sigma2_eta=truth.sigma2_eta, phi=truth.phi, rho=truth.rho,
                    tau=truth.tau, nu2=truth.nu2)
    proc = sample_process(spec, st, rng)
    if kind == "mcar":
        st.psi = proc
    else:
        st.eta = proc
    means = partition_means(spec, st)
    y_a, ys = {}, {}
    for k in (1, 2):
        signal = float(np.var(means[k]))
        s2 = signal / truth.snr if signal > 0 else 1e-12
        setattr(st, f"sigma2_{k}", s2)
        y_a[k] = means[k] + math.sqrt(s2) * rng.standard_normal(spec.n3)
        ys[k] = spec.P(k) @ y_a[k]
    return SimulatedData(kind, Dataset(ys[1], ys[2]), y_a, means, st)


@dataclass
class ScenarioConfig:
    n_datasets: int = 20
    truths: tuple = ("sre", "mcar", "oh")
    fits: tuple = ("sre", "mcar", "oh")
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    seed: int = 0
    r: int = 50
    latent_prediction: bool = False
    threads: int = 1

    def __post_init__(self):
        if int(self.n_datasets) != self.n_datasets or self.n_datasets < 1:
            raise InvalidArgument("n_datasets must be a positive integer")
        if not self.truths or not self.fits:
            raise InvalidArgument("truths and fits must be non-empty")
        self.truths = tuple(normalize_kind(k) for k in self.truths)
        self.fits = tuple(normalize_kind(k) for k in self.fits)


def derive_seed(*parts: int) -> int:
    """Deterministic 63-bit seed from integer parts."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0] >> 1)


_KIND_CODE = {"sre": 1, "mcar": 2, "oh": 3}


def run_one(truth_kind: str, dataset: int, fit_kind: str, config: ScenarioConfig,
            supports: Optional[SimSupports] = None) -> dict:
    """Fit one model to one simulated dataset and score its predictions."""
    supports = supports or _default_supports()
    sim = generate_dataset(truth_kind, None, supports,
                           derive_seed(config.seed, _KIND_CODE[truth_kind], dataset), r=config.r)
    row = {"truth": KIND_LABELS[truth_kind], "dataset": dataset, "fit": KIND_LABELS[fit_kind]}
    spec = sim_spec(fit_kind, supports, config.r)
    mcmc = replace(config.mcmc, seed=derive_seed(config.seed, _KIND_CODE[truth_kind], dataset, 7))
    t0 = time.perf_counter()
    try:
        draws = run_chain(spec, sim.data, mcmc)
    except NumericalError as exc:
        log.warning("run %s/%d/%s failed: %s", truth_kind, dataset, fit_kind, exc)
        row.update(status="failed", seconds=time.perf_counter() - t0)
        return row
    pred = cos_predict(spec, draws, seed=mcmc.seed, latent=config.latent_prediction)
    row["status"] = "ok"
    for k in (1, 2):
        row[f"rmse_y{k}_DA"] = rmse(sim.y_a[k], pred.mean[k])
        row[f"rmse_y{k}_D{k}"] = rmse(sim.data.y(k), spec.P(k) @ pred.mean[k])
    row["seconds"] = time.perf_counter() - t0
    return row


_SUPPORTS = None


def _default_supports() -> SimSupports:
    global _SUPPORTS
    if _SUPPORTS is None:
        _SUPPORTS = build_sim_supports()
    return _SUPPORTS


def _run_triple(args):
    return run_one(*args)


RMSE_COLUMNS = (("y1", "DA"), ("y1", "D1"), ("y2", "DA"), ("y2", "D2"))


@dataclass
class ScenarioResult:
    runs: list
    table: list

    def format_table(self, fits) -> str:
        """Text table of mean(sd) RMSE, one line per variable/scale/truth."""
        labels = [KIND_LABELS[f] for f in fits]
        lines = ["variable scale truth " + " ".join(f"Fit:{l}" for l in labels)]
        cells = {(r["variable"], r["scale"], r["truth"], r["fit"]): r for r in self.table}
        seen = []
        for r in self.table:
            key = (r["variable"], r["scale"], r["truth"])
            if key not in seen:
                seen.append(key)
        for key in seen:
            parts = []
            for l in labels:
                c = cells.get(key + (l,))
                parts.append("-" if c is None or c["n"] == 0 else f"{c['mean']:.3f}({c['sd']:.3f})")
            lines.append(" ".join(key) + " " + " ".join(parts))
        return "\n".join(lines)


def summarize_runs(runs: list, truths, fits) -> list:
    table = []
    for var, scale in RMSE_COLUMNS:
        col = f"rmse_{var}_{scale}"
        for t in truths:
            for f in fits:
                vals = [r[col] for r in runs if r["truth"] == KIND_LABELS[t]
                        and r["fit"] == KIND_LABELS[f] and r.get("status") == "ok"]
                n = len(vals)
                table.append({
                    "variable": var, "scale": scale, "truth": KIND_LABELS[t],
                    "fit": KIND_LABELS[f], "n": n,
                    "mean": float(np.mean(vals)) if n else float("nan"),
                    "sd": float(np.std(vals, ddof=1)) if n > 1 else 0.0 if n else float("nan"),
                })
    return table


def run_scenario(config: ScenarioConfig, supports: Optional[SimSupports] = None) -> ScenarioResult:
    """Every (truth, dataset, fit) triple, then the mean(sd) RMSE table."""
    triples = [(t, d, f, config) for t in config.truths
               for d in range(config.n_datasets) for f in config.fits]
    if config.threads > 1 and supports is None:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            runs = list(pool.map(_run_triple, triples))
    else:
        runs = [run_one(t, d, f, c, supports) for t, d, f, c in triples]
    return ScenarioResult(runs, summarize_runs(runs, config.truths, config.fits))
