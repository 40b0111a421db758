"""Change-of-support prediction on the partition scale (or any target built
from it by a partition matrix) and pointwise log-likelihood matrices."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import InvalidArgument
from .model import Dataset, ModelSpec, log_likelihood_pointwise
from .sampler import PosteriorDraws
from .supports import ArealSupport, PartitionMatrix

VARIANCE_FLOOR = 1e-12


@dataclass
class PredictionResult:
    """Posterior predictive summaries per unit and variable.

    Dicts are keyed by variable number (1 or 2).
    """

    unit_ids: tuple
    mean: dict
    sd: dict
    lo95: dict
    hi95: dict
    draws: dict = field(default_factory=dict)

    @property
    def variables(self) -> tuple:
        return tuple(sorted(self.mean))

    def rows(self):
        for k in self.variables:
            for i, u in enumerate(self.unit_ids):
                yield u, k, self.mean[k][i], self.sd[k][i], self.lo95[k][i], self.hi95[k][i]


def _partition_draw_means(spec: ModelSpec, draws: PosteriorDraws) -> dict:
    """Per-draw partition-scale means, each an ``(n_draws, n3)`` array."""
    sc, proc = draws.scalars, draws.process
    out = {}
    for k in spec.variables:
        if spec.kind == "mcar":
            out[k] = sc[f"beta{k}"][:, None] + proc[:, spec.psi_block(k)]
        elif spec.kind == "oh" and k == 2:
            out[k] = sc["beta0"][:, None] + sc["beta2"][:, None] * (
                sc["beta1"][:, None] + proc @ spec.G(1).T)
        else:
            out[k] = sc[f"beta{k}"][:, None] + proc @ spec.G(k).T
    return out


def cos_predict(spec: ModelSpec, draws: PosteriorDraws,
                target: Union[None, ArealSupport, PartitionMatrix, np.ndarray] = None,
                seed: int = 0, keep_draws: bool = False, latent: bool = False,
                unit_ids=None) -> PredictionResult:
    """Composition sampling of the partition-scale responses.

    For every retained draw one predictive realisation is drawn from the
    model's partition-scale normal and then mapped through ``target`` (a
    partition matrix from the partition scale to the target support; ``None``
    or the fine support itself means the partition scale). With
    ``latent=True`` the noise is omitted and the summaries describe the mean
    surface instead.
    """
    if draws.n_draws == 0:
        raise InvalidArgument("no posterior draws")
    if draws.kind != spec.kind or tuple(draws.variables) != spec.variables:
        raise InvalidArgument("draws do not belong to this model")
    if draws.process.shape[1] != spec.process_dim():
        raise InvalidArgument("draws have the wrong process dimension")
    n3 = spec.n3
    fine = spec.P1.fine if spec.P1 is not None else spec.P2.fine
    if target is None or isinstance(target, ArealSupport):
        if isinstance(target, ArealSupport) and target.n != n3:
            raise InvalidArgument("target support is not the partition support")
        T = None
        ids = unit_ids or (target.ids if target is not None else
                           (fine.ids if fine is not None else tuple(str(i) for i in range(n3))))
    else:
        pm = target if isinstance(target, PartitionMatrix) else PartitionMatrix(target)
        if pm.shape[1] != n3:
            raise InvalidArgument(f"target matrix has {pm.shape[1]} columns, expected {n3}")
        T = pm.matrix
        ids = unit_ids or (pm.coarse.ids if pm.coarse is not None
                           else tuple(str(i) for i in range(pm.shape[0])))
    ids = tuple(ids)
    rng = np.random.default_rng(seed)
    means = _partition_draw_means(spec, draws)
    res = PredictionResult(ids, {}, {}, {}, {})
    for k in spec.variables:
        y = means[k]
        if not latent:
            var = np.maximum(draws.scalars[f"sigma2_{k}"], VARIANCE_FLOOR)
            y = y + np.sqrt(var)[:, None] * rng.standard_normal(y.shape)
        if T is not None:
            y = y @ T.T
        if y.shape[1] != len(ids):
            raise InvalidArgument("unit ids do not match the target dimension")
        res.mean[k] = y.mean(axis=0)
        res.sd[k] = y.std(axis=0, ddof=1) if y.shape[0] > 1 else np.zeros(y.shape[1])
        res.lo95[k], res.hi95[k] = np.percentile(y, [2.5, 97.5], axis=0)
        # percentile interpolation can land a hair inside the mean for
        # near-degenerate draws
        res.lo95[k] = np.minimum(res.lo95[k], res.mean[k])
        res.hi95[k] = np.maximum(res.hi95[k], res.mean[k])
        if keep_draws:
            res.draws[k] = y
    return res


def predictive_ll_matrix(spec: ModelSpec, draws: PosteriorDraws, data: Dataset,
                         variable: Optional[int] = None) -> np.ndarray:
    """``(n_draws, n_obs)`` matrix of observed-data log-likelihoods."""
    rows = [log_likelihood_pointwise(spec, draws.state(i), data, variable)
            for i in range(draws.n_draws)]
    return np.vstack(rows)
