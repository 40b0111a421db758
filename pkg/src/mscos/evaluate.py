"""Prediction error, WAIC and Gelman-Rubin diagnostics."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidArgument

log = logging.getLogger(__name__)


def rmse(truth, pred_mean) -> float:
    """Root mean squared error over pairs where both values are present."""
    truth = np.asarray(truth, dtype=float).reshape(-1)
    pred_mean = np.asarray(pred_mean, dtype=float).reshape(-1)
    if truth.shape != pred_mean.shape:
        raise InvalidArgument("truth and prediction lengths differ")
    ok = np.isfinite(truth) & np.isfinite(pred_mean)
    if not ok.any():
        raise InvalidArgument("no non-missing pairs")
    return float(np.sqrt(np.mean((truth[ok] - pred_mean[ok]) ** 2)))


@dataclass(frozen=True)
class Waic:
    waic: float
    lppd: float
    p_waic: float

    def __iter__(self):
        return iter((self.waic, self.lppd, self.p_waic))


def waic(ll_matrix) -> Waic:
    """WAIC from a draws-by-observations log-likelihood matrix.

    Uses the variance form of the effective number of parameters:
    ``waic = -2 (lppd - p_waic)``.
    """
    ll = np.asarray(ll_matrix, dtype=float)
    if ll.ndim != 2:
        raise InvalidArgument("ll_matrix must be 2-D (draws x observations)")
    S, n = ll.shape
    if S < 2:
        raise InvalidArgument("WAIC needs at least two draws")
    if n < 1:
        raise InvalidArgument("WAIC needs at least one observation")
    lppd = float(np.sum(logsumexp(ll, axis=0) - math.log(S)))
    p_waic = float(np.sum(np.var(ll, axis=0, ddof=1)))
    return Waic(-2.0 * (lppd - p_waic), lppd, p_waic)


def gelman_rubin(chains) -> float:
    """Potential scale reduction factor of one parameter.

    ``chains`` is ``(m, n)``: m chains of n draws. Uses the classic
    between/within variance form; the result is floored at 1. A chain with
    zero variance makes the diagnostic undefined and gives ``inf``.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidArgument("need at least two chains")
    m, n = x.shape
    if n < 10:
        raise InvalidArgument("chains must have at least 10 draws")
    s2 = x.var(axis=1, ddof=1)
    if np.any(s2 <= 0):
        log.warning("degenerate chain with zero variance")
        return math.inf
    W = s2.mean()
    B = n * x.mean(axis=1).var(ddof=1)
    var_hat = (n - 1) / n * W + B / n
    return max(1.0, float(math.sqrt(var_hat / W)))


@dataclass
class MetricReport:
    """Metrics of one fit. Nested dicts flatten to dotted keys."""

    rmse: dict = field(default_factory=dict)
    waic: dict = field(default_factory=dict)
    gelman_rubin: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"rmse": self.rmse, "waic": self.waic,
                "gelman_rubin": self.gelman_rubin, "config": self.config}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(**{k: d.get(k, {}) for k in ("rmse", "waic", "gelman_rubin", "config")})

    def flatten(self) -> dict:
        out = {}

        def walk(prefix, node):
            if isinstance(node, dict):
                for key, value in node.items():
                    walk(f"{prefix}.{key}" if prefix else str(key), value)
            else:
                out[prefix] = node

        walk("", self.to_dict())
        return out

    @classmethod
    def unflatten(cls, flat: dict) -> "MetricReport":
        root: dict = {}
        for key, value in flat.items():
            node = root
            parts = key.split(".")
            for p in parts[:-1]:
                node = node.setdefault(p, {})
            node[parts[-1]] = value
        return cls.from_dict(root)
