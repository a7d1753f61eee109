"""Balancing weights M0-M4 and the kappa adjustment factor."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import MissingKappas
from .model_core import LinearPredictors, category_probs, expit
from .propensity import PropensityTable, config_index


class WeightScheme(str, Enum):
    M0 = "m0"  # unweighted
    M1 = "m1"  # independence residual product
    M2 = "m2"  # normalised inverse probability
    M3 = "m3"  # overlap
    M4 = "m4"  # kappa-adjusted overlap

    @classmethod
    def parse(cls, value) -> "WeightScheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown weight scheme {value!r}; expected one of m0..m4") from None


@dataclass
class AdjustmentFactors:
    """kappa at each configuration, one entry per household."""

    kappa00: np.ndarray
    kappa10: np.ndarray
    kappa01: np.ndarray
    kappa11: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.column_stack([np.atleast_1d(k) for k in (self.kappa00, self.kappa10, self.kappa01, self.kappa11)])

    @classmethod
    def from_array(cls, arr) -> "AdjustmentFactors":
        arr = np.asarray(arr, dtype=float)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])


def kappa(eta1, eta2=None):
    """expit(eta2) * (1 - expit(eta1)) * (1 - expit(eta2) + expit(eta1)).

    Accepts a :class:`LinearPredictors` or the two arrays. Equivalent to
    the product over categories of 1 - P(U = c).
    """
    if eta2 is None:
        eta1, eta2 = eta1
    eta1 = np.asarray(eta1, dtype=float)
    eta2 = np.asarray(eta2, dtype=float)
    out = expit(eta2) * expit(-eta1) * (expit(-eta2) + expit(eta1))
    return out if out.ndim else float(out)


def kappa_from_probs(eta1, eta2):
    """The same factor written as the product of 1 - P(U = c)."""
    probs = category_probs(eta1, eta2)
    out = np.prod(1.0 - probs, axis=-1)
    return out if np.ndim(out) else float(out)


def weights_for(scheme, table: PropensityTable, kappas: AdjustmentFactors | None = None) -> np.ndarray:
    """(n, 4) weights at every configuration, in (0,0), (1,0), (0,1), (1,1) order.

    M1 depends on the observed treatment and is computed by
    :func:`household_weights`; here it is tabulated per configuration.
    """
    scheme = WeightScheme.parse(scheme)
    pi = table.as_array()
    n = pi.shape[0]
    if scheme is WeightScheme.M0:
        return np.ones((n, 4))
    if scheme is WeightScheme.M1:
        p_s = (pi[:, 1] + pi[:, 3])[:, None]
        p_r = (pi[:, 2] + pi[:, 3])[:, None]
        a_s = np.array([0, 1, 0, 1])[None, :]
        a_r = np.array([0, 0, 1, 1])[None, :]
        return np.abs(a_s - p_s) * np.abs(a_r - p_r)
    if scheme is WeightScheme.M2:
        inv = 1.0 / pi
        return inv / inv.sum(axis=1, keepdims=True)
    w = np.prod(pi, axis=1, keepdims=True) / pi
    if scheme is WeightScheme.M4:
        if kappas is None:
            raise MissingKappas("the adjusted overlap scheme needs kappa at all four configurations")
        k = kappas.as_array()
        w = w * np.prod(k, axis=1, keepdims=True) / k
    return w


def household_weights(scheme, table: PropensityTable, a_s, a_r, kappas: AdjustmentFactors | None = None) -> np.ndarray:
    """Weight attached to each household's observed configuration."""
    w = weights_for(scheme, table, kappas)
    idx = config_index(a_s, a_r)
    return w[np.arange(len(idx)), idx]


def check_balancing_criterion(table: PropensityTable, w, kappas: AdjustmentFactors | None = None) -> float:
    """Largest relative gap between the four products pi(a) * w(a) [* kappa(a)]."""
    prod = table.as_array() * np.asarray(w, dtype=float).reshape(-1, 4)
    if kappas is not None:
        prod = prod * kappas.as_array()
    hi = prod.max(axis=1)
    lo = prod.min(axis=1)
    return float(np.max((hi - lo) / hi))


__all__ = [
    "AdjustmentFactors",
    "LinearPredictors",
    "WeightScheme",
    "check_balancing_criterion",
    "household_weights",
    "kappa",
    "kappa_from_probs",
    "weights_for",
]
