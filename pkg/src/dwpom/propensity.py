"""Marginal propensities, the pairwise odds-ratio model and joint propensity tables."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import DomainError, NoDiscordantPairs, NonConvergence
from .model_core import SEPARATION_BOUND, _newton, expit, fit_weighted_logistic
from .terms import evaluate_terms, require_columns, role_frame

CELL_FLOOR = 1e-6
TAU_ONE_TOL = 1e-9

# configuration order used everywhere: (0,0), (1,0), (0,1), (1,1)
CONFIGS = ((0, 0), (1, 0), (0, 1), (1, 1))


def _check_probs(*ps):
    for p in ps:
        p = np.asarray(p, dtype=float)
        if not np.all((p > 0) & (p < 1)):
            raise DomainError("probabilities must lie strictly inside (0, 1)")


def lipsitz_joint(p_s, p_r, tau):
    """P(A_s=1, A_r=1) for margins ``p_s, p_r`` and odds ratio ``tau`` (vectorised).

    Uses the feasible (minus) root of the quadratic, written in rationalised
    form 2*tau*p_s*p_r / (b + sqrt(disc)) so it stays accurate near tau = 1.
    """
    p_s, p_r, tau = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (p_s, p_r, tau)))
    _check_probs(p_s, p_r)
    if not np.all(np.isfinite(tau) & (tau > 0)):
        raise DomainError("odds ratio must be finite and positive")
    b = 1.0 - (1.0 - tau) * (p_s + p_r)
    disc = np.maximum(b * b - 4.0 * tau * (tau - 1.0) * p_s * p_r, 0.0)
    root = 2.0 * tau * p_s * p_r / (b + np.sqrt(disc))
    out = np.where(np.abs(tau - 1.0) <= TAU_ONE_TOL, p_s * p_r, root)
    lo = np.maximum(0.0, p_s + p_r - 1.0)
    hi = np.minimum(p_s, p_r)
    out = np.clip(out, lo, hi)
    return out if out.ndim else float(out)


@dataclass
class PropensityTable:
    """Joint treatment probabilities, one entry per household."""

    pi00: np.ndarray
    pi10: np.ndarray
    pi01: np.ndarray
    pi11: np.ndarray

    def as_array(self) -> np.ndarray:
        """(n, 4) array in configuration order (0,0), (1,0), (0,1), (1,1)."""
        return np.column_stack([np.atleast_1d(c) for c in (self.pi00, self.pi10, self.pi01, self.pi11)])

    def observed(self, a_s, a_r) -> np.ndarray:
        idx = config_index(a_s, a_r)
        return self.as_array()[np.arange(len(idx)), idx]

    @property
    def p_s(self):
        return self.pi10 + self.pi11

    @property
    def p_r(self):
        return self.pi01 + self.pi11


def config_index(a_s, a_r) -> np.ndarray:
    return np.asarray(a_s, dtype=int) + 2 * np.asarray(a_r, dtype=int)


def propensity_table(p_s, p_r, tau, *, clip: bool = True) -> PropensityTable:
    p11 = np.asarray(lipsitz_joint(p_s, p_r, tau), dtype=float)
    p_s = np.broadcast_to(np.asarray(p_s, dtype=float), p11.shape)
    p_r = np.broadcast_to(np.asarray(p_r, dtype=float), p11.shape)
    cells = np.stack([1.0 - p_s - p_r + p11, p_s - p11, p_r - p11, p11], axis=-1)
    if clip:
        cells = np.clip(cells, CELL_FLOOR, 1.0 - CELL_FLOOR)
        cells = cells / cells.sum(axis=-1, keepdims=True)
    return PropensityTable(*(cells[..., k] for k in range(4)))


def table_odds_ratio(table: PropensityTable):
    cells = [np.asarray(c, dtype=float) for c in (table.pi00, table.pi10, table.pi01, table.pi11)]
    if any(np.any(c <= 0) for c in cells):
        raise DomainError("odds ratio undefined for a table with an empty cell")
    pi00, pi10, pi01, pi11 = cells
    out = pi11 * pi00 / (pi10 * pi01)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# Fitted models
# --------------------------------------------------------------------------

@dataclass
class MarginalPropensityModel:
    """Logistic model for each member's treatment.

    ``alpha`` holds the pooled coefficients, or ``{"s": ..., "r": ...}`` for
    per-role fits. Terms are evaluated on the per-member view of the data.
    """

    alpha: np.ndarray | dict
    terms: tuple[str, ...]
    pooling: str = "pooled"

    def coef(self, role: str) -> np.ndarray:
        return self.alpha[role] if isinstance(self.alpha, dict) else self.alpha

    def predict(self, data: pd.DataFrame) -> tuple[np.ndarray, np.ndarray]:
        out = []
        for role in ("s", "r"):
            X = evaluate_terms(role_frame(data, role), self.terms)
            out.append(np.clip(expit(X @ self.coef(role)), CELL_FLOOR, 1.0 - CELL_FLOOR))
        return out[0], out[1]


@dataclass
class OddsRatioModel:
    o: np.ndarray
    terms: tuple[str, ...]
    converged: bool = True
    iterations: int = 0

    def tau(self, data: pd.DataFrame) -> np.ndarray:
        return np.exp(evaluate_terms(data, self.terms) @ self.o)


def fit_marginal_propensity(data: pd.DataFrame, terms: Sequence[str], pooling: str = "pooled",
                            a_cols: tuple[str, str] = ("a_s", "a_r")) -> MarginalPropensityModel:
    require_columns(data, a_cols)
    terms = tuple(terms)
    X = {role: evaluate_terms(role_frame(data, role), terms) for role in ("s", "r")}
    A = {role: data[col].to_numpy(dtype=float) for role, col in zip(("s", "r"), a_cols)}
    if pooling == "pooled":
        fit = fit_weighted_logistic(np.vstack([X["s"], X["r"]]), np.concatenate([A["s"], A["r"]]))
        alpha = fit.coef
    elif pooling == "per-role":
        alpha = {role: fit_weighted_logistic(X[role], A[role]).coef for role in ("s", "r")}
    else:
        raise ValueError(f"unknown pooling {pooling!r}")
    return MarginalPropensityModel(alpha, terms, pooling)


def _or_cells(p_s, p_r, log_tau):
    """Cell probabilities and d p11 / d log(tau), unclipped."""
    tab = propensity_table(p_s, p_r, np.exp(log_tau), clip=False)
    cells = np.maximum(tab.as_array(), 1e-300)
    # log tau = log p11 + log p00 - log p10 - log p01 with margins fixed, so
    # d log tau / d p11 is the sum of reciprocal cells.
    inv_sum = np.sum(1.0 / cells, axis=1)
    return cells, 1.0 / inv_sum


def or_loglik(o, X, idx, p_s, p_r) -> float:
    cells, _ = _or_cells(p_s, p_r, X @ o)
    return float(np.sum(np.log(cells[np.arange(len(idx)), idx])))


def or_score(o, X, idx, p_s, p_r) -> np.ndarray:
    cells, dp11 = _or_cells(p_s, p_r, X @ o)
    sign = np.array([1.0, -1.0, -1.0, 1.0])[idx]
    return X.T @ (sign * dp11 / cells[np.arange(len(idx)), idx])


def fit_odds_ratio_model(data: pd.DataFrame, marginal: MarginalPropensityModel, terms: Sequence[str],
                         a_cols: tuple[str, str] = ("a_s", "a_r")) -> OddsRatioModel:
    """Profile ML fit of log(tau) = o'x_sr with the marginal propensities held fixed.

    Fisher scoring; the score uses the closed-form derivative of the joint
    cell in log(tau).
    """
    require_columns(data, a_cols)
    terms = tuple(terms)
    a_s = data[a_cols[0]].to_numpy(dtype=int)
    a_r = data[a_cols[1]].to_numpy(dtype=int)
    if np.all(a_s == a_r):
        raise NoDiscordantPairs("every household has concordant treatments; the odds ratio is unidentified")
    if np.all(a_s != a_r):
        raise NoDiscordantPairs("no concordant treatment pairs; the odds ratio is unidentified")
    X = evaluate_terms(data, terms)
    p_s, p_r = marginal.predict(data)
    idx = config_index(a_s, a_r)
    rows = np.arange(len(idx))
    sign = np.array([1.0, -1.0, -1.0, 1.0])[idx]

    def objective(o, derivs):
        cells, dp11 = _or_cells(p_s, p_r, X @ o)
        ll = float(np.sum(np.log(cells[rows, idx])))
        if not derivs:
            return ll
        grad = X.T @ (sign * dp11 / cells[rows, idx])
        info = (X * dp11[:, None]).T @ X  # expected information: sum x x' / sum(1/cells)
        return ll, grad, info

    sep = lambda o, _gn: bool(np.max(np.abs(o)) > SEPARATION_BOUND)
    tr = _newton(objective, np.zeros(X.shape[1]), stop=sep)
    if not tr.converged:
        raise NonConvergence(f"odds-ratio model did not converge (|grad|={tr.grad_norm:.2e})")
    return OddsRatioModel(tr.x, terms, True, tr.iterations)


@dataclass
class JointPropensityModel:
    marginal: MarginalPropensityModel
    odds_ratio: OddsRatioModel

    def table(self, data: pd.DataFrame) -> PropensityTable:
        p_s, p_r = self.marginal.predict(data)
        return propensity_table(p_s, p_r, self.odds_ratio.tau(data))


def fit_joint_propensity(data: pd.DataFrame, propensity_terms: Sequence[str], pair_terms: Sequence[str],
                         pooling: str = "pooled", a_cols: tuple[str, str] = ("a_s", "a_r")) -> JointPropensityModel:
    marginal = fit_marginal_propensity(data, propensity_terms, pooling, a_cols)
    return JointPropensityModel(marginal, fit_odds_ratio_model(data, marginal, pair_terms, a_cols))
