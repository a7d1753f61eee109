"""Household blips, optimal configurations, regret and regime quality metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, LengthMismatch
from .model_core import category_probs

# Column order of every (n, 4) array: (0,0), (1,0), (0,1), (1,1). np.argmax keeps
# the first maximum, so exact ties go to the fewest treated members and then
# to treating s before r.
CONFIGS = np.array([(0, 0), (1, 0), (0, 1), (1, 1)])


@dataclass(frozen=True)
class TreatmentConfig:
    a_s: int
    a_r: int

    def __post_init__(self):
        if self.a_s not in (0, 1) or self.a_r not in (0, 1):
            raise ValueError("treatments must be 0 or 1")

    @property
    def index(self) -> int:
        return self.a_s + 2 * self.a_r

    def __iter__(self):
        yield self.a_s
        yield self.a_r


@dataclass
class BlipParams:
    xi: np.ndarray
    psi: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        self.xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        self.psi = np.atleast_1d(np.asarray(self.psi, dtype=float))
        self.phi = np.atleast_1d(np.asarray(self.phi, dtype=float))

    def components(self, x_xi, x_psi, x_phi):
        """Per-household xi'x_xi, psi'x_psi, phi'x_phi."""
        parts = []
        for name, coef, x in (("xi", self.xi, x_xi), ("psi", self.psi, x_psi), ("phi", self.phi, x_phi)):
            x = np.asarray(x, dtype=float)
            if x.ndim == 1 and x.shape[0] == coef.shape[0]:
                x = x[None, :]
            elif x.ndim == 1:
                x = x[:, None]
            if x.shape[-1] != coef.shape[0]:
                raise DimensionMismatch(f"{name} block has {x.shape[-1]} columns but {coef.shape[0]} coefficients")
            parts.append(x @ coef)
        return tuple(parts)


def blip_table(x_xi, x_psi, x_phi, params: BlipParams) -> np.ndarray:
    """(n, 4) household blips at every configuration."""
    g_xi, g_psi, g_phi = params.components(x_xi, x_psi, x_phi)
    return np.column_stack([np.zeros_like(g_xi), g_xi, g_psi, g_xi + g_psi + g_phi])


def blip_value(config, x_xi, x_psi, x_phi, params: BlipParams):
    a_s, a_r = config
    g_xi, g_psi, g_phi = params.components(x_xi, x_psi, x_phi)
    out = a_s * g_xi + a_r * g_psi + a_s * a_r * g_phi
    return float(out[0]) if out.shape == (1,) else out


def optimal_index(blips: np.ndarray) -> np.ndarray:
    return np.argmax(np.asarray(blips, dtype=float), axis=1)


def optimal_config(x_xi, x_psi, x_phi, params: BlipParams):
    """Configuration maximising the household blip; one TreatmentConfig for a single
    household, otherwise an (n, 2) integer array."""
    idx = optimal_index(blip_table(x_xi, x_psi, x_phi, params))
    if idx.shape == (1,):
        return TreatmentConfig(*map(int, CONFIGS[idx[0]]))
    return CONFIGS[idx]


def rules_config(g_xi: float, g_psi: float, g_phi: float) -> TreatmentConfig | None:
    """The four household decision rules written out as strict inequalities.

    Returns None when no rule applies strictly (a tie).
    """
    both = g_xi + g_psi + g_phi
    if both > 0 and both > g_xi and both > g_psi:
        return TreatmentConfig(1, 1)
    if g_xi > 0 and g_xi > g_psi and g_xi > both:
        return TreatmentConfig(1, 0)
    if g_psi > 0 and g_psi > g_xi and g_psi > both:
        return TreatmentConfig(0, 1)
    if g_xi < 0 and g_psi < 0 and both < 0:
        return TreatmentConfig(0, 0)
    return None


def regret(config, x_xi, x_psi, x_phi, params: BlipParams):
    tab = blip_table(x_xi, x_psi, x_phi, params)
    if isinstance(config, TreatmentConfig) or np.ndim(config) == 1:
        idx = np.full(tab.shape[0], TreatmentConfig(*map(int, config)).index)
    else:
        config = np.asarray(config, dtype=int)
        idx = config[:, 0] + 2 * config[:, 1]
    out = tab.max(axis=1) - tab[np.arange(tab.shape[0]), idx]
    return float(out[0]) if out.shape == (1,) else out


@dataclass
class RegimeMetrics:
    otr_household: float
    otr_individual: float
    mean_regret: float
    otr_any: float = np.nan  # share of households where at least one member matches

    def as_dict(self) -> dict:
        return {"otr_h": self.otr_household, "otr_i": self.otr_individual,
                "mrv": self.mean_regret, "otr_any": self.otr_any}


def regime_metrics(estimated, truth, true_params: BlipParams, x_xi, x_psi, x_phi) -> RegimeMetrics:
    est = np.asarray(estimated, dtype=int).reshape(-1, 2)
    tru = np.asarray(truth, dtype=int).reshape(-1, 2)
    if est.shape != tru.shape:
        raise LengthMismatch(f"{len(est)} estimated configurations vs {len(tru)} true ones")
    match = est == tru
    reg = np.atleast_1d(regret(est, x_xi, x_psi, x_phi, true_params))
    if reg.shape[0] != est.shape[0]:
        raise LengthMismatch("covariate blocks do not match the number of households")
    return RegimeMetrics(
        otr_household=float(np.mean(match.all(axis=1))),
        otr_individual=float(np.mean(match)),
        mean_regret=float(np.mean(reg)),
        otr_any=float(np.mean(match.any(axis=1))),
    )


@dataclass
class ValueOdds:
    or_u3: float
    or_u_ge2: float


def _odds_ratio(hit_pred: float, n_pred: float, hit_obs: float, n_obs: float) -> float:
    counts = np.array([hit_pred, n_pred - hit_pred, hit_obs, n_obs - hit_obs], dtype=float)
    if np.any(counts == 0):
        counts = counts + 0.5
    return float((counts[0] / counts[1]) / (counts[2] / counts[3]))


def value_odds_ratio(predicted_u, observed_u) -> ValueOdds:
    """Odds of U=3 (and of U>=2) among predicted outcomes relative to observed ones.

    ``predicted_u`` may be integer outcomes or an (n, 3) array of category
    probabilities, in which case expected counts are used.
    """
    obs = np.asarray(observed_u)
    pred = np.asarray(predicted_u)
    if obs.size == 0 or pred.size == 0:
        raise ValueError("outcome vectors must be nonempty")
    if pred.ndim == 2:
        n_pred = float(pred.shape[0])
        top, upper = float(pred[:, 2].sum()), float(pred[:, 1:].sum())
    else:
        n_pred = float(pred.size)
        top, upper = float(np.sum(pred == 3)), float(np.sum(pred >= 2))
    n_obs = float(obs.size)
    return ValueOdds(
        _odds_ratio(top, n_pred, float(np.sum(obs == 3)), n_obs),
        _odds_ratio(upper, n_pred, float(np.sum(obs >= 2)), n_obs),
    )


def sample_categories(probs, rng: np.random.Generator) -> np.ndarray:
    """One draw in {1,2,3} per row of an (n, 3) probability array."""
    probs = np.asarray(probs, dtype=float)
    u = rng.random(probs.shape[0])
    cum = np.cumsum(probs, axis=1)
    return 1 + (u > cum[:, 0]).astype(int) + (u > cum[:, 1]).astype(int)


def predicted_outcome_probs(fit, design, configs) -> np.ndarray:
    """Fitted category probabilities with each household set to ``configs``."""
    configs = np.asarray(configs, dtype=int).reshape(-1, 2)
    return fit.category_probs(design, configs[:, 0], configs[:, 1])


__all__ = [
    "BlipParams", "CONFIGS", "RegimeMetrics", "TreatmentConfig", "ValueOdds",
    "blip_table", "blip_value", "category_probs", "optimal_config", "optimal_index",
    "predicted_outcome_probs", "regime_metrics", "regret", "rules_config",
    "sample_categories", "value_odds_ratio",
]
