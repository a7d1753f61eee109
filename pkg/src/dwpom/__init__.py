"""Weighted proportional odds models for household treatment regimes with interference."""

from .balancing import WeightScheme, check_balancing_criterion, kappa, weights_for
from .dynamics import dwpom_fit, pseudo_utility_probs, sample_pseudo_utilities
from .estimator import ModelSpec, WpomResult, cv_wpom, interference_unaware_fit, wpom_fit
from .model_core import PomDesign, PomFit, brant_wald, expit, fit_weighted_logistic, fit_weighted_pom, pom_score
from .policy import BlipParams, TreatmentConfig, blip_value, optimal_config, regime_metrics, regret, value_odds_ratio
from .propensity import lipsitz_joint, propensity_table, table_odds_ratio

__version__ = "0.1.0"

__all__ = [
    "BlipParams", "ModelSpec", "PomDesign", "PomFit", "TreatmentConfig", "WeightScheme", "WpomResult",
    "blip_value", "brant_wald", "check_balancing_criterion", "cv_wpom", "dwpom_fit", "expit",
    "fit_weighted_logistic", "fit_weighted_pom", "interference_unaware_fit", "kappa", "lipsitz_joint",
    "optimal_config", "pom_score", "propensity_table", "pseudo_utility_probs", "regime_metrics", "regret",
    "sample_pseudo_utilities", "table_odds_ratio", "value_odds_ratio", "weights_for", "wpom_fit",
]
