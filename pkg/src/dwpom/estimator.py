"""Single-stage weighted proportional odds estimation.

The M4 fit runs in three steps: an overlap-weighted fit, kappa at all four
treatment configurations from that fit, and a refit with the adjusted weights.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .balancing import AdjustmentFactors, WeightScheme, household_weights, kappa
from .errors import DwpomError, FoldDegenerate, SchemaError
from .model_core import PomDesign, PomFit, fit_weighted_pom
from .policy import CONFIGS, BlipParams
from .propensity import JointPropensityModel, PropensityTable, fit_joint_propensity
from .terms import evaluate_terms, require_columns, role_frame, term_columns


@dataclass
class ModelSpec:
    """Which terms enter each block of the outcome and treatment models.

    Outcome terms are evaluated on the household frame (``x1_s``, ``x1_r``...).
    Propensity terms are evaluated per member with the role suffix stripped
    (``x1`` means ``x1_s`` for s and ``x1_r`` for r). The cutpoints act as
    the intercept, so ``beta_cols`` must not contain ``"1"``.
    """

    beta_cols: list[str] = field(default_factory=list)
    xi_cols: list[str] = field(default_factory=lambda: ["1"])
    psi_cols: list[str] = field(default_factory=lambda: ["1"])
    phi_cols: list[str] = field(default_factory=lambda: ["1"])
    propensity_cols: list[str] = field(default_factory=lambda: ["1"])
    or_pair_cols: list[str] = field(default_factory=lambda: ["1"])
    pooling: str = "pooled"
    a_cols: tuple[str, str] = ("a_s", "a_r")
    u_col: str = "u"

    def __post_init__(self):
        self.a_cols = tuple(self.a_cols)
        for name in ("beta_cols", "xi_cols", "psi_cols", "phi_cols", "propensity_cols", "or_pair_cols"):
            setattr(self, name, [str(t) for t in getattr(self, name)])
        if self.pooling not in ("pooled", "per-role"):
            raise SchemaError(f"pooling must be 'pooled' or 'per-role', got {self.pooling!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SchemaError(f"unknown model spec keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["a_cols"] = list(self.a_cols)
        return out

    def design(self, data: pd.DataFrame) -> PomDesign:
        require_columns(data, self.a_cols)
        return PomDesign(
            evaluate_terms(data, self.beta_cols),
            evaluate_terms(data, self.xi_cols),
            evaluate_terms(data, self.psi_cols),
            evaluate_terms(data, self.phi_cols),
            data[self.a_cols[0]].to_numpy(dtype=float),
            data[self.a_cols[1]].to_numpy(dtype=float),
            names={"beta": list(self.beta_cols), "xi": list(self.xi_cols),
                   "psi": list(self.psi_cols), "phi": list(self.phi_cols)},
        )

    def outcome(self, data: pd.DataFrame) -> np.ndarray:
        require_columns(data, [self.u_col])
        return data[self.u_col].to_numpy(dtype=int)


@dataclass
class WpomResult:
    step1_fit: PomFit
    final_fit: PomFit
    scheme: WeightScheme
    per_household_weights: np.ndarray
    propensity: JointPropensityModel | None = None

    @property
    def blips(self) -> BlipParams:
        return BlipParams(self.final_fit.xi, self.final_fit.psi, self.final_fit.phi)


def kappas_at_configs(fit: PomFit, design: PomDesign) -> AdjustmentFactors:
    cols = [kappa(fit.linear_predictors(design, a_s, a_r)) for a_s, a_r in CONFIGS]
    return AdjustmentFactors.from_array(np.column_stack(cols))


def fit_propensity(data: pd.DataFrame, spec: ModelSpec) -> JointPropensityModel:
    return fit_joint_propensity(data, spec.propensity_cols, spec.or_pair_cols, spec.pooling, spec.a_cols)


def wpom_fit(data: pd.DataFrame, spec: ModelSpec, scheme="m4", *, u=None,
             table: PropensityTable | None = None, design: PomDesign | None = None) -> WpomResult:
    """Weighted POM fit under one balancing scheme.

    ``u`` overrides the outcome column (used for pseudo-utilities); ``table``
    and ``design`` let callers reuse a propensity table or design across fits.
    """
    scheme = WeightScheme.parse(scheme)
    design = spec.design(data) if design is None else design
    u = spec.outcome(data) if u is None else np.asarray(u, dtype=int)
    a_s, a_r = design.a_s, design.a_r
    joint = None
    if scheme is WeightScheme.M0:
        w = np.ones(len(u))
    else:
        if table is None:
            joint = fit_propensity(data, spec)
            table = joint.table(data)
        first = WeightScheme.M3 if scheme is WeightScheme.M4 else scheme
        w = household_weights(first, table, a_s, a_r)
    step1 = fit_weighted_pom(design, u, w)
    if scheme is not WeightScheme.M4:
        return WpomResult(step1, step1, scheme, w, joint)
    kap = kappas_at_configs(step1, design)
    w = household_weights(WeightScheme.M4, table, a_s, a_r, kap)
    final = fit_weighted_pom(design, u, w)
    return WpomResult(step1, final, scheme, w, joint)


def average_fits(fits: Sequence[PomFit]) -> PomFit:
    fits = list(fits)
    sizes = (len(fits[0].beta), len(fits[0].xi), len(fits[0].psi), len(fits[0].phi))
    params = np.mean([f.params for f in fits], axis=0)
    return PomFit.from_params(params, sizes, converged=all(f.converged for f in fits),
                              iterations=max(f.iterations for f in fits),
                              max_grad_norm=max(f.max_grad_norm for f in fits))


@dataclass
class CvResult:
    fit: PomFit          # parameter average over the fold fits
    spread: np.ndarray   # per-parameter SD across folds, same order as PomFit.params
    fold_fits: list[PomFit]

    @property
    def blips(self) -> BlipParams:
        return BlipParams(self.fit.xi, self.fit.psi, self.fit.phi)


def cv_wpom(data: pd.DataFrame, spec: ModelSpec, scheme="m4", K: int = 20, seed: int = 42,
            folds=None) -> CvResult:
    """Leave-one-fold-out WPOM fits averaged over the K folds."""
    n = len(data)
    if folds is None:
        if K < 2:
            raise ValueError("K must be at least 2")
        if K > n:
            raise FoldDegenerate(f"cannot split {n} households into {K} folds")
        perm = np.random.default_rng(seed).permutation(n)
        labels = np.empty(n, dtype=int)
        for k, chunk in enumerate(np.array_split(perm, K)):
            labels[chunk] = k
    else:
        labels = np.asarray(folds)
        if labels.shape != (n,):
            raise ValueError("folds must give one label per household")
    fits = []
    for k in np.unique(labels):
        train = data.loc[labels != k]
        if len(train) == 0:
            raise FoldDegenerate(f"fold {k} leaves no training households")
        try:
            fits.append(wpom_fit(train.reset_index(drop=True), spec, scheme).final_fit)
        except DwpomError as exc:
            raise FoldDegenerate(f"training set without fold {k} cannot be fitted: {exc}") from exc
    spread = np.std([f.params for f in fits], axis=0, ddof=1) if len(fits) > 1 else np.zeros_like(fits[0].params)
    return CvResult(average_fits(fits), spread, fits)


@dataclass
class UnawareRegime:
    """Separate per-member ordinal fits that ignore the partner's treatment."""

    fit_s: PomFit
    fit_r: PomFit
    tailoring: tuple[str, ...]

    def recommend(self, data: pd.DataFrame) -> np.ndarray:
        # a positive contribution to the linear predictor raises P(U=3)
        out = [evaluate_terms(role_frame(data, role), self.tailoring) @ fit.xi > 0
               for role, fit in (("s", self.fit_s), ("r", self.fit_r))]
        return np.column_stack(out).astype(int)


def interference_unaware_fit(data: pd.DataFrame, spec: ModelSpec, tailoring: Sequence[str] = ("1",)) -> UnawareRegime:
    """Per-member cumulative-logit fits of U on own treatment and covariates.

    For member t the covariates are the treatment-free terms of ``spec`` that
    do not refer to the partner alone: own-role terms plus household-level
    terms mixing both members. ``tailoring`` lists the terms interacted with
    the member's own treatment (default: main effect only), evaluated on the
    member's view of the data, so ``"x1"`` means the member's own ``x1``.
    """
    tailoring = tuple(tailoring)
    u = spec.outcome(data)
    empty = np.zeros((len(data), 0))
    zeros = np.zeros(len(data))
    fits = []
    for role, col in zip(("s", "r"), spec.a_cols):
        partner = "_r" if role == "s" else "_s"
        own = [t for t in spec.beta_cols
               if not (term_columns(t) and all(c.endswith(partner) for c in term_columns(t)))]
        a = data[col].to_numpy(dtype=float)
        x_tail = evaluate_terms(role_frame(data, role), tailoring)
        fits.append(fit_weighted_pom(PomDesign(evaluate_terms(data, own), x_tail, empty, empty, a, zeros), u))
    return UnawareRegime(fits[0], fits[1], tailoring)
