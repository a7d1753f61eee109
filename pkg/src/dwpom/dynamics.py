"""Multi-stage estimation by backward induction on ordinal pseudo-utilities."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .balancing import WeightScheme
from .errors import AllDrawsDegenerate, BrantFailure, DegenerateCut, DwpomError
from .estimator import ModelSpec, average_fits, fit_propensity, wpom_fit
from .model_core import PomDesign, PomFit, brant_wald, category_probs
from .policy import CONFIGS, BlipParams, blip_table, optimal_index, sample_categories

log = logging.getLogger(__name__)


def pseudo_utility_probs(fit: PomFit, design: PomDesign, d_star=None) -> np.ndarray:
    """(n, 3) probabilities of each pseudo-utility category.

    Cutpoints minus the treatment-free part minus the blip at ``d_star`` (the
    fitted optimal configuration when omitted).
    """
    if d_star is None:
        d_star = optimal_configs(fit, design)
    d_star = np.asarray(d_star, dtype=int).reshape(-1, 2)
    eta1, eta2 = fit.linear_predictors(design, d_star[:, 0], d_star[:, 1])
    return category_probs(eta1, eta2)


def optimal_configs(fit: PomFit, design: PomDesign) -> np.ndarray:
    params = BlipParams(fit.xi, fit.psi, fit.phi)
    return CONFIGS[optimal_index(blip_table(design.x_xi, design.x_psi, design.x_phi, params))]


def sample_pseudo_utilities(probs, R: int, rng: np.random.Generator) -> np.ndarray:
    """R x H matrix of categorical draws."""
    if R < 1:
        raise ValueError("R must be at least 1")
    probs = np.asarray(probs, dtype=float)
    return np.stack([sample_categories(probs, rng) for _ in range(R)])


@dataclass
class StageSummary:
    fit: PomFit
    draws_used: int
    draws_failed: int = 0
    brant_pvalues: list[float] = field(default_factory=list)
    brant_not_applicable: int = 0

    @property
    def brant_failures(self) -> int:
        return sum(p < 0.05 for p in self.brant_pvalues)


@dataclass
class DwpomResult:
    stages: list[StageSummary]   # stage 1 first
    scheme: WeightScheme
    warnings: list[str] = field(default_factory=list)

    @property
    def fits(self) -> list[PomFit]:
        return [s.fit for s in self.stages]

    @property
    def blips(self) -> list[BlipParams]:
        return [BlipParams(f.xi, f.psi, f.phi) for f in self.fits]

    @property
    def brant_failure_rate(self) -> float:
        tested = sum(len(s.brant_pvalues) for s in self.stages)
        return float(sum(s.brant_failures for s in self.stages) / tested) if tested else np.nan

    def recommend(self, data: pd.DataFrame, specs: Sequence[ModelSpec]) -> list[np.ndarray]:
        """Estimated optimal configuration at every stage, stage 1 first."""
        return [optimal_configs(f, spec.design(data)) for f, spec in zip(self.fits, specs)]

    def predict_outcomes(self, data: pd.DataFrame, specs: Sequence[ModelSpec], configs=None,
                         seed: int = 0, expected: bool = False):
        """Final-stage outcomes predicted by the last fitted model with every stage's
        treatments set to ``configs`` (the estimated regime by default).

        Earlier-stage treatments enter only through columns of the last-stage
        design. ``expected=True`` returns the (n, 3) probabilities instead of draws.
        """
        configs = self.recommend(data, specs) if configs is None else configs
        cf = data.copy()
        for spec, cfg in zip(specs, configs):
            cfg = np.asarray(cfg, dtype=int)
            cf[spec.a_cols[0]], cf[spec.a_cols[1]] = cfg[:, 0], cfg[:, 1]
        probs = self.fits[-1].category_probs(specs[-1].design(cf))
        if expected:
            return probs
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 7919])))
        return sample_categories(probs, rng)


def dwpom_fit(panel: pd.DataFrame, specs: Sequence[ModelSpec], scheme="m4", R: int = 25, seed: int = 42,
              *, strict: bool = False, brant: bool = True) -> DwpomResult:
    """Backward-induction fit over K stages (``specs`` ordered stage 1 first).

    The last stage is fitted on the observed outcome. Each earlier stage is
    fitted R times on pseudo-utilities drawn from the later stage's fit at its
    estimated optimal configuration; all parameters are averaged across the
    successful draws. A Brant-Wald rejection is logged as a warning, or
    raises :class:`BrantFailure` when ``strict``.
    """
    scheme = WeightScheme.parse(scheme)
    if R < 1:
        raise ValueError("R must be at least 1")
    K = len(specs)
    if K < 1:
        raise ValueError("need at least one stage")
    warnings: list[str] = []
    last = wpom_fit(panel, specs[-1], scheme)
    summaries = [StageSummary(last.final_fit, 1)]
    later_fit, later_design = last.final_fit, specs[-1].design(panel)
    for j in range(K - 2, -1, -1):
        spec = specs[j]
        design = spec.design(panel)
        table = None if scheme is WeightScheme.M0 else fit_propensity(panel, spec).table(panel)
        probs = pseudo_utility_probs(later_fit, later_design)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), j + 1])))
        draws = sample_pseudo_utilities(probs, R, rng)
        X = design.regressors()
        summary = StageSummary(later_fit, 0)
        fits = []
        for r, u in enumerate(draws):
            if brant:
                try:
                    bw = brant_wald(X, u)
                    summary.brant_pvalues.append(bw.pvalue)
                    if bw.pvalue < 0.05:
                        msg = f"stage {j + 1} draw {r}: pseudo-outcomes fail the proportional odds check (p={bw.pvalue:.3g})"
                        if strict:
                            raise BrantFailure(msg)
                        warnings.append(msg)
                        log.warning(msg)
                except DegenerateCut:
                    summary.brant_not_applicable += 1
            try:
                fits.append(wpom_fit(panel, spec, scheme, u=u, table=table, design=design).final_fit)
            except BrantFailure:
                raise
            except DwpomError as exc:
                summary.draws_failed += 1
                warnings.append(f"stage {j + 1} draw {r} dropped: {exc}")
                log.warning("stage %d draw %d dropped: %s", j + 1, r, exc)
        if not fits:
            raise AllDrawsDegenerate(f"all {R} pseudo-utility draws at stage {j + 1} failed")
        summary.fit = average_fits(fits)
        summary.draws_used = len(fits)
        summaries.insert(0, summary)
        later_fit, later_design = summary.fit, design
    return DwpomResult(summaries, scheme, warnings)
