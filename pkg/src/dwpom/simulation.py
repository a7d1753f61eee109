"""Data-generating processes for the single- and two-stage simulation studies
and the Monte Carlo driver."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import DwpomError, ReplicateBudgetExceeded
from .estimator import ModelSpec, cv_wpom, interference_unaware_fit, wpom_fit
from .model_core import expit, logit
from .policy import CONFIGS, BlipParams, blip_table, optimal_index, regime_metrics, value_odds_ratio
from .propensity import propensity_table

log = logging.getLogger(__name__)

FAILURE_BUDGET = 0.05
MARGIN_EPS = 1e-12


def make_rng(seed: int, replicate: int = 0) -> np.random.Generator:
    """Counter-based stream keyed by (seed, replicate)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(replicate)])))


def gen_correlated_treatments(p_s, p_r, tau, rng: np.random.Generator) -> np.ndarray:
    """(n, 2) treatment pairs drawn from the joint table implied by the margins and odds ratio.

    Margins that round to exactly 0 or 1 in floating point are pulled in by 1e-12.
    """
    p_s = np.clip(np.asarray(p_s, dtype=float), MARGIN_EPS, 1.0 - MARGIN_EPS)
    p_r = np.clip(np.asarray(p_r, dtype=float), MARGIN_EPS, 1.0 - MARGIN_EPS)
    cells = propensity_table(p_s, p_r, tau, clip=False).as_array()
    cum = np.cumsum(cells, axis=1)
    u = rng.random(cells.shape[0])
    idx = np.minimum((u[:, None] > cum[:, :3]).sum(axis=1), 3)
    return CONFIGS[idx]


def draw_ordinal(mu, zeta, uniforms) -> np.ndarray:
    """U in {1,2,3} with P(U <= c) = expit(zeta_c - mu), by inversion of ``uniforms``."""
    F1 = expit(zeta[0] - mu)
    F2 = expit(zeta[1] - mu)
    return 1 + (uniforms > F1).astype(int) + (uniforms > F2).astype(int)


@dataclass
class GroundTruth:
    params: BlipParams
    x_xi: np.ndarray
    x_psi: np.ndarray
    x_phi: np.ndarray
    optimal: np.ndarray   # (n, 2)
    mu: np.ndarray
    zeta: tuple[float, float]
    uniforms: np.ndarray  # latent draws behind U, reused for counterfactual outcomes

    def blips(self) -> np.ndarray:
        return blip_table(self.x_xi, self.x_psi, self.x_phi, self.params)


# --------------------------------------------------------------------------
# Study 1: one stage
# --------------------------------------------------------------------------

STUDY1_XI = (-0.5, 1.0)
STUDY1_PSI = (-0.5, 1.0)
STUDY1_PHI = (-1.0, 0.5)
STUDY1_ZETA = (0.619, 2.197)

S1_LINEAR = [f"x{k}_{t}" for t in ("s", "r") for k in (1, 2, 3, 4)]
S1_NONLINEAR = ["cos(x1_s + x1_r)", "(x1_s + x1_r)**3", "log(x1_s)", "x1_r**2", "(x3_s + x3_r)**3"]
S1_TAILOR = dict(xi_cols=["1", "x1_s"], psi_cols=["1", "x1_r"], phi_cols=["1", "x3_s + x3_r"])


def study1_spec(scenario: int = 3) -> ModelSpec:
    """Estimator specification for a Study 1 scenario.

    1: both models linear; 2: correct outcome model only; 3: correct treatment
    model only; 4: both correct.
    """
    if scenario not in (1, 2, 3, 4):
        raise ValueError("scenario must be 1, 2, 3 or 4")
    outcome_ok = scenario in (2, 4)
    treatment_ok = scenario in (3, 4)
    return ModelSpec(
        beta_cols=S1_LINEAR + (S1_NONLINEAR if outcome_ok else []),
        propensity_cols=["1", "exp(x1)", "x2**2", "x3", "x4"] if treatment_ok else ["1", "x1", "x2", "x3", "x4"],
        or_pair_cols=["1", "x1_s + x1_r", "x3_s + x3_r"] if treatment_ok else ["1"],
        **S1_TAILOR,
    )


@dataclass
class Study1Config:
    households: int = 500
    replicates: int = 100
    scenario: int = 3
    schemes: tuple[str, ...] = ("m4",)
    seed: int = 42
    blip_scale: float = 1.0          # 0 switches the treatment effects off
    treatment_free: bool = True      # False sets f = 0

    def __post_init__(self):
        if self.households < 10:
            raise ValueError("households must be at least 10")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        self.schemes = tuple(self.schemes)


def study1_treatment_free(df: pd.DataFrame) -> np.ndarray:
    x1s, x1r = df["x1_s"].to_numpy(), df["x1_r"].to_numpy()
    x3 = df["x3_s"].to_numpy() + df["x3_r"].to_numpy()
    return np.cos(x1s + x1r) - (x1s + x1r) ** 3 + np.log(x1s) - 2 * x1r**2 + x3**3


def gen_study1(cfg: Study1Config, replicate: int = 0) -> tuple[pd.DataFrame, GroundTruth]:
    rng = make_rng(cfg.seed, replicate)
    H = cfg.households
    cols = {"household_id": np.arange(H)}
    for t in ("s", "r"):
        cols[f"x1_{t}"] = rng.uniform(0.0, 1.0, H)
        cols[f"x2_{t}"] = rng.normal(0.0, 1.0, H)
        cols[f"x3_{t}"] = rng.binomial(1, 0.5, H).astype(float)
        cols[f"x4_{t}"] = rng.binomial(1, 0.75, H).astype(float)
    df = pd.DataFrame(cols)
    p = {t: expit(-1.15 + 0.5 * np.exp(df[f"x1_{t}"]) - 0.25 * df[f"x2_{t}"] ** 2
                  + 0.25 * df[f"x3_{t}"] + 0.6 * df[f"x4_{t}"]).to_numpy() for t in ("s", "r")}
    x3sum = (df["x3_s"] + df["x3_r"]).to_numpy()
    tau = np.exp(-0.25 + 0.25 * (df["x1_s"] + df["x1_r"]).to_numpy() + 0.5 * x3sum)
    a = gen_correlated_treatments(p["s"], p["r"], tau, rng)
    df["a_s"], df["a_r"] = a[:, 0], a[:, 1]

    one = np.ones(H)
    params = BlipParams(np.multiply(STUDY1_XI, cfg.blip_scale), np.multiply(STUDY1_PSI, cfg.blip_scale),
                        np.multiply(STUDY1_PHI, cfg.blip_scale))
    x_xi, x_psi, x_phi = np.c_[one, df["x1_s"]], np.c_[one, df["x1_r"]], np.c_[one, x3sum]
    tab = blip_table(x_xi, x_psi, x_phi, params)
    f = study1_treatment_free(df) if cfg.treatment_free else np.zeros(H)
    mu = f + tab[np.arange(H), a[:, 0] + 2 * a[:, 1]]
    uniforms = rng.random(H)
    df["u"] = draw_ordinal(mu, STUDY1_ZETA, uniforms)
    truth = GroundTruth(params, x_xi, x_psi, x_phi, CONFIGS[optimal_index(tab)], mu, STUDY1_ZETA, uniforms)
    return df, truth


# --------------------------------------------------------------------------
# Study 2: two stages
# --------------------------------------------------------------------------

STUDY2_XI = (-0.25, 0.5)
STUDY2_PSI = (-0.25, 0.5)
STUDY2_PHI = (-0.5, 0.25)
STUDY2_ZETA = (0.405, 1.735)


@dataclass
class Study2Truth:
    stages: list[GroundTruth]   # stage 1 first; mu and uniforms are shared
    f: np.ndarray


def study2_specs(case: int = 1) -> list[ModelSpec]:
    """Per-stage estimator specifications (stage 1 first).

    Case 1: linear outcome models, correct treatment models at both stages.
    Case 2: stage 1 swaps to a correct outcome model and a linear treatment model.
    """
    if case not in (1, 2):
        raise ValueError("case must be 1 or 2")
    specs = []
    for j in (1, 2):
        lin = [f"x{k}{p}_{t}" for k in range(1, j + 1) for p in (1, 2) for t in ("s", "r")]
        history = ["a1_s", "a1_r"] if j == 2 else []
        beta = lin + history
        prop = ["1", f"exp(x{j}1)", f"x{j}2"]
        pair = ["1", f"x{j}2_s + x{j}2_r"]
        if case == 2 and j == 1:
            beta = lin + ["cos(pi*(x11_s + x11_r))", "exp(0.5*(x11_s + x11_r))", "(x12_s + x12_r)**3"]
            prop, pair = ["1", "x11", "x12"], ["1"]
        specs.append(ModelSpec(
            beta_cols=beta,
            xi_cols=["1", f"x{j}1_s"], psi_cols=["1", f"x{j}1_r"], phi_cols=["1", f"x{j}2_s + x{j}2_r"],
            propensity_cols=prop, or_pair_cols=pair, a_cols=(f"a{j}_s", f"a{j}_r"),
        ))
    return specs


def gen_study2(households: int, replicate: int = 0, seed: int = 42) -> tuple[pd.DataFrame, Study2Truth]:
    rng = make_rng(seed, replicate)
    H = households
    cols = {"household_id": np.arange(H)}
    for t in ("s", "r"):
        cols[f"x11_{t}"] = rng.normal(0.0, 1.0, H)
        cols[f"x12_{t}"] = rng.binomial(1, 0.5, H).astype(float)
    for t in ("s", "r"):
        cols[f"x21_{t}"] = 0.5 * rng.normal(cols[f"x11_{t}"], 1.0)
        cols[f"x22_{t}"] = rng.binomial(1, 0.1 + 0.5 * cols[f"x12_{t}"]).astype(float)
    df = pd.DataFrame(cols)
    params = BlipParams(STUDY2_XI, STUDY2_PSI, STUDY2_PHI)
    one = np.ones(H)
    f = (np.cos(np.pi * (df["x11_s"] + df["x11_r"])) + 0.5 * np.exp(df["x21_s"] + df["x21_r"])
         + 0.2 * (df["x12_s"] + df["x12_r"]) ** 3).to_numpy()
    mu = f.copy()
    stages = []
    for j in (1, 2):
        p = {t: expit(-1 + 1.15 * np.exp(df[f"x{j}1_{t}"]) - 0.5 * df[f"x{j}2_{t}"]).to_numpy() for t in ("s", "r")}
        x2sum = (df[f"x{j}2_s"] + df[f"x{j}2_r"]).to_numpy()
        a = gen_correlated_treatments(p["s"], p["r"], np.exp(-0.15 + 0.25 * x2sum), rng)
        df[f"a{j}_s"], df[f"a{j}_r"] = a[:, 0], a[:, 1]
        x_xi, x_psi, x_phi = np.c_[one, df[f"x{j}1_s"]], np.c_[one, df[f"x{j}1_r"]], np.c_[one, x2sum]
        tab = blip_table(x_xi, x_psi, x_phi, params)
        mu = mu + tab[np.arange(H), a[:, 0] + 2 * a[:, 1]]
        stages.append(GroundTruth(params, x_xi, x_psi, x_phi, CONFIGS[optimal_index(tab)], None, STUDY2_ZETA, None))
    uniforms = rng.random(H)
    df["u"] = draw_ordinal(mu, STUDY2_ZETA, uniforms)
    for st in stages:
        st.mu, st.uniforms = mu, uniforms
    return df, Study2Truth(stages, f)


def study2_counterfactual_u(truth: Study2Truth, configs: list[np.ndarray]) -> np.ndarray:
    """Outcomes had each stage followed ``configs`` (same latent draws as the observed U)."""
    mu = truth.f.copy()
    rows = np.arange(len(mu))
    for st, cfg in zip(truth.stages, configs):
        cfg = np.asarray(cfg, dtype=int)
        mu = mu + st.blips()[rows, cfg[:, 0] + 2 * cfg[:, 1]]
    return draw_ordinal(mu, truth.stages[0].zeta, truth.stages[0].uniforms)


# --------------------------------------------------------------------------
# Monte Carlo driver
# --------------------------------------------------------------------------

@dataclass
class MonteCarloConfig:
    study: str = "1a"
    households: int = 500
    replicates: int = 100
    seed: int = 42
    scenario: int = 3
    schemes: tuple[str, ...] = ("m4",)
    draws: int = 25
    folds: int = 20
    cv: bool = False
    unaware: bool = True
    case: int = 1
    value_mode: str = "fitted"   # how outcomes under the estimated regime are predicted: fitted | true
    workers: int | None = None

    def __post_init__(self):
        self.study = str(self.study).lower().removeprefix("study")
        if self.study not in ("1a", "1b", "2"):
            raise ValueError(f"unknown study {self.study!r}")
        if self.value_mode not in ("fitted", "true"):
            raise ValueError("value_mode must be 'fitted' or 'true'")
        self.schemes = tuple(str(s).lower() for s in self.schemes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("workers")
        d["schemes"] = list(self.schemes)
        return d


BLIP_NAMES = ("xi0", "xi1", "psi0", "psi1", "phi0", "phi1")


def _blip_record(prefix: str, params: BlipParams) -> dict:
    vals = np.concatenate([params.xi, params.psi, params.phi])
    return {f"{prefix}{n}": float(v) for n, v in zip(BLIP_NAMES, vals)}


def _score_single(truth: GroundTruth, params: BlipParams, x_blocks) -> dict:
    est = CONFIGS[optimal_index(blip_table(*x_blocks, params))]
    m = regime_metrics(est, truth.optimal, truth.params, truth.x_xi, truth.x_psi, truth.x_phi)
    return m.as_dict()


def _replicate_study1(cfg: MonteCarloConfig, rep: int) -> list[dict]:
    s1 = Study1Config(cfg.households, 1, cfg.scenario, cfg.schemes, cfg.seed)
    data, truth = gen_study1(s1, rep)
    spec = study1_spec(cfg.scenario)
    x_blocks = (truth.x_xi, truth.x_psi, truth.x_phi)
    rows = []
    for scheme in cfg.schemes:
        res = wpom_fit(data, spec, scheme)
        rows.append({"method": scheme, **_score_single(truth, res.blips, x_blocks), **_blip_record("", res.blips)})
        if cfg.cv:
            cv = cv_wpom(data, spec, scheme, cfg.folds, seed=cfg.seed + rep)
            rows.append({"method": f"cv_{scheme}", **_score_single(truth, cv.blips, x_blocks),
                         **_blip_record("", cv.blips)})
    if cfg.study == "1a" and cfg.unaware:
        est = interference_unaware_fit(data, spec).recommend(data)
        m = regime_metrics(est, truth.optimal, truth.params, *x_blocks)
        rows.append({"method": "unaware", **m.as_dict()})
    return rows


def _replicate_study2(cfg: MonteCarloConfig, rep: int) -> list[dict]:
    from .dynamics import dwpom_fit

    data, truth = gen_study2(cfg.households, rep, cfg.seed)
    specs = study2_specs(cfg.case)
    observed = data["u"].to_numpy()
    rows = []
    for scheme in cfg.schemes:
        res = dwpom_fit(data, specs, scheme, R=cfg.draws, seed=cfg.seed + rep)
        configs = res.recommend(data, specs)
        row = {"method": scheme, "brant_fail_rate": res.brant_failure_rate}
        for j, (st, est) in enumerate(zip(truth.stages, configs), start=1):
            m = regime_metrics(est, st.optimal, st.params, st.x_xi, st.x_psi, st.x_phi)
            row.update({f"s{j}_{k}": v for k, v in m.as_dict().items()})
            row.update(_blip_record(f"s{j}_", res.blips[j - 1]))
        # both predictions are cheap; value_mode picks the headline pair
        preds = {"fitted": res.predict_outcomes(data, specs, configs, seed=cfg.seed + rep),
                 "true": study2_counterfactual_u(truth, configs)}
        for mode, pred in preds.items():
            vo = value_odds_ratio(pred, observed)
            row.update({f"or_u3_{mode}": vo.or_u3, f"or_u_ge2_{mode}": vo.or_u_ge2})
        row.update({"or_u3": row[f"or_u3_{cfg.value_mode}"], "or_u_ge2": row[f"or_u_ge2_{cfg.value_mode}"]})
        rows.append(row)
    return rows


def run_replicate(cfg: MonteCarloConfig, rep: int) -> list[dict]:
    fn = _replicate_study2 if cfg.study == "2" else _replicate_study1
    return [{"replicate": rep, **row} for row in fn(cfg, rep)]


def _safe_replicate(args):
    cfg, rep = args
    try:
        return rep, run_replicate(cfg, rep), None
    except DwpomError as exc:
        return rep, [], f"{exc.code}: {exc}"


def worker_count(requested: int | None = None) -> int:
    if requested:
        return max(1, int(requested))
    env = os.environ.get("DWPOM_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class MonteCarloResult:
    config: MonteCarloConfig
    per_replicate: pd.DataFrame
    summary: pd.DataFrame
    failures: dict = field(default_factory=dict)

    def mean(self, method: str, metric: str) -> float:
        row = self.summary[(self.summary.method == method) & (self.summary.metric == metric)]
        return float(row["mean"].iloc[0])


def summarise(per_rep: pd.DataFrame) -> pd.DataFrame:
    long = per_rep.melt(id_vars=["replicate", "method"], var_name="metric").dropna(subset=["value"])
    g = long.groupby(["method", "metric"], sort=True)["value"]
    out = pd.DataFrame({"mean": g.mean(), "sd": g.std(ddof=1), "n": g.count()}).reset_index()
    return out


def run_monte_carlo(cfg: MonteCarloConfig) -> MonteCarloResult:
    """Run all replicates, score each method against the ground truth, and summarise."""
    jobs = [(cfg, rep) for rep in range(cfg.replicates)]
    workers = min(worker_count(cfg.workers), cfg.replicates)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_safe_replicate, jobs))
    else:
        results = [_safe_replicate(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    failures = {rep: msg for rep, _, msg in results if msg is not None}
    for rep, msg in failures.items():
        log.warning("replicate %d failed: %s", rep, msg)
    if len(failures) > FAILURE_BUDGET * cfg.replicates:
        raise ReplicateBudgetExceeded(
            f"{len(failures)} of {cfg.replicates} replicates failed (budget {FAILURE_BUDGET:.0%})")
    per_rep = pd.DataFrame([row for _, rows, _ in results for row in rows])
    return MonteCarloResult(cfg, per_rep, summarise(per_rep), failures)


def with_overrides(cfg, **kw):
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
