"""Weighted ML fitters: binary logistic regression, the three-category
cumulative-logit (proportional odds) model, and the Brant-Wald test.

The cumulative-logit convention throughout is

    logit P(U <= c | a, x) = zeta_c - beta'x_beta - a_s xi'x_xi - a_r psi'x_psi - a_s a_r phi'x_phi

so a positive linear predictor pushes mass towards the top category.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import linalg, stats
from scipy.special import expit as _expit

from .errors import DegenerateCut, DegenerateOutcome, NonConvergence, SingularDesign

CONVERGENCE_TOL = 1e-8
REL_LOGLIK_TOL = 1e-12
MAX_ITER = 100
MAX_HALVINGS = 30
SEPARATION_BOUND = 30.0


def expit(x):
    """Logistic function, overflow-free for any finite input."""
    return _expit(x)


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


def _log_expit(x):
    return -np.logaddexp(0.0, -x)


# --------------------------------------------------------------------------
# Newton driver shared by every fitter
# --------------------------------------------------------------------------

@dataclass
class _NewtonTrace:
    x: np.ndarray
    loglik: float
    grad_norm: float
    converged: bool
    iterations: int
    logliks: list = field(default_factory=list)


def _newton(
    objective: Callable,
    x0: np.ndarray,
    *,
    score_norm: Callable | None = None,
    max_iter: int = MAX_ITER,
    tol: float = CONVERGENCE_TOL,
    rel_tol: float = REL_LOGLIK_TOL,
    stop: Callable | None = None,
) -> _NewtonTrace:
    """Maximise ``objective`` by damped Newton steps.

    ``objective(x, derivs)`` returns the log-likelihood alone, or the tuple
    ``(loglik, grad, neg_hess)`` when ``derivs`` is true. ``neg_hess`` must be
    positive definite. Steps are halved until the log-likelihood does not
    decrease. ``score_norm`` maps ``(x, grad)`` to the norm used in the
    convergence test (defaults to the infinity norm of ``grad``).
    """
    x = np.array(x0, dtype=float)
    ll, g, neg_h = objective(x, True)
    if not np.isfinite(ll):
        raise NonConvergence("log-likelihood is not finite at the starting values")
    norm = score_norm or (lambda _x, grad: float(np.max(np.abs(grad))) if grad.size else 0.0)
    trace = [ll]
    gn = norm(x, g)
    for it in range(max_iter):
        if gn <= tol:
            return _NewtonTrace(x, ll, gn, True, it, trace)
        step = linalg.cho_solve(_damped_cholesky(neg_h), g)
        decrement = float(g @ step)
        if 0.5 * decrement <= rel_tol * max(1.0, abs(ll)):
            # the predicted gain of a full step is below the relative tolerance
            return _NewtonTrace(x, ll, gn, True, it, trace)
        t = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            x_new = x + t * step
            ll_new = objective(x_new, False)
            if np.isfinite(ll_new) and ll_new >= ll:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # No representable improvement: the Newton decrement says how far we are.
            done = 0.5 * decrement <= rel_tol * max(1.0, abs(ll))
            return _NewtonTrace(x, ll, gn, done, it, trace)
        rel_change = abs(ll_new - ll) / max(1.0, abs(ll))
        x = x_new
        ll, g, neg_h = objective(x, True)
        trace.append(ll)
        gn = norm(x, g)
        if stop is not None and stop(x, gn):
            return _NewtonTrace(x, ll, gn, False, it + 1, trace)
        if t == 1.0 and rel_change <= rel_tol:
            return _NewtonTrace(x, ll, gn, True, it + 1, trace)
    return _NewtonTrace(x, ll, gn, gn <= tol, max_iter, trace)


def _damped_cholesky(a: np.ndarray):
    """Cholesky factor of ``a``, adding a growing ridge if roundoff breaks definiteness."""
    if not np.all(np.isfinite(a)):
        raise SingularDesign("information matrix is not finite")
    scale = float(np.max(np.abs(np.diag(a)))) if a.size else 1.0
    ridge = 0.0
    for _ in range(8):
        try:
            return linalg.cho_factor(a + ridge * np.eye(a.shape[0]), lower=True, check_finite=False)
        except linalg.LinAlgError:
            ridge = scale * (1e-12 if ridge == 0.0 else ridge / scale * 100.0)
    raise SingularDesign("information matrix is not positive definite")


def _normalise_weights(w, n: int) -> np.ndarray:
    if w is None:
        return np.ones(n)
    w = np.asarray(w, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"weights must have shape ({n},), got {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights are all zero")
    return w * (n / total)


def _check_rank(X: np.ndarray, w: np.ndarray, what: str) -> None:
    support = X[w > 0]
    if support.shape[0] < X.shape[1] or np.linalg.matrix_rank(support) < X.shape[1]:
        raise SingularDesign(f"{what} design is rank deficient on the weighted support")


# --------------------------------------------------------------------------
# Binary logistic regression
# --------------------------------------------------------------------------

@dataclass
class LogisticFit:
    coef: np.ndarray
    converged: bool
    iterations: int
    separated: bool = False
    loglik: float = np.nan

    def predict(self, X) -> np.ndarray:
        return expit(np.asarray(X, dtype=float) @ self.coef)


def _logistic_objective(X, y, w):
    def objective(b, derivs):
        eta = X @ b
        ll = float(np.sum(w * (y * _log_expit(eta) + (1 - y) * _log_expit(-eta))))
        if not derivs:
            return ll
        p = expit(eta)
        grad = X.T @ (w * (y - p))
        neg_h = (X * (w * p * (1 - p))[:, None]).T @ X
        return ll, grad, neg_h

    return objective


def logistic_score(coef, X, y, w=None) -> np.ndarray:
    """Gradient of the weighted Bernoulli log-likelihood (weights used as given)."""
    X = np.asarray(X, dtype=float)
    w = np.ones(X.shape[0]) if w is None else np.asarray(w, dtype=float)
    _, grad, _ = _logistic_objective(X, np.asarray(y, dtype=float), w)(np.asarray(coef, dtype=float), True)
    return grad


def fit_weighted_logistic(X, y, w=None, *, max_iter: int = MAX_ITER, tol: float = CONVERGENCE_TOL) -> LogisticFit:
    """Weighted logistic regression by Newton-Raphson with step halving.

    ``X`` must already contain an intercept column if one is wanted. Weights
    are rescaled to mean one, so multiplying them by a constant does not
    change the fit. Quasi-separation (a coefficient beyond +-30) stops the
    iteration and returns the fit with ``converged=False, separated=True``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be (n, p) and y must be (n,)")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("y must be binary")
    w = _normalise_weights(w, X.shape[0])
    _check_rank(X, w, "logistic")

    sep = lambda b, _gn: bool(np.max(np.abs(b)) > SEPARATION_BOUND)
    tr = _newton(_logistic_objective(X, y, w), np.zeros(X.shape[1]), max_iter=max_iter, tol=tol, stop=sep)
    separated = bool(np.max(np.abs(tr.x)) > SEPARATION_BOUND) if tr.x.size else False
    if not tr.converged and not separated:
        raise NonConvergence(f"logistic fit did not converge in {tr.iterations} iterations (|grad|={tr.grad_norm:.2e})")
    return LogisticFit(tr.x, tr.converged and not separated, tr.iterations, separated, tr.loglik)


# --------------------------------------------------------------------------
# Proportional odds model
# --------------------------------------------------------------------------

class LinearPredictors(NamedTuple):
    eta1: np.ndarray
    eta2: np.ndarray


@dataclass
class PomDesign:
    """Household rows for the proportional odds model.

    ``x_beta`` holds treatment-free regressors (no intercept; the cutpoints
    play that role). The three tailoring blocks are multiplied by the
    treatment indicators when the regression matrix is built.
    """

    x_beta: np.ndarray
    x_xi: np.ndarray
    x_psi: np.ndarray
    x_phi: np.ndarray
    a_s: np.ndarray
    a_r: np.ndarray
    names: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.a_s)
        for name in ("x_beta", "x_xi", "x_psi", "x_phi"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim == 1:
                arr = arr[:, None]
            if arr.shape[0] != n:
                raise ValueError(f"{name} has {arr.shape[0]} rows, expected {n}")
            setattr(self, name, arr)
        self.a_s = np.asarray(self.a_s, dtype=float)
        self.a_r = np.asarray(self.a_r, dtype=float)
        if not (np.all(np.isin(self.a_s, (0, 1))) and np.all(np.isin(self.a_r, (0, 1)))):
            raise ValueError("treatments must be binary")

    def __len__(self):
        return len(self.a_s)

    @property
    def block_sizes(self) -> tuple[int, int, int, int]:
        return self.x_beta.shape[1], self.x_xi.shape[1], self.x_psi.shape[1], self.x_phi.shape[1]

    def regressors(self, a_s=None, a_r=None) -> np.ndarray:
        """Regression matrix at the observed treatments, or at the supplied ones."""
        a_s = self.a_s if a_s is None else np.broadcast_to(np.asarray(a_s, dtype=float), self.a_s.shape)
        a_r = self.a_r if a_r is None else np.broadcast_to(np.asarray(a_r, dtype=float), self.a_r.shape)
        return np.hstack([
            self.x_beta,
            self.x_xi * a_s[:, None],
            self.x_psi * a_r[:, None],
            self.x_phi * (a_s * a_r)[:, None],
        ])

    def subset(self, idx) -> "PomDesign":
        return PomDesign(self.x_beta[idx], self.x_xi[idx], self.x_psi[idx], self.x_phi[idx],
                         self.a_s[idx], self.a_r[idx], dict(self.names))


@dataclass
class PomFit:
    zeta1: float
    zeta2: float
    beta: np.ndarray
    xi: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    converged: bool = True
    iterations: int = 0
    max_grad_norm: float = 0.0
    loglik: float = np.nan
    loglik_path: tuple = ()

    @property
    def slopes(self) -> np.ndarray:
        return np.concatenate([self.beta, self.xi, self.psi, self.phi])

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([[self.zeta1, self.zeta2], self.slopes])

    @property
    def blips(self) -> np.ndarray:
        return np.concatenate([self.xi, self.psi, self.phi])

    @classmethod
    def from_params(cls, params, sizes, **kw) -> "PomFit":
        params = np.asarray(params, dtype=float)
        cuts = np.cumsum([2, *sizes])
        beta, xi, psi, phi = (params[lo:hi] for lo, hi in zip(cuts[:-1], cuts[1:]))
        return cls(float(params[0]), float(params[1]), beta, xi, psi, phi, **kw)

    def linear_predictors(self, design: PomDesign, a_s=None, a_r=None) -> LinearPredictors:
        lin = design.regressors(a_s, a_r) @ self.slopes
        return LinearPredictors(self.zeta1 - lin, self.zeta2 - lin)

    def category_probs(self, design: PomDesign, a_s=None, a_r=None) -> np.ndarray:
        eta1, eta2 = self.linear_predictors(design, a_s, a_r)
        return category_probs(eta1, eta2)


def category_probs(eta1, eta2) -> np.ndarray:
    """(n, 3) category probabilities from the two cumulative log-odds."""
    eta1 = np.asarray(eta1, dtype=float)
    eta2 = np.asarray(eta2, dtype=float)
    F1 = expit(eta1)
    F2 = expit(eta2)
    p2 = F2 * expit(-eta1) * -np.expm1(eta1 - eta2)
    return np.stack([F1, p2, expit(-eta2)], axis=-1)


def _pom_pieces(Z, u, w, zeta1, zeta2, b, derivs):
    lin = Z @ b
    eta1 = zeta1 - lin
    eta2 = zeta2 - lin
    gap = zeta2 - zeta1
    c1, c2, c3 = u == 1, u == 2, u == 3
    log_gap = np.log(-np.expm1(-gap)) if gap > 0 else -np.inf
    ll_terms = np.where(
        c1, _log_expit(eta1),
        np.where(c3, _log_expit(-eta2), _log_expit(eta2) + _log_expit(-eta1) + log_gap),
    )
    ll = float(np.sum(w * ll_terms))
    if not derivs:
        return ll
    F1, F2 = expit(eta1), expit(eta2)
    Q1, Q2 = expit(-eta1), expit(-eta2)
    one_m = -np.expm1(-gap)  # 1 - exp(eta1 - eta2)
    # first derivatives of each term with respect to (eta1, eta2)
    # f(eta2) / p2 and f(eta1) / p2, as ratios of logs so tails cannot give 0/0
    g2_mid = np.exp(_log_expit(-eta2) - _log_expit(-eta1)) / one_m
    g1_mid = np.exp(_log_expit(eta1) - _log_expit(eta2)) / one_m
    d1 = np.where(c1, Q1, np.where(c2, -g1_mid, 0.0))
    d2 = np.where(c3, -F2, np.where(c2, g2_mid, 0.0))
    # second derivatives
    h11 = np.where(c1, -F1 * Q1, np.where(c2, -g1_mid * (1 - 2 * F1) - g1_mid**2, 0.0))
    h22 = np.where(c3, -F2 * Q2, np.where(c2, g2_mid * (1 - 2 * F2) - g2_mid**2, 0.0))
    h12 = np.where(c2, g1_mid * g2_mid, 0.0)
    grad = np.concatenate([[np.sum(w * d1), np.sum(w * d2)], -Z.T @ (w * (d1 + d2))])
    k = Z.shape[1]
    hess = np.empty((k + 2, k + 2))
    hess[0, 0] = np.sum(w * h11)
    hess[1, 1] = np.sum(w * h22)
    hess[0, 1] = hess[1, 0] = np.sum(w * h12)
    hess[0, 2:] = hess[2:, 0] = -Z.T @ (w * (h11 + h12))
    hess[1, 2:] = hess[2:, 1] = -Z.T @ (w * (h12 + h22))
    hess[2:, 2:] = (Z * (w * (h11 + 2 * h12 + h22))[:, None]).T @ Z
    return ll, grad, hess


def pom_loglik(params, design: PomDesign, u, w=None) -> float:
    """Weighted log-likelihood at natural-scale parameters (zeta1, zeta2, slopes)."""
    params = np.asarray(params, dtype=float)
    u = np.asarray(u)
    w = np.ones(len(u)) if w is None else np.asarray(w, dtype=float)
    return _pom_pieces(design.regressors(), u, w, params[0], params[1], params[2:], False)


def pom_score(params, design: PomDesign, u, w=None) -> np.ndarray:
    """Analytic gradient of the weighted log-likelihood.

    ``params`` is a :class:`PomFit` or the natural-scale vector
    ``(zeta1, zeta2, beta, xi, psi, phi)``; the result is ordered the same way.
    """
    if isinstance(params, PomFit):
        params = params.params
    params = np.asarray(params, dtype=float)
    u = np.asarray(u)
    w = np.ones(len(u)) if w is None else np.asarray(w, dtype=float)
    _, grad, _ = _pom_pieces(design.regressors(), u, w, params[0], params[1], params[2:], True)
    return grad


def _initial_cutpoints(u, w) -> tuple[float, float]:
    mass = np.array([w[u == c].sum() for c in (1, 2, 3)])
    if np.any(mass <= 0):
        raise DegenerateOutcome(f"outcome category {int(np.argmin(mass)) + 1} has zero weighted mass")
    cum = np.cumsum(mass)[:2] / mass.sum()
    z1, z2 = logit(cum)
    return float(z1), float(z2)


def fit_weighted_pom(design: PomDesign, u, w=None, *, max_iter: int = MAX_ITER, tol: float = CONVERGENCE_TOL) -> PomFit:
    """Weighted ML fit of the three-category proportional odds model.

    Newton-Raphson on ``(zeta1, log(zeta2 - zeta1), slopes)`` with step halving.
    Weights are rescaled to mean one before fitting.
    """
    u = np.asarray(u)
    if u.shape != (len(design),):
        raise ValueError("u must have one entry per household")
    if not np.all(np.isin(u, (1, 2, 3))):
        raise ValueError("u must take values in {1, 2, 3}")
    w = _normalise_weights(w, len(u))
    z1, z2 = _initial_cutpoints(u, w)
    Z = design.regressors()
    _check_rank(np.hstack([np.ones((len(u), 1)), Z]), w, "proportional odds")
    k = Z.shape[1]

    def to_natural(x):
        return x[0], x[0] + np.exp(x[1]), x[2:]

    def objective(x, derivs):
        zeta1, zeta2, b = to_natural(x)
        if not derivs:
            return _pom_pieces(Z, u, w, zeta1, zeta2, b, False)
        ll, g, h = _pom_pieces(Z, u, w, zeta1, zeta2, b, True)
        e = np.exp(x[1])
        J = np.eye(k + 2)
        J[1, 0] = 1.0
        J[1, 1] = e
        g_rep = J.T @ g
        neg_h = -(J.T @ h @ J)
        curv = neg_h.copy()
        curv[1, 1] -= g[1] * e
        try:
            np.linalg.cholesky(curv)
            neg_h = curv
        except np.linalg.LinAlgError:
            pass
        return ll, g_rep, neg_h

    def natural_norm(x, g_rep):
        # back out the natural-scale score: g_zeta2 = g_delta / e^delta, g_zeta1 = g_rep0 - g_zeta2
        g2 = g_rep[1] / np.exp(x[1])
        return float(max(abs(g_rep[0] - g2), abs(g2), np.max(np.abs(g_rep[2:])) if k else 0.0))

    x0 = np.concatenate([[z1, np.log(z2 - z1)], np.zeros(k)])
    tr = _newton(objective, x0, score_norm=natural_norm, max_iter=max_iter, tol=tol)
    if not tr.converged:
        raise NonConvergence(f"POM fit did not converge in {tr.iterations} iterations (|grad|={tr.grad_norm:.2e})")
    zeta1, zeta2, b = to_natural(tr.x)
    fit = PomFit.from_params(np.concatenate([[zeta1, zeta2], b]), design.block_sizes,
                             converged=True, iterations=tr.iterations, max_grad_norm=tr.grad_norm,
                             loglik=tr.loglik, loglik_path=tuple(tr.logliks))
    return fit


# --------------------------------------------------------------------------
# Brant-Wald test of proportional odds
# --------------------------------------------------------------------------

@dataclass
class BrantResult:
    chi2: float
    df: int
    pvalue: float

    @property
    def rejects(self) -> bool:
        return self.pvalue < 0.05


def brant_wald(X, u) -> BrantResult:
    """Omnibus Brant (1990) test that the slopes of the two cumulative splits agree.

    ``X`` is the POM regressor matrix without an intercept (for a
    :class:`PomDesign` pass ``design.regressors()``).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    u = np.asarray(u)
    n, p = X.shape
    Xa = np.hstack([np.ones((n, 1)), X])
    fits, probs = [], []
    for c in (1, 2):
        y = (u > c).astype(float)
        if y.min() == y.max():
            raise DegenerateCut(f"split U<={c} vs U>{c} is constant")
        try:
            f = fit_weighted_logistic(Xa, y)
        except (SingularDesign, NonConvergence) as exc:
            raise DegenerateCut(f"binary fit for split {c} failed: {exc}") from exc
        if f.separated:
            raise DegenerateCut(f"binary fit for split {c} is separated")
        fits.append(f.coef)
        probs.append(f.predict(Xa))
    pi1, pi2 = probs
    inv1 = np.linalg.inv((Xa * (pi1 * (1 - pi1))[:, None]).T @ Xa)
    inv2 = np.linalg.inv((Xa * (pi2 * (1 - pi2))[:, None]).T @ Xa)
    # P(U>1, U>2) = P(U>2), so the cross weight is pi2 - pi1*pi2
    cross = inv1 @ ((Xa * (pi2 * (1 - pi1))[:, None]).T @ Xa) @ inv2
    s = slice(1, p + 1)
    v11, v22, v12 = inv1[s, s], inv2[s, s], cross[s, s]
    diff = fits[0][1:] - fits[1][1:]
    var = v11 + v22 - v12 - v12.T
    chi2 = float(diff @ np.linalg.solve(var, diff))
    chi2 = max(chi2, 0.0)
    return BrantResult(chi2, p, float(stats.chi2.sf(chi2, p)))
