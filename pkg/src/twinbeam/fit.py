"""Weighted least-squares fit of the effective NRF versus resolution curve.

Free parameters are the optical efficiency eta0, the coherence radius r and
the misalignment delta (both um, detection plane). The optimiser works in
unconstrained coordinates: eta0 = logistic(u), r = exp(v), delta = exp(w).
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import theory
from .theory import NoiseBudget

MAX_ITER = 200
XTOL = 1e-8


class FitError(RuntimeError):
    """The optimiser did not converge or the normal equations are singular."""


@dataclass(frozen=True, eq=False)
class NrfCurve:
    L: np.ndarray                    # um, detection plane
    sigma_eff: np.ndarray
    stderr: np.ndarray | None = None
    total_n: float = 1000.0
    stray_n: float = 0.0
    read_noise: float = 0.0

    def __post_init__(self):
        L = np.asarray(self.L, dtype=np.float64)
        s = np.asarray(self.sigma_eff, dtype=np.float64)
        if L.shape != s.shape or L.ndim != 1:
            raise ValueError("L and sigma_eff must be 1-D arrays of equal length")
        if L.size > 1 and np.any(np.diff(L) <= 0):
            raise ValueError("L must be strictly increasing")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "sigma_eff", s)
        if self.stderr is not None:
            e = np.asarray(self.stderr, dtype=np.float64)
            if e.shape != L.shape or np.any(e <= 0):
                raise ValueError("standard errors must be positive, one per point")
            object.__setattr__(self, "stderr", e)

    @property
    def budget(self) -> NoiseBudget:
        return NoiseBudget(self.total_n, self.stray_n, self.read_noise)

    @classmethod
    def unsorted(cls, L, sigma_eff, stderr=None, **kw) -> "NrfCurve":
        order = np.argsort(L)
        e = None if stderr is None else np.asarray(stderr)[order]
        return cls(np.asarray(L)[order], np.asarray(sigma_eff)[order], e, **kw)


@dataclass(frozen=True, eq=False)
class FitResult:
    eta0: float
    r: float
    delta: float
    eta0_err: float
    r_err: float
    delta_err: float
    chi2: float
    converged: bool
    iterations: int
    covariance: np.ndarray = field(repr=False)
    residuals: np.ndarray = field(repr=False)

    @property
    def D(self) -> float:
        return self.delta / (2 * self.r)

    def values(self) -> np.ndarray:
        return np.array([self.eta0, self.r, self.delta])

    def errors(self) -> np.ndarray:
        return np.array([self.eta0_err, self.r_err, self.delta_err])


def model_and_jacobian(params, L, budget: NoiseBudget, beta=0.5, mu=0.0, gamma=1.0):
    """sigma_eff(L) and its derivatives w.r.t. (eta0, r, delta), unclamped."""
    eta0, r, delta = params
    L = np.asarray(L, dtype=np.float64)
    X = L / (2 * r)
    D = delta / (2 * r)
    a = math.pi * beta ** 2 - 2
    b = math.pi * beta - 2
    num = X * (a - 2 * D * (mu + 1)) + X ** 2 + 1
    den = X ** 2 + b * X + 1
    ec = num / den
    ft, fn = budget.f_twb, budget.f_noise
    model = ft * ((gamma + 1) / 2 - eta0 * ec) + fn

    num_X = a - 2 * D * (mu + 1) + 2 * X
    num_D = -2 * X * (mu + 1)
    den_X = 2 * X + b
    ec_X = (num_X * den - num * den_X) / den ** 2
    ec_D = num_D / den
    ec_r = ec_X * (-X / r) + ec_D * (-D / r)
    ec_delta = ec_D / (2 * r)
    jac = np.column_stack([-ft * ec, -ft * eta0 * ec_r, -ft * eta0 * ec_delta])
    return model, jac


def predict_curve(eta0: float, r: float, delta: float, L, budget: NoiseBudget,
                  beta: float = 0.5, mu: float = 0.0, gamma: float = 1.0) -> NrfCurve:
    """Model curve through the theory functions (with their clamping)."""
    L = np.asarray(L, dtype=np.float64)
    vals = []
    for Li in L:
        g = theory.ModeGeometry(float(Li), r, delta, beta, mu, gamma, eta0)
        vals.append(theory.sigma_eff(theory.sigma_model(g), budget))
    return NrfCurve(L, np.array(vals), None, budget.total_n, budget.stray_n, budget.read_noise)


def _to_natural(theta):
    u, v, w = theta
    return np.array([1.0 / (1.0 + math.exp(-u)), math.exp(v), math.exp(w)])


def _to_internal(p):
    eta0, r, delta = p
    if not 0 < eta0 < 1 or r <= 0 or delta <= 0:
        raise ValueError("initial guesses need 0 < eta0 < 1, r > 0, delta > 0")
    return np.array([math.log(eta0 / (1 - eta0)), math.log(r), math.log(delta)])


def _chain(p):
    eta0, r, delta = p
    return np.array([eta0 * (1 - eta0), r, delta])


def fit_nrf_curve(curve: NrfCurve, beta: float = 0.5, mu: float = 0.0, gamma: float = 1.0,
                  initial=(0.7, None, None), max_iter: int = MAX_ITER, xtol: float = XTOL) -> FitResult:
    """Levenberg-Marquardt fit of (eta0, r, delta) to a measured curve.

    Damping is multiplied by ten after a rejected step and divided by ten
    after an accepted one. Convergence is declared when every natural
    parameter changes by less than ``xtol`` relative.
    """
    n = curve.L.size
    if n < 4:
        raise FitError(f"{n} points cannot constrain 3 free parameters; need at least 4")
    budget = curve.budget
    w = np.ones(n) if curve.stderr is None else 1.0 / curve.stderr ** 2
    eta0_0, r_0, d_0 = initial
    r_0 = r_0 if r_0 is not None else float(curve.L[0]) / 2
    d_0 = d_0 if d_0 is not None else 0.1 * r_0
    theta = _to_internal((eta0_0, r_0, d_0))

    def evaluate(th):
        p = _to_natural(th)
        m, j = model_and_jacobian(p, curve.L, budget, beta, mu, gamma)
        res = curve.sigma_eff - m
        return p, res, j, float(np.sum(w * res ** 2))

    p, res, jac, chi2 = evaluate(theta)
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        jt = jac * _chain(p)                       # d model / d theta
        A = jt.T @ (w[:, None] * jt)
        g = jt.T @ (w * res)
        diag = np.diag(A).copy()
        if not np.all(np.isfinite(A)) or np.linalg.cond(A) > 1e14:
            raise FitError(f"singular normal equations (condition number {np.linalg.cond(A):.3g})")
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(np.maximum(diag, 1e-300)), g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = theta + step
            if np.all(np.abs(trial) < 700):
                p_new, res_new, jac_new, chi2_new = evaluate(trial)
                if np.isfinite(chi2_new) and chi2_new <= chi2:
                    accepted = True
                    break
            lam *= 10
        if not accepted:
            converged = True   # no downhill step left at any damping: stationary point
            break
        rel = np.abs(p_new - p) / np.maximum(np.abs(p), 1e-300)
        theta, p, res, jac, chi2 = trial, p_new, res_new, jac_new, chi2_new
        lam = max(lam / 10, 1e-12)
        if np.all(rel < xtol):
            converged = True
            break
    if not converged:
        raise FitError(f"no convergence after {max_iter} iterations (chi2 = {chi2:.6g})")

    A = jac.T @ (w[:, None] * jac)
    try:
        cov = np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        raise FitError(f"singular covariance (condition number {np.linalg.cond(A):.3g})") from exc
    err = np.sqrt(np.clip(np.diag(cov), 0, None))
    return FitResult(float(p[0]), float(p[1]), float(p[2]), float(err[0]), float(err[1]), float(err[2]),
                     chi2, True, it, cov, res)


BUDGET_KEYS = ("total_n", "stray_n", "read_noise")


def read_curve_csv(text: str, **budget) -> NrfCurve:
    """Parse ``L_um,sigma_eff,stderr`` rows (header optional, stderr optional).

    Comment lines of the form ``# total_n = 1000`` (also ``stray_n``,
    ``read_noise``) set the noise budget; keyword arguments take precedence.
    """
    L, s, e = [], [], []
    has_err = None
    found = {}
    for lineno, raw in enumerate(io.StringIO(text), 1):
        line = raw.strip()
        if line.startswith("#"):
            key, sep, val = line[1:].partition("=")
            if sep and key.strip() in BUDGET_KEYS:
                try:
                    found[key.strip()] = float(val)
                except ValueError:
                    raise ValueError(f"line {lineno}: bad value for {key.strip()}") from None
            continue
        if not line:
            continue
        fields = [f.strip() for f in line.split(",")]
        if fields[0] == "L_um":
            continue
        if len(fields) not in (2, 3):
            raise ValueError(f"line {lineno}: expected 2 or 3 fields, got {len(fields)}")
        try:
            vals = [float(f) for f in fields]
        except ValueError:
            raise ValueError(f"line {lineno}: non-numeric field in {line!r}") from None
        if has_err is None:
            has_err = len(vals) == 3
        elif has_err != (len(vals) == 3):
            raise ValueError(f"line {lineno}: inconsistent column count")
        L.append(vals[0])
        s.append(vals[1])
        if has_err:
            e.append(vals[2])
    if not L:
        raise ValueError("curve file holds no data rows")
    found.update(budget)
    return NrfCurve.unsorted(L, s, e if has_err else None, **found)


def curve_to_csv(curve: NrfCurve) -> str:
    rows = [f"# total_n = {float(curve.total_n)!r}", f"# stray_n = {float(curve.stray_n)!r}",
            f"# read_noise = {float(curve.read_noise)!r}", "L_um,sigma_eff,stderr"]
    for i in range(curve.L.size):
        err = "" if curve.stderr is None else repr(float(curve.stderr[i]))
        rows.append(f"{float(curve.L[i])!r},{float(curve.sigma_eff[i])!r},{err}".rstrip(","))
    return "\n".join(rows) + "\n"


def fit_report(result: FitResult, magnification: float = 7.8) -> str:
    m = magnification
    lines = [
        "# NRF curve fit",
        f"converged = {result.converged}",
        f"iterations = {result.iterations}",
        f"chi2 = {result.chi2:.10g}",
        f"eta0 = {result.eta0:.10g} +- {result.eta0_err:.3g}",
        f"r_um_detection = {result.r:.10g} +- {result.r_err:.3g}",
        f"delta_um_detection = {result.delta:.10g} +- {result.delta_err:.3g}",
        f"r_um_object = {result.r / m:.10g} +- {result.r_err / m:.3g}",
        f"delta_um_object = {result.delta / m:.10g} +- {result.delta_err / m:.3g}",
        f"D = {result.D:.10g}",
    ]
    return "\n".join(lines) + "\n"


def fit_csv(result: FitResult, magnification: float = 7.8) -> str:
    m = magnification
    rows = ["parameter,value,stderr",
            f"eta0,{result.eta0!r},{result.eta0_err!r}",
            f"r_um_detection,{result.r!r},{result.r_err!r}",
            f"delta_um_detection,{result.delta!r},{result.delta_err!r}",
            f"r_um_object,{result.r / m!r},{result.r_err / m!r}",
            f"delta_um_object,{result.delta / m!r},{result.delta_err / m!r}",
            f"D,{result.D!r},",
            f"chi2,{result.chi2!r},"]
    return "\n".join(rows) + "\n"
