"""Power-law fits, candidate-constant tables and Friedman/Nemenyi tests.

The power-law fitter recovers (C, gamma) in ``value ~= C / B^gamma`` by
Gauss-Newton on the residuals, seeded from the log-log linear regression.
The Friedman test ranks methods per configuration row and reports the
chi-square statistic with the Nemenyi critical difference; the Nemenyi
``q_alpha`` constants are embedded (two-tailed, alpha in {0.05, 0.10},
k <= 10) following the standard post-hoc methodology.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats as scipy_stats

from .errors import ValidationError

POWER_LAW_FORMS = ("excess", "ratio")

# two-tailed Nemenyi q_alpha for k = 2..10
_NEMENYI_Q = {
    0.05: [1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164],
    0.10: [1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920],
}

SHARED_DATA_CAVEAT = (
    "adjacent configurations share evaluation data; read this test as a "
    "coarse ordering check, not a formal significance claim"
)


@dataclass(frozen=True)
class PowerLawFit:
    """Fitted amplitude and exponent of ``C / B^gamma``.

    ``residual`` is the sum of squared log-space residuals at the solution;
    ``converged`` is False when Gauss-Newton stalled and the log-log
    initialization was returned instead.
    """

    C: float
    gamma: float
    residual: float
    model_form: str
    converged: bool = True


@dataclass(frozen=True)
class FriedmanResult:
    """Friedman statistic with Nemenyi critical difference.

    ``avg_ranks`` maps method index -> average rank (1 is best). When the
    p-value underflows float64, ``log10_p`` still carries the magnitude.
    """

    avg_ranks: np.ndarray
    chi2: float
    p_value: float
    log10_p: float
    n: int
    k: int
    cd: float
    alpha: float
    caveat: str = SHARED_DATA_CAVEAT


def _power_law_values(points, form: str):
    pts = [(float(b), float(v)) for b, v in points]
    if len(pts) < 3:
        raise ValidationError(f"need >= 3 points to fit a power law, got {len(pts)}")
    B = np.array([b for b, _ in pts])
    v = np.array([val for _, val in pts])
    if np.any(np.diff(B) <= 0):
        raise ValidationError("budgets must be strictly increasing")
    if form not in POWER_LAW_FORMS:
        raise ValidationError(f"unknown power-law form {form!r}")
    if form == "ratio":
        v = v - 1.0
    if np.any(v <= 0):
        raise ValidationError("values must be positive for the chosen form")
    return B, v


def fit_power_law(points, form: str = "excess") -> PowerLawFit:
    """Fit ``C / B^gamma`` (form 'excess') or ``1 + C / B^gamma`` ('ratio').

    Gauss-Newton on the linear-space residuals, initialized from the
    log-log regression of (log B, log value); converged when the step norm
    drops below 1e-12 or after 200 iterations.
    """
    B, v = _power_law_values(points, form)
    logB, logv = np.log(B), np.log(v)
    # log-log least squares: log v = log C - gamma log B
    A = np.stack([np.ones_like(logB), -logB], axis=1)
    (logC0, gamma0), *_ = np.linalg.lstsq(A, logv, rcond=None)
    C0 = math.exp(logC0)

    def ssr(c, g):
        r = v - c * B ** (-g)
        return float(r @ r)

    C, gamma = C0, gamma0
    current = ssr(C, gamma)
    converged = False
    for _ in range(200):
        model = C * B ** (-gamma)
        r = v - model
        # d model / dC = B^-gamma ; d model / dgamma = -C log(B) B^-gamma
        J = np.stack([B ** (-gamma), -C * logB * B ** (-gamma)], axis=1)
        try:
            step = np.linalg.solve(J.T @ J, J.T @ r)
        except np.linalg.LinAlgError:
            break
        # backtrack the step until it stays feasible and does not increase SSR
        accepted = None
        for _halving in range(24):
            C_new, gamma_new = C + step[0], gamma + step[1]
            if (np.isfinite(C_new) and np.isfinite(gamma_new) and C_new > 0
                    and ssr(C_new, gamma_new) <= current):
                accepted = (C_new, gamma_new)
                break
            step = 0.5 * step
        if accepted is None:
            break
        C, gamma = accepted
        current = ssr(C, gamma)
        if np.linalg.norm(step) < 1e-12:
            converged = True
            break
    if not converged:
        C, gamma = C0, gamma0  # flagged: hand back the log-log initialization
    log_resid = float(np.sum((np.log(np.maximum(C * B ** (-gamma), 1e-300)) - logv) ** 2))
    return PowerLawFit(C=float(C), gamma=float(gamma), residual=log_resid,
                       model_form=form, converged=converged)


@dataclass(frozen=True)
class CandidateConstants:
    """The four dimensional candidates for the calibration amplitude."""

    d_over_tp: float
    d_over_t: float
    d2_over_tp: float
    d2_over_t: float

    def as_dict(self):
        return {
            "d/tp": self.d_over_tp,
            "d/t": self.d_over_t,
            "d2/tp": self.d2_over_tp,
            "d2/t": self.d2_over_t,
        }

    def ratios(self, c_emp: float):
        """Ratio table c_emp / candidate; values near 1 indicate agreement."""
        return {name: c_emp / val for name, val in self.as_dict().items()}


def candidate_constants(d: int, t: int, p: int) -> CandidateConstants:
    if d <= 0 or t <= 0 or p <= 0:
        raise ValidationError("d, t, p must all be positive")
    return CandidateConstants(
        d_over_tp=d / (t * p),
        d_over_t=d / t,
        d2_over_tp=d * d / (t * p),
        d2_over_t=d * d / t,
    )


def chi_square_sf(x: float, df: int) -> float:
    """Upper-tail chi-square probability via the regularized incomplete gamma."""
    if x < 0 or df < 1:
        raise ValidationError(f"invalid chi-square domain: x={x}, df={df}")
    return float(special.gammaincc(df / 2.0, x / 2.0))


def nemenyi_cd(k: int, n: int, alpha: float = 0.05) -> float:
    """Nemenyi critical difference ``q_alpha * sqrt(k(k+1) / (6n))``."""
    if alpha not in _NEMENYI_Q:
        raise ValidationError(f"no embedded q table for alpha={alpha}")
    if not 2 <= k <= 10:
        raise ValidationError(f"embedded q table covers k in 2..10, got {k}")
    q = _NEMENYI_Q[alpha][k - 2]
    return q * math.sqrt(k * (k + 1) / (6.0 * n))


def _row_ranks(row: np.ndarray, better: str) -> np.ndarray:
    if better == "higher":
        return scipy_stats.rankdata(-row, method="average")
    return scipy_stats.rankdata(row, method="average")


def friedman_nemenyi(
    scores: np.ndarray, better: str = "lower", alpha: float = 0.05
) -> FriedmanResult:
    """Friedman test over an n x k score matrix with Nemenyi post-hoc.

    Each row is one dataset/configuration; each column a method. Rank 1 is
    best according to ``better`` ('higher' or 'lower'); ties take average
    ranks. The p-value uses the chi-square approximation with k-1 degrees
    of freedom.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValidationError("scores must be an n x k matrix")
    n, k = scores.shape
    if n < 2 or k < 2:
        raise ValidationError(f"need n >= 2 and k >= 2, got n={n}, k={k}")
    if better not in ("higher", "lower"):
        raise ValidationError(f"better must be 'higher' or 'lower', got {better!r}")

    ranks = np.vstack([_row_ranks(row, better) for row in scores])
    avg = ranks.mean(axis=0)
    chi2 = 12.0 * n / (k * (k + 1)) * (np.sum(avg**2) - k * (k + 1) ** 2 / 4.0)
    chi2 = max(chi2, 0.0)  # guard rounding on fully tied data
    p = chi_square_sf(chi2, k - 1)
    log10_p = float(scipy_stats.chi2.logsf(chi2, k - 1) / math.log(10.0))
    return FriedmanResult(
        avg_ranks=avg, chi2=float(chi2), p_value=p, log10_p=log10_p,
        n=n, k=k, cd=nemenyi_cd(k, n, alpha), alpha=alpha,
    )


def format_rank_table(results: dict, method_names) -> str:
    """Fixed-width text table of average ranks per metric, plus CD rows."""
    metrics_order = list(results.keys())
    width = max([len(m) for m in method_names] + [6])
    header = "method".ljust(width) + "".join(f"{m:>12}" for m in metrics_order)
    lines = [header]
    for j, name in enumerate(method_names):
        cells = "".join(f"{results[m].avg_ranks[j]:>12.2f}" for m in metrics_order)
        lines.append(name.ljust(width) + cells)
    cd_cells = "".join(f"{results[m].cd:>12.3f}" for m in metrics_order)
    lines.append("CD".ljust(width) + cd_cells)
    n_cells = "".join(f"{results[m].n:>12d}" for m in metrics_order)
    lines.append("n".ljust(width) + n_cells)
    return "\n".join(lines)
