"""Within-symbol mean-profile learning and per-symbol Poisson profile fits.

Calibration symbols give a normalized within-slot count template u(m) (mean 1
over all M offsets).  An energy window keeps the offsets between the alpha
and 1-beta points of the cumulative template mass.  Each data symbol is then
fit, over the window only, with the two-parameter mean model

    mu(m) = a * u(m) + b,      a >= 0, b >= 0,

by minimizing the Poisson deviance sum(mu - y log mu).  The fit is a damped
2-D Newton iteration in (log a, log b) so positivity is structural; b carries
a small floor, and a non-positive-definite Hessian step falls back to one
coordinate-descent sweep.  Nearly constant templates make (a, b) unidentifiable
and collapse to the one-parameter scale fit a = sum(y)/sum(u) with b = 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CalibrationError",
    "WindowError",
    "Template",
    "ProfileFit",
    "learn_template",
    "fit_profile",
    "fit_profile_batch",
    "residuals",
]

B_FLOOR = 1e-8
A_FLOOR = 1e-12
MAX_ITER = 100
GRAD_TOL = 1e-10  # relative to 1 + windowed count mass
DEGENERATE_COND = 1e6


class CalibrationError(ValueError):
    """Calibration data cannot support a template."""


class WindowError(ValueError):
    """Energy window too narrow for the profile model."""


@dataclass(frozen=True)
class Template:
    """Normalized within-slot count shape plus its energy window.

    u holds all M offsets with mean(u) = 1; m1 and m2 are 1-based inclusive
    window bounds.
    """

    u: np.ndarray
    m1: int
    m2: int
    alpha: float
    beta: float

    def __post_init__(self) -> None:
        u = np.asarray(self.u, dtype=float)
        object.__setattr__(self, "u", u)
        if u.ndim != 1 or u.size < 1:
            raise ValueError("u must be a 1-D array")
        if np.any(u < 0) or not np.all(np.isfinite(u)):
            raise ValueError("u must be finite and nonnegative")
        if abs(u.mean() - 1.0) > 1e-10:
            raise ValueError("u must average to 1 over all offsets")
        if not (1 <= self.m1 <= self.m2 <= u.size):
            raise ValueError("window bounds must satisfy 1 <= m1 <= m2 <= M")

    @property
    def m_eff(self) -> int:
        return self.m2 - self.m1 + 1

    @property
    def indices(self) -> np.ndarray:
        """0-based offset indices inside the window."""
        return np.arange(self.m1 - 1, self.m2)

    @property
    def u_window(self) -> np.ndarray:
        return self.u[self.m1 - 1 : self.m2]

    def to_json(self) -> str:
        return json.dumps(
            {
                "u": self.u.tolist(),
                "m1": int(self.m1),
                "m2": int(self.m2),
                "alpha": self.alpha,
                "beta": self.beta,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Template":
        obj = json.loads(text)
        return cls(
            u=np.asarray(obj["u"], dtype=float),
            m1=int(obj["m1"]),
            m2=int(obj["m2"]),
            alpha=float(obj["alpha"]),
            beta=float(obj["beta"]),
        )


@dataclass(frozen=True)
class ProfileFit:
    """Per-symbol profile fit over the template window."""

    a_hat: float
    b_hat: float
    p: int
    converged: bool
    mu_hat: np.ndarray


def learn_template(calibration_counts, alpha: float = 0.05, beta: float = 0.05, min_m_eff: int = 3) -> Template:
    """Column-mean template and energy window from calibration count rows.

    The window keeps offsets m1..m2 with m1 the first index where the
    cumulative normalized mass reaches alpha and m2 the last index where it
    is at most 1 - beta.  Raises CalibrationError on all-zero calibration
    data and WindowError when fewer than min_m_eff offsets survive.
    """
    counts = np.asarray(calibration_counts, dtype=float)
    if counts.ndim != 2 or counts.shape[0] < 1:
        raise ValueError("calibration counts must be a (n, M) array")
    if np.any(counts < 0) or not np.all(np.isfinite(counts)):
        raise ValueError("calibration counts must be finite and nonnegative")
    if not (0.0 <= alpha < 1.0 and 0.0 <= beta < 1.0 and alpha + beta < 1.0):
        raise ValueError("trim fractions must satisfy 0 <= alpha, beta and alpha + beta < 1")
    mu_cal = counts.mean(axis=0)
    total = mu_cal.mean()
    if total <= 0:
        raise CalibrationError("calibration counts are all zero")
    u = mu_cal / total
    c = np.cumsum(u) / u.sum()
    at_least = np.nonzero(c >= alpha)[0]
    at_most = np.nonzero(c <= 1.0 - beta)[0]
    if at_least.size == 0 or at_most.size == 0:
        raise WindowError("energy window is empty")
    m1 = int(at_least[0]) + 1
    m2 = int(at_most[-1]) + 1
    if m2 - m1 + 1 < min_m_eff:
        raise WindowError("energy window narrower than the profile model order")
    return Template(u=u, m1=m1, m2=m2, alpha=float(alpha), beta=float(beta))


def _design_is_degenerate(u_w: np.ndarray) -> bool:
    ones = np.ones_like(u_w)
    nu = np.linalg.norm(u_w)
    if nu == 0.0:
        return True
    design = np.column_stack([u_w / nu, ones / np.linalg.norm(ones)])
    return np.linalg.cond(design) > DEGENERATE_COND


def _deviance(y: np.ndarray, mu: np.ndarray) -> np.ndarray:
    # sum over the window of mu - y log mu; rows of y against matching mu rows
    return np.sum(mu - y * np.log(mu), axis=-1)


def fit_profile_batch(counts, template: Template) -> list:
    """Fit every row of a (n, M) count matrix; returns a list of ProfileFit.

    Counts may be real-valued (nonnegative); rows are independent and the
    iteration path per row is identical to a single-row call.
    """
    y_all = np.asarray(counts, dtype=float)
    if y_all.ndim == 1:
        y_all = y_all[None, :]
    if y_all.shape[1] == template.u.size:
        y = y_all[:, template.m1 - 1 : template.m2]
    elif y_all.shape[1] == template.m_eff:
        y = y_all
    else:
        raise ValueError("counts must cover all M offsets or exactly the window")
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise ValueError("counts must be finite and nonnegative")

    u = template.u_window
    n, w = y.shape

    if _design_is_degenerate(u):
        su = u.sum()
        if su <= 0.0:
            raise ValueError("window template mass is zero")
        a = y.sum(axis=1) / su
        return [
            ProfileFit(a_hat=float(a[i]), b_hat=0.0, p=1, converged=True, mu_hat=a[i] * u)
            for i in range(n)
        ]

    ysum = y.sum(axis=1)
    scale_tol = GRAD_TOL * (1.0 + ysum)

    # moment start: least squares of y on [u, 1], clipped into the domain
    umean = u.mean()
    uvar = u.var()
    ymean = y.mean(axis=1)
    cov = (y * u).mean(axis=1) - ymean * umean
    a0 = np.maximum(cov / max(uvar, 1e-300), 0.05 * np.maximum(ymean, 1.0) / max(umean, 1e-12))
    b0 = np.maximum(ymean - a0 * umean, B_FLOOR)

    la = np.log(np.maximum(a0, A_FLOOR))
    lb = np.log(np.maximum(b0, B_FLOOR))
    log_a_floor = np.log(A_FLOOR)
    log_b_floor = np.log(B_FLOOR)

    zero_rows = ysum == 0.0
    active = ~zero_rows
    converged = np.zeros(n, dtype=bool)

    def grads(la_s, lb_s, y_s):
        a = np.exp(la_s)[:, None]
        b = np.exp(lb_s)[:, None]
        mu = a * u + b
        resid = 1.0 - y_s / mu
        fa = np.sum(resid * u, axis=1)
        fb = np.sum(resid, axis=1)
        inv2 = y_s / (mu * mu)
        faa = np.sum(inv2 * u * u, axis=1)
        fab = np.sum(inv2 * u, axis=1)
        fbb = np.sum(inv2, axis=1)
        a = a[:, 0]
        b = b[:, 0]
        g1 = a * fa
        g2 = b * fb
        h11 = a * a * faa + g1
        h12 = a * b * fab
        h22 = b * b * fbb + g2
        return g1, g2, h11, h12, h22, fa, fb, faa, fbb

    for _ in range(MAX_ITER):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        la_s, lb_s, y_s = la[idx], lb[idx], y[idx]
        g1, g2, h11, h12, h22, fa, fb, faa, fbb = grads(la_s, lb_s, y_s)

        # KKT-aware convergence: a gradient pushing past a clamped floor is fine
        ok1 = (np.abs(g1) <= scale_tol[idx]) | ((la_s <= log_a_floor + 1e-12) & (g1 > 0))
        ok2 = (np.abs(g2) <= scale_tol[idx]) | ((lb_s <= log_b_floor + 1e-12) & (g2 > 0))
        done = ok1 & ok2
        if np.any(done):
            converged[idx[done]] = True
            active[idx[done]] = False
            keep = ~done
            idx = idx[keep]
            if idx.size == 0:
                continue
            la_s, lb_s, y_s = la[idx], lb[idx], y[idx]
            g1, g2, h11, h12, h22, fa, fb, faa, fbb = (
                v[keep] for v in (g1, g2, h11, h12, h22, fa, fb, faa, fbb)
            )

        det = h11 * h22 - h12 * h12
        pd = (h11 > 0) & (det > 0)

        s1 = np.empty_like(g1)
        s2 = np.empty_like(g2)
        # Newton rows
        s1[pd] = (-g1[pd] * h22[pd] + g2[pd] * h12[pd]) / det[pd]
        s2[pd] = (-g2[pd] * h11[pd] + g1[pd] * h12[pd]) / det[pd]
        # coordinate-descent sweep in the original coordinates for the rest
        np_pd = ~pd
        if np.any(np_pd):
            a_cur = np.exp(la_s[np_pd])
            b_cur = np.exp(lb_s[np_pd])
            a_new = np.maximum(a_cur - fa[np_pd] / np.maximum(faa[np_pd], 1e-300), 0.1 * a_cur)
            b_new = np.maximum(b_cur - fb[np_pd] / np.maximum(fbb[np_pd], 1e-300), 0.1 * b_cur)
            s1[np_pd] = np.log(a_new) - la_s[np_pd]
            s2[np_pd] = np.log(b_new) - lb_s[np_pd]

        # an active floor pins its coordinate; step the free one alone, since
        # the coupled step is ill-conditioned against the clamped row
        b_pin = (lb_s <= log_b_floor + 1e-9) & (g2 >= 0.0)
        if np.any(b_pin):
            s1[b_pin] = -g1[b_pin] / np.maximum(h11[b_pin], 1e-300)
            s2[b_pin] = 0.0
        a_pin = (la_s <= log_a_floor + 1e-9) & (g1 >= 0.0)
        if np.any(a_pin):
            s2[a_pin] = -g2[a_pin] / np.maximum(h22[a_pin], 1e-300)
            s1[a_pin] = 0.0

        # trust cap then backtracking on the deviance
        norm = np.maximum(np.abs(s1), np.abs(s2))
        shrink = np.minimum(1.0, 2.0 / np.maximum(norm, 1e-300))
        s1 *= shrink
        s2 *= shrink

        mu_old = np.exp(la_s)[:, None] * u + np.exp(lb_s)[:, None]
        f_old = _deviance(y_s, mu_old)
        step = np.ones_like(s1)
        la_try = np.empty_like(la_s)
        lb_try = np.empty_like(lb_s)
        pending = np.ones(idx.size, dtype=bool)
        for _bt in range(25):
            la_try[pending] = np.maximum(la_s[pending] + step[pending] * s1[pending], log_a_floor)
            lb_try[pending] = np.maximum(lb_s[pending] + step[pending] * s2[pending], log_b_floor)
            mu_try = np.exp(la_try[pending])[:, None] * u + np.exp(lb_try[pending])[:, None]
            f_try = _deviance(y_s[pending], mu_try)
            good = f_try <= f_old[pending] + 1e-12 * (1.0 + np.abs(f_old[pending]))
            sub = np.nonzero(pending)[0]
            pending[sub[good]] = False
            step[sub[~good]] *= 0.5
            if not np.any(pending):
                break
        # rows still pending make no move this iteration
        la_try[pending] = la_s[pending]
        lb_try[pending] = lb_s[pending]
        la[idx] = la_try
        lb[idx] = lb_try

    fits = []
    for i in range(n):
        if zero_rows[i]:
            mu = np.full(w, B_FLOOR)
            fits.append(ProfileFit(a_hat=0.0, b_hat=B_FLOOR, p=2, converged=True, mu_hat=mu))
            continue
        a = float(np.exp(la[i]))
        b = float(np.exp(lb[i]))
        if a <= A_FLOOR * 1.000001:
            a = 0.0
        mu = a * u + b
        fits.append(
            ProfileFit(a_hat=a, b_hat=b, p=2, converged=bool(converged[i]), mu_hat=mu)
        )
    return fits


def fit_profile(counts_row, template: Template) -> ProfileFit:
    """Profile fit for a single symbol row (see fit_profile_batch)."""
    return fit_profile_batch(np.asarray(counts_row)[None, :], template)[0]


def residuals(counts_row, fit: ProfileFit, template: Template) -> np.ndarray:
    """Windowed residuals y - mu_hat."""
    y = np.asarray(counts_row, dtype=float)
    if y.ndim != 1:
        raise ValueError("counts_row must be 1-D")
    if y.size == template.u.size:
        y = y[template.m1 - 1 : template.m2]
    elif y.size != template.m_eff:
        raise ValueError("counts_row must cover all M offsets or exactly the window")
    return y - fit.mu_hat
