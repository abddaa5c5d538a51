"""Gaussian working model, long-run variance, and separability design metrics.

The per-symbol dispersion statistic averages M_eff weakly dependent
contributions, so a Gaussian working approximation with a long-run variance
(LRV) correction characterizes its distribution per hypothesis:

    T | H_s  ~  N(m_s, v_s),     v_s = M_eff/(M_eff - p)^2 * omega2_s,

where omega2_s is the Bartlett (Newey-West) LRV of the within-window psi
sequence.  From (m_s, v_s) follow closed-form ROC/BER approximations and the
separability design metrics (Chernoff information, Bhattacharyya distance,
symmetric KL), plus diagnostics: the dependence inflation factor Omega and
correlation-adjusted sample count M_corr, a tap-level ISI severity index, and
the oracle moment identities and profiling-sensitivity norm that explain when
the profiled statistic inherits the oracle's gain invariance.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, erfcinv

from .physics import ChannelParams, kernel
from .profiling import Template

__all__ = [
    "GaussianWorkingModel",
    "LRVEstimate",
    "SeparabilityReport",
    "OracleDiagnostics",
    "RocPoint",
    "CorrelationDiagnostics",
    "q_func",
    "q_inv",
    "bartlett_lrv",
    "estimate_lrv",
    "fit_gaussian_model",
    "roc_ber",
    "roc_curve",
    "separability",
    "mean_tap_profile",
    "meff_scaling_probe",
    "correlation_diagnostics",
    "oracle_psi_moments",
    "oracle_psi_mean",
    "oracle_psi_variance",
    "profiling_sensitivity",
    "model_report",
    "write_roc_csv",
]

DEFAULT_L_MAX = 10


def q_func(x):
    """Standard normal upper-tail probability Q(x)."""
    x = np.asarray(x, dtype=float)
    out = 0.5 * erfc(x / math.sqrt(2.0))
    if out.ndim == 0:
        return float(out)
    return out


def q_inv(q):
    """Inverse upper-tail quantile, Q^{-1}(q) for q in (0, 1).

    Evaluated through the inverse complementary error function on the
    well-conditioned half (q <= 1/2, mapped by symmetry otherwise) and
    polished with one Newton step on Q(x) - q.  Accuracy in the mapped half
    is limited only by the spacing of doubles near 1.
    """
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0.0) or np.any(q >= 1.0):
        raise ValueError("q must lie strictly inside (0, 1)")
    flip = q > 0.5
    qq = np.where(flip, 1.0 - q, q)
    x = math.sqrt(2.0) * erfcinv(2.0 * qq)
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    x = x + (0.5 * erfc(x / math.sqrt(2.0)) - qq) / np.maximum(pdf, 1e-300)
    x = np.where(flip, -x, x)
    if x.ndim == 0:
        return float(x)
    return x


@dataclass(frozen=True)
class LRVEstimate:
    """Bartlett long-run variance of the pooled, per-symbol-centered psi
    sequence.

    gamma holds the lag autocovariances 0..L_s.  Omega is the raw ratio
    omega2 / gamma[0]; values below 1 can occur in small samples and are
    clipped only where an effective sample count is derived from them.
    """

    gamma: np.ndarray
    l_s: int
    omega2: float
    omega: float  # kept name-compatible: inflation factor Omega
    n_symbols: int

    def __post_init__(self) -> None:
        gamma = np.asarray(self.gamma, dtype=float)
        object.__setattr__(self, "gamma", gamma)
        if gamma.ndim != 1 or gamma.size != self.l_s + 1:
            raise ValueError("gamma must hold lags 0..L_s")
        expected = bartlett_lrv(gamma, self.l_s)
        if not math.isclose(self.omega2, expected, rel_tol=0.0, abs_tol=1e-12 * (1 + abs(expected))):
            raise ValueError("omega2 must equal the Bartlett combination of gamma")


@dataclass(frozen=True)
class GaussianWorkingModel:
    """Hypothesis-conditioned Gaussian parameters of the dispersion statistic."""

    delta0: float
    delta1: float
    omega2_0: float
    omega2_1: float
    m_eff: int
    p: int
    mt0: float
    mt1: float
    vt0: float
    vt1: float

    def __post_init__(self) -> None:
        if self.m_eff <= self.p:
            raise ValueError("window must exceed the fitted parameter count")
        scale = self.m_eff / (self.m_eff - self.p) ** 2
        for vt, om in ((self.vt0, self.omega2_0), (self.vt1, self.omega2_1)):
            if abs(vt - scale * om) > 1e-12 * (1.0 + abs(vt)):
                raise ValueError("stored variance must equal the LRV scaling")
            if vt <= 0.0:
                raise ValueError("working variances must be positive")

    @classmethod
    def from_moments(cls, delta0, delta1, omega2_0, omega2_1, m_eff, p) -> "GaussianWorkingModel":
        if m_eff <= p:
            raise ValueError("window must exceed the fitted parameter count")
        scale = m_eff / (m_eff - p) ** 2
        return cls(
            delta0=float(delta0),
            delta1=float(delta1),
            omega2_0=float(omega2_0),
            omega2_1=float(omega2_1),
            m_eff=int(m_eff),
            p=int(p),
            mt0=float(delta0),
            mt1=float(delta1),
            vt0=scale * float(omega2_0),
            vt1=scale * float(omega2_1),
        )

    @property
    def kappa(self) -> int:
        """Orientation of the test: sign of the mean contrast (+1 on ties)."""
        return 1 if self.mt1 >= self.mt0 else -1

    @property
    def delta_m(self) -> float:
        return self.mt1 - self.mt0


@dataclass(frozen=True)
class SeparabilityReport:
    d_c: float
    a_star: float
    d_b: float
    d_kl: float
    rho_isi: float

    def __post_init__(self) -> None:
        if self.d_c < self.d_b - 1e-12:
            raise ValueError("Chernoff information cannot fall below Bhattacharyya")
        if self.d_b < -1e-12:
            raise ValueError("Bhattacharyya distance must be nonnegative")


@dataclass(frozen=True)
class RocPoint:
    pfa: float
    pd: float
    tau: float
    pb: float
    pfa_conditional: float
    pd_conditional: float


@dataclass(frozen=True)
class CorrelationDiagnostics:
    tau_psi: float
    m_corr: float
    ratio: float
    omega: float
    l_s: int


@dataclass(frozen=True)
class OracleDiagnostics:
    """Profiling-sensitivity record; singular marks a degenerate window."""

    sensitivity: float
    g_n: np.ndarray
    a_n: np.ndarray
    singular: bool
    scale_closed_form: float | None = None
    c_n: float | None = None
    kappa_tilde: tuple | None = None


def bartlett_lrv(gamma, l_s: int) -> float:
    """Bartlett-weighted long-run variance from lag autocovariances 0..L_s."""
    gamma = np.asarray(gamma, dtype=float)
    if l_s < 0 or gamma.size < l_s + 1:
        raise ValueError("need autocovariances for every lag up to L_s")
    if l_s == 0:
        return float(gamma[0])
    ell = np.arange(1, l_s + 1)
    return float(gamma[0] + 2.0 * np.sum((1.0 - ell / (l_s + 1.0)) * gamma[1 : l_s + 1]))


def _pooled_autocovariance(psi: np.ndarray, max_lag: int) -> np.ndarray:
    """Lag 0..max_lag autocovariances of per-row-centered sequences, pooled
    across rows with normalization n_rows * (row_len - lag)."""
    c = psi - psi.mean(axis=1, keepdims=True)
    n, m = c.shape
    gamma = np.empty(max_lag + 1)
    for ell in range(max_lag + 1):
        if ell >= m:
            gamma[ell] = 0.0
            continue
        gamma[ell] = np.sum(c[:, : m - ell] * c[:, ell:]) / (n * (m - ell))
    return gamma


def _lag_rule(rho: np.ndarray, threshold: float, l_max: int) -> int:
    """Truncation lag from the correlogram die-out point.

    The die-out lag is the smallest lag after which |rho| stays below
    threshold for 3 consecutive lags.  The truncation lag doubles it, since
    the triangular taper halves the weight mid-window and truncating right
    at the die-out point would clip most of the retained correlation mass.
    Capped at l_max.  rho is indexed from lag 0.
    """
    for j in range(l_max):
        triple = rho[j + 1 : j + 4]
        if np.all(np.abs(triple) < threshold):
            return min(2 * j, l_max)
    return l_max


def estimate_lrv(psi_sequences, l_max: int = DEFAULT_L_MAX) -> LRVEstimate:
    """Bartlett LRV of pooled within-symbol psi sequences.

    Rows are symbols; each row is centered by its own mean before pooling so
    symbol-level offsets do not masquerade as long-run dependence.  The
    truncation lag follows an automatic rule: find the smallest lag after
    which the pooled autocorrelation stays below 2/sqrt(pooled sample count)
    for 3 consecutive lags, then truncate at twice that lag (capped at
    l_max) so the Bartlett taper does not clip the retained mass.
    """
    psi = np.asarray(psi_sequences, dtype=float)
    if psi.ndim == 1:
        psi = psi[None, :]
    if psi.ndim != 2 or psi.shape[1] < 2:
        raise ValueError("psi sequences must form a (n_symbols, M_eff) array")
    if not np.all(np.isfinite(psi)):
        raise ValueError("psi sequences must be finite")
    n, m_eff = psi.shape
    if not (0 <= l_max < m_eff):
        raise ValueError("need M_eff > l_max >= 0")
    scan = min(l_max + 3, m_eff - 1)
    gamma_all = _pooled_autocovariance(psi, scan)
    if gamma_all[0] <= 0.0:
        raise ValueError("degenerate psi sequences: zero variance")
    rho = gamma_all / gamma_all[0]
    threshold = 2.0 / math.sqrt(n * m_eff)
    l_s = _lag_rule(rho, threshold, l_max)
    gamma = gamma_all[: l_s + 1]
    omega2 = bartlett_lrv(gamma, l_s)
    return LRVEstimate(
        gamma=gamma,
        l_s=l_s,
        omega2=omega2,
        omega=omega2 / float(gamma_all[0]),
        n_symbols=n,
    )


def fit_gaussian_model(
    t_stats_h0,
    t_stats_h1,
    psi_h0,
    psi_h1,
    p: int,
    l_max: int = DEFAULT_L_MAX,
    min_labeled: int = 200,
) -> GaussianWorkingModel:
    """Gaussian working model from labeled statistics and psi sequences.

    Means come from the gated statistics per hypothesis; variances come from
    the LRV of the matching psi sequences scaled by M_eff/(M_eff - p)^2.
    """
    t0 = np.asarray(t_stats_h0, dtype=float)
    t1 = np.asarray(t_stats_h1, dtype=float)
    psi0 = np.asarray(psi_h0, dtype=float)
    psi1 = np.asarray(psi_h1, dtype=float)
    if min(t0.size, t1.size) < min_labeled:
        raise ValueError(f"need at least {min_labeled} labeled symbols per hypothesis")
    if psi0.ndim != 2 or psi1.ndim != 2 or psi0.shape[1] != psi1.shape[1]:
        raise ValueError("psi sequences must share one window length")
    m_eff = psi0.shape[1]
    lrv0 = estimate_lrv(psi0, l_max)
    lrv1 = estimate_lrv(psi1, l_max)
    # short windows can push a Bartlett sum to zero or below; floor it at a
    # small share of the lag-0 variance so the plug-in model stays usable
    omega2_0 = max(lrv0.omega2, 0.05 * float(lrv0.gamma[0]))
    omega2_1 = max(lrv1.omega2, 0.05 * float(lrv1.gamma[0]))
    return GaussianWorkingModel.from_moments(
        delta0=t0.mean(),
        delta1=t1.mean(),
        omega2_0=omega2_0,
        omega2_1=omega2_1,
        m_eff=m_eff,
        p=p,
    )


def roc_ber(
    model: GaussianWorkingModel,
    tau: float | None = None,
    pfa_target: float | None = None,
    gate_pass_h0: float = 1.0,
    gate_pass_h1: float = 1.0,
) -> RocPoint:
    """Closed-form operating point of the oriented threshold test.

    Give either tau directly or a conditional pfa_target from which tau is
    placed on the null Gaussian.  Gate pass rates fold the activity gate into
    the unconditional error rates (a failed gate always decides 0).  The bit
    error rate assumes equal priors.
    """
    if (tau is None) == (pfa_target is None):
        raise ValueError("specify exactly one of tau or pfa_target")
    for name, rate in (("gate_pass_h0", gate_pass_h0), ("gate_pass_h1", gate_pass_h1)):
        if not (0.0 <= rate <= 1.0):
            raise ValueError(f"{name} must lie in [0, 1]")
    kappa = model.kappa
    s0 = math.sqrt(model.vt0)
    s1 = math.sqrt(model.vt1)
    if tau is None:
        if not (0.0 < pfa_target < 1.0):
            raise ValueError("pfa_target must lie in (0, 1)")
        tau = model.mt0 + kappa * s0 * q_inv(pfa_target)
    pfa_cond = q_func(kappa * (tau - model.mt0) / s0)
    pd_cond = q_func(kappa * (tau - model.mt1) / s1)
    pfa = gate_pass_h0 * pfa_cond
    pd = gate_pass_h1 * pd_cond
    pb = 0.5 * (pfa + (1.0 - pd))
    return RocPoint(
        pfa=float(pfa),
        pd=float(pd),
        tau=float(tau),
        pb=float(pb),
        pfa_conditional=float(pfa_cond),
        pd_conditional=float(pd_cond),
    )


def roc_curve(
    model: GaussianWorkingModel,
    pfa_grid,
    gate_pass_h0: float = 1.0,
    gate_pass_h1: float = 1.0,
) -> list:
    """Operating points swept over conditional false-alarm targets."""
    return [
        roc_ber(model, pfa_target=float(p), gate_pass_h0=gate_pass_h0, gate_pass_h1=gate_pass_h1)
        for p in np.asarray(pfa_grid, dtype=float)
    ]


def _chernoff_exponent(a: float, dm2: float, v0: float, v1: float) -> float:
    va = a * v0 + (1.0 - a) * v1
    return 0.5 * math.log(va / (v0**a * v1 ** (1.0 - a))) + 0.5 * a * (1.0 - a) * dm2 / va


def _golden_max(f, lo: float, hi: float, tol: float) -> tuple:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def separability(model: GaussianWorkingModel, isi_profile=None) -> SeparabilityReport:
    """Scalar-statistic separability metrics between the two hypotheses.

    Chernoff information maximizes the Gaussian exponent D(a) on [0, 1] by
    golden-section search; Bhattacharyya is the closed a = 1/2 case, and the
    symmetric KL has its own closed form.  isi_profile supplies window-mean
    tap weights (lag 0 first) for the severity index sum(h[1:]) / h[0].
    """
    v0, v1 = model.vt0, model.vt1
    dm2 = model.delta_m**2
    d_b = 0.5 * math.log((v0 + v1) / (2.0 * math.sqrt(v0 * v1))) + dm2 / (4.0 * (v0 + v1))
    a_star, d_c = _golden_max(lambda a: _chernoff_exponent(a, dm2, v0, v1), 0.0, 1.0, 1e-8)
    if d_b > d_c:  # golden section cannot beat the exact midpoint value
        a_star, d_c = 0.5, d_b
    d_kl = 0.25 * (v0 / v1 + v1 / v0 - 2.0) + 0.25 * dm2 * (1.0 / v0 + 1.0 / v1)
    rho = 0.0
    if isi_profile is not None:
        h = np.asarray(isi_profile, dtype=float)
        if h.ndim != 1 or h.size < 1 or h[0] <= 0.0:
            raise ValueError("isi profile needs a positive lag-0 entry")
        rho = float(np.sum(h[1:]) / h[0])
    return SeparabilityReport(
        d_c=float(d_c), a_star=float(a_star), d_b=float(d_b), d_kl=float(d_kl), rho_isi=rho
    )


def mean_tap_profile(channel: ChannelParams, template: Template, r_ref: float = 10e-6) -> np.ndarray:
    """Window-averaged tap weights h_bar[l] at a fixed reference separation,
    one entry per memory tap (lag 0 first)."""
    offsets = channel.sample_offsets()[template.indices]
    out = np.empty(channel.memory)
    for ell in range(channel.memory):
        out[ell] = kernel(r_ref, ell * channel.t_sym + offsets, channel).mean()
    return out


@dataclass(frozen=True)
class MeffScalingProbe:
    m_eff_grid: np.ndarray
    d_b: np.ndarray
    slope: float


def meff_scaling_probe(model: GaussianWorkingModel, m_eff_grid) -> MeffScalingProbe:
    """Bhattacharyya distance as the window length varies with the psi-level
    moments held fixed; reports the least-squares slope of D_B vs M_eff."""
    grid = np.asarray(m_eff_grid, dtype=int)
    if np.any(grid <= model.p):
        raise ValueError("every probed window must exceed p")
    vals = np.empty(grid.size)
    for i, m in enumerate(grid):
        probe = GaussianWorkingModel.from_moments(
            model.delta0, model.delta1, model.omega2_0, model.omega2_1, int(m), model.p
        )
        vals[i] = separability(probe).d_b
    slope = float(np.dot(grid, vals) / np.dot(grid, grid))
    return MeffScalingProbe(m_eff_grid=grid, d_b=vals, slope=slope)


def correlation_diagnostics(
    psi_sequences, dt: float, l_max: int = DEFAULT_L_MAX, max_lag: int | None = None
) -> CorrelationDiagnostics:
    """Correlation time and effective independent-sample count.

    tau_psi interpolates the pooled autocorrelation's first crossing of 1/e
    (in units of the sampling step dt); M_corr divides the window length by
    the HAC inflation factor, clipped at 1 so M_corr never exceeds M.
    """
    psi = np.asarray(psi_sequences, dtype=float)
    if psi.ndim == 1:
        psi = psi[None, :]
    n, m_eff = psi.shape
    if n * m_eff < 1000:
        raise ValueError("need at least 1e3 pooled samples")
    if dt <= 0:
        raise ValueError("dt must be positive")
    lrv = estimate_lrv(psi, l_max)
    if max_lag is None:
        max_lag = min(m_eff - 1, 1000)
    gamma = _pooled_autocovariance(psi, max_lag)
    rho = gamma / gamma[0]
    target = math.exp(-1.0)
    tau = math.inf
    for ell in range(1, max_lag + 1):
        if rho[ell] < target:
            frac = (rho[ell - 1] - target) / (rho[ell - 1] - rho[ell])
            tau = (ell - 1 + frac) * dt
            break
    omega_clipped = max(lrv.omega, 1.0)
    m_corr = m_eff / omega_clipped
    return CorrelationDiagnostics(
        tau_psi=float(tau),
        m_corr=float(m_corr),
        ratio=float(m_corr / m_eff),
        omega=float(lrv.omega),
        l_s=lrv.l_s,
    )


def oracle_psi_mean(kappa2_tilde: float, mu_tilde: float) -> float:
    """Gain-free oracle mean of the dispersion contribution."""
    return kappa2_tilde / mu_tilde**2


def oracle_psi_variance(kappa_tilde, mu_tilde: float, count_scale: float) -> float:
    """Exact lag-0 variance of the oracle contribution.

    kappa_tilde holds the latent cumulants (kappa2, kappa3, kappa4);
    count_scale is the product c_n * Psi.  The first group is gain-free; the
    remaining terms decay as the count scale grows.
    """
    k2, k3, k4 = (float(v) for v in kappa_tilde)
    c = float(count_scale)
    return (
        2.0 * k2**2 + k4 + 4.0 * (mu_tilde * k2 + k3) / c + 2.0 * (mu_tilde**2 + k2) / c**2
    ) / mu_tilde**4


def oracle_psi_moments(latent_tilde_samples, psi: float, c_n: float, mu_tilde: float, rng=None):
    """Monte-Carlo mean and variance of the oracle contribution.

    Counts are drawn conditionally Poisson at intensity c_n * psi * latent;
    the contribution uses the true mean c_n * psi * mu_tilde (no profiling),
    so the sample mean estimates the gain-free ratio kappa2/mu^2.
    """
    lam = np.asarray(latent_tilde_samples, dtype=float)
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("latent samples must be finite and nonnegative")
    if psi <= 0 or c_n <= 0 or mu_tilde <= 0:
        raise ValueError("scales must be positive")
    if rng is None:
        rng = np.random.default_rng()
    scale = c_n * psi
    y = rng.poisson(scale * lam).astype(float)
    mu = scale * mu_tilde
    contrib = ((y - mu) ** 2 - y) / mu**2
    return float(contrib.mean()), float(contrib.var(ddof=1))


def profiling_sensitivity(u, mu_profile, v_profile, mode: str = "affine") -> OracleDiagnostics:
    """Norm of the profiling correction g_n' A_n^{-1} over the window.

    u is the design shape, mu_profile the true count means, v_profile the
    latent intensity variances (count units).  mode "affine" uses the
    scale-plus-offset design [u, 1]; mode "scale" drops the offset and also
    reports the closed-form scalar, which stays order-one whenever the
    normalized overdispersion does not vanish (the correction does not fade
    at high counts).
    """
    u = np.asarray(u, dtype=float)
    mu = np.asarray(mu_profile, dtype=float)
    v = np.asarray(v_profile, dtype=float)
    if not (u.shape == mu.shape == v.shape) or u.ndim != 1:
        raise ValueError("u, mu, and v must be matching 1-D arrays")
    if np.any(mu <= 0) or np.any(v < 0):
        raise ValueError("means must be positive and variances nonnegative")
    if mode not in ("affine", "scale"):
        raise ValueError("mode must be 'affine' or 'scale'")
    n = u.size
    if mode == "affine":
        x = np.column_stack([u, np.ones(n)])
    else:
        x = u[:, None]
    a_n = (x.T / mu) @ x / n
    g_n = -((mu + 2.0 * v) / mu**3) @ x / n
    closed = None
    if mode == "scale":
        # factorization mu = scale * u recovers the normalized quantities
        scale = float(np.mean(mu) / np.mean(u))
        v_tilde = v / scale**2
        closed = float(
            -np.mean(1.0 / u) / (scale * np.mean(u)) - 2.0 * np.mean(v_tilde / u**2) / np.mean(u)
        )
    try:
        solved = np.linalg.solve(a_n, g_n)
        cond_bad = np.linalg.cond(a_n) > 1e12
    except np.linalg.LinAlgError:
        solved, cond_bad = None, True
    if cond_bad or solved is None:
        return OracleDiagnostics(
            sensitivity=math.nan, g_n=g_n, a_n=a_n, singular=True, scale_closed_form=closed
        )
    return OracleDiagnostics(
        sensitivity=float(np.linalg.norm(solved)),
        g_n=g_n,
        a_n=a_n,
        singular=False,
        scale_closed_form=closed,
    )


def model_report(model: GaussianWorkingModel, report: SeparabilityReport | None = None) -> str:
    """JSON text of the working-model parameters and optional metrics."""
    obj = {
        "delta0": model.delta0,
        "delta1": model.delta1,
        "omega2_0": model.omega2_0,
        "omega2_1": model.omega2_1,
        "m_eff": model.m_eff,
        "p": model.p,
        "mt0": model.mt0,
        "mt1": model.mt1,
        "vt0": model.vt0,
        "vt1": model.vt1,
        "kappa": model.kappa,
    }
    if report is not None:
        obj["metrics"] = {
            "d_c": report.d_c,
            "a_star": report.a_star,
            "d_b": report.d_b,
            "d_kl": report.d_kl,
            "rho_isi": report.rho_isi,
        }
    return json.dumps(obj, indent=2, sort_keys=True)


def write_roc_csv(path, points) -> None:
    """ROC operating points as CSV rows (pfa, pd, tau, pb)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pfa", "pd", "tau", "pb"])
        for pt in points:
            writer.writerow([format(v, ".17g") for v in (pt.pfa, pt.pd, pt.tau, pt.pb)])
