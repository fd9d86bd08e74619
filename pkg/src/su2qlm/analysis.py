"""Post-processing of ground-state data: entropy fits, order parameters,
correlation lengths, transition locators and finite-size extrapolations."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

logger = logging.getLogger(__name__)

CC_PARAMS = ("c", "c_prime", "b0", "b1", "k_F")
RADICAND_FLOOR = -1e-10
START_EXPONENTS = (1.0, 0.5, 2.0)


class DegenerateFitError(ValueError):
    """The data carry no information for the requested fit."""


class FitError(RuntimeError):
    """A least-squares fit failed to converge."""


# ---------------------------------------------------------------------------
# entanglement entropy


def conformal_distance(ell, L):
    return L * np.sin(np.pi * np.asarray(ell, dtype=float) / L)


def entropy_model(ell, L, c, c_prime, b0, b1, k_F):
    """Log-scaling entropy with an oscillating Fermi correction.

    ``S = c/6 log(L sin(pi l/L)) + c' + b0 cos(2 k_F (l - L/2)) sin(pi l/L)^(-b1)``
    """
    ell = np.asarray(ell, dtype=float)
    s = np.sin(np.pi * ell / L)
    return (
        c / 6.0 * np.log(L * s)
        + c_prime
        + b0 * np.cos(2.0 * k_F * (ell - L / 2.0)) * s ** (-b1)
    )


def fold_fermi(k_F, b0, L):
    """Map ``k_F`` into ``[0, pi/2]``, the range in which the oscillation is
    distinguishable on integer cuts; ``b0`` flips sign if a reflection about
    ``pi/2`` shifts the phase by ``pi`` (odd ``L``)."""
    k = float(np.mod(k_F, np.pi))
    if k > np.pi / 2:
        k = np.pi - k
        if L % 2:
            b0 = -b0
    return k, b0


@dataclass
class CCFitResult:
    c: float
    c_prime: float
    b0: float
    b1: float
    k_F: float
    residual: float
    stderr: dict = field(default_factory=dict)
    window: tuple = ()

    def as_dict(self):
        out = {name: getattr(self, name) for name in CC_PARAMS}
        out["residual"] = self.residual
        out.update({f"{k}_err": v for k, v in self.stderr.items()})
        return out


def fit_window(L, discard_fraction=0.10):
    """Cuts ``l`` kept after dropping ``discard_fraction * L`` cuts at each end."""
    if not 0 <= discard_fraction < 0.5:
        raise ValueError("discard_fraction must be in [0, 0.5)")
    skip = int(np.floor(discard_fraction * L))
    return np.arange(1 + skip, L - skip)


def _oscillation_scan(ell, L, residual, n_k=2048):
    """Amplitude-weighted periodogram of ``residual`` against the ``b1 = 1`` shape."""
    s = np.sin(np.pi * ell / L)
    ks = np.linspace(0.0, np.pi / 2, n_k)
    basis = np.cos(2.0 * ks[:, None] * (ell[None, :] - L / 2.0)) / s[None, :]
    norms = np.einsum("ij,ij->i", basis, basis)
    proj = basis @ residual
    power = np.where(norms > 0, proj**2 / np.where(norms > 0, norms, 1.0), 0.0)
    amps = np.where(norms > 0, proj / np.where(norms > 0, norms, 1.0), 0.0)
    return ks, power, amps


def _local_peaks(power, count):
    idx = [i for i in range(len(power))
           if (i == 0 or power[i] >= power[i - 1]) and (i == len(power) - 1 or power[i] >= power[i + 1])]
    idx.sort(key=lambda i: (-power[i], i))
    return idx[:count]


def _stderr(result, n_params):
    dof = len(result.fun) - n_params
    if dof <= 0:
        return np.full(n_params, np.nan)
    J = result.jac
    sigma2 = float(result.fun @ result.fun) / dof
    try:
        cov = np.linalg.pinv(J.T @ J) * sigma2
    except np.linalg.LinAlgError:
        return np.full(n_params, np.nan)
    return np.sqrt(np.clip(np.diag(cov), 0.0, None))


def fit_central_charge(profile, L=None, discard_fraction=0.10, max_nfev=5000, n_starts=3):
    """Fit an entropy profile ``S_l`` for cuts ``l = 1 .. L-1``.

    Initial guesses: ``c, c'`` from a straight-line fit against
    ``log(L sin(pi l/L)) / 6``, ``k_F`` from the strongest peaks of the
    residual's periodogram (plus the alternating point ``pi/2``), ``b0`` from
    the projected amplitude and ``b1`` from ``START_EXPONENTS``.  Every
    combination seeds one Levenberg-Marquardt run; the lowest cost wins
    (ties to the earlier start).

    Raises
    ------
    DegenerateFitError
        Flat profile (all entries below 1e-8) or too few points in the window.
    FitError
        No run converged within ``max_nfev`` evaluations.
    """
    S = np.asarray(profile, dtype=float)
    L = L if L is not None else len(S) + 1
    if len(S) != L - 1:
        raise ValueError(f"profile has {len(S)} entries, expected {L - 1}")
    if not np.all(np.isfinite(S)):
        raise ValueError("profile contains non-finite values")
    if np.all(np.abs(S) < 1e-8):
        raise DegenerateFitError("entropy profile is flat (product state)")
    ell = fit_window(L, discard_fraction)
    if len(ell) < len(CC_PARAMS) + 1:
        raise DegenerateFitError(f"only {len(ell)} points in the fit window")
    y = S[ell - 1]
    x = np.log(conformal_distance(ell, L)) / 6.0
    A = np.column_stack([x, np.ones_like(x)])
    (c0, cp0), *_ = np.linalg.lstsq(A, y, rcond=None)
    ks, power, amps = _oscillation_scan(ell, L, y - A @ [c0, cp0])

    def resid(p):
        with np.errstate(over="ignore", invalid="ignore"):
            return entropy_model(ell, L, *p) - y

    peaks = _local_peaks(power, n_starts)
    if len(ks) - 1 not in peaks:
        peaks.append(len(ks) - 1)
    best = None
    for i in peaks:
        for b1 in START_EXPONENTS:
            start = np.array([c0, cp0, amps[i] if amps[i] != 0 else 1e-3, b1, ks[i]])
            res = least_squares(resid, start, method="lm", x_scale="jac",
                                xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev)
            if res.status <= 0 or not np.all(np.isfinite(res.x)):
                continue
            if best is None or res.cost < best.cost:
                best = res
    if best is None:
        raise FitError("entropy fit did not converge")
    c, cp, b0, b1, kF = best.x
    err = _stderr(best, len(CC_PARAMS))
    kF, b0 = fold_fermi(kF, b0, L)
    return CCFitResult(
        c=float(c), c_prime=float(cp), b0=float(b0), b1=float(b1), k_F=float(kF),
        residual=float(np.linalg.norm(best.fun)),
        stderr=dict(zip(CC_PARAMS, map(float, err))),
        window=(int(ell[0]), int(ell[-1])),
    )


def fermi_trend_value(f_M):
    f = np.asarray(f_M, dtype=float)
    return np.minimum(np.pi * f / 2.0, np.pi * (1.0 - f))


def fermi_trend(fits, fillings):
    """Deviation of each fitted ``k_F`` from ``min(pi f/2, pi (1 - f))``."""
    fits = list(fits)
    fillings = np.asarray(fillings, dtype=float)
    if len(fits) != len(fillings):
        raise ValueError("need one fit per filling")
    if len(fits) < 2:
        raise ValueError("need at least two fillings")
    k = np.array([f.k_F if isinstance(f, CCFitResult) else float(f) for f in fits])
    return k - fermi_trend_value(fillings)


# ---------------------------------------------------------------------------
# order parameter


def structure_factor(corr, density, k, f_M=None, include_diagonal=False):
    """Radicand of the CDW order parameter.

    ``sum_{j != j'} e^{ik(j-j')} <(n_j - f)(n_j' - f)> / (L (L-1))`` with
    ``<n_j n_j'>`` from ``corr`` and ``<n_j>`` from ``density``.  With
    ``include_diagonal`` the ``j == j'`` terms are kept (normalized by ``L^2``),
    which makes ``k = 0`` vanish identically on fixed-number states.
    """
    corr = np.asarray(corr, dtype=float)
    n = np.asarray(density, dtype=float)
    L = len(n)
    if corr.shape != (L, L):
        raise ValueError("correlation matrix and density profile disagree in size")
    f = n.mean() if f_M is None else float(f_M)
    centered = corr - f * n[:, None] - f * n[None, :] + f * f
    centered = 0.5 * (centered + centered.T)
    j = np.arange(L)
    phase = np.cos(k * (j[:, None] - j[None, :]))
    terms = phase * centered
    if include_diagonal:
        return float(terms.sum() / (L * L))
    return float((terms.sum() - np.trace(terms)) / (L * (L - 1)))


def cdw_order_parameter(corr, density, k, f_M=None, include_diagonal=False):
    """Square root of :func:`structure_factor`; small negatives clip to 0.

    Raises
    ------
    ValueError
        If the radicand is below ``-1e-10``.
    """
    r = structure_factor(corr, density, k, f_M, include_diagonal)
    if r < RADICAND_FLOOR:
        raise ValueError(f"negative structure factor {r:.3e}: inconsistent correlations")
    return float(np.sqrt(max(r, 0.0)))


def product_state_correlations(occupations):
    """Density profile and ``<n_i n_j>`` of a classical occupation pattern."""
    n = np.asarray(occupations, dtype=float)
    return np.outer(n, n), n


# ---------------------------------------------------------------------------
# meson correlations


@dataclass
class CorrelatorSeries:
    separations: np.ndarray
    values: np.ndarray
    window: tuple

    def positive(self):
        mask = self.separations > 0
        return self.separations[mask], self.values[mask]


def bulk_window(L, fraction=0.5):
    if not 0 < fraction <= 1:
        raise ValueError("window fraction must be in (0, 1]")
    width = max(1, int(round(fraction * L)))
    start = (L - width) // 2
    return start, start + width


def meson_correlator(matrix, window=0.5, staggered=False):
    """Bulk average of ``<sigma^-_j sigma^+_{j+l}>`` over reference sites ``j``
    in the central ``window`` fraction of the chain, symmetrized in ``l``.

    ``matrix[i, j]`` holds ``<sigma^-_i sigma^+_j>``; the diagonal is ignored.
    With ``staggered`` each value is multiplied by ``(-1)^l``, which removes
    the alternating sign the antiferromagnetic pseudo-spin order imprints.
    """
    M = np.asarray(matrix, dtype=float)
    L = M.shape[0]
    lo, hi = bulk_window(L, window)
    sums, counts = {}, {}
    for j in range(lo, hi):
        for i in range(L):
            if i == j:
                continue
            d = abs(i - j)
            sums[d] = sums.get(d, 0.0) + M[j, i]
            counts[d] = counts.get(d, 0) + 1
    ds = sorted(sums)
    seps = np.array([-d for d in reversed(ds)] + ds, dtype=int)
    half = [sums[d] / counts[d] * (-1) ** (d if staggered else 0) for d in ds]
    vals = np.array(list(reversed(half)) + half)
    return CorrelatorSeries(seps, vals, (lo, hi))


def correlation_length_moment(series: CorrelatorSeries):
    """``sqrt(sum (|l|-1)^2 C_l / sum C_l)`` over ``l != 0``."""
    l = np.abs(np.asarray(series.separations))
    C = np.asarray(series.values, dtype=float)
    mask = l != 0
    den = C[mask].sum()
    if not den > 0:
        raise ValueError(f"correlator sum {den:.3e} is not positive")
    ratio = ((l[mask] - 1) ** 2 * C[mask]).sum() / den
    if ratio < 0:
        raise ValueError(f"negative second moment {ratio:.3e}")
    return float(np.sqrt(ratio))


@dataclass
class CorrelationFit:
    a0: float
    eta: float
    xi: float
    residual: float
    lower_bound: bool


def correlation_length_fit(series: CorrelatorSeries, min_points=6):
    """Fit ``C_l = a0 l^-eta exp(-l/xi)`` on the positive ``l > 0`` entries.

    The model is linear in ``(log a0, eta, 1/xi)`` after taking logs, so the
    least-squares problem is solved directly.  A fitted ``xi`` beyond the
    largest separation (or a non-positive ``1/xi``) is flagged as a lower
    bound.
    """
    l, C = series.positive()
    mask = C > 0
    l, C = l[mask].astype(float), C[mask]
    if len(l) < min_points:
        raise DegenerateFitError(f"need {min_points} positive points, got {len(l)}")
    A = np.column_stack([np.ones_like(l), -np.log(l), -l])
    coef, *_ = np.linalg.lstsq(A, np.log(C), rcond=None)
    log_a0, eta, inv_xi = coef
    residual = float(np.linalg.norm(A @ coef - np.log(C)))
    xi = np.inf if inv_xi <= 0 else 1.0 / inv_xi
    return CorrelationFit(float(np.exp(log_a0)), float(eta), float(xi), residual, bool(xi > l.max()))


# ---------------------------------------------------------------------------
# transitions and extrapolations


@dataclass
class SlopeResult:
    t_star: float
    uncertainty: float
    slope: float
    tie: bool


def steepest_slope(t, zeta, rtol=1e-9):
    """Grid point of maximal ``|d zeta / dt|`` from centered differences.

    Ties (within ``rtol`` of the maximum) go to the smallest ``t`` and set
    ``tie``; the uncertainty is the larger grid spacing next to ``t*``.
    """
    t = np.asarray(t, dtype=float)
    z = np.asarray(zeta, dtype=float)
    if len(t) < 3 or len(t) != len(z):
        raise ValueError("need at least 3 matching (t, zeta) points")
    order = np.argsort(t, kind="stable")
    t, z = t[order], z[order]
    if np.any(np.diff(t) <= 0):
        raise ValueError("grid values must be distinct")
    slopes = np.abs(np.gradient(z, t))
    top = slopes.max()
    close = np.nonzero(slopes >= top - rtol * max(top, 1e-300))[0]
    i = int(close[0])
    spacing = max(t[min(i + 1, len(t) - 1)] - t[i], t[i] - t[max(i - 1, 0)])
    return SlopeResult(float(t[i]), float(spacing), float(slopes[i]), len(close) > 1)


@dataclass
class ThermoFit:
    intercept: float
    slope: float
    stderr: float


def extrapolate_thermo(points):
    """Ordinary least squares of ``y`` against ``1/L``."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be (L, y) pairs")
    Ls, y = pts[:, 0], pts[:, 1]
    if np.any(Ls <= 0):
        raise ValueError("sizes must be positive")
    if len(np.unique(Ls)) < 2:
        raise ValueError("need at least two distinct sizes")
    x = 1.0 / Ls
    A = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    dof = len(x) - 2
    if dof > 0:
        sigma2 = float(np.sum((A @ coef - y) ** 2)) / dof
        stderr = float(np.sqrt(sigma2 * np.linalg.inv(A.T @ A)[0, 0]))
    else:
        stderr = float("nan")
    return ThermoFit(float(coef[0]), float(coef[1]), stderr)


@dataclass
class TransitionEstimate:
    per_size: dict
    t_c: float
    uncertainty: float
    method: str


def locate_transition(curves, method="steepest-slope"):
    """Per-size transition estimate, then a linear ``1/L`` extrapolation.

    ``curves`` maps ``L`` to ``(t_grid, values)``: the order parameter for
    ``steepest-slope`` or fitted central charges for ``c-peak``.
    """
    if method not in ("steepest-slope", "c-peak"):
        raise ValueError(f"unknown method {method!r}")
    per_size, resolution = {}, 0.0
    for L in sorted(curves):
        t, v = (np.asarray(a, dtype=float) for a in curves[L])
        if method == "steepest-slope":
            r = steepest_slope(t, v)
            per_size[L], res = r.t_star, r.uncertainty
        else:
            order = np.argsort(t, kind="stable")
            t, v = t[order], v[order]
            i = int(np.argmax(v))
            per_size[L] = float(t[i])
            res = float(max(np.diff(t)[max(i - 1, 0) : i + 1], default=0.0))
        resolution = max(resolution, res)
    if len(per_size) >= 2:
        fit = extrapolate_thermo(sorted(per_size.items()))
        t_c = fit.intercept
        err = fit.stderr if np.isfinite(fit.stderr) else 0.0
    else:
        (t_c,) = per_size.values()
        err = 0.0
    return TransitionEstimate(per_size, float(t_c), float(max(err, resolution)), method)


def fit_power_law(points):
    """``xi = A * dt^-nu`` by least squares on log-log data; returns ``(A, nu)``.

    Two points with distinct abscissae are fitted exactly.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be (dt, xi) pairs")
    if np.any(pts <= 0):
        raise ValueError("power-law fit needs positive abscissae and ordinates")
    x, y = np.log(pts[:, 0]), np.log(pts[:, 1])
    if len(np.unique(x)) < 2:
        raise ValueError("need at least two distinct abscissae")
    A = np.column_stack([np.ones_like(x), -x])
    (logA, nu), *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(np.exp(logA)), float(nu)


# ---------------------------------------------------------------------------
# bond-dimension error


def chi_discrepancy(record_a, record_b, k=np.pi):
    """Absolute differences of energy and ``zeta_k`` between two records
    that share ``(L, N_M, t)``."""
    for name in ("L", "N_M", "t"):
        if getattr(record_a, name) != getattr(record_b, name):
            raise ValueError(f"records differ in {name}")
    out = {"energy": abs(record_a.energy - record_b.energy)}
    za = cdw_order_parameter(record_a.density_corr, record_a.density, k)
    zb = cdw_order_parameter(record_b.density_corr, record_b.density, k)
    out["zeta"] = abs(za - zb)
    return out
