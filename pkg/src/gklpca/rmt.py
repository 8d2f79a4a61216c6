"""Marchenko-Pastur spectra: densities, bulk fitting and outlier detection.

Parametrization: ``rho`` is the aspect ratio and ``sigma`` a scale, with
eigenvalue support ``sigma^2 (1 +- sqrt(rho))^2`` and singular-value
support ``sigma |1 +- sqrt(rho)|``. The eigenvalue density

    p_e(xi) = sqrt((l+ - xi)(xi - l-)) / (2 pi sigma^2 rho xi)

carries mass ``min(1, 1/rho)``; the singular-value density

    p_s(x) = sqrt((s+^2 - x^2)(x^2 - s-^2)) / (pi sigma^2 min(1, rho) x)

carries mass 1 for every ``rho``. Because ``p_s`` is unchanged under
``(rho, sigma) -> (1/rho, sigma sqrt(rho))`` a fit can only determine
``rho`` up to inversion; :func:`fit_bulk` searches on the side of its
``aspect_hint``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

__all__ = [
    "MpParams",
    "SpectrumReport",
    "DegenerateSpectrumError",
    "mp_support",
    "mp_pdf_eig",
    "mp_pdf_sv",
    "mp_cdf_sv",
    "fit_bulk",
    "count_outliers",
    "histogram",
    "bulk_chi2",
    "spectrum_report",
]

_CDF_GRID = 4097


class DegenerateSpectrumError(ValueError):
    """The values cannot support a Marchenko-Pastur fit."""


@dataclass(frozen=True)
class MpParams:
    rho: float
    sigma: float

    def __post_init__(self):
        if not (self.rho > 0 and self.sigma > 0):
            raise ValueError(f"need rho > 0 and sigma > 0, got rho={self.rho}, sigma={self.sigma}")


@dataclass
class SpectrumReport:
    singvals: np.ndarray
    fitted: MpParams
    support: tuple
    outliers: np.ndarray
    outlier_factor: float
    histogram: tuple
    n_zero: int = 0
    bulk_fraction: float = 1.0
    chi2: dict = field(default_factory=dict)

    def to_dict(self):
        edges, dens = self.histogram
        return {
            "n_values": int(self.singvals.size),
            "rho": self.fitted.rho,
            "sigma": self.fitted.sigma,
            "sigma_minus": self.support[0],
            "sigma_plus": self.support[1],
            "outlier_factor": self.outlier_factor,
            "outlier_threshold": self.outlier_factor * self.support[1],
            "n_outliers": int(self.outliers.size),
            "outliers": [float(v) for v in self.outliers],
            "n_zero": self.n_zero,
            "bulk_fraction": self.bulk_fraction,
            "chi2": self.chi2,
            "histogram": {"edges": [float(e) for e in edges], "density": [float(d) for d in dens]},
        }


def mp_support(p):
    """``(lambda_minus, lambda_plus, sigma_minus, sigma_plus)``."""
    sr = np.sqrt(p.rho)
    s2 = p.sigma**2
    return (s2 * (1 - sr) ** 2, s2 * (1 + sr) ** 2, p.sigma * abs(1 - sr), p.sigma * (1 + sr))


def mp_pdf_eig(xi, p):
    """Density of the nonzero eigenvalues; zero outside the support."""
    lm, lp, _, _ = mp_support(p)
    xi = np.asarray(xi, dtype=np.float64)
    inside = (xi > lm) & (xi < lp) & (xi > 0)
    out = np.zeros_like(xi)
    x = xi[inside]
    out[inside] = np.sqrt((lp - x) * (x - lm)) / (2 * np.pi * p.sigma**2 * p.rho * x)
    return out if out.ndim else float(out)


def mp_pdf_sv(x, p):
    """Density of the singular values; zero outside the support."""
    _, _, sm, sp = mp_support(p)
    x = np.asarray(x, dtype=np.float64)
    inside = (x > sm) & (x < sp) & (x > 0)
    out = np.zeros_like(x)
    s = x[inside]
    out[inside] = np.sqrt((sp**2 - s**2) * (s**2 - sm**2)) / (np.pi * p.sigma**2 * min(1.0, p.rho) * s)
    return out if out.ndim else float(out)


def _cdf_table(p, npts=_CDF_GRID):
    # xi = c - h cos(t) maps [0, pi] onto the eigenvalue support and removes
    # the square-root endpoint singularities from the integrand
    lm, lp, _, _ = mp_support(p)
    c, h = 0.5 * (lp + lm), 0.5 * (lp - lm)
    t = np.linspace(0.0, np.pi, npts)
    xi = c - h * np.cos(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(xi > 0, (h * np.sin(t)) ** 2 / xi, 0.0)
    if p.rho == 1.0:
        f[0] = 2.0 * h  # limit of h^2 sin^2 t / (h (1 - cos t)) at t -> 0
    cum = integrate.cumulative_simpson(f, x=t, initial=0.0)
    return t, cum / cum[-1], c, h


def mp_cdf_sv(x, p):
    """Distribution function of the singular-value law (by quadrature)."""
    t, cdf, c, h = _cdf_table(p)
    x = np.asarray(x, dtype=np.float64)
    arg = np.clip((c - x**2) / h, -1.0, 1.0)
    return np.interp(np.arccos(arg), t, cdf)


def count_outliers(singvals, p, factor=1.1):
    """Values strictly above ``factor * sigma_plus``, in descending order."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    s = np.asarray(singvals, dtype=np.float64)
    vals = np.sort(s[s > factor * mp_support(p)[3]])[::-1]
    return int(vals.size), vals


def histogram(values, bins=30, range=None, total=None):
    """Equal-width histogram normalized so that ``sum(density * width) == 1``.

    With ``total`` given, counts are divided by ``total`` instead of the
    number of binned values, so the area equals the binned fraction.
    """
    values = np.asarray(values, dtype=np.float64)
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if values.size == 0:
        raise ValueError("histogram of an empty sample")
    lo, hi = (values.min(), values.max()) if range is None else range
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    norm = values.size if total is None else total
    return edges, counts / (norm * np.diff(edges))


def _nonzero(singvals, zero_tol):
    s = np.sort(np.asarray(singvals, dtype=np.float64))[::-1]
    if s.size == 0:
        return s, 0
    keep = s > zero_tol * s[0]
    return s[keep], int((~keep).sum())


def _fit_once(bulk, aspect_hint, start):
    bulk = np.sort(bulk)
    q = (np.arange(1, bulk.size + 1) - 0.5) / bulk.size
    upper = aspect_hint >= 1.0

    def unpack(z):
        e = np.exp(np.clip(z[0], -30, 30))
        return (1.0 + e if upper else 1.0 / (1.0 + e)), float(np.exp(z[1]))

    def loss(z):
        rho, sigma = unpack(z)
        return float(np.sum((mp_cdf_sv(bulk, MpParams(rho, sigma)) - q) ** 2))

    rho0, sigma0 = start
    gap = max(abs(rho0 - 1.0), 1e-3)
    a0 = np.log(gap) if upper else np.log(max(1.0 / rho0 - 1.0, 1e-3))
    res = optimize.minimize(
        loss, x0=[a0, np.log(sigma0)], method="Nelder-Mead",
        options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 4000},
    )
    return MpParams(*unpack(res.x))


def fit_bulk(singvals, aspect_hint, trim_quantile=0.99, outlier_factor=1.1, zero_tol=1e-8, max_rounds=5):
    """Fit ``(rho, sigma)`` to the bulk of a singular-value sample.

    The bulk starts as the nonzero values below ``trim_quantile``. The fit
    minimizes the squared distance between the empirical and model CDFs;
    afterwards the bulk is redefined as all nonzero values up to
    ``outlier_factor * sigma_plus`` and the fit repeated until the bulk no
    longer changes.
    """
    s, _ = _nonzero(singvals, zero_tol)
    if np.asarray(singvals).size < 100 or s.size < 100:
        raise ValueError("fit_bulk needs at least 100 nonzero singular values")
    if s[0] - s[-1] <= 1e-12 * s[0]:
        raise DegenerateSpectrumError("all singular values are identical")
    if aspect_hint <= 0:
        raise ValueError("aspect_hint must be positive")

    bulk = s[s <= np.quantile(s, trim_quantile)]
    rho0 = aspect_hint if aspect_hint != 1.0 else 1.0 + 1e-3
    p = _fit_once(bulk, rho0, (rho0, bulk.max() / (1.0 + np.sqrt(rho0))))
    for _ in range(max_rounds):
        new_bulk = s[s <= outlier_factor * mp_support(p)[3]]
        if new_bulk.size == bulk.size:
            break
        bulk = new_bulk
        p = _fit_once(bulk, aspect_hint, (p.rho, p.sigma))
    return p


def bulk_chi2(bulk, p, bins=30, min_expected=5.0):
    """Pearson chi-square of binned ``bulk`` values against the fitted law.

    Bins with expected count below ``min_expected`` are dropped; two fitted
    parameters and the total count are subtracted from the degrees of freedom.
    """
    bulk = np.asarray(bulk, dtype=np.float64)
    counts, edges = np.histogram(bulk, bins=bins)
    cdf = mp_cdf_sv(edges, p)
    # the binned range is the data range, so normalize expected counts over it
    expected = bulk.size * np.diff(cdf) / (cdf[-1] - cdf[0])
    used = expected >= min_expected
    chi2 = float(np.sum((counts[used] - expected[used]) ** 2 / expected[used]))
    dof = int(used.sum()) - 3
    return {"chi2": chi2, "dof": dof, "reduced": chi2 / dof if dof > 0 else float("inf"), "bins": bins}


def spectrum_report(singvals, aspect_hint, bins=30, factor=1.1, zero_tol=1e-8, trim_quantile=0.99):
    """Fit the bulk, flag outliers and bin the spectrum for plotting."""
    s_all = np.sort(np.asarray(singvals, dtype=np.float64))[::-1]
    s, n_zero = _nonzero(s_all, zero_tol)
    p = fit_bulk(s_all, aspect_hint, trim_quantile=trim_quantile, outlier_factor=factor, zero_tol=zero_tol)
    sm, sp = mp_support(p)[2:]
    _, outliers = count_outliers(s, p, factor)
    bulk = s[s <= factor * sp]
    edges, dens = histogram(bulk, bins, total=s.size)
    return SpectrumReport(
        singvals=s_all,
        fitted=p,
        support=(float(sm), float(sp)),
        outliers=outliers,
        outlier_factor=factor,
        histogram=(edges, dens),
        n_zero=n_zero,
        bulk_fraction=bulk.size / s.size,
        chi2=bulk_chi2(bulk, p, bins),
    )
