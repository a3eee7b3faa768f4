"""Position-space kernels on the unit torus.

Builds the fields sigma-check and (gamma-1)-check from their momentum
coefficients by FFT, extracts radial decay profiles, and localizes fields on
boxes of side l_B.  The cubic kernel A-check is only ever needed along the
rays (x, 0) and (0, y); those profiles are assembled from a single lattice
FFT after the companion variable has been integrated out radially.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .coefficients import KernelSet

TWO_PI = 2.0 * np.pi


class AliasingError(RuntimeError):
    """Coefficient mass at the Nyquist shell exceeds the requested tolerance."""

    def __init__(self, measured: float, rtol: float, required_m: int):
        self.measured = measured
        self.rtol = rtol
        self.required_m = required_m
        super().__init__(
            f"Nyquist-shell coefficient ratio {measured:.3e} exceeds rtol "
            f"{rtol:.1e}; estimated grid size required: M = {required_m}")


class WindowError(ValueError):
    """A decay-fit window is empty or holds too few profile points."""


@dataclass(frozen=True)
class TorusField:
    """Real field sampled on the M^3 grid of the torus [-1/2, 1/2)^3."""

    values: np.ndarray
    m: int
    label: str = ""

    def __post_init__(self):
        if self.values.shape != (self.m,) * 3:
            raise ValueError("grid shape does not match M")
        if self.m & (self.m - 1):
            raise ValueError("grid size must be a power of two")

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.values ** 2) / self.m ** 3))

    def l1_norm(self) -> float:
        return float(np.sum(np.abs(self.values)) / self.m ** 3)

    def origin_value(self) -> float:
        return float(self.values[0, 0, 0])


def mode_norms(m: int) -> np.ndarray:
    """|p| on the M^3 FFT mode grid, with p = 2*pi*n and n the signed mode."""
    n = np.fft.fftfreq(m, d=1.0 / m)
    n2 = n ** 2
    return TWO_PI * np.sqrt(n2[:, None, None] + n2[None, :, None] + n2[None, None, :])


def _exterior_tail(coeff_fn, m: int, p_lo: float, p_hi: float):
    """Spline of the continuum sum over |p| > p_lo: (2 pi^2 r)^-1 int p c sin(pr) dp.

    Poisson summation turns the exterior lattice sum into this radial
    integral plus image terms at distance >= 1/2, which are negligible
    against the interior field.  Oscillation is resolved with fixed-width
    Gauss panels sized to the largest minimum-image radius.
    """
    from scipy.interpolate import CubicSpline

    r_max = np.sqrt(3.0) / 2.0
    dp = np.pi / (2.0 * r_max)
    edges = np.arange(p_lo, p_hi + dp, dp)
    xg, wg = leggauss(8)
    mids, half = 0.5 * (edges[1:] + edges[:-1]), 0.5 * np.diff(edges)
    pts = (mids[:, None] + half[:, None] * xg[None, :]).ravel()
    wts = (half[:, None] * wg[None, :]).ravel()
    f = pts * np.asarray(coeff_fn(pts), dtype=float) * wts
    rs = np.linspace(0.5 / m, r_max, 4096)
    vals = (np.sin(np.outer(rs, pts)) @ f) / (2.0 * np.pi ** 2 * rs)
    spline = CubicSpline(rs, vals)
    origin = float(np.sum(pts * f) / (2.0 * np.pi ** 2))  # lim sin(pr)/r = p

    def tail(r):
        r = np.asarray(r, dtype=float)
        return np.where(r >= rs[0], spline(np.clip(r, rs[0], r_max)), origin)

    return tail


def field_from_radial(coeff_fn, m: int, label: str = "",
                      alias_rtol: float = 1e-10, tail_correction: bool = True,
                      tail_extent: float = 0.0) -> TorusField:
    """FFT synthesis of sum_p c(|p|) exp(i p.x) for an even radial coefficient.

    With tail_correction the coefficients are truncated to the ball inscribed
    in the mode cube and the exterior of the ball is restored by its
    continuum radial integral (out to tail_extent, default 32x the ball
    radius), which removes the Nyquist ringing of a plain cube truncation.
    Without it, the largest coefficient on the Nyquist shell is compared
    against the coefficient sup; failure reports the grid size a c ~ p^-4
    envelope would need.
    """
    norms = mode_norms(m)
    coeffs = np.asarray(coeff_fn(norms), dtype=float)
    sup = float(np.max(np.abs(coeffs)))
    r_ball = TWO_PI * (m // 2)
    if tail_correction:
        coeffs = np.where(norms <= r_ball, coeffs, 0.0)
    else:
        n = np.fft.fftfreq(m, d=1.0 / m)
        nyq = (np.abs(n[:, None, None]) == m // 2) | \
              (np.abs(n[None, :, None]) == m // 2) | \
              (np.abs(n[None, None, :]) == m // 2)
        edge = float(np.max(np.abs(coeffs[nyq]))) if sup > 0 else 0.0
        if sup > 0 and edge > alias_rtol * sup:
            required = int(2 ** np.ceil(np.log2(m * (edge / (alias_rtol * sup)) ** 0.25)))
            raise AliasingError(edge / sup, alias_rtol, required)
    field = np.fft.ifftn(coeffs) * m ** 3
    imag = float(np.max(np.abs(field.imag)))
    if sup > 0 and imag > 1e-10 * max(1.0, np.max(np.abs(field.real))):
        raise RuntimeError(f"imaginary residue {imag:.3e} on an even coefficient")
    values = np.ascontiguousarray(field.real)
    if tail_correction and sup > 0:
        extent = tail_extent if tail_extent > 0 else 32.0 * r_ball
        tail = _exterior_tail(coeff_fn, m, r_ball, extent)
        k = np.minimum(np.arange(m), m - np.arange(m))
        rg = np.sqrt(k[:, None, None] ** 2 + k[None, :, None] ** 2
                     + k[None, None, :] ** 2) / m
        values = values + tail(rg)
    return TorusField(values, m, label)


def kernel_fft(ks: KernelSet, which: str, m: int = 256,
               alias_rtol: float = 1e-10, tail_correction: bool = True) -> TorusField:
    """Position-space sigma-check or (gamma-1)-check on the M^3 grid."""
    if which == "sigma":
        fn = ks.sigma_r
    elif which == "gamma_minus_one":
        def fn(p):
            return ks.gamma_r(p) - 1.0
    else:
        raise ValueError(f"unknown kernel: {which!r}")
    return field_from_radial(fn, m, label=which, alias_rtol=alias_rtol,
                             tail_correction=tail_correction)


# ---------------------------------------------------------------------------
# radial profiles and window fits


def decay_profile(field: TorusField):
    """(radius, max|field|, mean|field|) binned on integer grid radii.

    Distances use the periodic minimum image; the radius column is in torus
    units (bin k corresponds to |x| = k/M).
    """
    m = field.m
    k = np.minimum(np.arange(m), m - np.arange(m))
    r2 = (k[:, None, None] ** 2 + k[None, :, None] ** 2
          + k[None, None, :] ** 2).ravel()
    mag = np.abs(field.values).ravel()
    # exact shells: every grid distance is sqrt of an integer in [0, 3(M/2)^2]
    nbins = int(r2.max()) + 1
    prof_max = np.zeros(nbins)
    np.maximum.at(prof_max, r2, mag)
    counts = np.bincount(r2, minlength=nbins)
    sums = np.bincount(r2, weights=mag, minlength=nbins)
    occupied = counts > 0
    radii = np.sqrt(np.nonzero(occupied)[0]) / m
    return radii, prof_max[occupied], sums[occupied] / counts[occupied]


def fit_window_slope(radii, values, lo: float, hi: float) -> float:
    """Least-squares log-log slope of a profile restricted to lo <= r <= hi."""
    if not lo < hi:
        raise WindowError(f"empty window [{lo:.4g}, {hi:.4g}]")
    radii = np.asarray(radii, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = (radii >= lo) & (radii <= hi) & (values > 0) & (radii > 0)
    if int(np.count_nonzero(mask)) < 3:
        raise WindowError(
            f"window [{lo:.4g}, {hi:.4g}] holds {int(np.count_nonzero(mask))} "
            "usable profile points (need at least 3)")
    slope, _ = np.polyfit(np.log(radii[mask]), np.log(values[mask]), 1)
    return float(slope)


# ---------------------------------------------------------------------------
# box localization


def localized_norms(field: TorusField, l_b: float):
    """(sum_u ||f_u||_2, sum_u ||f_u||_1) over cubes of side l_B.

    Grid points go to the nearest box center in l_B * Z^3 (half-open cubes up
    to ties of measure zero), which is an exact partition, so the per-box
    squares recombine to ||f||_2^2 identically.
    """
    m = field.m
    if l_b < 2.0 / m:
        raise ValueError("boxes need at least two grid cells per side")
    x = np.fft.fftfreq(m)  # grid coordinates in [-1/2, 1/2)
    idx = np.rint(x / l_b).astype(np.int64)
    idx -= idx.min()
    span = int(idx.max()) + 1
    box = (idx[:, None, None] * span + idx[None, :, None]) * span + idx[None, None, :]
    box = box.ravel()
    vals = field.values.ravel()
    sq = np.bincount(box, weights=vals ** 2, minlength=span ** 3) / m ** 3
    ab = np.bincount(box, weights=np.abs(vals), minlength=span ** 3) / m ** 3
    return float(np.sum(np.sqrt(sq))), float(np.sum(ab))


# ---------------------------------------------------------------------------
# cubic kernel A-check


def _ball_modes(radius: float) -> np.ndarray:
    """Momentum vectors 2*pi*n, n in Z^3, 0 < |2*pi*n| <= radius."""
    nmax = int(np.floor(radius / TWO_PI))
    rng = np.arange(-nmax, nmax + 1)
    grid = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
    p = TWO_PI * grid.astype(float)
    norms = np.linalg.norm(p, axis=1)
    keep = (norms > 0) & (norms <= radius)
    return p[keep]


def cubic_kernel_position(ks: KernelSet, x, y, r_p: float, r_q: float) -> float:
    """A-check(x, y) by the truncated double Fourier sum over both lattices.

    Cost grows with the sixth power of the truncation radius, so this is a
    spot-check tool; radii capping the mode count near 3e7 pairs are raised.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    pv = _ball_modes(r_p)
    qv = _ball_modes(r_q)
    if pv.shape[0] * qv.shape[0] > 6e7:
        raise ValueError("truncation radii too large for the double sum")
    total = 0.0
    q2 = np.sum(qv * qv, axis=1)
    sig = ks.sigma_r(np.sqrt(q2))
    phase_q = np.exp(1j * (qv @ y))
    for lo in range(0, pv.shape[0], 512):
        pc = pv[lo:lo + 512]
        p2 = np.sum(pc * pc, axis=1)
        num = 2.0 * p2 * ks.eta_r(np.sqrt(p2)) / np.sqrt(ks.params.n)
        denom = p2[:, None] + q2[None, :] + np.sum(
            (pc[:, None, :] + qv[None, :, :]) ** 2, axis=-1)
        block = (num * np.exp(1j * (pc @ x)))[:, None] * (sig * phase_q)[None, :] / denom
        total += float(np.sum(block.real))
    return total


def _angular_log(p, q):
    """Closed form of the angular average 2 int du / (2(p^2+q^2+pq u))."""
    s = p ** 2 + q ** 2
    return np.log((s + p * q) / (s - p * q)) / (p * q)


def _log_gl(lo: float, hi: float, n: int):
    xs, ws = leggauss(n)
    mid, half = 0.5 * (np.log(hi) + np.log(lo)), 0.5 * (np.log(hi) - np.log(lo))
    r = np.exp(mid + half * xs)
    return r, ws * half * r


def cubic_ray_profiles(ks: KernelSet, m: int = 256, n_quad: int = 256):
    """Fields A-check(x, 0) and A-check(0, y) on the M^3 grid.

    The companion momentum sum is taken in its continuum form with the
    angular integral in closed form, leaving one radial coefficient per mode
    shell; the remaining lattice sum is synthesized by FFT.  Only the ray
    decay is meaningful here, which is all the spot-checks need.
    """
    par = ks.params
    r_hi = 24.0 * max(par.momentum_scale, TWO_PI)

    # companion q-integral for the (x, 0) slice
    q_nodes, q_w = _log_gl(0.5 * par.p_sigma, r_hi, n_quad)
    sig_q = ks.sigma_r(q_nodes)

    def coeff_x(pn):
        shape = pn.shape
        p = pn.ravel()
        safe = np.where(p > 0, p, 1.0)
        inner = np.zeros_like(p)
        for lo in range(0, p.size, 8192):
            sl = slice(lo, lo + 8192)
            ang = _angular_log(safe[sl][:, None], q_nodes[None, :])
            inner[sl] = (q_nodes ** 2 * sig_q * q_w) @ ang.T / (2.0 * (2.0 * np.pi) ** 2)
        amp = 2.0 * p ** 2 * ks.eta_r(p) / np.sqrt(par.n)
        return np.where(p > 0, amp * inner, 0.0).reshape(shape)

    # companion p-integral for the (0, y) slice
    p_nodes, p_w = _log_gl(0.5 * par.p_eta, r_hi, n_quad)
    amp_p = 2.0 * p_nodes ** 2 * ks.eta_r(p_nodes) / np.sqrt(par.n)

    def coeff_y(qn):
        shape = qn.shape
        q = qn.ravel()
        safe = np.where(q > 0, q, 1.0)
        inner = np.zeros_like(q)
        for lo in range(0, q.size, 8192):
            sl = slice(lo, lo + 8192)
            ang = _angular_log(p_nodes[None, :], safe[sl][:, None])
            inner[sl] = (p_nodes ** 2 * amp_p * p_w) @ ang.T / (2.0 * (2.0 * np.pi) ** 2)
        return np.where(q > 0, ks.sigma_r(q) * inner, 0.0).reshape(shape)

    fx = field_from_radial(coeff_x, m, label="A(x,0)", alias_rtol=1.0)
    fy = field_from_radial(coeff_y, m, label="A(0,y)", alias_rtol=1.0)
    return fx, fy
