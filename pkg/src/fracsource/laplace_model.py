"""Laplace-domain measurement representation, numeric transforms of traces,
the adjoint mollifier constructions, and pole bookkeeping in the cut plane.

Branch convention: arguments live in [0, 2pi), so s^alpha means
exp(alpha*(ln|s| + i*arg s)) under that convention and the transform's poles
(-lambda_j)^(1/alpha) = lambda_j^(1/alpha) exp(i pi/alpha) sit inside the
branch whenever alpha > 1/2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincc

from .disc_spectrum import SpectrumTable, eigenfunction_eval, normalizer_sign
from .errors import DomainError, HorizonError, PoleProximityError, ShapeError
from .forward_model import FluxTrace, SourceModel, grouped_amplitudes
from .specfun import mittag_leffler_neg_real

__all__ = [
    "LaplacePoint",
    "LaplaceSamples",
    "AdjointSpec",
    "TailSpec",
    "branch_power",
    "pole_locations",
    "laplace_flux_model",
    "numeric_laplace",
    "delta_z_eval",
    "adjoint_weight_w",
]


def branch_power(s: complex, alpha: float) -> complex:
    """s^alpha with the argument taken in [0, 2pi)."""
    s = complex(s)
    if s == 0:
        raise DomainError("s=0 is outside the branch")
    arg = math.atan2(s.imag, s.real)
    if arg < 0:
        arg += 2.0 * math.pi
    return complex(np.exp(alpha * (np.log(abs(s)) + 1j * arg)))


@dataclass(frozen=True)
class LaplacePoint:
    """A point of the right half-plane, kept away from transform poles."""

    s: complex

    def __post_init__(self):
        s = complex(self.s)
        if not s.real > 0:
            raise DomainError(f"Re s must be positive, got {s}")
        object.__setattr__(self, "s", s)

    def check_poles(self, alpha: float, distinct_lambdas, eps_pole: float = 1e-6):
        for p in pole_locations(alpha, distinct_lambdas):
            if abs(self.s - p) < eps_pole:
                raise PoleProximityError(
                    f"s={self.s} within {eps_pole} of pole {p}")


@dataclass(frozen=True)
class LaplaceSamples:
    points: tuple
    values: np.ndarray

    def __post_init__(self):
        pts = tuple(self.points)
        vals = np.asarray(self.values, dtype=complex)
        if len(pts) != len(vals):
            raise ShapeError("points and values must align")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)

    def to_csv(self) -> str:
        lines = ["re_s,im_s,re_G,im_G"]
        for p, v in zip(self.points, self.values):
            lines.append(f"{p.s.real!r},{p.s.imag!r},{v.real!r},{v.imag!r}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class AdjointSpec:
    """Mollifier parameters: sensor angle, harmonic truncation N, order."""

    theta_z: float
    N: int
    alpha: float

    def __post_init__(self):
        if self.N < 0:
            raise DomainError("N must be >= 0")


@dataclass(frozen=True)
class TailSpec:
    """Algebraic tail model A + sum_j B_j (t - shift)^(-j alpha) fitted on the
    last fit_fraction of a trace and integrated in closed form beyond it."""

    alpha: float
    shift: float = 0.0
    terms: int = 3
    fit_fraction: float = 0.25

    def __post_init__(self):
        if not 0 < self.fit_fraction < 1:
            raise DomainError("fit_fraction must be in (0,1)")
        if self.terms < 1 or self.terms > 6:
            raise DomainError("terms must be in [1, 6]")


def pole_locations(alpha: float, distinct_lambdas) -> list:
    """(-lambda_j)^(1/alpha) on the branch: modulus lambda_j^(1/alpha),
    argument pi/alpha (inside (pi, 2pi) for alpha in (1/2, 1))."""
    if not 0.5 < alpha < 1.0:
        raise DomainError(f"alpha={alpha} outside (1/2, 1)")
    out = []
    for lam in distinct_lambdas:
        if lam <= 0:
            raise DomainError("eigenvalues must be positive")
        rho = lam ** (1.0 / alpha)
        out.append(complex(rho * np.exp(1j * math.pi / alpha)))
    return out


def laplace_flux_model(model: SourceModel, theta_z: float, s: LaplacePoint,
                       eps_pole: float = 1e-6) -> complex:
    """L{-du/dnu}(z, s) in closed form:

    s^-1 sum_k (e^(-c_{k-1} s) - e^(-c_k s)) sum_j b_{j,k} lambda_j/(s^a+lambda_j).
    """
    lams = [lam for lam, _ in model.spectrum.distinct_eigenvalues]
    s.check_poles(model.alpha, lams, eps_pole)
    sv = s.s
    sa = branch_power(sv, model.alpha)
    b = grouped_amplitudes(model, theta_z)
    lam_arr = np.array(lams)
    frac = lam_arr / (sa + lam_arr)
    total = 0.0 + 0.0j
    for k in range(model.n_pieces):
        c_lo, c_hi = model.cuts[k], model.cuts[k + 1]
        win = np.exp(-c_lo * sv)
        if np.isfinite(c_hi):
            win -= np.exp(-c_hi * sv)
        total += win * np.sum(b[:, k] * frac)
    return complex(total / sv)


def numeric_laplace(trace: FluxTrace, s: LaplacePoint,
                    tail: TailSpec | None = None) -> complex:
    """Quadrature of int_0^T e^(-s t) (-flux)(t) dt with the piecewise-linear
    interpolant integrated exactly per interval; beyond T either the horizon
    must already be negligible or a TailSpec supplies the continuation."""
    sv = s.s
    t = trace.times
    g = -trace.values
    horizon = float(np.exp(-sv.real * t[-1]))
    if tail is None and horizon > 1e-10:
        raise HorizonError(
            f"exp(-Re s * T) = {horizon:.2e} > 1e-10 at T={t[-1]}; "
            "supply a tail model or extend the trace")
    total = _laplace_pwlinear(t, g, sv)
    if tail is not None:
        total += _tail_transform(t, g, sv, tail)
    return complex(total)


def _laplace_pwlinear(t: np.ndarray, g: np.ndarray, s: complex) -> complex:
    """Exact transform of the piecewise-linear interpolant of g."""
    t0, t1 = t[:-1], t[1:]
    g0, g1 = g[:-1], g[1:]
    h = t1 - t0
    slope = (g1 - g0) / h
    x = s * h
    e0 = np.exp(-s * t0)
    # int_{t0}^{t1} e^{-s tau}(g0 + slope (tau-t0)) dtau
    #   = e^{-s t0} [ g0 (1-e^{-x})/s + slope (1 - (1+x) e^{-x})/s^2 ]
    small = np.abs(x) < 1e-4
    with np.errstate(invalid="ignore", over="ignore"):
        emx = np.exp(-x)
        f0 = np.where(small,
                      h * (1 - x / 2 + x * x / 6 - x ** 3 / 24),
                      (1 - emx) / s)
        f1 = np.where(small,
                      h * h * (0.5 - x / 3 + x * x / 8 - x ** 3 / 30),
                      (1 - (1 + x) * emx) / (s * s))
    return complex(np.sum(e0 * (g0 * f0 + slope * f1)))


def _upper_gamma(a: float, x: float) -> float:
    """Gamma(a, x) for real a (possibly <= 0), x > 0, via upward recursion
    Gamma(a, x) = (Gamma(a+1, x) - x^a e^(-x)) / a."""
    shift = 0
    aa = a
    while aa <= 0:
        aa += 1.0
        shift += 1
    val = float(gammaincc(aa, x)) * math.gamma(aa)
    for i in range(shift):
        aa -= 1.0
        val = (val - x ** aa * math.exp(-x)) / aa
    return val


def _tail_transform(t: np.ndarray, g: np.ndarray, s: complex,
                    tail: TailSpec) -> complex:
    """Fit g(t) ~ A + sum_j B_j (t-shift)^(-j alpha) on the trailing window and
    integrate the model against e^(-s t) over (T, inf)."""
    big_t = float(t[-1])
    n_fit = max(int(len(t) * tail.fit_fraction), tail.terms + 2)
    tf = t[-n_fit:] - tail.shift
    if np.any(tf <= 0):
        raise DomainError("tail shift must precede the fitting window")
    cols = [np.ones_like(tf)]
    for j in range(1, tail.terms + 1):
        cols.append(tf ** (-j * tail.alpha))
    design = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(design, g[-n_fit:], rcond=None)
    if s.imag != 0:
        raise DomainError("tail continuation implemented for real s only")
    sr = s.real
    total = coef[0] * math.exp(-sr * big_t) / sr
    u = big_t - tail.shift
    for j in range(1, tail.terms + 1):
        p = 1.0 - j * tail.alpha
        # int_T^inf e^{-s t}(t-shift)^{-j a} dt = e^{-s shift} s^{j a - 1} Gamma(1-j a, s u)
        total += coef[j] * math.exp(-sr * tail.shift) * sr ** (-p) * _upper_gamma(p, sr * u)
    return complex(total)


def delta_z_eval(spec: AdjointSpec, r, theta):
    """Truncated boundary mollifier sum_{|l|<=N} xi_l(z) xi_{-l}(r, theta);
    real-valued: (1/2pi)(1 + 2 sum_{l=1}^N r^l cos(l (theta_z - theta)))."""
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(r < 0) or np.any(r > 1):
        raise DomainError("r must lie in [0, 1]")
    acc = np.ones(np.broadcast(r, theta).shape)
    for el in range(1, spec.N + 1):
        acc = acc + 2.0 * r ** el * np.cos(el * (spec.theta_z - theta))
    out = acc / (2.0 * math.pi)
    return float(out) if out.ndim == 0 else out


def adjoint_weight_w(spec: AdjointSpec, spectrum: SpectrumTable, r, theta,
                     t: float):
    """Adjoint field w_z^N(x, t) as its eigenexpansion over modes with
    |m| <= N: sum a-bar_n(z) t^(a-1) [1/Gamma(a) - E_{a,a}(-lam_n t^a)] phi_n."""
    if not t > 0:
        raise DomainError("t must be positive")
    alpha = spec.alpha
    inv_g = 1.0 / math.gamma(alpha)
    modes = [mo for mo in spectrum.modes if abs(mo.m) <= spec.N]
    lam = np.array([mo.lam for mo in modes])
    e_aa = mittag_leffler_neg_real(alpha, alpha, lam * t ** alpha)
    total = None
    for mo, e in zip(modes, e_aa):
        a_bar = (normalizer_sign(mo) * np.exp(-1j * mo.m * spec.theta_z)
                 / (math.sqrt(math.pi) * math.sqrt(mo.lam)))
        term = a_bar * t ** (alpha - 1.0) * (inv_g - e) * eigenfunction_eval(mo, r, theta)
        total = term if total is None else total + term
    if total is None:
        shape = np.broadcast(np.asarray(r, dtype=float),
                             np.asarray(theta, dtype=float)).shape
        return complex(0) if shape == () else np.zeros(shape, dtype=complex)
    return total
