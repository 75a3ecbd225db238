"""Radial Hamiltonians with q-growth and couplings f^eps = f + eps*log.

Two Hamiltonian families:

* ``quadratic``:  H(p) = scale * p^2 / 2
* ``power``:      H(p) = scale * (p^2 + varpi^2)^(q/2)

For varpi > 0 the power family is C^2 with H_pp comparable to
(|p| + varpi)^(q-2); for varpi = 0 and q != 2 it is degenerate or singular
at p = 0 and only the divergence-form (primal) solver accepts it.

Couplings are nondecreasing f on (0, inf) from the families zero,
power f(m) = c*m^a (a > 0) and log f(m) = c*log m, combined with the
entropy weight eps into f^eps(r) = f(r) + eps*log r, whose inverse phi is
evaluated by a safeguarded Newton iteration in y = log m.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

QUADRATIC = "quadratic"
POWER = "power"


class DegenerateHamiltonianError(ValueError):
    """Raised where a singular/degenerate H_pp is not supported."""


@dataclass(frozen=True)
class HamiltonianSpec:
    family: str = QUADRATIC
    q: float = 2.0
    varpi: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.family not in (QUADRATIC, POWER):
            raise ValueError(f"unknown hamiltonian family {self.family!r}")
        if self.q <= 1.0:
            raise ValueError("growth exponent q must exceed 1")
        if self.varpi < 0.0 or self.scale <= 0.0:
            raise ValueError("need varpi >= 0 and scale > 0")
        if self.family == QUADRATIC:
            object.__setattr__(self, "q", 2.0)

    @property
    def smooth(self) -> bool:
        """C^2 with H_pp bounded away from 0 on compacts (dual solver admissible)."""
        return self.family == QUADRATIC or self.q == 2.0 or self.varpi > 0.0


def h_eval(H: HamiltonianSpec, p):
    """Return (H, H_p, H_pp) at p; vectorized over arrays.

    Signals DegenerateHamiltonianError when H_pp is unbounded at p = 0
    (varpi = 0, q < 2 evaluated at the origin).
    """
    p = np.asarray(p, dtype=float)
    if H.family == QUADRATIC:
        s = H.scale
        return 0.5 * s * p * p, s * p, np.broadcast_to(np.asarray(s), p.shape).copy()
    s, q, w2 = H.scale, H.q, H.varpi**2
    r2 = p * p + w2
    if H.varpi == 0.0:
        if q < 2.0 and np.any(p == 0.0):
            raise DegenerateHamiltonianError(
                "H_pp singular at p=0 for varpi=0, q<2; use the primal solver"
            )
        if np.any(r2 == 0.0):  # q > 2: value/derivatives all vanish at 0
            r2 = np.where(r2 == 0.0, 1.0, r2)
            val = s * np.where(p == 0.0, 0.0, r2 ** (q / 2))
            hp = s * q * p * r2 ** (q / 2 - 1)
            hpp = s * q * r2 ** (q / 2 - 2) * ((q - 1) * p * p + w2)
            hpp = np.where(p == 0.0, 0.0, hpp)
            return val, hp, hpp
    val = s * r2 ** (q / 2)
    hp = s * q * p * r2 ** (q / 2 - 1)
    hpp = s * q * r2 ** (q / 2 - 2) * ((q - 1) * p * p + w2)
    return val, hp, hpp


def h_third(H: HamiltonianSpec, p):
    """Third derivative H_ppp (needed by the exact dual Jacobian)."""
    p = np.asarray(p, dtype=float)
    if H.family == QUADRATIC:
        return np.zeros_like(p)
    s, q, w2 = H.scale, H.q, H.varpi**2
    r2 = p * p + w2
    safe = np.where(r2 == 0.0, 1.0, r2)
    out = s * q * p * safe ** (q / 2 - 3) * (
        (q - 4) * ((q - 1) * p * p + w2) + 2 * (q - 1) * safe
    )
    return np.where(r2 == 0.0, 0.0, out)


@functools.lru_cache(maxsize=None)
def hpp_envelope(H: HamiltonianSpec) -> tuple[float, float]:
    """(alpha_H, beta_H) with alpha_H(|p|+varpi)^{q-2} <= H_pp <= beta_H(...)."""
    if H.family == QUADRATIC:
        return H.scale, H.scale
    if H.varpi == 0.0 and H.q != 2.0:
        raise DegenerateHamiltonianError("no two-sided H_pp envelope for varpi=0")
    p = np.concatenate([[0.0], np.logspace(-6, 3, 2000)])
    _, _, hpp = h_eval(H, p)
    ratio = hpp / (np.abs(p) + H.varpi) ** (H.q - 2.0)
    return float(ratio.min()), float(ratio.max())


@functools.lru_cache(maxsize=None)
def coercivity_constants(H: HamiltonianSpec) -> tuple[float, float]:
    """(gamma0, gamma1) with H_p(p)*p - H(p) >= gamma0|p|^q - gamma1 for all p."""
    if H.family == QUADRATIC:
        return 0.5 * H.scale, 0.0
    if H.varpi == 0.0:
        # H = s|p|^q exactly: H_p p - H = (q-1) s |p|^q
        return (H.q - 1.0) * H.scale, 0.0
    # the excess H_p p - H tends to (q-1)s|p|^q at infinity and dips to
    # -H(0) at p = 0; take half the asymptotic slope and absorb the dip
    # into gamma1 by dense sampling of the gap on a ray
    gamma0 = 0.5 * (H.q - 1.0) * H.scale
    p = np.concatenate([[0.0], np.logspace(-8, 3, 4000)])
    val, hp, _ = h_eval(H, p)
    gap = gamma0 * p**H.q - (hp * p - val)
    gamma1 = max(0.0, float(np.max(gap)))
    return gamma0, gamma1


def legendre_L(H: HamiltonianSpec, v: float) -> float:
    """Fenchel conjugate L(v) = sup_p (p*v - H(p))."""
    if H.family == QUADRATIC:
        return v * v / (2.0 * H.scale)
    v = float(v)
    if v == 0.0:
        return -float(h_eval(H, 0.0)[0])
    # superlinear H: the sup is attained; H_p >= scale*q*p^{q-1} gives a bracket
    p_max = 1.0 + 2.0 * (abs(v) / H.scale) ** (1.0 / (H.q - 1.0))
    sign = 1.0 if v > 0 else -1.0
    res = minimize_scalar(
        lambda p: float(h_eval(H, sign * p)[0]) - p * abs(v),
        bounds=(0.0, p_max),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return -float(res.fun)


_F_FAMILIES = ("zero", "power", "log")


@dataclass(frozen=True)
class CouplingSpec:
    """Coupling f plus entropy weight eps; f^eps(r) = f(r) + eps*log r."""

    epsilon: float = 1.0
    f_family: str = "zero"
    f_params: tuple[float, ...] = ()

    def __post_init__(self):
        if self.epsilon < 0.0:
            raise ValueError("epsilon must be >= 0")
        if self.f_family not in _F_FAMILIES:
            raise ValueError(f"unknown coupling family {self.f_family!r}")
        params = tuple(float(x) for x in self.f_params)
        if self.f_family == "power":
            if len(params) != 2:
                raise ValueError("power coupling needs f_params = (c, a)")
            c, a = params
            if c < 0.0 or a <= 0.0:
                raise ValueError("power coupling needs c >= 0, a > 0 (nondecreasing f)")
        elif self.f_family == "log":
            if len(params) != 1:
                raise ValueError("log coupling needs f_params = (c,)")
            if params[0] < 0.0:
                raise ValueError("log coupling needs c >= 0")
        elif params:
            raise ValueError("zero coupling takes no parameters")
        object.__setattr__(self, "f_params", params)

    # -- the coupling f and its derivatives (vectorized, m > 0) --------
    def f(self, m):
        m = np.asarray(m, dtype=float)
        if self.f_family == "zero":
            return np.zeros_like(m)
        if self.f_family == "power":
            c, a = self.f_params
            return c * m**a
        return self.f_params[0] * np.log(m)

    def f_prime(self, m):
        m = np.asarray(m, dtype=float)
        if self.f_family == "zero":
            return np.zeros_like(m)
        if self.f_family == "power":
            c, a = self.f_params
            return c * a * m ** (a - 1.0)
        return self.f_params[0] / m

    def f_second(self, m):
        m = np.asarray(m, dtype=float)
        if self.f_family == "zero":
            return np.zeros_like(m)
        if self.f_family == "power":
            c, a = self.f_params
            return c * a * (a - 1.0) * m ** (a - 2.0)
        return -self.f_params[0] / (m * m)

    def F(self, m):
        """Antiderivative of f with F(1) = 0; F(0) is the limit value."""
        m = np.asarray(m, dtype=float)
        if self.f_family == "zero":
            return np.zeros_like(m)
        if self.f_family == "power":
            c, a = self.f_params
            return c * (m ** (a + 1.0) - 1.0) / (a + 1.0)
        c = self.f_params[0]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = c * (m * np.log(m) - m + 1.0)
        return np.where(m == 0.0, c, out)

    def f_eps(self, m):
        return self.f(m) + self.epsilon * np.log(np.asarray(m, dtype=float))

    @property
    def c0_r0(self) -> tuple[float, float] | None:
        """(c0, r0) with f'(r) >= c0/r for r >= r0, when the hypothesis holds."""
        if self.f_family == "power":
            c, a = self.f_params
            return (c * a, 1.0) if c > 0 else None
        if self.f_family == "log":
            c = self.f_params[0]
            return (c, 1.0) if c > 0 else None
        return None

    def phi(self, r, tau: float = 1.0):
        """Inverse of r = tau*f(m) + eps*log m, computed in y = log m.

        Safeguarded Newton from y0 = r/eps with bisection fallback; the
        residual satisfies |tau f(m) + eps log m - r| <= 1e-12*max(1,|r|).
        """
        if self.epsilon <= 0.0:
            raise ValueError("phi requires eps > 0 (f^eps strictly increasing)")
        r = np.asarray(r, dtype=float)
        scalar = r.ndim == 0
        r = np.atleast_1d(r)
        eps = self.epsilon
        y = r / eps
        if self.f_family == "zero" or tau == 0.0 or self.f_params[0] == 0.0:
            m = np.exp(y)
            return float(m[0]) if scalar else m

        def g_and_gp(y):
            with np.errstate(over="ignore", invalid="ignore"):
                m = np.exp(y)
                g = tau * self.f(m) + eps * y - r
                gp = tau * self.f_prime(m) * m + eps
            # exp overflow means y is far above the root: clamp to +inf
            g = np.where(np.isfinite(g), g, np.inf)
            return g, gp

        # the entropic guess r/eps overshoots badly for large r; combine it
        # with the guess obtained by ignoring the entropy instead
        if self.f_family == "power":
            c, a = self.f_params
            with np.errstate(divide="ignore", invalid="ignore"):
                y_f = np.log(np.maximum(r, 1e-300) / (tau * c)) / a
            y = np.where(r > 0, np.minimum(y, y_f), y)
        elif self.f_family == "log":
            y = r / (tau * self.f_params[0] + eps)
        y = np.clip(y, -700.0, 700.0)
        # establish a bracket [lo, hi] around the root
        lo = np.minimum(y, 0.0)
        hi = np.maximum(y, 0.0)
        for _ in range(200):
            glo = g_and_gp(lo)[0]
            done = glo <= 0
            if done.all():
                break
            lo = np.where(done, lo, 2.0 * lo - hi - 1.0)
        for _ in range(200):
            ghi = g_and_gp(hi)[0]
            done = ghi >= 0
            if done.all():
                break
            hi = np.where(done, hi, 2.0 * hi - lo + 1.0)
        tol = 1e-12 * np.maximum(1.0, np.abs(r))
        for _ in range(100):
            g, gp = g_and_gp(y)
            if np.all(np.abs(g) <= tol):
                break
            lo = np.where(g < 0, np.maximum(lo, y), lo)
            hi = np.where(g > 0, np.minimum(hi, y), hi)
            with np.errstate(invalid="ignore"):
                y_new = y - g / gp
            outside = ~np.isfinite(y_new) | (y_new <= lo) | (y_new >= hi)
            y = np.where(outside, 0.5 * (lo + hi), y_new)
        else:
            g, _ = g_and_gp(y)
            if np.any(np.abs(g) > tol):
                raise RuntimeError("phi Newton failed to converge")
        m = np.exp(y)
        return float(m[0]) if scalar else m

    def phi_prime(self, m, tau: float = 1.0):
        """d(phi)/dr at r = tau f(m) + eps log m:  m / (tau m f'(m) + eps)."""
        m = np.asarray(m, dtype=float)
        return m / (tau * m * self.f_prime(m) + self.epsilon)


def phi(C: CouplingSpec, r):
    return C.phi(r)


def hppp_growth_documented(H: HamiltonianSpec) -> bool:
    """|H_ppp(p)| <= gamma (1+|p|)^{3(q-2)/2} holds for both families.

    Quadratic: H_ppp = 0.  Power with varpi > 0: H_ppp ~ |p|^{q-3} at
    infinity and is bounded near 0, dominated by the stated envelope.
    Verified here by dense sampling (documented check, not consumed by
    any solver).
    """
    p = np.concatenate([[0.0], np.logspace(-4, 3, 500)])
    try:
        third = np.abs(h_third(H, p))
    except DegenerateHamiltonianError:
        return False
    envelope = (1.0 + p) ** (1.5 * (H.q - 2.0))
    gamma = 10.0 * max(1.0, H.scale * H.q**3 * (1.0 + H.varpi) ** abs(H.q - 2.0))
    if H.varpi > 0:
        gamma *= max(1.0, H.varpi ** (H.q - 3.0), H.varpi ** (1.5 * (H.q - 2.0)))
    return bool(np.all(third <= gamma * np.maximum(envelope, 1.0) + 1e-9))


def l_eval_array(H: HamiltonianSpec, v: np.ndarray) -> np.ndarray:
    """Vectorized Fenchel conjugate (loops for non-quadratic families)."""
    v = np.asarray(v, dtype=float)
    if H.family == QUADRATIC:
        return v * v / (2.0 * H.scale)
    out = np.empty_like(v)
    flat = v.ravel()
    res = out.ravel()
    for i, vi in enumerate(flat):
        res[i] = legendre_L(H, float(vi))
    return out


def kinetic_density(H: HamiltonianSpec, m: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Perspective kinetic term m*L(w/m); 0 where m=0,w=0; +inf where m=0,w!=0."""
    m = np.asarray(m, dtype=float)
    w = np.asarray(w, dtype=float)
    if H.family == QUADRATIC:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = w * w / (2.0 * H.scale * m)
        out = np.where((m == 0.0) & (w == 0.0), 0.0, out)
        return np.where((m == 0.0) & (w != 0.0), np.inf, out)
    out = np.empty(np.broadcast(m, w).shape)
    mb, wb = np.broadcast_arrays(m, w)
    it = np.nditer(mb, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        mi, wi = mb[idx], wb[idx]
        if mi == 0.0:
            out[idx] = 0.0 if wi == 0.0 else np.inf
        else:
            out[idx] = mi * legendre_L(H, wi / mi)
    return out


def perspective_value(H: HamiltonianSpec, m: float, w: float) -> float:
    return float(kinetic_density(H, np.asarray(m), np.asarray(w)))


__all__ = [
    "HamiltonianSpec",
    "CouplingSpec",
    "DegenerateHamiltonianError",
    "h_eval",
    "h_third",
    "hpp_envelope",
    "coercivity_constants",
    "legendre_L",
    "l_eval_array",
    "kinetic_density",
    "phi",
    "hppp_growth_documented",
]
