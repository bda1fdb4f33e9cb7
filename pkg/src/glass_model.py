"""GLASS templates: bivariate polynomials in rectangular state variables.

A template maps an independent pair B = (B_R, B_I) to a dependent pair A = (A_R, A_I):

    A_C = sum_k g_k^C * (B_R - B_R0)^eR(k) * (B_I - B_I0)^eI(k)

VoltageDependent templates give currents as functions of voltages; CurrentDependent
templates give voltages as functions of currents.

Monomial ordering: degrees 0-2 are [1, B_R, B_I, B_R*B_I, B_R^2, B_I^2]; every higher degree d
appends the pure terms [B_R^d, B_I^d] followed by the mixed terms B_R^(d-1)*B_I ... B_R*B_I^(d-1).
"""

import enum
import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from split_circuit import DualStamp, LinearizedStamp, SplitPhasor

logger = logging.getLogger(__name__)

MAX_ORDER = 6


class GlassKind(enum.Enum):
    VOLTAGE_DEPENDENT = "voltage-dependent"
    CURRENT_DEPENDENT = "current-dependent"


def n_monomials(order):
    return (order + 1) * (order + 2) // 2


@lru_cache(maxsize=None)
def monomial_exponents(order):
    """Canonical (e_R, e_I) list for a template of the given order."""
    if not isinstance(order, (int, np.integer)) or order < 0:
        raise ValueError(f"order must be a non-negative integer, got {order!r}")
    if order > MAX_ORDER:
        raise ValueError(f"order {order} above the supported cap of {MAX_ORDER}")
    exponents = [(0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (0, 2)]
    for d in range(3, order + 1):
        exponents += [(d, 0), (0, d)]
        exponents += [(d - k, k) for k in range(1, d)]
    return tuple(e for e in exponents if sum(e) <= order)


def monomial_label(exponents, names=("B_R", "B_I")):
    parts = []
    for name, power in zip(names, exponents):
        if power == 1:
            parts.append(name)
        elif power > 1:
            parts.append(f"{name}^{power}")
    return "*".join(parts) if parts else "1"


def basis_vector(order, b, center=(0.0, 0.0)):
    """Monomials of (b - center), one entry per canonical exponent pair."""
    exps = np.array(monomial_exponents(order))
    d_r = float(tuple(b)[0]) - float(tuple(center)[0])
    d_i = float(tuple(b)[1]) - float(tuple(center)[1])
    return np.power(d_r, exps[:, 0]) * np.power(d_i, exps[:, 1])


def basis_matrix(order, b_r, b_i, center=(0.0, 0.0)):
    """Stacked basis vectors for arrays of B_R and B_I (one row per sample)."""
    exps = np.array(monomial_exponents(order))
    c_r, c_i = (float(c) for c in tuple(center))
    d_r = np.asarray(b_r, dtype=float)[:, None] - c_r
    d_i = np.asarray(b_i, dtype=float)[:, None] - c_i
    return np.power(d_r, exps[None, :, 0]) * np.power(d_i, exps[None, :, 1])


def basis_gradient(order, b, center=(0.0, 0.0)):
    """d(basis)/dB_R and d(basis)/dB_I by the exponent-shift rule."""
    exps = np.array(monomial_exponents(order))
    d_r = float(tuple(b)[0]) - float(tuple(center)[0])
    d_i = float(tuple(b)[1]) - float(tuple(center)[1])
    e_r, e_i = exps[:, 0], exps[:, 1]
    d_dr = e_r * np.power(d_r, np.maximum(e_r - 1, 0)) * np.power(d_i, e_i)
    d_di = e_i * np.power(d_r, e_r) * np.power(d_i, np.maximum(e_i - 1, 0))
    return d_dr, d_di


def _frozen_vector(values, length, name):
    array = np.array(values, dtype=float).ravel()
    if array.size != length:
        raise ValueError(f"{name} needs {length} coefficients, got {array.size}")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} coefficients must be finite")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class GlassTemplate:
    kind: GlassKind
    order: int
    center: SplitPhasor
    coeffs_r: np.ndarray
    coeffs_i: np.ndarray
    units: str = "per-unit"
    domain: tuple = None  # ((B_R min, max), (B_I min, max)) of the data the template was fit on

    def __post_init__(self):
        object.__setattr__(self, "kind", GlassKind(self.kind))
        monomial_exponents(self.order)
        if not isinstance(self.center, SplitPhasor):
            object.__setattr__(self, "center", SplitPhasor(*self.center))
        m = n_monomials(self.order)
        object.__setattr__(self, "coeffs_r", _frozen_vector(self.coeffs_r, m, "coeffs_r"))
        object.__setattr__(self, "coeffs_i", _frozen_vector(self.coeffs_i, m, "coeffs_i"))
        if self.units not in ("per-unit", "si"):
            raise ValueError(f"units must be 'per-unit' or 'si', got {self.units!r}")
        if self.domain is not None:
            (r_lo, r_hi), (i_lo, i_hi) = self.domain
            object.__setattr__(self, "domain", ((float(r_lo), float(r_hi)), (float(i_lo), float(i_hi))))

    def __eq__(self, other):
        if not isinstance(other, GlassTemplate):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.order == other.order
            and self.center == other.center
            and np.array_equal(self.coeffs_r, other.coeffs_r)
            and np.array_equal(self.coeffs_i, other.coeffs_i)
            and self.units == other.units
            and self.domain == other.domain
        )

    __hash__ = None

    @property
    def exponents(self):
        return monomial_exponents(self.order)

    @property
    def is_degenerate(self):
        return not (np.any(self.coeffs_r) or np.any(self.coeffs_i))

    @property
    def variable_names(self):
        if self.kind is GlassKind.VOLTAGE_DEPENDENT:
            return ("V_R", "V_I")
        return ("I_R", "I_I")

    def evaluate(self, b):
        phi = basis_vector(self.order, b, self.center)
        return SplitPhasor(self.coeffs_r @ phi, self.coeffs_i @ phi)

    def evaluate_many(self, b_r, b_i):
        phi = basis_matrix(self.order, b_r, b_i, self.center)
        return phi @ self.coeffs_r, phi @ self.coeffs_i

    def jacobian(self, b):
        d_dr, d_di = basis_gradient(self.order, b, self.center)
        return np.array([
            [self.coeffs_r @ d_dr, self.coeffs_r @ d_di],
            [self.coeffs_i @ d_dr, self.coeffs_i @ d_di],
        ])

    def stamp(self, prev, node=0):
        """Linearize about the previous iterate: A = jac @ B + hist.

        VoltageDependent -> LinearizedStamp (conductances, VCCS, current source).
        CurrentDependent -> DualStamp (resistances, CCVS, voltage source).
        """
        prev = prev if isinstance(prev, SplitPhasor) else SplitPhasor(*prev)
        jac = self.jacobian(prev)
        a = self.evaluate(prev)
        hist = a.as_array() - jac @ prev.as_array()
        if self.kind is GlassKind.VOLTAGE_DEPENDENT:
            return LinearizedStamp(node, jac, tuple(hist))
        return DualStamp(node, jac, tuple(hist))

    def derivatives(self):
        """Partial derivatives d^n A / dB_R^(n-k) dB_I^k at the center, keyed by exponent pair."""
        result = {}
        for e, g_r, g_i in zip(self.exponents, self.coeffs_r, self.coeffs_i):
            scale = math.factorial(e[0]) * math.factorial(e[1])
            result[e] = (g_r * scale, g_i * scale)
        return result

    @classmethod
    def from_derivatives(cls, kind, order, center, derivatives, **kwargs):
        """Build the Taylor-form template from its derivative tensor at the center."""
        exps = monomial_exponents(order)
        coeffs_r = np.zeros(len(exps))
        coeffs_i = np.zeros(len(exps))
        for k, e in enumerate(exps):
            d_r, d_i = derivatives.get(e, (0.0, 0.0))
            # 1/n! * C(n, k) == 1 / ((n-k)! k!)
            scale = math.factorial(e[0]) * math.factorial(e[1])
            coeffs_r[k] = d_r / scale
            coeffs_i[k] = d_i / scale
        return cls(kind, order, center, coeffs_r, coeffs_i, **kwargs)

    def recenter(self, center):
        """Re-expand the same polynomial about a new center."""
        center = center if isinstance(center, SplitPhasor) else SplitPhasor(*center)
        shift_r = center.re - self.center.re
        shift_i = center.im - self.center.im
        index = {e: k for k, e in enumerate(self.exponents)}
        coeffs_r = np.zeros(len(index))
        coeffs_i = np.zeros(len(index))
        # with x = B - new center and s = new center - old center:
        # (x + s)^a (y + t)^b = sum C(a,p) C(b,q) s^(a-p) t^(b-q) x^p y^q
        for (a, b), g_r, g_i in zip(self.exponents, self.coeffs_r, self.coeffs_i):
            if g_r == 0.0 and g_i == 0.0:
                continue
            for p in range(a + 1):
                for q in range(b + 1):
                    weight = math.comb(a, p) * math.comb(b, q) * shift_r ** (a - p) * shift_i ** (b - q)
                    k = index[(p, q)]
                    coeffs_r[k] += weight * g_r
                    coeffs_i[k] += weight * g_i
        return GlassTemplate(self.kind, self.order, center, coeffs_r, coeffs_i, self.units, self.domain)

    def absolute(self):
        return self.recenter(SplitPhasor(0.0, 0.0))

    def rescale(self, b_scale, a_scale, units):
        """Same device in other units: A'(B') = A(B' * b_scale) / a_scale."""
        powers = np.array([e[0] + e[1] for e in self.exponents])
        factor = np.power(float(b_scale), powers) / float(a_scale)
        domain = None
        if self.domain is not None:
            domain = tuple((lo / b_scale, hi / b_scale) for lo, hi in self.domain)
        center = SplitPhasor(self.center.re / b_scale, self.center.im / b_scale)
        return GlassTemplate(self.kind, self.order, center, self.coeffs_r * factor,
                             self.coeffs_i * factor, units, domain)

    def contains(self, b, rtol=1e-9):
        """Whether b lies inside the training domain (always True without a domain)."""
        if self.domain is None:
            return True
        for value, (lo, hi) in zip(tuple(b), self.domain):
            slack = rtol * max(1.0, abs(lo), abs(hi))
            if value < lo - slack or value > hi + slack:
                return False
        return True

    def coefficient_table(self):
        """Rows of (label, exponents, g_R, g_I) for reports."""
        names = self.variable_names
        return [
            (monomial_label(e, names), e, float(g_r), float(g_i))
            for e, g_r, g_i in zip(self.exponents, self.coeffs_r, self.coeffs_i)
        ]


def invert(t, target, guess=(0.0, 0.0), tol=1e-12, max_iter=50):
    """Find B with t.evaluate(B) == target by Newton iteration on the template."""
    target = np.asarray(tuple(target), dtype=float)
    b = np.asarray(tuple(guess), dtype=float)
    for _ in range(max_iter):
        residual = t.evaluate(b).as_array() - target
        if np.max(np.abs(residual)) <= tol * max(1.0, np.max(np.abs(target))):
            return SplitPhasor(*b)
        b = b - np.linalg.solve(t.jacobian(b), residual)
    logger.warning("template inversion did not converge, residual %.3e", np.max(np.abs(residual)))
    return SplitPhasor(*b)
