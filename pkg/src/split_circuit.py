"""Split equivalent circuit: a complex network realized as two coupled real sub-circuits.

Unknown ordering inside a SplitSystem with n buses and c auxiliary unknowns:

    rows 0 .. n-1        real-voltage rows   (V_R of bus k at row k)
    rows n .. 2n-1       imag-voltage rows   (V_I of bus k at row n + k)
    rows 2n .. 2n+c-1    auxiliary rows      (source currents, PV reactive power, ...)

Sign convention: a device current is positive when it flows out of the bus into the device.
A source that delivers power to the network therefore carries a negative device current.
Each bus row states KCL: the sum of device and branch currents leaving the bus is zero.
"""

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from errors import SingularSystemError

logger = logging.getLogger(__name__)

NodeId = int

PIVOT_RTOL = 1e-12
RESIDUAL_RTOL = 1e-9


def _check_finite(name, *values):
    for value in values:
        if not math.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class SplitPhasor:
    """A complex quantity stored as its real and imaginary parts."""

    re: float
    im: float

    def __post_init__(self):
        object.__setattr__(self, "re", float(self.re))
        object.__setattr__(self, "im", float(self.im))
        _check_finite("SplitPhasor", self.re, self.im)

    @classmethod
    def from_complex(cls, z):
        return cls(z.real, z.imag)

    @classmethod
    def from_polar(cls, magnitude, angle_deg):
        angle = math.radians(angle_deg)
        return cls(magnitude * math.cos(angle), magnitude * math.sin(angle))

    def to_complex(self):
        return complex(self.re, self.im)

    def magnitude(self):
        return math.hypot(self.re, self.im)

    def magnitude_squared(self):
        return self.re * self.re + self.im * self.im

    def angle(self):
        """Angle in degrees."""
        return math.degrees(math.atan2(self.im, self.re))

    def rotate(self, angle_deg):
        return SplitPhasor.from_complex(self.to_complex() * complex(
            math.cos(math.radians(angle_deg)), math.sin(math.radians(angle_deg))))

    def as_array(self):
        return np.array([self.re, self.im])

    def __iter__(self):
        yield self.re
        yield self.im


def _as_matrix(values, shape, name):
    array = np.array(values, dtype=float).reshape(shape)
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} entries must be finite")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class LinearizedStamp:
    """Per-iteration contribution of a one-port device: I = jac @ V + hist."""

    node: NodeId
    jac: np.ndarray
    hist: tuple

    def __post_init__(self):
        object.__setattr__(self, "jac", _as_matrix(self.jac, (2, 2), "jac"))
        hist = tuple(float(h) for h in self.hist)
        if len(hist) != 2:
            raise ValueError("hist must be a (J_R, J_I) pair")
        _check_finite("hist", *hist)
        object.__setattr__(self, "hist", hist)

    def current(self, v):
        """Current predicted by the linear model at voltage v."""
        i = self.jac @ np.asarray(tuple(v), dtype=float) + np.asarray(self.hist)
        return SplitPhasor(i[0], i[1])


@dataclass(frozen=True, eq=False)
class DualStamp:
    """Current-dependent one-port: V = jac @ I + hist (resistance, CCVS, independent voltage source)."""

    node: NodeId
    jac: np.ndarray
    hist: tuple

    def __post_init__(self):
        object.__setattr__(self, "jac", _as_matrix(self.jac, (2, 2), "jac"))
        hist = tuple(float(h) for h in self.hist)
        _check_finite("hist", *hist)
        object.__setattr__(self, "hist", hist)

    def to_augmented(self, aux):
        """Realize as a branch whose two auxiliary unknowns are its (I_R, I_I)."""
        return AugmentedStamp(
            node=self.node,
            aux=tuple(aux),
            jac=np.zeros((2, 2)),
            hist=(0.0, 0.0),
            coupling=np.eye(2),
            c_v=np.eye(2),
            c_aux=-self.jac,
            rhs=self.hist,
        )


@dataclass(frozen=True, eq=False)
class AugmentedStamp:
    """A device with k auxiliary unknowns and k constraint rows.

    Bus rows:        jac @ V + coupling @ x_aux + hist        (added to KCL)
    Constraint rows: c_v @ V + c_aux @ x_aux = rhs
    """

    node: NodeId
    aux: tuple
    jac: np.ndarray
    hist: tuple
    coupling: np.ndarray
    c_v: np.ndarray
    c_aux: np.ndarray
    rhs: tuple

    def __post_init__(self):
        k = len(self.aux)
        object.__setattr__(self, "aux", tuple(int(a) for a in self.aux))
        object.__setattr__(self, "jac", _as_matrix(self.jac, (2, 2), "jac"))
        object.__setattr__(self, "coupling", _as_matrix(self.coupling, (2, k), "coupling"))
        object.__setattr__(self, "c_v", _as_matrix(self.c_v, (k, 2), "c_v"))
        object.__setattr__(self, "c_aux", _as_matrix(self.c_aux, (k, k), "c_aux"))
        hist = tuple(float(h) for h in self.hist)
        rhs = tuple(float(r) for r in np.ravel(self.rhs))
        if len(rhs) != k:
            raise ValueError(f"rhs must have {k} entries")
        _check_finite("hist", *hist)
        _check_finite("rhs", *rhs)
        object.__setattr__(self, "hist", hist)
        object.__setattr__(self, "rhs", rhs)


class SplitSystem:
    """Dense real linear system of one Newton iteration."""

    def __init__(self, n_buses, n_aux=0):
        if n_buses < 0 or n_aux < 0:
            raise ValueError("bus and auxiliary counts must be non-negative")
        self.n_buses = n_buses
        self.n_aux = n_aux
        self.dimension = 2 * n_buses + n_aux
        self.matrix = np.zeros((self.dimension, self.dimension))
        self.rhs = np.zeros(self.dimension)

    # Row bookkeeping

    def _check_node(self, node):
        if not isinstance(node, (int, np.integer)) or not 0 <= node < self.n_buses:
            raise ValueError(f"invalid node {node!r} for a {self.n_buses}-bus system")

    def row_r(self, node):
        return node

    def row_i(self, node):
        return self.n_buses + node

    def aux_row(self, k):
        if not 0 <= k < self.n_aux:
            raise ValueError(f"invalid auxiliary index {k}")
        return 2 * self.n_buses + k

    def row_label(self, row):
        n = self.n_buses
        if row < n:
            return f"V_R[bus {row}]"
        if row < 2 * n:
            return f"V_I[bus {row - n}]"
        return f"aux {row - 2 * n}"

    def labels(self):
        return [self.row_label(k) for k in range(self.dimension)]

    # Stamps

    def stamp_conductance(self, a, b, g):
        """Two-terminal conductance between a and b (b=None is ground), in both sub-circuits."""
        _check_finite("conductance", g)
        if a == b:
            raise ValueError("conductance terminals must differ")
        self._check_node(a)
        if b is not None:
            self._check_node(b)
        for offset in (0, self.n_buses):
            ra = a + offset
            self.matrix[ra, ra] += g
            if b is not None:
                rb = b + offset
                self.matrix[rb, rb] += g
                self.matrix[ra, rb] -= g
                self.matrix[rb, ra] -= g
        return self

    def stamp_admittance(self, a, b, y):
        """Complex series admittance y = g + jb between a and b (b=None is ground).

        The conductance g sits inside each sub-circuit; the susceptance b couples the
        sub-circuits as voltage-controlled current sources.
        """
        y = complex(y)
        _check_finite("admittance", y.real, y.imag)
        if a == b:
            raise ValueError("admittance terminals must differ")
        self._check_node(a)
        if b is not None:
            self._check_node(b)
        self.stamp_conductance(a, b, y.real)
        susceptance = y.imag
        if susceptance == 0.0:
            return self
        terminals = [(a, 1.0)] + ([(b, -1.0)] if b is not None else [])
        for node, sign in terminals:
            for other, other_sign in terminals:
                coeff = sign * other_sign * susceptance
                # I_R = g dV_R - b dV_I ; I_I = b dV_R + g dV_I
                self.matrix[self.row_r(node), self.row_i(other)] -= coeff
                self.matrix[self.row_i(node), self.row_r(other)] += coeff
        return self

    def stamp_device(self, s):
        """Linearized one-port device: jac into the bus block, hist moved to the rhs."""
        self._check_node(s.node)
        rows = (self.row_r(s.node), self.row_i(s.node))
        self.matrix[np.ix_(rows, rows)] += s.jac
        self.rhs[rows[0]] -= s.hist[0]
        self.rhs[rows[1]] -= s.hist[1]
        return self

    def stamp_current_source(self, node, j_r, j_i):
        """Independent device current (positive leaving the bus)."""
        return self.stamp_device(LinearizedStamp(node, np.zeros((2, 2)), (j_r, j_i)))

    def stamp_augmented(self, s):
        self._check_node(s.node)
        bus_rows = [self.row_r(s.node), self.row_i(s.node)]
        aux_rows = [self.aux_row(k) for k in s.aux]
        self.matrix[np.ix_(bus_rows, bus_rows)] += s.jac
        self.rhs[bus_rows[0]] -= s.hist[0]
        self.rhs[bus_rows[1]] -= s.hist[1]
        self.matrix[np.ix_(bus_rows, aux_rows)] += s.coupling
        self.matrix[np.ix_(aux_rows, bus_rows)] += s.c_v
        self.matrix[np.ix_(aux_rows, aux_rows)] += s.c_aux
        self.rhs[aux_rows] += np.asarray(s.rhs)
        return self

    def stamp(self, s):
        if isinstance(s, AugmentedStamp):
            return self.stamp_augmented(s)
        return self.stamp_device(s)

    # Solve

    def check_structure(self):
        empty = np.flatnonzero(~np.any(self.matrix != 0.0, axis=1))
        if empty.size:
            row = int(empty[0])
            raise SingularSystemError(row, self.row_label(row), 0.0)

    def solve(self):
        return solve_linear(self)


def solve_linear(sys):
    """Dense LU with partial pivoting; rejects pivots below PIVOT_RTOL of the largest."""
    if sys.dimension == 0:
        return np.zeros(0)
    sys.check_structure()

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(sys.matrix)

    pivots = np.abs(np.diag(lu))
    largest = pivots.max()
    bad = np.flatnonzero(pivots <= PIVOT_RTOL * largest)
    if largest == 0.0 or bad.size:
        row = int(bad[0]) if bad.size else 0
        raise SingularSystemError(row, sys.row_label(row), float(pivots[row]))

    x = lu_solve((lu, piv), sys.rhs)
    limit = RESIDUAL_RTOL * max(1.0, np.max(np.abs(sys.rhs)))
    residual = sys.matrix @ x - sys.rhs
    if np.max(np.abs(residual)) > limit:
        # one step of iterative refinement
        x = x - lu_solve((lu, piv), residual)
        residual = sys.matrix @ x - sys.rhs
        if np.max(np.abs(residual)) > limit:
            logger.warning("linear solve residual %.3e above %.3e", np.max(np.abs(residual)), limit)
    return x
