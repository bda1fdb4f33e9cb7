"""Device models for the split-circuit power flow.

Every device computes its exact split current (positive out of the bus into the device) and a
linearized stamp at a given iterate. Loads defined by powers (PQ, ZIP, exponential) share the
PQ current law

    I_R = (P V_R + Q V_I) / (V_R^2 + V_I^2)
    I_I = (P V_I - Q V_R) / (V_R^2 + V_I^2)

and the linearization I = jac @ V + hist with hist = I(V_prev) - jac @ V_prev.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from errors import LoadDomainError, TorqueCapabilityError, VoltageCollapseError
from glass_model import GlassKind, invert
from split_circuit import AugmentedStamp, LinearizedStamp, SplitPhasor

logger = logging.getLogger(__name__)

# per-unit voltage floor for PQ-type divisions
EPS_V = 1e-4


def _phasor(v):
    return v if isinstance(v, SplitPhasor) else SplitPhasor(*v)


def _linearized(node, current, jac, v):
    hist = current.as_array() - jac @ v.as_array()
    return LinearizedStamp(node, jac, tuple(hist))


def _finite(**values):
    for name, value in values.items():
        if not math.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value!r}")


# PQ load

@dataclass(frozen=True)
class PQLoad:
    P: float
    Q: float

    def __post_init__(self):
        _finite(P=self.P, Q=self.Q)


def _check_voltage(v, floor=EPS_V):
    magnitude = v.magnitude()
    if magnitude <= floor:
        raise VoltageCollapseError(magnitude, floor)
    return magnitude


def pq_currents(load, v, floor=EPS_V):
    v = _phasor(v)
    _check_voltage(v, floor)
    m2 = v.magnitude_squared()
    return SplitPhasor(
        (load.P * v.re + load.Q * v.im) / m2,
        (load.P * v.im - load.Q * v.re) / m2,
    )


def pq_jacobian(P, Q, v):
    """Analytic partials of the PQ current law at v."""
    m2 = v.magnitude_squared()
    m4 = m2 * m2
    diff = v.re * v.re - v.im * v.im
    cross = v.re * v.im
    d_rr = (-P * diff - 2.0 * Q * cross) / m4
    d_ri = (Q * diff - 2.0 * P * cross) / m4
    return np.array([[d_rr, d_ri], [d_ri, -d_rr]])


def pq_stamp(load, v_prev, node=0, floor=EPS_V):
    v_prev = _phasor(v_prev)
    current = pq_currents(load, v_prev, floor)
    return _linearized(node, current, pq_jacobian(load.P, load.Q, v_prev), v_prev)


def _power_law_stamp(P, Q, dP, dQ, v, node, floor):
    """Stamp of a load whose powers depend on |V|, with the chain-rule terms of dP/d|V|, dQ/d|V|."""
    current = pq_currents(PQLoad(P, Q), v, floor)
    jac = pq_jacobian(P, Q, v)
    if dP != 0.0 or dQ != 0.0:
        m2 = v.magnitude_squared()
        magnitude = math.sqrt(m2)
        # dI/dP = (V_R, V_I)/|V|^2, dI/dQ = (V_I, -V_R)/|V|^2, d|V|/dV = (V_R, V_I)/|V|
        d_power = np.array([
            (v.re * dP + v.im * dQ) / m2,
            (v.im * dP - v.re * dQ) / m2,
        ])
        d_mag = np.array([v.re, v.im]) / magnitude
        jac = jac + np.outer(d_power, d_mag)
    return _linearized(node, current, jac, v)


# ZIP load

@dataclass(frozen=True)
class ZIPLoad:
    P0: float
    Q0: float
    a_p: float = 0.0
    b_p: float = 0.0
    c_p: float = 1.0
    a_q: float = 0.0
    b_q: float = 0.0
    c_q: float = 1.0
    v_nom: float = 1.0

    def __post_init__(self):
        _finite(P0=self.P0, Q0=self.Q0, a_p=self.a_p, b_p=self.b_p, c_p=self.c_p,
                a_q=self.a_q, b_q=self.b_q, c_q=self.c_q)
        for label, total in (("p", self.a_p + self.b_p + self.c_p), ("q", self.a_q + self.b_q + self.c_q)):
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"ZIP {label} coefficients must sum to 1, got {total!r}")
        if not self.v_nom > 0:
            raise ValueError("v_nom must be positive")


def zip_power(load, v_mag):
    if v_mag < 0:
        raise ValueError("voltage magnitude must be non-negative")
    x = v_mag / load.v_nom
    P = load.P0 * (load.a_p * x * x + load.b_p * x + load.c_p)
    Q = load.Q0 * (load.a_q * x * x + load.b_q * x + load.c_q)
    return P, Q


def zip_power_derivative(load, v_mag):
    x = v_mag / load.v_nom
    dP = load.P0 * (2.0 * load.a_p * x + load.b_p) / load.v_nom
    dQ = load.Q0 * (2.0 * load.a_q * x + load.b_q) / load.v_nom
    return dP, dQ


def zip_currents(load, v, floor=EPS_V):
    v = _phasor(v)
    magnitude = _check_voltage(v, floor)
    return pq_currents(PQLoad(*zip_power(load, magnitude)), v, floor)


def zip_stamp(load, v_prev, node=0, floor=EPS_V):
    v_prev = _phasor(v_prev)
    magnitude = _check_voltage(v_prev, floor)
    P, Q = zip_power(load, magnitude)
    dP, dQ = zip_power_derivative(load, magnitude)
    return _power_law_stamp(P, Q, dP, dQ, v_prev, node, floor)


# Exponential load

@dataclass(frozen=True)
class ExpLoad:
    P0: float
    Q0: float
    p_v: float
    q_v: float
    v_nom: float = 1.0

    def __post_init__(self):
        _finite(P0=self.P0, Q0=self.Q0, p_v=self.p_v, q_v=self.q_v)
        if not self.v_nom > 0:
            raise ValueError("v_nom must be positive")


def exp_power(load, v_mag):
    if v_mag < 0:
        raise ValueError("voltage magnitude must be non-negative")
    if v_mag == 0 and (load.p_v < 0 or load.q_v < 0):
        raise LoadDomainError("exponential load with a negative exponent is undefined at |V| = 0")
    x = v_mag / load.v_nom
    return load.P0 * x ** load.p_v, load.Q0 * x ** load.q_v


def exp_power_derivative(load, v_mag):
    x = v_mag / load.v_nom
    dP = load.P0 * load.p_v * x ** (load.p_v - 1.0) / load.v_nom if load.p_v else 0.0
    dQ = load.Q0 * load.q_v * x ** (load.q_v - 1.0) / load.v_nom if load.q_v else 0.0
    return dP, dQ


def exp_currents(load, v, floor=EPS_V):
    v = _phasor(v)
    magnitude = _check_voltage(v, floor)
    return pq_currents(PQLoad(*exp_power(load, magnitude)), v, floor)


def exp_stamp(load, v_prev, node=0, floor=EPS_V):
    v_prev = _phasor(v_prev)
    magnitude = _check_voltage(v_prev, floor)
    P, Q = exp_power(load, magnitude)
    dP, dQ = exp_power_derivative(load, magnitude)
    return _power_law_stamp(P, Q, dP, dQ, v_prev, node, floor)


# Induction motor (steady state, rotor leakage omitted)

@dataclass(frozen=True)
class IMParams:
    """Per-phase equivalent circuit in ohms; omega_s in rad/s."""

    R_s: float
    X_s: float
    X_m: float
    R_r: float
    p: int = 4
    omega_s: float = 2 * math.pi * 60

    def __post_init__(self):
        for name in ("R_s", "X_s", "X_m", "R_r", "omega_s"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        if int(self.p) != self.p or self.p < 2 or self.p % 2:
            raise ValueError(f"number of poles must be an even integer >= 2, got {self.p!r}")

    @property
    def torque_constant(self):
        """3 p R_r / (2 omega_s): torque = constant * |I_r|^2 / s."""
        return 3.0 * self.p * self.R_r / (2.0 * self.omega_s)


def im_gammas(params, torque, v):
    v = _phasor(v)
    z_s2 = params.R_s ** 2 + params.X_s ** 2
    xm2 = params.X_m ** 2
    g1 = xm2 * z_s2
    g2 = xm2 * (2.0 * params.R_s * params.R_r - params.torque_constant / torque * v.magnitude_squared())
    g3 = params.R_r ** 2 * (z_s2 + 2.0 * params.X_s * params.X_m + xm2)
    return g1, g2, g3


def im_breakdown_torque(params, v):
    """Largest torque with a real slip root at this voltage (discriminant zero)."""
    v = _phasor(v)
    z_s2 = params.R_s ** 2 + params.X_s ** 2
    g1 = params.X_m ** 2 * z_s2
    g3 = params.R_r ** 2 * (z_s2 + 2.0 * params.X_s * params.X_m + params.X_m ** 2)
    denom = 2.0 * params.R_s * params.R_r + 2.0 * math.sqrt(g1 * g3) / params.X_m ** 2
    return params.torque_constant * v.magnitude_squared() / denom


def im_slip(params, torque, v):
    """Smaller root in (0, 1] of g1 s^2 + g2 s + g3 = 0 (stable motoring branch)."""
    v = _phasor(v)
    if not (math.isfinite(torque) and torque > 0):
        raise ValueError(f"torque must be positive, got {torque!r}")
    if v.magnitude() == 0:
        raise VoltageCollapseError(0.0, 0.0)
    g1, g2, g3 = im_gammas(params, torque, v)
    disc = g2 * g2 - 4.0 * g1 * g3
    if disc < 0 or g2 >= 0:
        raise TorqueCapabilityError(torque, im_breakdown_torque(params, v), "no real motoring slip")
    # numerically stable form of (-g2 - sqrt(disc)) / (2 g1)
    slip = 2.0 * g3 / (-g2 + math.sqrt(disc))
    if not 0 < slip <= 1:
        raise TorqueCapabilityError(torque, im_breakdown_torque(params, v), f"slip {slip:.4g} outside (0, 1]")
    return slip


def _im_impedance(params, slip):
    rotor = params.R_r / slip
    parallel = (1j * params.X_m * rotor) / (rotor + 1j * params.X_m)
    return params.R_s + 1j * params.X_s + parallel


def im_admittance(params, slip):
    if not 0 < slip <= 1:
        raise ValueError(f"slip must lie in (0, 1], got {slip!r}")
    y = 1.0 / _im_impedance(params, slip)
    return y.real, y.imag


def im_torque(params, slip, v):
    """Electric torque from the rotor-branch current; slip may be a numpy array."""
    v = _phasor(v)
    slip = np.asarray(slip, dtype=float)
    rotor = params.R_r / slip
    z = params.R_s + 1j * params.X_s + (1j * params.X_m * rotor) / (rotor + 1j * params.X_m)
    i_rotor = v.to_complex() / z * (1j * params.X_m) / (rotor + 1j * params.X_m)
    torque = params.torque_constant * np.abs(i_rotor) ** 2 / slip
    return float(torque) if torque.ndim == 0 else torque


@dataclass(frozen=True)
class IMOperatingPoint:
    torque: float
    slip: float
    admittance: tuple


def im_operating_point(params, torque, v):
    """Slip and equivalent admittance u + jb the motor settles at for this voltage."""
    slip = im_slip(params, torque, v)
    return IMOperatingPoint(float(torque), slip, im_admittance(params, slip))


def im_currents(params, torque, v):
    v = _phasor(v)
    u, b = im_operating_point(params, torque, v).admittance
    return SplitPhasor(v.re * u - v.im * b, v.im * u + v.re * b)



def im_jacobian(params, torque, v):
    """Analytic partials of the motor current; the admittance depends on |V|^2 through the slip."""
    v = _phasor(v)
    slip = im_slip(params, torque, v)
    g1, g2, _ = im_gammas(params, torque, v)
    y = 1.0 / _im_impedance(params, slip)

    rotor = params.R_r / slip
    dz_drotor = -params.X_m ** 2 / (rotor + 1j * params.X_m) ** 2
    dy_dslip = -y * y * dz_drotor * (-params.R_r / slip ** 2)
    # implicit derivative of the slip quadratic with respect to |V|^2
    dslip_dm2 = params.X_m ** 2 * params.torque_constant / torque * slip / (2.0 * g1 * slip + g2)
    dy_dm2 = dy_dslip * dslip_dm2

    vc = v.to_complex()
    di_dvr = y + vc * dy_dm2 * 2.0 * v.re
    di_dvi = 1j * y + vc * dy_dm2 * 2.0 * v.im
    return np.array([[di_dvr.real, di_dvi.real], [di_dvr.imag, di_dvi.imag]])


def im_stamp(params, torque, v_prev, node=0):
    v_prev = _phasor(v_prev)
    return _linearized(node, im_currents(params, torque, v_prev), im_jacobian(params, torque, v_prev), v_prev)


# Network elements

@dataclass(frozen=True)
class Branch:
    """Pi-model line: series r + jx, total shunt susceptance b_sh split between both ends."""

    from_bus: int
    to_bus: int
    r: float
    x: float
    b_sh: float = 0.0

    def __post_init__(self):
        _finite(r=self.r, x=self.x, b_sh=self.b_sh)
        if self.r < 0:
            raise ValueError("branch resistance must be non-negative")
        if self.r == 0 and self.x == 0:
            raise ValueError("branch impedance must be non-zero")
        if self.from_bus == self.to_bus:
            raise ValueError("branch endpoints must differ")

    @property
    def series_admittance(self):
        return 1.0 / complex(self.r, self.x)

    def currents(self, v_from, v_to):
        """Currents leaving the from bus and the to bus into the branch."""
        y = self.series_admittance
        shunt = 0.5j * self.b_sh
        vf, vt = _phasor(v_from).to_complex(), _phasor(v_to).to_complex()
        return (SplitPhasor.from_complex(y * (vf - vt) + shunt * vf),
                SplitPhasor.from_complex(y * (vt - vf) + shunt * vt))


def branch_stamp(sys, branch):
    sys.stamp_admittance(branch.from_bus, branch.to_bus, branch.series_admittance)
    if branch.b_sh:
        sys.stamp_admittance(branch.from_bus, None, 0.5j * branch.b_sh)
        sys.stamp_admittance(branch.to_bus, None, 0.5j * branch.b_sh)
    return sys


class Device:
    """Interface shared by everything attached to a bus."""

    n_aux = 0
    is_linear = False
    type_name = "device"

    def __init__(self, bus):
        self.bus = bus

    def initial_aux(self):
        return (0.0,) * self.n_aux

    def currents(self, v, aux=()):
        raise NotImplementedError

    def linearize(self, v, aux=(), aux_index=()):
        raise NotImplementedError

    def constraint_residual(self, v, aux):
        return ()

    def infer_aux(self, v, mismatch):
        """Auxiliary values implied by a voltage and the rest of the bus current."""
        return self.initial_aux()


@dataclass(frozen=True)
class SlackSource:
    v_set: SplitPhasor

    def __post_init__(self):
        object.__setattr__(self, "v_set", _phasor(self.v_set))
        if not self.v_set.magnitude() > 0:
            raise ValueError("slack voltage magnitude must be positive")


@dataclass(frozen=True)
class PVBus:
    P: float
    v_mag: float

    def __post_init__(self):
        _finite(P=self.P, v_mag=self.v_mag)
        if not self.v_mag > 0:
            raise ValueError("PV voltage setpoint must be positive")


def slack_stamp(source, node, aux_index):
    """Both voltage components pinned by two constraint rows; the source current is the auxiliary."""
    return AugmentedStamp(
        node=node, aux=aux_index,
        jac=np.zeros((2, 2)), hist=(0.0, 0.0),
        coupling=np.eye(2), c_v=np.eye(2), c_aux=np.zeros((2, 2)),
        rhs=(source.v_set.re, source.v_set.im),
    )


def pv_currents(pv, v, q, floor=EPS_V):
    """Generator injecting P + jQ: its device current is that of a PQ load (-P, -Q)."""
    return pq_currents(PQLoad(-pv.P, -q), v, floor)


def pv_stamp(pv, v_prev, q_prev, node, aux_index, floor=EPS_V):
    """Fixed P injection plus the linearized row V_R^2 + V_I^2 = v_mag^2; Q is the free auxiliary."""
    v_prev = _phasor(v_prev)
    current = pv_currents(pv, v_prev, q_prev, floor)
    jac = pq_jacobian(-pv.P, -q_prev, v_prev)
    m2 = v_prev.magnitude_squared()
    d_q = np.array([[-v_prev.im / m2], [v_prev.re / m2]])
    hist = current.as_array() - jac @ v_prev.as_array() - d_q[:, 0] * q_prev
    return AugmentedStamp(
        node=node, aux=aux_index,
        jac=jac, hist=tuple(hist),
        coupling=d_q,
        c_v=[[2.0 * v_prev.re, 2.0 * v_prev.im]],
        c_aux=[[0.0]],
        rhs=(pv.v_mag ** 2 + m2,),
    )


class PQDevice(Device):
    type_name = "pq"

    def __init__(self, bus, load):
        super().__init__(bus)
        self.load = load
        self.is_linear = load.P == 0 and load.Q == 0

    def currents(self, v, aux=()):
        return pq_currents(self.load, v)

    def linearize(self, v, aux=(), aux_index=()):
        return pq_stamp(self.load, v, self.bus)


class ZIPDevice(Device):
    type_name = "zip"

    def __init__(self, bus, load):
        super().__init__(bus)
        self.load = load

    def currents(self, v, aux=()):
        return zip_currents(self.load, v)

    def linearize(self, v, aux=(), aux_index=()):
        return zip_stamp(self.load, v, self.bus)


class ExpDevice(Device):
    type_name = "exp"

    def __init__(self, bus, load):
        super().__init__(bus)
        self.load = load

    def currents(self, v, aux=()):
        return exp_currents(self.load, v)

    def linearize(self, v, aux=(), aux_index=()):
        return exp_stamp(self.load, v, self.bus)


class InductionMotor(Device):
    """Motor in SI units (volts, amperes); wrap in PerUnitAdapter for a per-unit solve."""

    type_name = "im"

    def __init__(self, bus, params, torque):
        super().__init__(bus)
        self.params = params
        self.torque = torque

    def currents(self, v, aux=()):
        return im_currents(self.params, self.torque, v)

    def linearize(self, v, aux=(), aux_index=()):
        return im_stamp(self.params, self.torque, v, self.bus)


class PerUnitAdapter(Device):
    """Runs an SI-native one-port device inside a per-unit solve."""

    def __init__(self, inner, v_base, i_base):
        super().__init__(inner.bus)
        self.inner = inner
        self.v_base = float(v_base)
        self.i_base = float(i_base)
        self.is_linear = inner.is_linear
        self.type_name = inner.type_name

    def currents(self, v, aux=()):
        v = _phasor(v)
        i = self.inner.currents(SplitPhasor(v.re * self.v_base, v.im * self.v_base))
        return SplitPhasor(i.re / self.i_base, i.im / self.i_base)

    def linearize(self, v, aux=(), aux_index=()):
        v = _phasor(v)
        s = self.inner.linearize(SplitPhasor(v.re * self.v_base, v.im * self.v_base))
        return LinearizedStamp(s.node, s.jac * (self.v_base / self.i_base),
                               (s.hist[0] / self.i_base, s.hist[1] / self.i_base))


class SlackDevice(Device):
    type_name = "slack"
    n_aux = 2
    is_linear = True

    def __init__(self, bus, source):
        super().__init__(bus)
        self.source = source

    def currents(self, v, aux=()):
        return SplitPhasor(aux[0], aux[1])

    def linearize(self, v, aux=(), aux_index=()):
        return slack_stamp(self.source, self.bus, aux_index)

    def constraint_residual(self, v, aux):
        v = _phasor(v)
        return (v.re - self.source.v_set.re, v.im - self.source.v_set.im)

    def infer_aux(self, v, mismatch):
        # the source absorbs whatever the rest of the bus draws
        return (-mismatch.re, -mismatch.im)


class PVDevice(Device):
    type_name = "pv"
    n_aux = 1

    def __init__(self, bus, pv):
        super().__init__(bus)
        self.pv = pv

    def currents(self, v, aux=()):
        return pv_currents(self.pv, v, aux[0])

    def linearize(self, v, aux=(), aux_index=()):
        return pv_stamp(self.pv, v, aux[0], self.bus, aux_index)

    def constraint_residual(self, v, aux):
        return (_phasor(v).magnitude() - self.pv.v_mag,)

    def infer_aux(self, v, mismatch):
        """Least-squares reactive injection closing the bus mismatch."""
        v = _phasor(v)
        m2 = v.magnitude_squared()
        base = pv_currents(self.pv, v, 0.0)
        r = np.array([mismatch.re + base.re, mismatch.im + base.im])
        d = np.array([-v.im, v.re]) / m2
        return (float(-(r @ d) / (d @ d)),)


class GlassDevice(Device):
    """GLASS template attached to a bus (template already in the solve's units)."""

    type_name = "glass"

    def __init__(self, bus, template):
        super().__init__(bus)
        self.template = template
        self.is_linear = template.order <= 1
        self.current_dependent = template.kind is GlassKind.CURRENT_DEPENDENT
        self.n_aux = 2 if self.current_dependent else 0

    def currents(self, v, aux=()):
        if self.current_dependent:
            return SplitPhasor(aux[0], aux[1])
        return self.template.evaluate(v)

    def linearize(self, v, aux=(), aux_index=()):
        if not self.current_dependent:
            return self.template.stamp(v, self.bus)
        if self.template.is_degenerate:
            # open circuit: pin the branch current to zero
            return AugmentedStamp(
                node=self.bus, aux=aux_index, jac=np.zeros((2, 2)), hist=(0.0, 0.0),
                coupling=np.eye(2), c_v=np.zeros((2, 2)), c_aux=np.eye(2), rhs=(0.0, 0.0),
            )
        return self.template.stamp(SplitPhasor(aux[0], aux[1]), self.bus).to_augmented(aux_index)

    def constraint_residual(self, v, aux):
        if not self.current_dependent:
            return ()
        if self.template.is_degenerate:
            return tuple(aux)
        v = _phasor(v)
        a = self.template.evaluate(SplitPhasor(aux[0], aux[1]))
        return (v.re - a.re, v.im - a.im)

    def infer_aux(self, v, mismatch):
        if not self.current_dependent or self.template.is_degenerate:
            return self.initial_aux()
        return tuple(invert(self.template, _phasor(v)))


def device_power(v, i):
    """Complex power S = V conj(I) absorbed by a device, as (P, Q)."""
    v, i = _phasor(v), _phasor(i)
    return v.re * i.re + v.im * i.im, v.im * i.re - v.re * i.im


def im_sweep_model(params):
    """Measurement model for synthesis: tag is the load torque."""
    def model(v, tag):
        return im_currents(params, tag, v)
    return model


def pq_sweep_model(load):
    def model(v, tag):
        return pq_currents(load, v)
    return model


if __name__ == "__main__":
    machine = IMParams(R_s=0.1, X_s=0.5, X_m=20.0, R_r=0.1, p=4, omega_s=377.0)
    for torque in (10.0, 20.0):
        for volts in (375.59, 356.81, 347.42, 338.03):
            v = SplitPhasor(volts, 0.0)
            s = im_slip(machine, torque, v)
            i = im_currents(machine, torque, v)
            print(f"T={torque:5.1f} V={volts:7.2f}  s={s:.6f}  I=({i.re:8.4f}, {i.im:8.4f})")
    print(f"breakdown torque at 375.59 V: {im_breakdown_torque(machine, SplitPhasor(375.59, 0)):.1f} N*m")
