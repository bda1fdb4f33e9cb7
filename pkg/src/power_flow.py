"""Newton-Raphson power flow over the split circuit.

Each iteration linearizes every device at the current iterate, assembles one real linear
system, solves it and applies a damped update. Non-convergence is returned as data.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from devices import EPS_V, branch_stamp, device_power
from errors import TorqueCapabilityError, VoltageCollapseError
from settings import Settings
from split_circuit import SplitPhasor, SplitSystem, solve_linear

logger = logging.getLogger(__name__)

INIT_MODES = ("flat", "warm")


@dataclass(frozen=True)
class SolverOptions:
    tol_v: float = 1e-8
    tol_kcl: float = 1e-8
    max_iter: int = 50
    damping: float = 1.0
    init: str = "flat"
    max_halvings: int = 4
    v_floor: float = EPS_V

    def __post_init__(self):
        if not (self.tol_v > 0 and self.tol_kcl > 0):
            raise ValueError("tolerances must be positive")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError("max_iter must be an integer >= 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")

    @classmethod
    def from_settings(cls, settings=None, **overrides):
        settings = settings or Settings.from_env()
        options = cls(tol_v=settings.tol_v, tol_kcl=settings.tol_kcl,
                      max_iter=settings.max_iter, damping=settings.damping)
        return replace(options, **{k: v for k, v in overrides.items() if v is not None})


def aux_layout(case):
    """Global auxiliary indices of every device, in device order."""
    layout = []
    k = 0
    for device in case.devices:
        layout.append(tuple(range(k, k + device.n_aux)))
        k += device.n_aux
    return layout, k


@dataclass
class SolveResult:
    state: list
    iterations: int
    residual_history: list
    converged: bool
    aux: tuple = ()
    case: object = field(default=None, repr=False)

    def device_report(self):
        """Exact current and absorbed power of every device at the final state."""
        layout, _ = aux_layout(self.case)
        report = []
        for device, index in zip(self.case.devices, layout):
            v = self.state[device.bus]
            i = device.currents(v, tuple(self.aux[k] for k in index))
            p, q = device_power(v, i)
            report.append({"bus": device.bus, "type": device.type_name,
                           "i_re": i.re, "i_im": i.im, "p": p, "q": q})
        return report


def _branch_currents(case, v, total):
    for branch in case.branches:
        i_from, i_to = branch.currents(v[branch.from_bus], v[branch.to_bus])
        total[branch.from_bus] += (i_from.re, i_from.im)
        total[branch.to_bus] += (i_to.re, i_to.im)


def kcl_residual(case, state, aux=None):
    """Net current leaving each bus, from the exact (not linearized) device laws.

    Without aux, devices with auxiliary unknowns take the values implied by the rest of their
    bus: the slack absorbs the mismatch, a PV bus injects the least-squares reactive power.
    Returns an (n_buses, 2) array of (real, imaginary) residuals.
    """
    v = [s if isinstance(s, SplitPhasor) else SplitPhasor(*s) for s in state]
    total = np.zeros((case.n_buses, 2))
    _branch_currents(case, v, total)
    layout, _ = aux_layout(case)
    pending = []
    for device, index in zip(case.devices, layout):
        if device.n_aux and aux is None:
            pending.append(device)
            continue
        i = device.currents(v[device.bus], tuple(aux[k] for k in index))
        total[device.bus] += (i.re, i.im)
    for device in pending:
        mismatch = SplitPhasor(*total[device.bus])
        i = device.currents(v[device.bus], device.infer_aux(v[device.bus], mismatch))
        total[device.bus] += (i.re, i.im)
    return total


class PowerFlowSolver:
    def __init__(self, case, options=None, on_iteration=None):
        self.case = case
        self.options = options or SolverOptions()
        self.on_iteration = on_iteration
        self.layout, self.n_aux = aux_layout(case)
        self.n = case.n_buses

    # State vector: [V_R(0..n-1), V_I(0..n-1), aux...]

    def _unpack(self, x):
        n = self.n
        return [SplitPhasor(x[k], x[n + k]) for k in range(n)], tuple(x[2 * n:])

    def _pack(self, v, aux):
        return np.concatenate([[p.re for p in v], [p.im for p in v], np.asarray(aux, dtype=float)])

    def initial_state(self, warm_start=None):
        if warm_start is not None:
            v = [s if isinstance(s, SplitPhasor) else SplitPhasor(*s) for s in warm_start]
            if len(v) != self.n:
                raise ValueError(f"warm start needs {self.n} voltages, got {len(v)}")
        else:
            if self.options.init == "warm":
                raise ValueError("init='warm' needs a warm_start state")
            v = [SplitPhasor(1.0, 0.0)] * self.n
            for device in self.case.slack_devices:
                v[device.bus] = device.source.v_set
        aux = []
        for device in self.case.devices:
            aux.extend(device.initial_aux())
        return v, tuple(aux)

    def assemble(self, v, aux):
        system = SplitSystem(self.n, self.n_aux)
        for branch in self.case.branches:
            branch_stamp(system, branch)
        for device, index in zip(self.case.devices, self.layout):
            local = tuple(aux[k] for k in index)
            system.stamp(device.linearize(v[device.bus], local, index))
        return system

    def residuals(self, v, aux):
        """(||KCL||_inf, largest constraint violation) at an iterate."""
        kcl = kcl_residual(self.case, v, aux)
        worst = 0.0
        for device, index in zip(self.case.devices, self.layout):
            for r in device.constraint_residual(v[device.bus], tuple(aux[k] for k in index)):
                worst = max(worst, abs(r))
        return float(np.max(np.abs(kcl))) if kcl.size else 0.0, worst

    def _safe_residual(self, v, aux):
        try:
            return max(self.residuals(v, aux))
        except (VoltageCollapseError, TorqueCapabilityError):
            return math.inf

    def _below_floor(self, v):
        return any(p.magnitude() < self.options.v_floor for p in v)

    def solve(self, warm_start=None):
        self.case.validate()
        opts = self.options
        v, aux = self.initial_state(warm_start)
        x = self._pack(v, aux)
        residual = self._safe_residual(v, aux)
        history = []
        converged = False

        for iteration in range(1, opts.max_iter + 1):
            try:
                system = self.assemble(v, aux)
            except (VoltageCollapseError, TorqueCapabilityError) as err:
                logger.warning("stopped at iteration %d: %s", iteration, err)
                break
            if self.on_iteration is not None:
                self.on_iteration(iteration, system)
            dx = solve_linear(system) - x

            step = opts.damping
            for halving in range(opts.max_halvings + 1):
                trial = x + step * dx
                v_trial, aux_trial = self._unpack(trial)
                trial_residual = math.inf if self._below_floor(v_trial) else self._safe_residual(v_trial, aux_trial)
                worse = trial_residual > residual and trial_residual > opts.tol_kcl
                if not worse or halving == opts.max_halvings:
                    break
                step *= 0.5
            if self._below_floor(v_trial):
                bus = min(range(self.n), key=lambda k: v_trial[k].magnitude())
                logger.warning("voltage collapse at bus %d: |V|=%.3e", bus, v_trial[bus].magnitude())
                break

            dv = float(np.max(np.abs(step * dx[:2 * self.n]))) if self.n else 0.0
            x, v, aux = trial, v_trial, aux_trial
            try:
                kcl, constraint = self.residuals(v, aux)
            except (VoltageCollapseError, TorqueCapabilityError) as err:
                logger.warning("stopped at iteration %d: %s", iteration, err)
                history.append((dv, math.inf))
                break
            residual = max(kcl, constraint)
            history.append((dv, kcl))
            logger.debug("iteration %d: |dV|=%.3e |KCL|=%.3e damping=%.4g", iteration, dv, kcl, step)

            # a linear network is solved exactly by its first linear solve
            if kcl <= opts.tol_kcl and constraint <= opts.tol_kcl and (dv <= opts.tol_v or self.case.is_linear):
                converged = True
                break

        if converged:
            logger.info("converged in %d iterations, |KCL|=%.3e", len(history), history[-1][1])
        else:
            logger.warning("no convergence after %d iterations", len(history))
        return SolveResult(state=list(v), iterations=len(history), residual_history=history,
                           converged=converged, aux=tuple(float(a) for a in aux), case=self.case)


def solve_power_flow(case, opts=None):
    return PowerFlowSolver(case, opts).solve()


if __name__ == "__main__":
    from data_io import NetworkCase
    from devices import PQDevice, PQLoad, SlackDevice, SlackSource

    for load in (0.05, 0.1, 0.5, 1.0, 3.0):
        case = NetworkCase("two-bus")
        slack, bus = case.add_bus("slack"), case.add_bus("pq")
        case.add_branch(slack, bus, r=0.1, x=0.0)
        case.add_device(SlackDevice(slack, SlackSource(SplitPhasor(1.0, 0.0))))
        case.add_device(PQDevice(bus, PQLoad(load, 0.0)))
        result = solve_power_flow(case)
        exact = (1 + math.sqrt(1 - 4 * load / 10)) / 2 if load <= 2.5 else float("nan")
        print(f"P={load}: converged={result.converged} iterations={result.iterations} "
              f"V_R={result.state[bus].re:.12f} analytic={exact:.12f}")
