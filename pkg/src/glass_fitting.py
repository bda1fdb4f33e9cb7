"""Least-squares estimation of GLASS templates from measurement records.

Workflow: synthesize records from a physics model, fit a template, validate the template
against held-out or extrapolated records.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.linalg import qr, solve_triangular
from sklearn.linear_model import Ridge
from sklearn.metrics import mean_squared_error
from sklearn.model_selection import train_test_split

from errors import (
    DegenerateExcitationError,
    InsufficientRecordsError,
    LoadDomainError,
    TorqueCapabilityError,
    VoltageCollapseError,
)
from glass_model import (
    GlassKind,
    GlassTemplate,
    basis_matrix,
    monomial_exponents,
    monomial_label,
    n_monomials,
)
from split_circuit import SplitPhasor

logger = logging.getLogger(__name__)

CENTER_POLICIES = ("zero", "data-mean")
ZERO_COLUMN_RTOL = 1e-12
RANK_RTOL = 1e-10
VARIABLE_NAMES = {
    GlassKind.VOLTAGE_DEPENDENT: ("V_R", "V_I"),
    GlassKind.CURRENT_DEPENDENT: ("I_R", "I_I"),
}


def _optional_float(value, name):
    if value is None:
        return None
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite")
    return value


@dataclass(frozen=True)
class MeasurementRecord:
    v: SplitPhasor
    i: SplitPhasor
    tag: float = None
    time: float = None

    def __post_init__(self):
        if not isinstance(self.v, SplitPhasor):
            object.__setattr__(self, "v", SplitPhasor(*self.v))
        if not isinstance(self.i, SplitPhasor):
            object.__setattr__(self, "i", SplitPhasor(*self.i))
        object.__setattr__(self, "tag", _optional_float(self.tag, "tag"))
        object.__setattr__(self, "time", _optional_float(self.time, "time"))

    def independent(self, kind):
        return self.v if kind is GlassKind.VOLTAGE_DEPENDENT else self.i

    def dependent(self, kind):
        return self.i if kind is GlassKind.VOLTAGE_DEPENDENT else self.v


@dataclass(frozen=True)
class FitConfig:
    kind: GlassKind = GlassKind.VOLTAGE_DEPENDENT
    order: int = 3
    center_policy: str = "data-mean"
    ridge: float = 0.0
    min_records: int = None
    drop_unidentifiable: bool = True
    units: str = "per-unit"

    def __post_init__(self):
        object.__setattr__(self, "kind", GlassKind(self.kind))
        m = n_monomials(self.order)
        monomial_exponents(self.order)
        if self.min_records is None:
            object.__setattr__(self, "min_records", m)
        elif self.min_records < m:
            raise ValueError(f"min_records must be at least {m} for order {self.order}")
        if self.center_policy not in CENTER_POLICIES:
            raise ValueError(f"center_policy must be one of {CENTER_POLICIES}")
        if not (math.isfinite(self.ridge) and self.ridge >= 0):
            raise ValueError("ridge must be a non-negative number")


@dataclass(frozen=True)
class FitReport:
    template: GlassTemplate
    rmse_r: float
    rmse_i: float
    max_abs_residual: float
    condition_number: float
    n_records: int
    unidentifiable: tuple = ()
    fit_center: SplitPhasor = SplitPhasor(0.0, 0.0)

    @property
    def unidentifiable_labels(self):
        return [monomial_label(e, self.template.variable_names) for e in self.unidentifiable]

    def summary(self):
        return {
            "n_records": self.n_records,
            "order": self.template.order,
            "kind": self.template.kind.value,
            "rmse_r": self.rmse_r,
            "rmse_i": self.rmse_i,
            "max_abs_residual": self.max_abs_residual,
            "condition_number": self.condition_number,
            "unidentifiable": ";".join(self.unidentifiable_labels) or "none",
        }


def _arrays(records, kind):
    b = np.array([tuple(r.independent(kind)) for r in records], dtype=float).reshape(-1, 2)
    a = np.array([tuple(r.dependent(kind)) for r in records], dtype=float).reshape(-1, 2)
    return b[:, 0], b[:, 1], a[:, 0], a[:, 1]


def resolve_center(records, config):
    if config.center_policy == "zero" or not records:
        return SplitPhasor(0.0, 0.0)
    b_r, b_i, _, _ = _arrays(records, config.kind)
    return SplitPhasor(b_r.mean(), b_i.mean())


def build_design_matrix(records, config, center=None):
    """Rows are basis vectors of the independent pair; targets are the dependent pair."""
    if len(records) < config.min_records:
        raise InsufficientRecordsError(config.min_records, len(records))
    if center is None:
        center = resolve_center(records, config)
    b_r, b_i, a_r, a_i = _arrays(records, config.kind)
    return basis_matrix(config.order, b_r, b_i, tuple(center)), a_r, a_i


def _training_domain(records, kind):
    b_r, b_i, _, _ = _arrays(records, kind)
    return ((float(b_r.min()), float(b_r.max())), (float(b_i.min()), float(b_i.max())))


def _residuals(template, records):
    b_r, b_i, a_r, a_i = _arrays(records, template.kind)
    p_r, p_i = template.evaluate_many(b_r, b_i)
    return b_r, b_i, a_r, a_i, p_r, p_i


def _flat(values):
    values = np.asarray(values, dtype=float)
    return np.ptp(values, axis=0) <= ZERO_COLUMN_RTOL * np.abs(values).max(axis=0)


def _unexcited(records, kind, X, exps):
    """Monomials the data cannot identify, whatever the fit center.

    A column is flagged when it does not vary over the records, and every
    monomial of a variable that stays constant is flagged with it. The
    intercept is never flagged.
    """
    b_r, b_i, _, _ = _arrays(records, kind)
    fixed_r, fixed_i = bool(_flat(b_r)), bool(_flat(b_i))
    flat = _flat(X)
    zero = np.array([(e[0] > 0 and fixed_r) or (e[1] > 0 and fixed_i) or bool(f)
                     for e, f in zip(exps, flat)])
    zero[0] = False
    return zero


def _rmse(measured, predicted):
    if len(measured) == 0:
        return 0.0
    return float(np.sqrt(mean_squared_error(measured, predicted)))


class GlassFitter:
    def __init__(self, config=None):
        self.config = config or FitConfig()

    def _solve_qr(self, X, Y, exps):
        """Column-equilibrated, column-pivoted QR; fails on rank deficiency."""
        scale = np.linalg.norm(X, axis=0)
        Q, R, perm = qr(X / scale, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > RANK_RTOL * diag[0]))
        if rank < X.shape[1]:
            variables = VARIABLE_NAMES[self.config.kind]
            names = [monomial_label(exps[perm[k]], variables) for k in range(rank, X.shape[1])]
            raise DegenerateExcitationError(names)
        z = solve_triangular(R, Q.T @ Y)
        coef = np.empty_like(z)
        coef[perm] = z
        return coef / scale[:, None], float(np.linalg.cond(R))

    def _solve_ridge(self, X, Y):
        """min ||X g - y||^2 + ridge ||g||^2 through an SVD of X."""
        model = Ridge(alpha=self.config.ridge, fit_intercept=False, solver="svd")
        model.fit(X, Y)
        return np.asarray(model.coef_).T, float(np.linalg.cond(X))

    def fit(self, records):
        config = self.config
        records = list(records)
        center = resolve_center(records, config)
        X, y_r, y_i = build_design_matrix(records, config, center)
        exps = monomial_exponents(config.order)

        zero = _unexcited(records, config.kind, X, exps)
        unidentifiable = tuple(e for e, z in zip(exps, zero) if z)
        if unidentifiable:
            labels = [monomial_label(e, VARIABLE_NAMES[config.kind]) for e in unidentifiable]
            # a constant-only model is no template either
            if config.ridge == 0 and (not config.drop_unidentifiable or zero[1:].all()):
                raise DegenerateExcitationError(labels)
            logger.info("unconstrained monomials set to 0: %s", ", ".join(labels))

        active = ~zero
        active_exps = [e for e, a in zip(exps, active) if a]
        Y = np.column_stack([y_r, y_i])
        if config.ridge > 0:
            coef, condition = self._solve_ridge(X[:, active], Y)
        else:
            coef, condition = self._solve_qr(X[:, active], Y, active_exps)

        full = np.zeros((len(exps), 2))
        full[active] = coef
        centered = GlassTemplate(config.kind, config.order, center, full[:, 0], full[:, 1],
                                 config.units, _training_domain(records, config.kind))
        template = centered.absolute()

        _, _, a_r, a_i, p_r, p_i = _residuals(template, records)
        report = FitReport(
            template=template,
            rmse_r=_rmse(a_r, p_r),
            rmse_i=_rmse(a_i, p_i),
            max_abs_residual=float(np.max(np.abs(np.concatenate([a_r - p_r, a_i - p_i])))),
            condition_number=max(1.0, condition),
            n_records=len(records),
            unidentifiable=unidentifiable,
            fit_center=center,
        )
        logger.info("fit order %d on %d records: rmse=(%.3e, %.3e) cond=%.3e",
                    config.order, len(records), report.rmse_r, report.rmse_i, report.condition_number)
        return report

    def fit_per_tag(self, records):
        """One template per exogenous tag value (e.g. one per load torque)."""
        groups = {}
        for record in records:
            groups.setdefault(record.tag, []).append(record)
        ordered = sorted(groups.items(), key=lambda kv: (kv[0] is None, kv[0] or 0.0))
        return {tag: self.fit(group) for tag, group in ordered}


def fit(records, config=None):
    return GlassFitter(config).fit(records)


def fit_per_tag(records, config=None):
    return GlassFitter(config).fit_per_tag(records)


def holdout_split(records, fraction, seed=0):
    """Random train/test split of the records."""
    records = list(records)
    if not 0 < fraction < 1:
        raise ValueError("hold-out fraction must lie in (0, 1)")
    train, test = train_test_split(records, test_size=fraction, random_state=seed)
    return list(train), list(test)


# Synthesis

def _grid(spec):
    if spec is None:
        return np.zeros(0)
    if isinstance(spec, dict):
        return np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
    return np.atleast_1d(np.asarray(spec, dtype=float))


@dataclass(frozen=True)
class SweepSpec:
    """Grid of independent values: rectangular (v_re x v_im) or polar (magnitude x angle_deg)."""

    v_re: tuple = ()
    v_im: tuple = (0.0,)
    magnitude: tuple = ()
    angle_deg: tuple = (0.0,)
    tags: tuple = (None,)
    noise_std: float = 0.0
    seed: int = None
    dt: float = None

    def __post_init__(self):
        for name in ("v_re", "v_im", "magnitude", "angle_deg"):
            object.__setattr__(self, name, tuple(float(x) for x in _grid(getattr(self, name))))
        object.__setattr__(self, "tags", tuple(_optional_float(t, "tag") for t in self.tags) or (None,))
        if not (math.isfinite(self.noise_std) and self.noise_std >= 0):
            raise ValueError("noise standard deviation must be non-negative")
        if not self.v_re and not self.magnitude:
            raise ValueError("sweep needs v_re values or magnitudes")

    @classmethod
    def from_dict(cls, data):
        kwargs = dict(data)
        if "tags" in kwargs:
            kwargs["tags"] = tuple(_grid(kwargs["tags"]))
        return cls(**kwargs)

    def points(self):
        if self.magnitude:
            return [SplitPhasor.from_polar(m, a) for m in self.magnitude for a in self.angle_deg]
        return [SplitPhasor(r, i) for r in self.v_re for i in self.v_im]


@dataclass
class SynthesisResult:
    records: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def attempted(self):
        return len(self.records) + len(self.skipped)

    @property
    def success_fraction(self):
        return len(self.records) / self.attempted if self.attempted else 0.0


SKIPPABLE = (TorqueCapabilityError, VoltageCollapseError, LoadDomainError)


def synthesize(model, sweep):
    """Evaluate a steady-state model over the sweep grid.

    model(v, tag) -> current. Points where the model fails (e.g. torque beyond breakdown)
    are recorded as skipped instead of aborting the sweep.
    """
    rng = np.random.default_rng(sweep.seed)
    result = SynthesisResult()
    k = 0
    for tag in sweep.tags:
        for v in sweep.points():
            try:
                i = model(v, tag)
            except SKIPPABLE as err:
                logger.warning("skipped point v=(%.6g, %.6g) tag=%s: %s", v.re, v.im, tag, err)
                result.skipped.append((v, tag, str(err)))
                continue
            if sweep.noise_std > 0:
                noise = rng.normal(0.0, sweep.noise_std, size=2)
                i = SplitPhasor(i.re + noise[0], i.im + noise[1])
            time = k * sweep.dt if sweep.dt else None
            result.records.append(MeasurementRecord(v, i, tag, time))
            k += 1
    logger.info("synthesized %d records, skipped %d", len(result.records), len(result.skipped))
    return result


# Validation

@dataclass(frozen=True)
class ValidationReport:
    frame: pd.DataFrame
    rmse_r: float
    rmse_i: float
    max_abs_residual: float
    worst_index: int
    extrapolation_fraction: float
    n_records: int

    def to_frame(self):
        return self.frame.copy()

    def summary(self):
        return {
            "n_records": self.n_records,
            "rmse_r": self.rmse_r,
            "rmse_i": self.rmse_i,
            "max_abs_residual": self.max_abs_residual,
            "worst_index": self.worst_index,
            "extrapolation_fraction": self.extrapolation_fraction,
        }


def validate(template, records):
    """Per-record predicted vs measured values, RMSE, worst case and extrapolation share."""
    records = list(records)
    if template.kind is GlassKind.VOLTAGE_DEPENDENT:
        ind, dep = ("v_re", "v_im"), ("i_re", "i_im")
    else:
        ind, dep = ("i_re", "i_im"), ("v_re", "v_im")
    columns = ["time", "tag", ind[0], ind[1],
               f"{dep[0]}_measured", f"{dep[1]}_measured",
               f"{dep[0]}_predicted", f"{dep[1]}_predicted",
               "residual_re", "residual_im", "relative_error", "extrapolated"]
    if not records:
        return ValidationReport(pd.DataFrame(columns=columns), 0.0, 0.0, 0.0, -1, 0.0, 0)

    b_r, b_i, a_r, a_i, p_r, p_i = _residuals(template, records)
    res_r, res_i = a_r - p_r, a_i - p_i
    magnitude = np.hypot(a_r, a_i)
    error = np.hypot(res_r, res_i)
    relative = error / np.where(magnitude > 0, magnitude, np.nan)
    extrapolated = np.array([not template.contains((r, i)) for r, i in zip(b_r, b_i)])

    frame = pd.DataFrame({
        "time": [r.time for r in records],
        "tag": [r.tag for r in records],
        ind[0]: b_r, ind[1]: b_i,
        f"{dep[0]}_measured": a_r, f"{dep[1]}_measured": a_i,
        f"{dep[0]}_predicted": p_r, f"{dep[1]}_predicted": p_i,
        "residual_re": res_r, "residual_im": res_i,
        "relative_error": relative,
        "extrapolated": extrapolated,
    }, columns=columns)

    worst = int(np.argmax(np.maximum(np.abs(res_r), np.abs(res_i))))
    return ValidationReport(
        frame=frame,
        rmse_r=_rmse(a_r, p_r),
        rmse_i=_rmse(a_i, p_i),
        max_abs_residual=float(max(np.abs(res_r).max(), np.abs(res_i).max())),
        worst_index=worst,
        extrapolation_fraction=float(extrapolated.mean()),
        n_records=len(records),
    )


if __name__ == "__main__":
    from devices import IMParams, im_sweep_model

    machine = IMParams(R_s=0.1, X_s=0.5, X_m=20.0, R_r=0.1, p=4, omega_s=377.0)
    sweep = SweepSpec(v_re={"start": 330.0, "stop": 380.0, "num": 26}, tags=(10.0, 20.0))
    data = synthesize(im_sweep_model(machine), sweep)
    config = FitConfig(order=3, units="si")
    for torque, report in fit_per_tag(data.records, config).items():
        print(f"T={torque}: rmse=({report.rmse_r:.2e}, {report.rmse_i:.2e}) "
              f"dropped={report.unidentifiable_labels}")
        for label, _, g_r, g_i in report.template.coefficient_table():
            print(f"  {label:>12s}  {g_r: .6e}  {g_i: .6e}")
