"""File formats: network cases (JSON), measurement records (CSV), GLASS templates (JSON) and
plot-ready result exports (CSV).

Internal computation is always per-unit. SI cases and SI templates are converted here, at the
boundary, using the bases declared in the case.
"""

import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from devices import (
    Branch,
    ExpDevice,
    ExpLoad,
    GlassDevice,
    IMParams,
    InductionMotor,
    PerUnitAdapter,
    PQDevice,
    PQLoad,
    PVBus,
    PVDevice,
    SlackDevice,
    SlackSource,
    ZIPDevice,
    ZIPLoad,
)
from errors import CaseFormatError, MeasurementFormatError, TemplateFormatError
from glass_fitting import MeasurementRecord
from glass_model import GlassKind, GlassTemplate, monomial_exponents, monomial_label
from split_circuit import SplitPhasor

logger = logging.getLogger(__name__)

CASE_FORMAT_VERSION = 1
TEMPLATE_FORMAT_VERSION = 1
BUS_TYPES = ("slack", "pq", "pv", "glass", "im", "zip", "exp")
MEASUREMENT_COLUMNS = ["time", "v_re", "v_im", "i_re", "i_im", "tag"]
REQUIRED_MEASUREMENT_COLUMNS = ("v_re", "v_im", "i_re", "i_im")


# Network case

@dataclass(frozen=True)
class CaseBase:
    """Unit declaration. Bases are single-phase equivalent: VA and V."""

    system: str = "per-unit"
    s_base: float = None
    v_base: float = None

    def __post_init__(self):
        if self.system not in ("per-unit", "si"):
            raise ValueError(f"unit system must be 'per-unit' or 'si', got {self.system!r}")
        for name in ("s_base", "v_base"):
            value = getattr(self, name)
            if value is not None and not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive")
        if self.system == "si" and not self.has_bases:
            raise ValueError("an SI case needs s_base and v_base")

    @property
    def has_bases(self):
        return self.s_base is not None and self.v_base is not None

    @property
    def i_base(self):
        return self.s_base / self.v_base

    @property
    def z_base(self):
        return self.v_base ** 2 / self.s_base


@dataclass(frozen=True)
class Bus:
    index: int
    id: str
    type: str


class NetworkCase:
    """Buses, branches and devices of a per-unit network."""

    def __init__(self, name="case", base=None):
        self.name = name
        self.base = base or CaseBase()
        self.buses = []
        self.branches = []
        self.devices = []
        self._ids = {}

    @property
    def n_buses(self):
        return len(self.buses)

    def add_bus(self, bus_type="pq", bus_id=None):
        if bus_type not in BUS_TYPES:
            raise ValueError(f"unknown bus type {bus_type!r}")
        bus_id = str(len(self.buses) if bus_id is None else bus_id)
        if bus_id in self._ids:
            raise ValueError(f"duplicate bus id {bus_id!r}")
        index = len(self.buses)
        self.buses.append(Bus(index, bus_id, bus_type))
        self._ids[bus_id] = index
        return index

    def index_of(self, bus_id):
        try:
            return self._ids[str(bus_id)]
        except KeyError:
            raise KeyError(f"unknown bus id {bus_id!r}") from None

    def add_branch(self, from_bus, to_bus, r, x, b_sh=0.0):
        for bus in (from_bus, to_bus):
            if not 0 <= bus < self.n_buses:
                raise ValueError(f"branch endpoint {bus} does not exist")
        branch = Branch(from_bus, to_bus, r, x, b_sh)
        self.branches.append(branch)
        return branch

    def add_device(self, device):
        if not 0 <= device.bus < self.n_buses:
            raise ValueError(f"device bus {device.bus} does not exist")
        self.devices.append(device)
        return device

    def devices_at(self, bus):
        return [d for d in self.devices if d.bus == bus]

    @property
    def slack_devices(self):
        return [d for d in self.devices if isinstance(d, SlackDevice)]

    @property
    def is_linear(self):
        return all(d.is_linear for d in self.devices)

    def validate(self, require_devices=False):
        """Exactly one slack and a connected network; optionally one device per non-slack bus."""
        slack = self.slack_devices
        if len(slack) != 1:
            raise CaseFormatError(f"a case needs exactly one slack bus, found {len(slack)}", "buses")
        if require_devices:
            for bus in self.buses:
                count = len(self.devices_at(bus.index))
                if count != 1:
                    raise CaseFormatError(f"bus {bus.id!r} has {count} device blocks, expected 1",
                                          f"devices.{bus.id}")
        if self.n_buses > 1:
            rows = [b.from_bus for b in self.branches]
            cols = [b.to_bus for b in self.branches]
            graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_buses, self.n_buses))
            _, labels = connected_components(graph, directed=False)
            island = [bus.id for bus in self.buses if labels[bus.index] != labels[slack[0].bus]]
            if island:
                raise CaseFormatError(f"buses not connected to the slack: {', '.join(island)}", "branches")
        return self


_MISSING = object()


def _number(block, key, where, default=_MISSING, positive=False):
    if key not in block:
        if default is _MISSING:
            raise CaseFormatError(f"missing field '{key}'", f"{where}.{key}")
        return default
    value = block[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise CaseFormatError(f"expected a finite number, got {value!r}", f"{where}.{key}")
    if positive and not value > 0:
        raise CaseFormatError(f"expected a positive number, got {value!r}", f"{where}.{key}")
    return float(value)


def _poles(block, where):
    poles = _number(block, "poles", where, 4.0, positive=True)
    if not poles.is_integer():
        raise CaseFormatError(f"expected a whole number of poles, got {block['poles']!r}", f"{where}.poles")
    return int(poles)


def _mapping(value, where):
    if not isinstance(value, dict):
        raise CaseFormatError(f"expected an object, got {type(value).__name__}", where)
    return value


def _check_keys(block, allowed, where):
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        raise CaseFormatError(f"unknown field(s) {', '.join(unknown)}", where)


DEVICE_FIELDS = {
    "slack": ("v_re", "v_im", "v_mag", "angle_deg"),
    "pq": ("p", "q"),
    "pv": ("p", "v_mag"),
    "zip": ("p0", "q0", "a_p", "b_p", "c_p", "a_q", "b_q", "c_q", "v_nom"),
    "exp": ("p0", "q0", "p_v", "q_v", "v_nom"),
    "im": ("r_s", "x_s", "x_m", "r_r", "poles", "omega_s", "torque"),
    "glass": ("template",),
}


class _CaseReader:
    def __init__(self, source):
        self.source = source
        self.directory = Path(source).parent if source else Path(".")

    def read(self, data):
        data = _mapping(data, "case")
        _check_keys(data, ("format_version", "name", "base", "buses", "branches", "devices"), "case")
        version = data.get("format_version")
        if version != CASE_FORMAT_VERSION:
            raise CaseFormatError(f"unsupported format_version {version!r}, expected {CASE_FORMAT_VERSION}",
                                  "format_version")

        base_block = _mapping(data.get("base", {}), "base")
        _check_keys(base_block, ("system", "s_base", "v_base"), "base")
        try:
            base = CaseBase(
                system=base_block.get("system", "per-unit"),
                s_base=_number(base_block, "s_base", "base", None, positive=True),
                v_base=_number(base_block, "v_base", "base", None, positive=True),
            )
        except ValueError as err:
            raise CaseFormatError(str(err), "base") from None
        case = NetworkCase(str(data.get("name", "case")), base)
        self.si = base.system == "si"

        buses = data.get("buses")
        if not isinstance(buses, list) or not buses:
            raise CaseFormatError("expected a non-empty list of buses", "buses")
        for k, block in enumerate(buses):
            where = f"buses[{k}]"
            block = _mapping(block, where)
            _check_keys(block, ("id", "type"), where)
            if "id" not in block:
                raise CaseFormatError("missing field 'id'", f"{where}.id")
            bus_type = block.get("type")
            if bus_type not in BUS_TYPES:
                raise CaseFormatError(f"unknown bus type {bus_type!r}, expected one of {', '.join(BUS_TYPES)}",
                                      f"{where}.type")
            if str(block["id"]) in case._ids:
                raise CaseFormatError(f"duplicate bus id {block['id']!r}", f"{where}.id")
            case.add_bus(bus_type, block["id"])

        n_slack = sum(1 for bus in case.buses if bus.type == "slack")
        if n_slack != 1:
            raise CaseFormatError(f"a case needs exactly one slack bus, found {n_slack}", "buses")

        branches = data.get("branches", [])
        if not isinstance(branches, list):
            raise CaseFormatError(f"expected a list of branches, got {type(branches).__name__}", "branches")
        for k, block in enumerate(branches):
            self._branch(case, _mapping(block, f"branches[{k}]"), f"branches[{k}]")

        devices = _mapping(data.get("devices", {}), "devices")
        for key in devices:
            try:
                case.index_of(key)
            except KeyError:
                raise CaseFormatError(f"device block for unknown bus {key!r}", f"devices.{key}") from None
        for bus in case.buses:
            where = f"devices.{bus.id}"
            if bus.id not in devices:
                raise CaseFormatError(f"missing device block for {bus.type} bus {bus.id!r}", where)
            block = _mapping(devices[bus.id], where)
            _check_keys(block, DEVICE_FIELDS[bus.type], where)
            try:
                case.add_device(self._device(case, bus, block, where))
            except ValueError as err:
                raise CaseFormatError(str(err), where) from None

        return case.validate(require_devices=True)

    def _branch(self, case, block, where):
        _check_keys(block, ("from", "to", "r", "x", "b_sh"), where)
        ends = []
        for key in ("from", "to"):
            if key not in block:
                raise CaseFormatError(f"missing field '{key}'", f"{where}.{key}")
            try:
                ends.append(case.index_of(block[key]))
            except KeyError:
                raise CaseFormatError(f"branch endpoint {block[key]!r} does not exist", f"{where}.{key}") from None
        r, x = _number(block, "r", where), _number(block, "x", where)
        b_sh = _number(block, "b_sh", where, 0.0)
        if self.si:
            z_base = case.base.z_base
            r, x, b_sh = r / z_base, x / z_base, b_sh * z_base
        try:
            case.add_branch(ends[0], ends[1], r, x, b_sh)
        except ValueError as err:
            raise CaseFormatError(str(err), where) from None

    def _power(self, value, case):
        return value / case.base.s_base if self.si else value

    def _voltage(self, value, case):
        return value / case.base.v_base if self.si else value

    def _device(self, case, bus, block, where):
        n = bus.index
        if bus.type == "slack":
            if "v_mag" in block:
                v_mag = self._voltage(_number(block, "v_mag", where, positive=True), case)
                v_set = SplitPhasor.from_polar(v_mag, _number(block, "angle_deg", where, 0.0))
            else:
                v_re = _number(block, "v_re", where, _MISSING if self.si else 1.0)
                v_set = SplitPhasor(self._voltage(v_re, case), self._voltage(_number(block, "v_im", where, 0.0), case))
            return SlackDevice(n, SlackSource(v_set))
        if bus.type == "pq":
            return PQDevice(n, PQLoad(self._power(_number(block, "p", where), case),
                                      self._power(_number(block, "q", where, 0.0), case)))
        if bus.type == "pv":
            return PVDevice(n, PVBus(self._power(_number(block, "p", where), case),
                                     self._voltage(_number(block, "v_mag", where, positive=True), case)))
        if bus.type == "zip":
            kwargs = {k: _number(block, k, where) for k in ("a_p", "b_p", "c_p", "a_q", "b_q", "c_q") if k in block}
            v_nom = _number(block, "v_nom", where, case.base.v_base if self.si else 1.0, positive=True)
            return ZIPDevice(n, ZIPLoad(self._power(_number(block, "p0", where), case),
                                        self._power(_number(block, "q0", where, 0.0), case),
                                        v_nom=self._voltage(v_nom, case), **kwargs))
        if bus.type == "exp":
            v_nom = _number(block, "v_nom", where, case.base.v_base if self.si else 1.0, positive=True)
            return ExpDevice(n, ExpLoad(self._power(_number(block, "p0", where), case),
                                        self._power(_number(block, "q0", where, 0.0), case),
                                        _number(block, "p_v", where), _number(block, "q_v", where),
                                        self._voltage(v_nom, case)))
        if bus.type == "im":
            if not case.base.has_bases:
                raise CaseFormatError("induction motors are specified in SI and need s_base and v_base", "base")
            params = IMParams(
                R_s=_number(block, "r_s", where), X_s=_number(block, "x_s", where),
                X_m=_number(block, "x_m", where), R_r=_number(block, "r_r", where),
                p=_poles(block, where),
                omega_s=_number(block, "omega_s", where, 2 * math.pi * 60),
            )
            motor = InductionMotor(n, params, _number(block, "torque", where, positive=True))
            return PerUnitAdapter(motor, case.base.v_base, case.base.i_base)
        # glass
        source = block.get("template")
        if isinstance(source, str):
            template = load_template(self.directory / source)
        elif isinstance(source, dict):
            template = template_from_dict(source, f"{self.source}:{where}.template")
        else:
            raise CaseFormatError("template must be a file name or an inline object", f"{where}.template")
        return GlassDevice(n, to_per_unit(template, case.base, where))


def to_per_unit(template, base, where="template"):
    """Convert an SI template with the case bases; per-unit templates pass through."""
    if template.units == "per-unit":
        return template
    if not base.has_bases:
        raise CaseFormatError("an SI template needs s_base and v_base in the case", where)
    if template.kind is GlassKind.VOLTAGE_DEPENDENT:
        return template.rescale(base.v_base, base.i_base, "per-unit")
    return template.rescale(base.i_base, base.v_base, "per-unit")


def parse_case(text, source=None):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise CaseFormatError(f"invalid JSON: {err.msg}", source, err.lineno) from None
    return _CaseReader(source).read(data)


def load_case(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise CaseFormatError(f"cannot read case file: {err.strerror}", str(path)) from None
    except UnicodeDecodeError:
        raise CaseFormatError("case file is not valid text", str(path)) from None
    case = parse_case(text, str(path))
    logger.info("loaded case %s: %d buses, %d branches", case.name, case.n_buses, len(case.branches))
    return case


# Measurements

def _parse_float(value, column, row, required):
    if value is None or (isinstance(value, float) and math.isnan(value)) or str(value).strip() == "":
        if required:
            raise MeasurementFormatError(f"missing value for '{column}'", row)
        return None
    try:
        number = float(value)
    except ValueError:
        raise MeasurementFormatError(f"non-numeric value {value!r} in column '{column}'", row) from None
    if not math.isfinite(number):
        raise MeasurementFormatError(f"non-finite value {value!r} in column '{column}'", row)
    return number


def load_measurements(path):
    """Read records from CSV; the header names the columns (time and tag optional)."""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        logger.warning("measurement file %s is empty", path)
        return []
    except pd.errors.ParserError as err:
        match = re.search(r"line (\d+)", str(err))
        # header is line 1, so data row numbers equal line - 1
        row = int(match.group(1)) - 1 if match else None
        raise MeasurementFormatError(f"malformed row: {err}", row) from None
    except OSError as err:
        raise MeasurementFormatError(f"cannot read measurement file: {err.strerror}") from None
    except UnicodeDecodeError:
        raise MeasurementFormatError("measurement file is not valid text") from None

    columns = [c.strip() for c in frame.columns]
    missing = [c for c in REQUIRED_MEASUREMENT_COLUMNS if c not in columns]
    unknown = [c for c in columns if c not in MEASUREMENT_COLUMNS]
    if missing or unknown:
        problems = []
        if missing:
            problems.append("missing column(s) " + ", ".join(missing))
        if unknown:
            problems.append("unknown column(s) " + ", ".join(unknown))
        raise MeasurementFormatError("bad header: " + "; ".join(problems), 0)
    frame.columns = columns

    records = []
    for row, values in enumerate(frame.to_dict("records"), start=1):
        fields = {c: _parse_float(values.get(c), c, row, c in REQUIRED_MEASUREMENT_COLUMNS)
                  for c in MEASUREMENT_COLUMNS if c in values}
        records.append(MeasurementRecord(
            SplitPhasor(fields["v_re"], fields["v_im"]),
            SplitPhasor(fields["i_re"], fields["i_im"]),
            tag=fields.get("tag"),
            time=fields.get("time"),
        ))
    logger.info("loaded %d measurement records from %s", len(records), path)
    return records


def _render(value):
    # repr gives the shortest decimal that round-trips a double
    return "" if value is None else repr(float(value))


def save_measurements(records, path):
    rows = [
        [_render(r.time), _render(r.v.re), _render(r.v.im), _render(r.i.re), _render(r.i.im), _render(r.tag)]
        for r in records
    ]
    pd.DataFrame(rows, columns=MEASUREMENT_COLUMNS, dtype=str).to_csv(path, index=False)


# Templates

def template_to_dict(template):
    return {
        "format": "gridglass-template",
        "format_version": TEMPLATE_FORMAT_VERSION,
        "kind": template.kind.value,
        "order": template.order,
        "units": template.units,
        "center": [template.center.re, template.center.im],
        "domain": [list(pair) for pair in template.domain] if template.domain else None,
        "coefficients": [
            {"term": label, "exponents": list(exps), "real": g_r, "imag": g_i}
            for label, exps, g_r, g_i in template.coefficient_table()
        ],
    }


def template_from_dict(data, source=None):
    if not isinstance(data, dict):
        raise TemplateFormatError("expected a JSON object", source)
    if data.get("format_version") != TEMPLATE_FORMAT_VERSION:
        raise TemplateFormatError(
            f"unsupported format_version {data.get('format_version')!r}, expected {TEMPLATE_FORMAT_VERSION}", source)
    try:
        kind = GlassKind(data["kind"])
        order = data["order"]
        exps = monomial_exponents(order)
        entries = data["coefficients"]
        center = SplitPhasor(*data.get("center", (0.0, 0.0)))
    except KeyError as err:
        raise TemplateFormatError(f"missing field {err}", source) from None
    except (ValueError, TypeError) as err:
        raise TemplateFormatError(str(err), source) from None

    if not isinstance(entries, list) or len(entries) != len(exps):
        count = len(entries) if isinstance(entries, list) else "no"
        raise TemplateFormatError(f"order {order} needs {len(exps)} coefficients, file has {count}", source)
    index = {e: k for k, e in enumerate(exps)}
    coeffs_r = np.zeros(len(exps))
    coeffs_i = np.zeros(len(exps))
    seen = set()
    for entry in entries:
        try:
            e = tuple(int(x) for x in entry["exponents"])
            k = index[e]
            coeffs_r[k], coeffs_i[k] = float(entry["real"]), float(entry["imag"])
        except (KeyError, TypeError, ValueError):
            raise TemplateFormatError(f"bad coefficient entry {entry!r}", source) from None
        if e in seen:
            raise TemplateFormatError(f"duplicate coefficient for {monomial_label(e)}", source)
        seen.add(e)
    try:
        return GlassTemplate(kind, order, center, coeffs_r, coeffs_i,
                             data.get("units", "per-unit"), data.get("domain"))
    except (ValueError, TypeError) as err:
        raise TemplateFormatError(str(err), source) from None


def save_template(template, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(template_to_dict(template), f, indent=2)
        f.write("\n")


def load_template(path):
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except OSError as err:
        raise TemplateFormatError(f"cannot read template: {err.strerror}", str(path)) from None
    except UnicodeDecodeError:
        raise TemplateFormatError("template file is not valid text", str(path)) from None
    except json.JSONDecodeError as err:
        raise TemplateFormatError(f"invalid JSON at line {err.lineno}: {err.msg}", str(path)) from None
    return template_from_dict(data, str(path))


# Result exports

def solution_frame(result, case):
    """One row per bus and one per device, plot-ready."""
    rows = []
    for bus, v in zip(case.buses, result.state):
        rows.append({
            "kind": "bus", "bus": bus.id, "type": bus.type,
            "v_re": v.re, "v_im": v.im, "v_mag": v.magnitude(), "v_angle_deg": v.angle(),
        })
    for entry in result.device_report():
        rows.append({"kind": "device", "bus": case.buses[entry["bus"]].id, "type": entry["type"],
                     "i_re": entry["i_re"], "i_im": entry["i_im"], "p": entry["p"], "q": entry["q"]})
    columns = ["kind", "bus", "type", "v_re", "v_im", "v_mag", "v_angle_deg", "i_re", "i_im", "p", "q"]
    return pd.DataFrame(rows, columns=columns)


def history_frame(result):
    return pd.DataFrame(
        [(k + 1, dv, kcl) for k, (dv, kcl) in enumerate(result.residual_history)],
        columns=["iteration", "dv_inf", "kcl_inf"],
    )


def save_solution(result, case, path):
    """Bus and device table, plus the residual history next to it (<stem>_history.csv)."""
    path = Path(path)
    solution_frame(result, case).to_csv(path, index=False, float_format="%.17g")
    history_path = path.with_name(path.stem + "_history.csv")
    history_frame(result).to_csv(history_path, index=False, float_format="%.17g")
    return path, history_path


def save_report(report, path):
    report.to_frame().to_csv(path, index=False, float_format="%.17g")


def save_system(system, directory, iteration):
    """Assembled matrix and right-hand side of one iteration, rows and columns labeled."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    labels = system.labels()
    pd.DataFrame(system.matrix, index=labels, columns=labels).to_csv(
        directory / f"matrix_{iteration}.csv", float_format="%.17g")
    pd.DataFrame({"rhs": system.rhs}, index=labels).to_csv(
        directory / f"rhs_{iteration}.csv", float_format="%.17g")
