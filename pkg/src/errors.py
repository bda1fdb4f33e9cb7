"""Exception hierarchy shared by every gridglass module."""


class GridGlassError(Exception):
    """Base class for all gridglass errors."""

    exit_code = 1


class InputError(GridGlassError):
    """Bad user input: malformed files, missing data, bad configuration."""

    exit_code = 1


class NumericalError(GridGlassError):
    """The numbers did not work out: singular systems, degenerate fits."""

    exit_code = 2


class ConfigError(InputError):
    def __init__(self, variable, value, expected):
        self.variable = variable
        self.value = value
        super().__init__(f"{variable}={value!r} is invalid, expected {expected}")


class SingularSystemError(NumericalError):
    def __init__(self, row, label=None, pivot=0.0):
        self.row = row
        self.label = label
        self.pivot = pivot
        where = f"row {row}" + (f" ({label})" if label else "")
        super().__init__(f"singular system at {where}: pivot {pivot:.3e}")


class VoltageCollapseError(NumericalError):
    def __init__(self, magnitude, floor, bus=None):
        self.magnitude = magnitude
        self.floor = floor
        self.bus = bus
        at = f" at bus {bus}" if bus is not None else ""
        super().__init__(f"voltage collapse at device{at}: |V|={magnitude:.3e} <= {floor:.1e}")


class TorqueCapabilityError(NumericalError):
    def __init__(self, torque, breakdown_torque, reason):
        self.torque = torque
        self.breakdown_torque = breakdown_torque
        super().__init__(
            f"torque exceeds capability: T={torque:.6g} N*m, "
            f"breakdown T={breakdown_torque:.6g} N*m ({reason})"
        )


class LoadDomainError(InputError):
    """Load model evaluated outside its domain (e.g. 0**negative exponent)."""


class InsufficientRecordsError(InputError):
    def __init__(self, required, available):
        self.required = required
        self.available = available
        super().__init__(f"need at least {required} records, got {available}")


class DegenerateExcitationError(NumericalError):
    def __init__(self, monomials):
        self.monomials = list(monomials)
        super().__init__(
            "degenerate excitation: unidentifiable monomials " + ", ".join(self.monomials)
        )


class CaseFormatError(InputError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if path:
            where.append(path)
        prefix = f"[{' '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class MeasurementFormatError(InputError):
    def __init__(self, message, row=None):
        self.row = row
        prefix = f"row {row}: " if row is not None else ""
        super().__init__(prefix + message)


class TemplateFormatError(InputError):
    def __init__(self, message, path=None):
        self.path = path
        prefix = f"{path}: " if path else ""
        super().__init__(prefix + message)
