import logging
import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from data_io import NetworkCase  # noqa: E402
from devices import IMParams, PQDevice, PQLoad, SlackDevice, SlackSource  # noqa: E402
from glass_model import GlassKind, GlassTemplate  # noqa: E402
from split_circuit import SplitPhasor  # noqa: E402

DATA_DIR = os.path.join(os.path.dirname(__file__), 'data')


@pytest.fixture(autouse=True)
def restore_logging():
    # the CLI points the root handler at the stderr of the test that ran it
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def data_dir():
    return DATA_DIR


@pytest.fixture
def machine():
    """Nominal 4-pole, 60 Hz induction machine (ohms)."""
    return IMParams(R_s=0.1, X_s=0.5, X_m=20.0, R_r=0.1, p=4, omega_s=377.0)


@pytest.fixture
def aggregate_template():
    """First-order voltage-dependent template of an aggregated load bus."""
    return GlassTemplate(
        GlassKind.VOLTAGE_DEPENDENT, 1, (0.0, 0.0),
        [0.0932, -8.86e-04, 0.0014],
        [-0.170, -0.0012, -0.0035],
    )


def make_two_bus(load, g=10.0, v_slack=(1.0, 0.0)):
    """Slack, one purely resistive branch of conductance g, and a PQ load (P, Q)."""
    case = NetworkCase("two-bus")
    slack = case.add_bus("slack", "source")
    bus = case.add_bus("pq", "load")
    case.add_branch(slack, bus, r=1.0 / g, x=0.0)
    case.add_device(SlackDevice(slack, SlackSource(SplitPhasor(*v_slack))))
    case.add_device(PQDevice(bus, PQLoad(*load)))
    return case


@pytest.fixture
def two_bus():
    return make_two_bus
