"""Smoke test: every module imports and every shipped data file loads."""

import importlib
import json
import os

import pytest

from data_io import load_case, load_measurements

MODULES = ["errors", "settings", "split_circuit", "glass_model", "devices",
           "glass_fitting", "data_io", "power_flow", "cli"]


@pytest.mark.parametrize("name", MODULES)
def test_module_imports(name):
    assert importlib.import_module(name) is not None


@pytest.mark.parametrize("name", ["two_bus.json", "two_bus_infeasible.json", "im_case_si.json"])
def test_case_loads(data_dir, name):
    case = load_case(os.path.join(data_dir, name))
    assert case.n_buses == 2


def test_reference_measurements_load(data_dir):
    assert len(load_measurements(os.path.join(data_dir, "im_reference.csv"))) == 10


@pytest.mark.parametrize("name", ["im_motor.json", "im_sweep.json", "im_case_glass.json"])
def test_json_inputs_parse(data_dir, name):
    with open(os.path.join(data_dir, name)) as f:
        assert isinstance(json.load(f), dict)
