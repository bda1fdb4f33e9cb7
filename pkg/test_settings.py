import logging

import pytest

from errors import ConfigError
from settings import Settings, configure_logging

VARIABLES = ["GRIDGLASS_LOG_LEVEL", "GRIDGLASS_TOL_V", "GRIDGLASS_TOL_KCL", "GRIDGLASS_MAX_ITER",
             "GRIDGLASS_DAMPING", "GRIDGLASS_MIN_SYNTH_FRACTION", "GRIDGLASS_SEED"]


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in VARIABLES:
        monkeypatch.delenv(name, raising=False)


def test_defaults():
    assert Settings.from_env() == Settings()


def test_overrides(monkeypatch):
    monkeypatch.setenv("GRIDGLASS_TOL_V", "1e-10")
    monkeypatch.setenv("GRIDGLASS_MAX_ITER", "20")
    monkeypatch.setenv("GRIDGLASS_LOG_LEVEL", "debug")
    settings = Settings.from_env()
    assert settings.tol_v == 1e-10
    assert settings.max_iter == 20
    assert settings.log_level == "DEBUG"


def test_blank_value_keeps_default(monkeypatch):
    monkeypatch.setenv("GRIDGLASS_DAMPING", " ")
    assert Settings.from_env().damping == 1.0


@pytest.mark.parametrize("name, value", [
    ("GRIDGLASS_TOL_V", "small"),
    ("GRIDGLASS_TOL_KCL", "-1"),
    ("GRIDGLASS_MAX_ITER", "0"),
    ("GRIDGLASS_DAMPING", "1.5"),
    ("GRIDGLASS_MIN_SYNTH_FRACTION", "2"),
    ("GRIDGLASS_LOG_LEVEL", "LOUD"),
])
def test_invalid_values(monkeypatch, name, value):
    monkeypatch.setenv(name, value)
    with pytest.raises(ConfigError) as err:
        Settings.from_env()
    assert err.value.variable == name
    assert err.value.exit_code == 1


def test_logging_goes_to_stderr(capsys):
    configure_logging("INFO")
    logging.getLogger("gridglass.test").info("hello")
    captured = capsys.readouterr()
    assert captured.out == ""
    assert "hello" in captured.err
