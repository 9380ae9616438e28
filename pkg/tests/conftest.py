import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from evfdia.config import DATA_DIR
from evfdia.feeder import Feeder, build_linear_model, load_feeder

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def feeder33():
    return load_feeder(DATA_DIR / "ieee33.feeder")


@pytest.fixture(scope="session")
def lin33(feeder33):
    return build_linear_model(feeder33)


def two_bus(r=0.01, x=0.01, **kw):
    return Feeder(n_bus=2, from_bus=np.array([1]), to_bus=np.array([2]), r=np.array([r]),
                  x=np.array([x]), base_kv=12.66, base_mva=10.0, load_p=np.zeros(2),
                  load_q=np.zeros(2), **kw)


def nominal_injections(f, scale=1.0):
    return -scale * f.load_p[1:], -scale * f.load_q[1:]


@pytest.fixture(scope="session")
def model33(feeder33, lin33):
    from evfdia.estimation import build_measurement_model
    from evfdia.evcs import StationConfig, capacity_coefficients, charging_mean_power
    cfg = StationConfig(mode="flexible", stalls=120)
    dt = 1 / 6
    E = len(feeder33.evcs_buses)
    coeffs = [capacity_coefficients(cfg, dt)] * E
    mean_power = [charging_mean_power(cfg, dt)] * E
    return build_measurement_model(feeder33, lin33, coeffs, mean_power, stalls=[cfg.stalls] * E)


TOY_FEEDER = """\
# four-bus line used by the scenario tests
N 4 SLACK 1 BASEKV 12.66 BASEMVA 10
LINE 1 2 0.30 0.20
LINE 2 3 0.50 0.35
LINE 3 4 0.60 0.40
LOAD 2 300 150
LOAD 3 400 200
PMU 2
PMU 3
EVCS {evcs}
MONITOR 4
"""


def write_toy(tmp_path, evcs=4, horizon=2, **extra):
    """Write a toy feeder and a matching scenario YAML; returns the YAML path."""
    import yaml
    (tmp_path / "toy.feeder").write_text(TOY_FEEDER.format(evcs=evcs))
    cfg = {"name": "toy", "feeder": "toy.feeder", "horizon_slots": horizon, "seed": 7,
           "station": {"mode": "flexible", "stalls": 40, "arrival_rate": 6.0}}
    for key, value in extra.items():
        cfg[key] = value
    path = tmp_path / "toy.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
