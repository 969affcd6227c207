import json

import pytest

from clusterfel import config, roundsfit

FAST_OVERRIDES = {
    "scenario": {"num_clients": 6, "num_classes": 6, "samples_per_client": [80] * 6, "fraction": 0.5, "dim": 8},
    "fading": {"num_draws": 200},
    "train": {"max_rounds": 40},
    "calibration": {"num_clients": 6, "samples": 60, "fractions": [0.0, 0.5, 1.0], "seeds": [0]},
    "ssca": {"inner_iters": 3, "outer_iters": 4},
    "topology": {"closeness_threshold": 0.0, "rate_threshold_bps": 0.0},
}


@pytest.fixture
def round_model_path(tmp_path):
    p = tmp_path / "round_model.json"
    roundsfit.RoundModel((0.5, -1.83, 1.7), (0.0, 2.0), 0.0).save(p)
    return p


@pytest.fixture
def fast_cfg(round_model_path):
    """Small scenario with a fixed round model, so no calibration training runs."""
    return config.load_config(overrides={**FAST_OVERRIDES,
                                         "calibration": {**FAST_OVERRIDES["calibration"],
                                                         "round_model": str(round_model_path)}})


@pytest.fixture
def fast_cfg_file(tmp_path, fast_cfg):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(fast_cfg))
    return p


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
