import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from botuq.bnn import VariationalLinearLayer  # noqa: E402

_PARAM_NAMES = ["qz_mean", "qz_log_var", "weight_mean", "weight_log_var", "bias_mean", "bias_log_var",
                "r_c", "r_b1", "r_b2", "r_mean0", "r_log_var0"]


def build_kl_toy():
    """2-input, 1-output layer with flow length 2 and non-trivial flows / auxiliary density."""
    layer = VariationalLinearLayer(2, 1, 2, np.random.default_rng(7), init_log_var=-1.0)
    layer.weight_mean.values = np.array([[1.2], [-0.7]])
    layer.weight_log_var.values = np.array([[-1.5], [-0.8]])
    layer.bias_mean.values = np.array([0.3])
    layer.bias_log_var.values = np.array([-2.0])
    layer.qz_mean.values = np.array([1.0, 0.8])
    layer.qz_log_var.values = np.array([-2.0, -1.5])
    flows = {
        "flow": [([0.9, -0.4], [0.7, 0.5], 0.2), ([-0.3, 1.1], [0.4, -0.6], -0.1)],
        "aux_flow": [([0.5, 0.5], [-0.3, 0.8], 0.05), ([1.0, -0.2], [0.2, 0.3], 0.3)],
    }
    for attr, spec in flows.items():
        for step, (w, u, b) in zip(getattr(layer, attr).steps, spec):
            step.w.values = np.array(w)
            step.u.values = np.array(u)
            step.b.values = np.array([b])
    layer.r_c.values = np.array([[0.9]])
    layer.r_b1.values = np.array([0.4, -0.3])
    layer.r_b2.values = np.array([0.5, 0.2])
    layer.r_mean0.values = np.array([0.9, 1.1])
    layer.r_log_var0.values = np.array([-1.0, -0.5])
    params = {k: getattr(layer, k).values.copy() for k in _PARAM_NAMES}
    for attr in flows:
        params[attr] = [(s.w.values.copy(), s.u.values.copy(), float(s.b.values[0])) for s in getattr(layer, attr).steps]
    return layer, params


@pytest.fixture
def kl_toy():
    return build_kl_toy()


# (criterion, passed, detail) rows filled by test_acceptance.py
ACCEPTANCE: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
