import numpy as np
import pytest

from dcvrt.distflow import NetworkTopology

ACCEPTANCE_LINES = []


def random_tree(rng, n, ratio=None, r_range=(0.002, 0.05), x_range=(0.005, 0.2)):
    """Random radial tree on ``n`` nodes hanging off ``pcc``.

    Each new node attaches to a uniformly chosen earlier node (or the root).
    With ``ratio`` set every line has ``r = ratio * x``.
    """
    names = [f"n{i}" for i in range(1, n + 1)]
    lines = []
    for i, name in enumerate(names):
        parent = "pcc" if i == 0 else (["pcc"] + names[:i])[rng.integers(0, i + 1)]
        x = rng.uniform(*x_range)
        r = ratio * x if ratio is not None else rng.uniform(*r_range)
        lines.append((parent, name, r, x))
    return NetworkTopology.from_lines(lines)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def small_document(**sections):
    """Three-device facility behind a stiff grid; fast to simulate. Sections given replace the defaults."""
    doc = {
        "name": "small",
        "s_base_mva": 100.0,
        "network": {"root": "pcc", "lines": [
            {"from": "pcc", "to": "mv", "r": 0.01, "x": 0.1},
            {"from": "mv", "to": "bess", "r": 0.001, "x": 0.01},
            {"from": "mv", "to": "cluster", "r": 0.001, "x": 0.01},
            {"from": "mv", "to": "cooling", "r": 0.001, "x": 0.01},
        ]},
        "devices": [
            {"name": "bess", "node": "bess", "type": "bess", "nameplate_mva": 20,
             "p_range_mw": [-20, 20], "q_range_mvar": [-20, 20]},
            {"name": "cluster", "node": "cluster", "type": "cluster", "nameplate_mva": 20, "flex_fraction": 0.2},
            {"name": "cooling", "node": "cooling", "type": "cooling", "nameplate_mva": 20, "flex_fraction": 0.2},
        ],
        "grid": {"model": "thevenin", "E": 1.0, "X_th": 0.2, "tau": 0.1, "events": []},
        "controller": {
            "type": "none",
            "centralized": {"delay_s": 0.02, "period_s": 0.01},
            "decentralized": {"delay_s": 0.0, "period_s": 0.005},
            "weights": {"q_v": 1.0, "w_p": {"bess": 1.0, "cluster": 5.0, "cooling": 5.0}, "w_q": {"bess": 1.0}},
            "gains": {"k_p": {"bess": 0.3}, "k_q": {"bess": 1.5}},
        },
        "vrt": {"curve": "iec62040-3"},
        "workload": {"source": "constant", "utilization": 0.5},
        "sim": {"dt": 0.001, "horizon": 0.5, "seed": 7},
    }
    doc.update(sections)
    return doc
