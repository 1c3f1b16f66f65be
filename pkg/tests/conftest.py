import numpy as np
import pytest

from flowdrop.topology import Topology, FlowClass, build_linear, validate_topology

TWO_LEAF = {
    "links": [{"id": 1, "capacity": 1.0}, {"id": 2, "capacity": 1.0}, {"id": 3, "capacity": 1.0}],
    "classes": [
        {"id": "A", "route": [2, 1], "access_rate": 1.0, "lambda": 0.2, "mu": 1.0},
        {"id": "B", "route": [3, 1], "access_rate": 1.0, "lambda": 0.4, "mu": 1.0},
    ],
}

# Lines collected by the acceptance module, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def linear(rho, access=1.0):
    return build_linear(len(rho) - 1, 1.0, access_rates=access, arrival_rates=list(rho), service_rates=1.0)


@pytest.fixture
def unit_line():
    return linear([0.2, 0.3, 0.3])


@pytest.fixture
def two_leaf():
    return validate_topology(TWO_LEAF)


def random_acyclic(rng, max_links=6, max_classes=8):
    """Random acyclic topology: routes follow a hidden random order of the links."""
    n_links = int(rng.integers(1, max_links + 1))
    hidden = rng.permutation(n_links) + 1
    caps = {l: float(rng.uniform(0.2, 3.0)) for l in range(1, n_links + 1)}
    classes = []
    for k in range(int(rng.integers(1, max_classes + 1))):
        size = int(rng.integers(1, n_links + 1))
        pos = np.sort(rng.choice(n_links, size=size, replace=False))
        route = tuple(int(hidden[p]) for p in pos)
        classes.append(FlowClass(k, route, float(rng.uniform(0.1, 2.0)), float(rng.uniform(0, 1)), 1.0))
    return validate_topology(Topology(caps, tuple(classes)))


def random_tree(rng, max_links=7):
    """Random upstream tree rooted at link 1; every leaf, and some inner links, get an entering class."""
    n_links = int(rng.integers(1, max_links + 1))
    parent = {1: None}
    for l in range(2, n_links + 1):
        parent[l] = int(rng.integers(1, l))
    children = {l: [m for m in parent if parent[m] == l] for l in parent}
    entries = [l for l in parent if not children[l] or rng.random() < 0.4]
    classes = []
    for k, l in enumerate(entries):
        route = [l]
        while parent[route[-1]] is not None:
            route.append(parent[route[-1]])
        classes.append(FlowClass(k, tuple(route), float(rng.uniform(0.1, 2.0)), 0.1, 1.0))
    caps = {l: float(rng.uniform(0.2, 2.0)) for l in parent}
    return validate_topology(Topology(caps, tuple(classes)))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
