import json

import numpy as np
import pytest

from flowdrop.errors import (
    ConfigError,
    CyclicNetwork,
    DuplicateLinkInRoute,
    DuplicatePath,
    EmptyRoute,
    NonPositiveParameter,
    NotUpstreamTree,
    UnknownLink,
    UnsaturableLink,
)
from flowdrop.topology import analyze_tree, build_linear, linear_length, load_topology, validate_topology

from conftest import TWO_LEAF, random_acyclic


def cfg(routes, caps=None):
    links = sorted({l for r in routes for l in r})
    caps = caps or {}
    return {
        "links": [{"id": l, "capacity": caps.get(l, 1.0)} for l in links],
        "classes": [
            {"id": k, "route": list(r), "access_rate": 1.0, "lambda": 0.1, "mu": 1.0} for k, r in enumerate(routes)
        ],
    }


def test_linear_spec_is_valid():
    top = validate_topology(cfg([[1, 2], [1], [2]]))
    assert top.link_order == (1, 2)
    assert top.classes[0].route == (1, 2)


def test_cycle_rejected():
    with pytest.raises(CyclicNetwork):
        validate_topology(cfg([[1, 2], [2, 1]]))


def test_route_errors():
    with pytest.raises(DuplicateLinkInRoute):
        validate_topology(cfg([[1, 1]]))
    s = cfg([[1]])
    s["classes"][0]["route"] = []
    with pytest.raises(EmptyRoute):
        validate_topology(s)
    s = cfg([[1]])
    s["classes"][0]["route"] = [9]
    with pytest.raises(UnknownLink):
        validate_topology(s)


@pytest.mark.parametrize("field,value", [("access_rate", 0.0), ("mu", -1.0), ("lambda", -0.1)])
def test_non_positive_parameters(field, value):
    s = cfg([[1]])
    s["classes"][0][field] = value
    with pytest.raises(NonPositiveParameter):
        validate_topology(s)
    s = cfg([[1]], {1: 0.0})
    with pytest.raises(NonPositiveParameter):
        validate_topology(s)


def test_unknown_and_missing_fields():
    s = cfg([[1]])
    s["classes"][0]["weight"] = 2
    with pytest.raises(ConfigError):
        validate_topology(s)
    s = cfg([[1]])
    del s["links"][0]["capacity"]
    with pytest.raises(ConfigError):
        validate_topology(s)


def test_order_breaks_ties_by_declaration():
    # Links 2 and 3 are both free at the start; 2 is declared first.
    top = validate_topology(cfg([[3, 1], [2]]))
    assert top.link_order == (2, 3, 1)


def test_validate_is_idempotent():
    top = validate_topology(cfg([[2, 3], [1, 3], [3]]))
    again = validate_topology(top)
    assert again.link_order == top.link_order
    assert again.classes == top.classes


def test_random_topologies_routes_increase():
    rng = np.random.default_rng(5)
    for _ in range(200):
        top = random_acyclic(rng)
        pos = {l: i for i, l in enumerate(top.link_order)}
        for c in top.classes:
            idx = [pos[l] for l in c.route]
            assert idx == sorted(idx) and len(set(idx)) == len(idx)


def test_build_linear_shapes():
    top = build_linear(2, [1.0, 1.0])
    assert [c.route for c in top.classes] == [(1, 2), (1,), (2,)]
    assert linear_length(top) == 2
    assert build_linear(1).n_classes == 2
    assert build_linear(4, 1.0).n_classes == 5
    with pytest.raises(NonPositiveParameter):
        build_linear(2, [1.0, 0.0])


def test_load_topology_roundtrip(tmp_path, unit_line):
    path = tmp_path / "net.json"
    path.write_text(json.dumps(unit_line.to_config()))
    top = load_topology(path)
    assert top.rho == unit_line.rho
    assert top.link_order == unit_line.link_order


def test_analyze_two_leaf_tree(two_leaf):
    meta = analyze_tree(two_leaf)
    assert meta.root == 1
    assert set(meta.children[1]) == {2, 3}
    assert meta.entry == {2: 0, 3: 1}
    assert meta.effective_capacity[2] == pytest.approx(0.5)
    assert meta.path_to_root(2) == [2, 1]


def test_analyze_tree_rejections():
    with pytest.raises(NotUpstreamTree):
        analyze_tree(build_linear(2))
    with pytest.raises(DuplicatePath):
        analyze_tree(validate_topology(cfg([[2, 1], [2, 1]])))
    # Link 2 feeds link 1 alone with the same capacity and no class enters it.
    with pytest.raises(UnsaturableLink) as err:
        analyze_tree(validate_topology(cfg([[3, 2, 1], [1]])))
    assert 2 in err.value.links


def test_reversed_routes_form_tree():
    top = validate_topology(TWO_LEAF)
    meta = analyze_tree(top)
    for c in top.classes:
        assert c.route[-1] == meta.root
        for a, b in zip(c.route, c.route[1:]):
            assert meta.parent[a] == b
