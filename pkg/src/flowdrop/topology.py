"""Network topologies: links, flow classes, linear networks and upstream trees."""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

from .errors import (
    ConfigError,
    CyclicNetwork,
    DuplicateLinkInRoute,
    DuplicatePath,
    EmptyRoute,
    NonPositiveParameter,
    NotLinearNetwork,
    NotUpstreamTree,
    UnknownLink,
    UnsaturableLink,
)

_LINK_FIELDS = {"id", "capacity"}
_CLASS_FIELDS = {"id", "route", "access_rate", "lambda", "mu"}
_TOP_FIELDS = {"links", "classes"}


@dataclass(frozen=True)
class FlowClass:
    """A class of flows sharing a route and traffic parameters.

    ``arrival_rate`` may be zero (a class with no traffic); access and service
    rates must be strictly positive.
    """

    id: int
    route: tuple[int, ...]
    access_rate: float
    arrival_rate: float
    service_rate: float

    @property
    def rho(self) -> float:
        return self.arrival_rate / self.service_rate

    @property
    def length(self) -> int:
        return len(self.route)


@dataclass(frozen=True)
class Topology:
    """An acyclic network. Immutable once validated.

    ``capacities`` maps link id to capacity in declaration order and
    ``link_order`` is a permutation of the link ids under which every route is
    strictly increasing. Rate and count vectors are indexed by position in
    ``classes``.
    """

    capacities: Mapping[int, float]
    classes: tuple[FlowClass, ...]
    link_order: tuple[int, ...] = field(default=())

    @property
    def n_links(self) -> int:
        return len(self.capacities)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def link_ids(self) -> tuple[int, ...]:
        return tuple(self.capacities)

    @property
    def rho(self) -> tuple[float, ...]:
        return tuple(c.rho for c in self.classes)

    @property
    def access_rates(self) -> tuple[float, ...]:
        return tuple(c.access_rate for c in self.classes)

    @property
    def arrival_rates(self) -> tuple[float, ...]:
        return tuple(c.arrival_rate for c in self.classes)

    @property
    def service_rates(self) -> tuple[float, ...]:
        return tuple(c.service_rate for c in self.classes)

    def class_index(self, class_id) -> int:
        for k, c in enumerate(self.classes):
            if c.id == class_id:
                return k
        raise KeyError(class_id)

    @cached_property
    def hops_by_link(self) -> dict[int, tuple[tuple[int, int], ...]]:
        """For each link, the ``(class index, hop)`` pairs crossing it (hop is 1-based)."""
        hops: dict[int, list[tuple[int, int]]] = {l: [] for l in self.capacities}
        for k, c in enumerate(self.classes):
            for i, l in enumerate(c.route, start=1):
                hops[l].append((k, i))
        return {l: tuple(v) for l, v in hops.items()}

    def link_loads(self) -> dict[int, float]:
        """Offered load ``sum of rho_k over classes crossing l`` for every link."""
        loads = {l: 0.0 for l in self.capacities}
        for c in self.classes:
            for l in c.route:
                loads[l] += c.rho
        return loads

    def with_classes(self, classes: Sequence[FlowClass]) -> "Topology":
        return validate_topology(Topology(dict(self.capacities), tuple(classes)))

    def to_config(self) -> dict:
        return {
            "links": [{"id": l, "capacity": c} for l, c in self.capacities.items()],
            "classes": [
                {
                    "id": c.id,
                    "route": list(c.route),
                    "access_rate": c.access_rate,
                    "lambda": c.arrival_rate,
                    "mu": c.service_rate,
                }
                for c in self.classes
            ],
        }


def _positive(value, what: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be a number, got {value!r}") from None
    if not math.isfinite(v) or v <= 0:
        raise NonPositiveParameter(f"{what} must be finite and > 0, got {value!r}")
    return v


def _non_negative(value, what: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be a number, got {value!r}") from None
    if not math.isfinite(v) or v < 0:
        raise NonPositiveParameter(f"{what} must be finite and >= 0, got {value!r}")
    return v


def _check_fields(obj, allowed: set[str], what: str) -> None:
    if not isinstance(obj, Mapping):
        raise ConfigError(f"{what} must be an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown field(s) in {what}: {sorted(unknown)}")
    missing = allowed - set(obj)
    if missing:
        raise ConfigError(f"missing field(s) in {what}: {sorted(missing)}")


def _parse_config(cfg: Mapping) -> tuple[dict[int, float], list[FlowClass]]:
    _check_fields(cfg, _TOP_FIELDS, "topology")
    capacities: dict[int, float] = {}
    for entry in cfg["links"]:
        _check_fields(entry, _LINK_FIELDS, "link")
        lid = entry["id"]
        if not isinstance(lid, int) or isinstance(lid, bool):
            raise ConfigError(f"link id must be an integer, got {lid!r}")
        if lid in capacities:
            raise ConfigError(f"duplicate link id {lid}")
        capacities[lid] = _positive(entry["capacity"], f"capacity of link {lid}")
    classes = []
    seen_ids = set()
    for entry in cfg["classes"]:
        _check_fields(entry, _CLASS_FIELDS, "class")
        cid = entry["id"]
        if cid in seen_ids:
            raise ConfigError(f"duplicate class id {cid!r}")
        seen_ids.add(cid)
        route = entry["route"]
        if not isinstance(route, (list, tuple)):
            raise ConfigError(f"route of class {cid!r} must be a list")
        classes.append(
            FlowClass(
                id=cid,
                route=tuple(route),
                access_rate=_positive(entry["access_rate"], f"access_rate of class {cid!r}"),
                arrival_rate=_non_negative(entry["lambda"], f"lambda of class {cid!r}"),
                service_rate=_positive(entry["mu"], f"mu of class {cid!r}"),
            )
        )
    return capacities, classes


def _link_order(capacities: Mapping[int, float], classes: Sequence[FlowClass]) -> tuple[int, ...]:
    # Kahn's algorithm on the "immediately precedes on some route" relation;
    # ties resolved by declaration order.
    position = {l: i for i, l in enumerate(capacities)}
    succ: dict[int, set[int]] = {l: set() for l in capacities}
    indeg = {l: 0 for l in capacities}
    for c in classes:
        for a, b in zip(c.route, c.route[1:]):
            if b not in succ[a]:
                succ[a].add(b)
                indeg[b] += 1
    ready = [(position[l], l) for l in capacities if indeg[l] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        _, l = heapq.heappop(ready)
        order.append(l)
        for m in succ[l]:
            indeg[m] -= 1
            if indeg[m] == 0:
                heapq.heappush(ready, (position[m], m))
    if len(order) != len(capacities):
        stuck = sorted(l for l in capacities if indeg[l] > 0)
        raise CyclicNetwork(f"no link ordering makes every route increasing; links in a cycle: {stuck}")
    return tuple(order)


def validate_topology(cfg: Mapping | Topology) -> Topology:
    """Validate a raw configuration (or an existing topology) and return a Topology.

    Raises CyclicNetwork, DuplicateLinkInRoute, NonPositiveParameter,
    EmptyRoute, UnknownLink or ConfigError.
    """
    if isinstance(cfg, Topology):
        capacities = dict(cfg.capacities)
        classes = list(cfg.classes)
        for l, c in capacities.items():
            _positive(c, f"capacity of link {l}")
        for c in classes:
            _positive(c.access_rate, f"access_rate of class {c.id!r}")
            _non_negative(c.arrival_rate, f"lambda of class {c.id!r}")
            _positive(c.service_rate, f"mu of class {c.id!r}")
    else:
        capacities, classes = _parse_config(cfg)

    for c in classes:
        if len(c.route) == 0:
            raise EmptyRoute(f"class {c.id!r} has an empty route")
        if len(set(c.route)) != len(c.route):
            raise DuplicateLinkInRoute(f"class {c.id!r} visits a link twice: {list(c.route)}")
        for l in c.route:
            if l not in capacities:
                raise UnknownLink(f"class {c.id!r} uses undeclared link {l!r}")
    order = _link_order(capacities, classes)
    return Topology(capacities, tuple(classes), order)


def load_topology(path) -> Topology:
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return validate_topology(cfg)


def _broadcast(value, n: int, what: str) -> list[float]:
    if isinstance(value, (int, float)):
        return [float(value)] * n
    values = [float(v) for v in value]
    if len(values) != n:
        raise ConfigError(f"{what}: expected {n} values, got {len(values)}")
    return values


def build_linear(
    L: int,
    capacities=1.0,
    *,
    access_rates=1.0,
    arrival_rates=0.0,
    service_rates=1.0,
) -> Topology:
    """Linear network with links ``1..L``.

    Class 0 crosses every link; class ``l`` (``1 <= l <= L``) crosses link ``l``
    only. Per-class parameters are scalars or sequences of length ``L + 1``.
    """
    if L < 1:
        raise ConfigError(f"a linear network needs L >= 1, got {L}")
    caps = _broadcast(capacities, L, "capacities")
    acc = _broadcast(access_rates, L + 1, "access_rates")
    lam = _broadcast(arrival_rates, L + 1, "arrival_rates")
    mu = _broadcast(service_rates, L + 1, "service_rates")
    links = {l: _positive(caps[l - 1], f"capacity of link {l}") for l in range(1, L + 1)}
    classes = [FlowClass(0, tuple(range(1, L + 1)), acc[0], lam[0], mu[0])]
    classes += [FlowClass(l, (l,), acc[l], lam[l], mu[l]) for l in range(1, L + 1)]
    return validate_topology(Topology(links, tuple(classes)))


def linear_from_rho(rho: Sequence[float], access=1.0, capacity=1.0) -> Topology:
    """Linear network with ``L = len(rho) - 1``, unit service rates and ``lambda = rho``."""
    return build_linear(len(rho) - 1, capacity, access_rates=access, arrival_rates=list(rho))


def linear_length(topology: Topology) -> int:
    """Return ``L`` if ``topology`` is a linear network in canonical form, else raise.

    Canonical form: ``L + 1`` classes, class index 0 routed over all links in
    order, class index ``l`` routed over the ``l``-th link of that route only.
    """
    K = topology.n_classes
    if K < 2:
        raise NotLinearNetwork("a linear network needs at least two classes")
    main = topology.classes[0].route
    L = len(main)
    if K != L + 1 or topology.n_links != L:
        raise NotLinearNetwork(f"expected {L + 1} classes over {L} links")
    for l in range(1, L + 1):
        if topology.classes[l].route != (main[l - 1],):
            raise NotLinearNetwork(f"class index {l} must cross link {main[l - 1]} only")
    return L


@dataclass(frozen=True)
class TreeMeta:
    """Structure of an upstream tree.

    ``children[l]`` is the set S_l of links feeding link ``l``; ``entry[l]`` is
    the index of the class entering the network at ``l`` (if any);
    ``parent[l]`` is the next link towards the root; ``effective_capacity[l]``
    is ``C_l`` times the product over downstream links ``m`` of
    ``C_m / sum(C_j for j in S_m)``.
    """

    root: int
    children: Mapping[int, tuple[int, ...]]
    parent: Mapping[int, int | None]
    entry: Mapping[int, int]
    effective_capacity: Mapping[int, float]
    classes_through: Mapping[int, tuple[int, ...]]

    def path_to_root(self, link: int) -> list[int]:
        path = [link]
        while self.parent[path[-1]] is not None:
            path.append(self.parent[path[-1]])
        return path


def analyze_tree(topology: Topology, *, check_saturable: bool = True) -> TreeMeta:
    """Check the upstream-tree conditions and return the tree structure.

    Raises NotUpstreamTree, DuplicatePath or UnsaturableLink.
    """
    classes = topology.classes
    if not classes:
        raise NotUpstreamTree("no classes")
    roots = {c.route[-1] for c in classes}
    if len(roots) != 1:
        raise NotUpstreamTree(f"routes end on different links {sorted(roots)}; no common root")
    root = roots.pop()

    seen_routes: dict[tuple[int, ...], int] = {}
    for k, c in enumerate(classes):
        if c.route in seen_routes:
            j = seen_routes[c.route]
            raise DuplicatePath(f"classes {classes[j].id!r} and {c.id!r} have the same route")
        seen_routes[c.route] = k

    for j in range(len(classes)):
        rj = classes[j].route
        for k in range(j + 1, len(classes)):
            rk = classes[k].route
            shared = set(rj) & set(rk)
            m = 0
            while m < min(len(rj), len(rk)) and rj[-1 - m] == rk[-1 - m]:
                m += 1
            if shared != set(rj[len(rj) - m:]):
                raise NotUpstreamTree(
                    f"classes {classes[j].id!r} and {classes[k].id!r} share links "
                    f"{sorted(shared)} that are not a common suffix"
                )

    parent: dict[int, int | None] = {l: None for l in topology.capacities}
    children: dict[int, list[int]] = {l: [] for l in topology.capacities}
    entry: dict[int, int] = {}
    through: dict[int, list[int]] = {l: [] for l in topology.capacities}
    for k, c in enumerate(classes):
        entry[c.route[0]] = k
        for l in c.route:
            through[l].append(k)
        for a, b in zip(c.route, c.route[1:]):
            parent[a] = b
            if a not in children[b]:
                children[b].append(a)

    caps = topology.capacities
    if check_saturable:
        bad = [
            l
            for l in topology.link_order
            if l not in entry and sum(caps[j] for j in children[l]) <= caps[l]
        ]
        if bad:
            raise UnsaturableLink(f"links {bad} can never be saturated; remove them from the configuration", bad)

    eff: dict[int, float] = {}
    for l in reversed(topology.link_order):
        p = parent[l]
        if p is None:
            eff[l] = caps[l]
        else:
            eff[l] = caps[l] * eff[p] / sum(caps[j] for j in children[p])

    order_pos = {l: i for i, l in enumerate(topology.link_ids)}
    return TreeMeta(
        root=root,
        children={l: tuple(sorted(v, key=order_pos.get)) for l, v in children.items()},
        parent=parent,
        entry=entry,
        effective_capacity=eff,
        classes_through={l: tuple(v) for l, v in through.items()},
    )
