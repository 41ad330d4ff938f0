from importlib import resources

import numpy as np
import pytest

from noir.network import EXT, RoadSpec, build_network
from noir.phases import PhaseTable, Signal
from noir.scenario import load_scenario

SCENARIOS = ("t1.noir", "t2.noir", "sec6.noir")


def scenario_path(name):
    return resources.files("noir") / "scenarios" / name


def make_t1():
    """inlet -> interior -> outlet over a lightless junction."""
    return build_network([RoadSpec(1, EXT, 1, 2), RoadSpec(2, 1, EXT, 1)], {1: "C"})


def make_t2(threshold=3):
    """Two 2-element inlet roads merging at a two-phase light into one exit road."""
    net = build_network(
        [RoadSpec(1, EXT, 1, 2), RoadSpec(2, EXT, 1, 2), RoadSpec(3, 1, EXT, 2)], {1: "C"})
    tbl = PhaseTable((Signal(1, (frozenset({1}), frozenset({2})), threshold),))
    return net, tbl


def make_three_lights():
    """Three lit junctions in a row, each also fed by a side street, plus a loop back."""
    roads = [
        RoadSpec(1, EXT, 1, 2), RoadSpec(2, EXT, 1, 2),
        RoadSpec(3, 1, 2, 2), RoadSpec(4, EXT, 2, 2),
        RoadSpec(5, 2, 3, 2), RoadSpec(6, EXT, 3, 2),
        RoadSpec(7, 3, EXT, 2), RoadSpec(8, 3, 1, 3),
    ]
    net = build_network(roads, {1: "C", 2: "C", 3: "C"})
    tbl = PhaseTable((
        Signal(1, (frozenset({1}), frozenset({2}), frozenset({8})), 2),
        Signal(2, (frozenset({3}), frozenset({4})), 3),
        Signal(3, (frozenset({5}), frozenset({6})), 1),
    ))
    return net, tbl


@pytest.fixture
def t1():
    return make_t1()


@pytest.fixture
def t2():
    return make_t2()


@pytest.fixture
def three_lights():
    return make_three_lights()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def sec6():
    return load_scenario(scenario_path("sec6.noir"))
