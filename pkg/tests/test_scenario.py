import warnings

import numpy as np
import pytest

from noir.conservation import default_tendency
from noir.phases import phase_space_size
from noir.scenario import ScenarioError, ScenarioWarning, load_scenario, parse_scenario

from conftest import SCENARIOS, make_t2, scenario_path

T2_TEXT = scenario_path("t2.noir").read_text()


def rules_of(text):
    with pytest.raises(ScenarioError) as info:
        parse_scenario(text)
    return info.value.rules


class TestShipped:
    def test_t2_matches_builder(self):
        sc = load_scenario(scenario_path("t2.noir"))
        net, tbl = make_t2()
        assert sc.network.roads == net.roads
        assert sc.table.signals == tbl.signals
        assert np.array_equal(sc.tendency.p, default_tendency(net, tbl).p)
        assert sc.config.mpc.budget == 1.0
        assert (sc.config.mpc.horizon, sc.config.rho.horizon) == (2, 3)

    def test_t1_override(self):
        sc = load_scenario(scenario_path("t1.noir"))
        assert sc.tendency.p[sc.network.element(2)] == 0.5

    def test_sec6_counts(self, sec6):
        net = sec6.network
        assert (len(net.roads), net.n_elements, net.n_inlets, net.n_outlets) == (53, 265, 8, 9)
        assert phase_space_size(sec6.table) == 559872
        assert sec6.config.mpc.budget == 54.0
        assert all(s.threshold == 3 for s in sec6.table.signals)
        # the tracked element is the second cell of road 33
        e = net.element(162)
        assert net.element_road[e] == 33 and net.element_pos[e] == 1

    @pytest.mark.parametrize("name", SCENARIOS)
    def test_no_warnings(self, name):
        with warnings.catch_warnings():
            warnings.simplefilter("error", ScenarioWarning)
            load_scenario(scenario_path(name))


class TestDiagnostics:
    def test_missing_params_warns(self):
        text = T2_TEXT.split("[params]")[0]
        with pytest.warns(ScenarioWarning, match="defaults"):
            sc = parse_scenario(text)
        assert sc.config.mpc.budget == 54.0

    def test_phase_road(self):
        assert "PHASE_ROAD" in rules_of(T2_TEXT.replace("1 2 2", "1 2 3"))

    def test_phase_order(self):
        assert "PHASE_ORDER" in rules_of(T2_TEXT.replace("1 2 2", "1 3 2"))

    def test_phase_cover(self):
        assert "PHASE_COVER" in rules_of(T2_TEXT.replace("1 2 2\n", ""))

    def test_phases_without_light(self):
        assert "SIGNAL_PHASES" in rules_of(T2_TEXT.replace("signal 1 3\n", ""))

    def test_dangling_road(self):
        assert "DANGLING" in rules_of(T2_TEXT.replace("3 1 EXT 2", "3 1 9 2"))

    def test_unknown_section_and_param(self):
        text = T2_TEXT + "colour red\n[extras]\nfoo 1\n"
        assert rules_of(text) == {"PARAM"} | {"UNKNOWN_SECTION"}

    def test_all_problems_reported_together(self):
        text = T2_TEXT.replace("1 C", "1 Q").replace("2 EXT 1 2", "2 EXT 1 x")
        with pytest.raises(ScenarioError) as info:
            parse_scenario(text)
        lines = [d.line for d in info.value.diagnostics]
        assert len(lines) == 2 and lines == sorted(lines)
        assert "line 3" in str(info.value)

    def test_network_error_is_wrapped(self):
        text = T2_TEXT.replace("3 1 EXT 2", "3 EXT EXT 2")
        assert rules_of(text) == {"NETWORK"}

    def test_bad_turn_sum(self):
        text = T2_TEXT.replace("[params]", "[tendency]\nq 2 5 0.4\n[params]")
        assert "TURN_SUM" in rules_of(text)

    def test_step_size_checked(self):
        assert "DYNAMICS" in rules_of(T2_TEXT + "dt 2\n")

    def test_light_at_boundary(self):
        text = T2_TEXT.replace("1 C", "1 C\n5 B").replace("signal 1 3", "signal 1 3\nsignal 5 2")
        assert "SIGNAL" in rules_of(text)

    def test_content_before_section(self):
        assert "NO_SECTION" in rules_of("u0 5\n" + T2_TEXT)

    def test_per_element_params(self):
        sc = parse_scenario(T2_TEXT + "x0 2 7.5\ngamma 3 2\n")
        net = sc.network
        assert sc.config.x0[net.state_index(net.element(2))] == 7.5
        assert sc.config.rho.weights[net.state_index(net.element(3))] == 2.0

    def test_param_on_outlet_rejected(self):
        assert "PARAM" in rules_of(T2_TEXT + "x0 6 1.0\n")
