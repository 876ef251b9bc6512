import sys

import pytest

from pvids.attack import ScenarioSetting, scenario_pvs
from pvids.grid import default_network, default_pv_placements
from pvids.telemetry import ProfileParams, generate_dataset, params_dict, synth_profiles


@pytest.fixture(scope="session")
def net():
    return default_network()


@pytest.fixture(scope="session")
def day_profiles():
    return synth_profiles(1, seed=3)


def make_dataset(net, setting_id, profiles, seed, missing, out_dir=None):
    setting = ScenarioSetting.get(setting_id)
    pvs = scenario_pvs(setting, default_pv_placements())
    extra = {"days": len(profiles) // 720, "profile_params": params_dict(ProfileParams()), "maxp_limit_frac": 0.3}
    return generate_dataset(net, pvs, setting, profiles, seed, missing, out_dir, meta_extra=extra)


@pytest.fixture(scope="session")
def s4_day(net, day_profiles, tmp_path_factory):
    out = tmp_path_factory.mktemp("s4_day")
    return make_dataset(net, "S4", day_profiles, 3, True, out), out


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.SUMMARY:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.SUMMARY, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
        terminalreporter.write_line(line)
