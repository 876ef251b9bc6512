"""One noon frame under Setting 3: what the operator sees vs what the grid does."""
import numpy as np

from pvids.attack import ScenarioSetting, sample_attack, scenario_pvs
from pvids.grid import default_network, default_pv_placements
from pvids.telemetry import apparent_loss, extract_features, simulate, synth_profiles

net = default_network()
setting = ScenarioSetting.get("S3")
pvs = scenario_pvs(setting, default_pv_placements())
prof = synth_profiles(1, seed=11)
noon = 5 * 60  # frames start at 07:00, one per minute
attack = sample_attack(setting, np.random.default_rng(4), pvs[0].curve)
print("attack:", attack.to_json())

res = simulate(net, pvs, prof, {noon: attack})
snap = res.measurements.row(noon)
print("reported PV p/q :", np.round(snap.pv_p, 1), np.round(snap.pv_q, 1))
print("actual PV p/q   :", np.round(res.true_pv_p[noon], 1), np.round(res.true_pv_q[noon], 1))
print(f"apparent loss {apparent_loss(snap):.2f} kW, true loss without attack {res.normal.flow.loss_p[noon]:.2f} kW")
print("features:", np.round(extract_features(snap).as_array(), 2))
