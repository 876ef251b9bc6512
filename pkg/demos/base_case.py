"""Solve the 69-bus feeder at full load and print the voltage profile."""
import numpy as np

from pvids.grid import default_network, nominal_injections
from pvids.powerflow import InjectionSet, solve

net = default_network()
p, q = nominal_injections(net)
sol = solve(net, InjectionSet(p, q))
print(f"loss {sol.total_loss_p:.3f} kW / {sol.total_loss_q:.3f} kvar, {sol.iterations} sweeps")
print(f"substation supplies {sol.slack_p:.1f} kW / {sol.slack_q:.1f} kvar")
low = np.argsort(sol.vm)[:5]
for i in low:
    print(f"bus {i + 1:2d}  {sol.vm[i]:.5f} pu")
