"""One channel draw, three phase choices.

Draws a single M=2, N=8 realisation, builds its feature vector and compares
the throughput of (a) all-zero phases, (b) random phases and (c) phases that
co-phase every IRS path with the direct link.  Also prints the per-element
cascade gain next to the direct-link gain, which explains why the IRS moves
the rate only modestly at the default geometry.

    python3 demos/01_single_link.py
"""
import numpy as np

from irs_wpcn import PhaseConfig, Stream, SystemParams, build_features, sample_channels
from irs_wpcn.baselines import optimal_tau
from irs_wpcn.evaluator import evaluate

p = SystemParams(M=2, N=8)
rng = Stream(7)
ch = sample_channels(p, rng)
f = build_features(ch, interference=False)
print(f"M={p.M} N={p.N}  feature length {f.flat().size}")

print(f"direct PB-S gain   ||h_BS||^2 = {np.sum(np.abs(ch.h_BS) ** 2):.3e}")
print(f"mean cascade gain  |V[n,m]|^2 = {np.mean(np.abs(f.V) ** 2):.3e} per element")


def report(name, th_et, th_it):
    tau, _ = optimal_tau(f, th_et, th_it, p)
    r = evaluate(f, PhaseConfig(th_et, th_it, tau), p)
    print(f"{name:>10}: tau={tau:.3f}  E_s={float(r.E_s):.3e} J  P_S={float(r.P_S):.3e} W  "
          f"SINR={float(r.gamma_D):.3e}  C={float(r.C):.4f} bits/s/Hz")


zero = np.zeros(p.N)
report("zero", zero, zero)
th = rng.uniform(2 * p.N, 0.0, 2 * np.pi)
report("random", th[:p.N], th[p.N:])

# IT link is a scalar sum: align every reflected term with h_SD.
th_it = np.angle(f.h_SD) - np.angle(f.u_SD)
# ET link is a vector; align with the strongest antenna's direct component.
m = int(np.argmax(np.abs(f.a)))
th_et = np.angle(f.a[m]) - np.angle(f.V[:, m])
report("aligned", th_et, th_it)
