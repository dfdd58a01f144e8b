"""
Noisy gate channels
===================

Builds the bundled five-qubit noise model, checks that every channel is a
valid CPTP map and compares each gate with its ideal version by average gate
fidelity and diamond distance.
"""

import numpy as np

from qmonitor.channels import apply, gate_fidelity, validate_cptp
from qmonitor.circuits import UNITARIES, GateSet
from qmonitor.metrics import diamond_distance
from qmonitor.noise import load_noise_table, noisy_channel, true_gateset

##############################################################################
# Each table row holds the smoothing width, depolarizing probability and
# the two damping strengths of one gate on one target.

rows = load_noise_table()
print(f"{'gate':<12}{'F':>8}{'F_ref':>8}")
for row in rows:
    f = gate_fidelity(noisy_channel(row), UNITARIES[row.label])
    print(f"{row.label + str(row.target):<12}{f:8.4f}{row.f_ref:8.3f}")

##############################################################################
# The full gate set adds ideal preparation channels.  Every entry must be
# completely positive and trace preserving.

truth = true_gateset()
ideal = GateSet.ideal()
assert all(validate_cptp(ch).ok for ch in truth.values())

##############################################################################
# Diamond distance to the ideal gate ranks the entries by worst-case error.

dist = {k: diamond_distance(truth[k], ideal[k]) for k in truth if k[0] != "P"}
for label in ("X", "SX", "CX", "M"):
    worst = max((k for k in dist if k[0] == label), key=dist.get)
    print(f"worst {label:<3} {worst}  diamond distance {dist[worst]:.4f}")

##############################################################################
# A noisy X gate acting on |0><0| leaves some population behind.

rho = apply(truth[("X", 2)], np.diag([1.0, 0.0]).astype(complex))
print("X@2 on |0>: populations", np.round(np.real(np.diag(rho)), 4))
