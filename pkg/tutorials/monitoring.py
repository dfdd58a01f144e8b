"""
Monitoring a two-qubit device
=============================

Streams samples from random circuits on a noisy two-qubit device into the
estimator and watches the estimate move from the ideal gate set towards the
true one as data accumulates.
"""

import numpy as np

from qmonitor.circuits import Circuit, Device, GateSet
from qmonitor.estimator import EstimatorConfig, Record, monitoring_run
from qmonitor.metrics import diamond_distance, prediction_inaccuracy
from qmonitor.noise import true_gateset
from qmonitor.simulator import sample_outcomes

rng = np.random.default_rng(0)
device = Device(2, ((0, 1),))
ideal = GateSet.ideal(device)
truth = GateSet({k: true_gateset()[k] for k in ideal})


def layered_circuit(rng):
    ops = [("P", 0), ("P", 1)]
    for _ in range(int(rng.integers(0, 11))):
        ops += [(str(rng.choice(["X", "SX", "RZ", "ID"])), q) for q in range(2)]
        ops.append(("CX", (0, 1)))
    ops += [(str(rng.choice(["X", "SX", "RZ", "ID"])), q) for q in range(2)]
    ops += [("M", 0), ("M", 1)]
    return Circuit(2, tuple(ops))


circuits = [layered_circuit(rng) for _ in range(80)]
samples = [sample_outcomes(c, truth, 4096, rng) for c in circuits]
stream = [Record(c, s) for c, s in zip(circuits[:64], samples[:64])]
heldout = list(zip(circuits[64:], samples[64:]))

##############################################################################
# Each checkpoint refits on every record seen so far, warm-started from the
# previous estimate.

cfg = EstimatorConfig(max_iters=300, checkpoint_schedule=(4, 16, 64), seed=0)
checkpoints = monitoring_run(stream, cfg, ideal=ideal)


def mean_distance(g, ref):
    return np.mean([diamond_distance(g[k], ref[k]) for k in g if k[0] != "P"])


print(f"{'i':>4}{'loss':>12}{'to truth':>10}{'held-out':>10}")
print(f"{0:>4}{'':>12}{mean_distance(ideal, truth):10.4f}"
      f"{np.mean([prediction_inaccuracy(ideal, c, s) for c, s in heldout]):10.4f}")
for cp in checkpoints:
    g = cp.gateset
    err = np.mean([prediction_inaccuracy(g, c, s) for c, s in heldout])
    print(f"{cp.index:>4}{cp.loss:12.1f}{mean_distance(g, truth):10.4f}{err:10.4f}")
