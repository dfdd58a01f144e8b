"""
Outcome distributions and sampling
==================================

Generates random layered circuits for the five-qubit device, computes their
exact outcome distributions under the noisy gate set and draws shots with the
chain-rule sampler.
"""

import numpy as np

from qmonitor.circuits import GateSet, random_circuits, serialize_circuit
from qmonitor.noise import true_gateset
from qmonitor.simulator import chain_rule_conditionals, outcome_distribution, sample_outcomes

rng = np.random.default_rng(1)
truth, ideal = true_gateset(), GateSet.ideal()

##############################################################################
# A circuit is a flat list of ``(label, target)`` ops: preparations, layers of
# single-qubit gates and CX patterns, then one measurement per qubit.

c = random_circuits(rng, 1)[0]
print(f"{c.n_layers} layers, {len(c.ops)} ops")
print(serialize_circuit(c)[:120], "...")

##############################################################################
# Exact distributions over the 32 outcome strings.  Noise spreads the
# probability mass away from the ideal outcome.

p_ideal = outcome_distribution(c, ideal)
p_true = outcome_distribution(c, truth)
top = np.argsort(p_true)[::-1][:4]
for idx in top:
    print(f"{idx:05b}  ideal {p_ideal[idx]:.4f}  noisy {p_true[idx]:.4f}")

##############################################################################
# The sampler draws bits one at a time from conditional probabilities; their
# product equals the joint probability of the string.

s = format(int(top[0]), "05b")
print("chain rule product", np.prod(chain_rule_conditionals(c, truth, s)), "joint", p_true[top[0]])

sample = sample_outcomes(c, truth, 8192, rng)
freq = sample.frequencies(5)
print("L1 between frequencies and probabilities:", np.abs(freq - p_true).sum())
