"""Exact density-matrix execution of circuits under a gate set.

States are dense ``2**n x 2**n`` matrices with qubit 0 as the most significant
tensor factor.  Channels are applied index-wise on their target axes; the
full-register Kraus operators are never built.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .channels import Channel
from .circuits import TWO_QUBIT_LABELS, Circuit, GateSet, Key, Sample

MAX_QUBITS = 12
PROB_FLOOR = 1e-300


def _check_n(n: int) -> None:
    if n > MAX_QUBITS:
        raise ValueError(f"dense simulation is capped at {MAX_QUBITS} qubits, got {n}")


def zero_state(n: int) -> np.ndarray:
    _check_n(n)
    rho = np.zeros((2**n, 2**n), dtype=complex)
    rho[0, 0] = 1.0
    return rho


def _targets(target) -> tuple[int, ...]:
    return tuple(target) if isinstance(target, tuple) else (int(target),)


def _superop_matrix(channel: Channel) -> np.ndarray:
    d = channel.dim
    return np.asarray(channel.superop).reshape(d * d, d * d)


def _front_perm(n: int, qubits: tuple[int, ...]) -> list[int]:
    rows = list(qubits)
    cols = [n + q for q in qubits]
    rest = [a for a in range(2 * n) if a not in rows and a not in cols]
    return rows + cols + rest


def apply_superop(rho: np.ndarray, smat: np.ndarray, qubits: tuple[int, ...]) -> np.ndarray:
    """Apply a ``(D^2, D^2)`` superoperator matrix to the given qubits of ``rho``."""
    dim = rho.shape[0]
    n = dim.bit_length() - 1
    k = len(qubits)
    if smat.shape != (4**k, 4**k):
        raise ValueError(f"superoperator of shape {smat.shape} does not act on {k} qubit(s)")
    if len(set(qubits)) != k or any(not 0 <= q < n for q in qubits):
        raise ValueError(f"bad target qubits {qubits} for a {n}-qubit state")
    perm = _front_perm(n, qubits)
    t = rho.reshape((2,) * (2 * n)).transpose(perm).reshape(4**k, -1)
    out = (smat @ t).reshape((2,) * (2 * n))
    return out.transpose(np.argsort(perm)).reshape(dim, dim)


def apply_gate(rho: np.ndarray, channel: Channel, target) -> np.ndarray:
    qubits = _targets(target)
    if channel.dim != 2 ** len(qubits):
        raise ValueError(f"{channel!r} cannot act on target {target}")
    return apply_superop(rho, _superop_matrix(channel), qubits)


def run_circuit(c: Circuit, g: GateSet, measure: bool = True) -> np.ndarray:
    """Final state after every op of ``c`` (M channels included, projection excluded)."""
    g.require([c])
    _check_n(c.n_qubits)
    rho = zero_state(c.n_qubits)
    for key in c.ops:
        if key[0] == "M" and not measure:
            continue
        rho = apply_gate(rho, g[key], key[1])
    return rho


def _marginal(diag: np.ndarray, n: int, measured: tuple[int, ...]) -> np.ndarray:
    t = diag.reshape((2,) * n)
    rest = tuple(q for q in range(n) if q not in measured)
    t = t.transpose(tuple(measured) + rest).reshape(2 ** len(measured), -1)
    return t.sum(axis=1)


def outcome_distribution(c: Circuit, g: GateSet) -> np.ndarray:
    """Probabilities of all ``2**m`` outcome strings, index ``int(s, 2)``."""
    rho = run_circuit(c, g)
    p = _marginal(np.real(np.diag(rho)), c.n_qubits, c.measured)
    return np.clip(p, 0.0, 1.0)


def outcome_probability(c: Circuit, g: GateSet, s: str) -> float:
    if len(s) != c.n_measured:
        raise ValueError(f"bit string {s!r} has length {len(s)}, circuit measures {c.n_measured}")
    return float(outcome_distribution(c, g)[int(s, 2)])


def log_likelihood(c: Circuit, g: GateSet, sample: Sample) -> float:
    p = outcome_distribution(c, g)
    counts = sample.count_vector(c.n_measured)
    nz = counts > 0
    return float(np.sum(counts[nz] * np.log(np.maximum(p[nz], PROB_FLOOR))))


def chain_rule_conditionals(c: Circuit, g: GateSet, s: str) -> list[float]:
    """``P(s_k | s_0..s_{k-1})`` for each position ``k`` of ``s``."""
    p = outcome_distribution(c, g)
    m = c.n_measured
    t = p.reshape((2,) * m)
    out = []
    for k in range(m):
        prefix = tuple(int(b) for b in s[:k])
        marg = t[prefix].reshape(2, -1).sum(axis=1)
        total = marg.sum()
        out.append(float(marg[int(s[k])] / total) if total > 0 else 0.0)
    return out


def sample_outcomes(c: Circuit, g: GateSet, shots: int, rng: np.random.Generator) -> Sample:
    """Draw ``shots`` outcome strings by sequential conditional sampling.

    Bit ``k`` is drawn from its distribution conditioned on the already drawn
    bits ``0..k-1``.  Shots sharing a prefix are split together with one
    binomial draw per prefix, so the cost is linear in the number of measured
    qubits per distinct prefix rather than exponential.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    p = outcome_distribution(c, g)
    m = c.n_measured
    t = p.reshape((2,) * m)
    groups = {(): shots}
    for k in range(m):
        nxt = {}
        for prefix, count in groups.items():
            marg = t[prefix].reshape(2, -1).sum(axis=1)
            total = marg.sum()
            if total <= 0:
                raise AssertionError(f"zero-probability branch {prefix} reached")
            ones = int(rng.binomial(count, min(max(marg[1] / total, 0.0), 1.0)))
            for bit, n_bit in ((0, count - ones), (1, ones)):
                if n_bit:
                    nxt[prefix + (bit,)] = n_bit
        groups = nxt
    return Sample({"".join(map(str, k)): v for k, v in groups.items()}, shots)


# --------------------------------------------------------------------------
# Batched forward / adjoint engine used by the estimator
# --------------------------------------------------------------------------


@dataclass
class _Slot:
    qubits: tuple[int, ...]
    members: np.ndarray  # circuit indices
    keys: np.ndarray  # key indices, aligned with members
    perm: list[int]
    inv: np.ndarray


class CircuitBatch:
    """A list of same-width circuits compiled into aligned application slots.

    Each circuit is scheduled into moments (as soon as possible); ops of all
    circuits that share a moment and a target are applied with one batched
    matrix product.  ``forward`` returns per-circuit outcome distributions and
    ``backward`` returns the gradient of a scalar objective with respect to
    every gate superoperator ``S[ab, ij]`` (summed over occurrences).
    """

    def __init__(self, circuits: list[Circuit], keys: list[Key], skip: set[Key] = frozenset()):
        if not circuits:
            raise ValueError("empty circuit batch")
        n = circuits[0].n_qubits
        if any(c.n_qubits != n for c in circuits):
            raise ValueError("all circuits in a batch must have the same width")
        _check_n(n)
        self.n = n
        self.circuits = circuits
        self.keys = list(keys)
        self.key_dims = [16 if k[0] in TWO_QUBIT_LABELS else 4 for k in self.keys]
        index = {k: i for i, k in enumerate(self.keys)}
        slots: dict[tuple[int, tuple[int, ...]], list[tuple[int, int]]] = defaultdict(list)
        for ci, c in enumerate(circuits):
            depth = [0] * n
            for key in c.ops:
                if key in skip:
                    continue
                if key not in index:
                    raise KeyError(f"gate set has no entry for {key}")
                qs = _targets(key[1])
                mom = max(depth[q] for q in qs)
                for q in qs:
                    depth[q] = mom + 1
                slots[(mom, qs)].append((ci, index[key]))
        self.slots = []
        for (mom, qs) in sorted(slots, key=lambda x: (x[0], len(x[1]), x[1])):
            mem = np.array([a for a, _ in slots[(mom, qs)]])
            kid = np.array([b for _, b in slots[(mom, qs)]])
            perm = [0] + [1 + a for a in _front_perm(n, qs)]
            self.slots.append(_Slot(qs, mem, kid, perm, np.argsort(perm)))
        self.measured = [c.measured for c in circuits]
        self._cache = None

    def __len__(self):
        return len(self.circuits)

    def _blocks(self, smats: list[np.ndarray]):
        one = [i for i, s in enumerate(smats) if s.shape[0] == 4]
        two = [i for i, s in enumerate(smats) if s.shape[0] == 16]
        stacks = {}
        if one:
            stacks[4] = np.stack([smats[i] if s.shape[0] == 4 else np.eye(4) for i, s in enumerate(smats)])
        if two:
            stacks[16] = np.stack([smats[i] if s.shape[0] == 16 else np.eye(16) for i, s in enumerate(smats)])
        return stacks

    def forward(self, smats: list[np.ndarray], keep: bool = False) -> list[np.ndarray]:
        """Outcome distributions (unclipped) for every circuit.

        ``smats[k]`` is the superoperator matrix of ``self.keys[k]``.  With
        ``keep=True`` intermediate states are stored for ``backward``.
        """
        n, b = self.n, len(self.circuits)
        stacks = self._blocks(smats)
        shape = (b,) + (2,) * (2 * n)
        states = np.zeros(shape, dtype=complex)
        states.reshape(b, -1)[:, 0] = 1.0
        saved = [] if keep else None
        for slot in self.slots:
            dd = 4 ** len(slot.qubits)
            x = states[slot.members].transpose(slot.perm).reshape(len(slot.members), dd, -1)
            if keep:
                saved.append(x)
            y = stacks[dd][slot.keys] @ x
            states[slot.members] = y.reshape((len(slot.members),) + (2,) * (2 * n)).transpose(slot.inv)
        diag = np.real(np.einsum("bii->bi", states.reshape(b, 2**n, 2**n)))
        probs = [_marginal(diag[i], n, self.measured[i]) for i in range(b)]
        self._cache = (stacks, saved) if keep else None
        return probs

    def backward(self, dprobs: list[np.ndarray]) -> list[np.ndarray]:
        """Gradients ``A_k[ab, ij] = dObjective/dS_k[ab, ij]`` from ``dObjective/dp``.

        Must follow ``forward(..., keep=True)``.
        """
        if self._cache is None:
            raise RuntimeError("backward() needs a preceding forward(keep=True)")
        stacks, saved = self._cache
        n, b = self.n, len(self.circuits)
        dim = 2**n
        adj = np.zeros((b, dim, dim), dtype=complex)
        for i in range(b):
            meas = self.measured[i]
            rest = tuple(q for q in range(n) if q not in meas)
            order = tuple(meas) + rest
            g = np.broadcast_to(
                np.asarray(dprobs[i]).reshape(-1, 1), (2 ** len(meas), 2 ** len(rest))
            ).reshape((2,) * n)
            adj[i][np.diag_indices(dim)] = g.transpose(np.argsort(order)).reshape(-1)
        adj = adj.reshape((b,) + (2,) * (2 * n))
        grads = [np.zeros((d, d), dtype=complex) for d in self.key_dims]
        for slot, x in zip(reversed(self.slots), reversed(saved)):
            dd = 4 ** len(slot.qubits)
            e = adj[slot.members].transpose(slot.perm).reshape(len(slot.members), dd, -1)
            contrib = e @ x.transpose(0, 2, 1)
            for k in np.unique(slot.keys):
                grads[k] += contrib[slot.keys == k].sum(axis=0)
            e_prev = stacks[dd][slot.keys].transpose(0, 2, 1) @ e
            adj[slot.members] = e_prev.reshape((len(slot.members),) + (2,) * (2 * n)).transpose(slot.inv)
        self._cache = None
        return grads
