"""Devices, circuits, gate sets and samples, plus the random-circuit generator.

Bit-order convention used throughout the package: qubit ``q`` is tensor axis
``q`` of an n-qubit state, i.e. qubit 0 is the most significant factor of the
Kronecker product.  In outcome strings, position ``k`` holds the result of the
``k``-th measurement op of the circuit; for the generated circuits (M on
qubits 0..n-1 in order) position ``q`` is qubit ``q``.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field

import numpy as np

from .channels import Channel, identity_channel, unitary_channel

SINGLE_QUBIT_LABELS = ("P", "ID", "RZ", "X", "SX", "M")
TWO_QUBIT_LABELS = ("CX",)
NATIVE_LABELS = SINGLE_QUBIT_LABELS + TWO_QUBIT_LABELS
RANDOM_1Q_LABELS = ("X", "SX", "RZ", "ID")

UNITARIES: dict[str, np.ndarray] = {
    "P": np.eye(2, dtype=complex),
    "M": np.eye(2, dtype=complex),
    "ID": np.eye(2, dtype=complex),
    "RZ": np.diag([np.exp(-1j * np.pi / 8), np.exp(1j * np.pi / 8)]),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "SX": 0.5 * np.array([[1 + 1j, 1 - 1j], [1 - 1j, 1 + 1j]]),
    "CX": np.array(
        [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
    ),
}
for _u in UNITARIES.values():
    _u.setflags(write=False)

# Disjoint CX layers on the default device; together they cover every coupling.
CX_PATTERNS = (((0, 1), (3, 4)), ((2, 1), (3, 4)), ((1, 3),))

Target = int | tuple[int, int]
Key = tuple[str, Target]


class CircuitError(ValueError):
    """Raised for malformed circuits or circuit files."""


@dataclass(frozen=True)
class Device:
    n_qubits: int
    couplings: tuple[tuple[int, int], ...]

    def __post_init__(self):
        cs = tuple((int(a), int(b)) for a, b in self.couplings)
        object.__setattr__(self, "couplings", cs)
        if len(set(cs)) != len(cs):
            raise ValueError("duplicate coupling")
        for a, b in cs:
            if a == b:
                raise ValueError(f"self-loop coupling ({a}, {b})")
            if not (0 <= a < self.n_qubits and 0 <= b < self.n_qubits):
                raise ValueError(f"coupling ({a}, {b}) outside {self.n_qubits} qubits")

    def keys(self) -> list[Key]:
        """All (label, target) pairs a circuit on this device can use."""
        out: list[Key] = []
        for label in ("P", "ID", "RZ", "X", "SX", "M"):
            out.extend((label, q) for q in range(self.n_qubits))
        out.extend(("CX", c) for c in self.couplings)
        return out


DEFAULT_DEVICE = Device(5, ((0, 1), (1, 3), (2, 1), (3, 4)))


def _norm_target(label: str, target) -> Target:
    if label in TWO_QUBIT_LABELS:
        if isinstance(target, (int, np.integer)) or len(target) != 2:
            raise CircuitError(f"{label} needs a pair of qubits, got {target!r}")
        return (int(target[0]), int(target[1]))
    if not isinstance(target, (int, np.integer)):
        raise CircuitError(f"{label} needs a single qubit, got {target!r}")
    return int(target)


@dataclass(frozen=True)
class Circuit:
    """Ordered list of ``(label, target)`` operations on ``n_qubits`` qubits."""

    n_qubits: int
    ops: tuple[Key, ...]
    n_layers: int | None = None

    def __post_init__(self):
        ops = []
        for op in self.ops:
            if len(op) != 2:
                raise CircuitError(f"operation must be (label, target), got {op!r}")
            label, target = op
            if label not in NATIVE_LABELS:
                raise CircuitError(f"unknown gate label {label!r}")
            ops.append((label, _norm_target(label, target)))
        object.__setattr__(self, "ops", tuple(ops))

    @property
    def measured(self) -> tuple[int, ...]:
        """Qubits of the trailing M block, in string-position order."""
        out = []
        for label, t in reversed(self.ops):
            if label != "M":
                break
            out.append(t)
        return tuple(reversed(out))

    @property
    def n_measured(self) -> int:
        return len(self.measured)

    def keys(self) -> set[Key]:
        return set(self.ops)

    def to_dict(self) -> dict:
        ops = [[l, list(t) if isinstance(t, tuple) else t] for l, t in self.ops]
        d = {"n": self.n_qubits, "ops": ops}
        if self.n_layers is not None:
            d["n_layers"] = self.n_layers
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Circuit":
        try:
            ops = tuple(
                (l, tuple(t) if isinstance(t, list) else t) for l, t in d["ops"]
            )
            return cls(int(d["n"]), ops, d.get("n_layers"))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, CircuitError):
                raise
            raise CircuitError(f"malformed circuit record: {exc}") from exc


def validate_circuit(c: Circuit, device: Device = DEFAULT_DEVICE) -> list[str]:
    """Every structural violation of ``c`` against ``device``; empty if valid."""
    errors = []
    n = c.n_qubits
    if n != device.n_qubits:
        errors.append(f"circuit has {n} qubits, device has {device.n_qubits}")
    head = c.ops[:n]
    if tuple(head) != tuple(("P", q) for q in range(n)):
        errors.append("circuit must start with P on qubits 0..n-1 in order")
    measured = c.measured
    if not measured:
        errors.append("missing trailing M block")
    if len(set(measured)) != len(measured):
        errors.append("qubit measured twice")
    start = 0
    while start < min(n, len(c.ops)) and c.ops[start] == ("P", start):
        start += 1
    body = c.ops[start : len(c.ops) - len(measured)]
    for i, (label, t) in enumerate(body):
        if label == "M":
            errors.append(f"M op at position {i + start} is not in the trailing block")
        elif label == "P":
            errors.append(f"P op at position {i + start} outside the preparation block")
    couplings = set(device.couplings)
    for label, t in c.ops:
        qs = t if isinstance(t, tuple) else (t,)
        if any(not 0 <= q < n for q in qs):
            errors.append(f"{label} target {t} out of range")
        elif label == "CX":
            if qs[0] == qs[1]:
                errors.append(f"CX on identical qubits {t}")
            elif t not in couplings:
                errors.append(f"uncoupled pair {t} for CX")
    return errors


def random_circuit(rng: np.random.Generator, device: Device = DEFAULT_DEVICE) -> Circuit:
    """Layered random circuit on the 5-qubit default topology.

    ``n_layers`` is uniform on 0..10; each layer is a sublayer of single-qubit
    gates drawn uniformly from X/SX/RZ/ID on every qubit followed by one of
    the CX patterns, then a final single-qubit sublayer and M on every qubit.
    """
    if device != DEFAULT_DEVICE:
        raise ValueError("the random-circuit generator is defined for the default device")
    n = device.n_qubits
    n_layers = int(rng.integers(0, 11))
    ops: list[Key] = [("P", q) for q in range(n)]

    def single_layer():
        for q, g in enumerate(rng.integers(0, len(RANDOM_1Q_LABELS), size=n)):
            ops.append((RANDOM_1Q_LABELS[g], q))

    for _ in range(n_layers):
        single_layer()
        ops.extend(("CX", pair) for pair in CX_PATTERNS[int(rng.integers(0, 3))])
    single_layer()
    ops.extend(("M", q) for q in range(n))
    return Circuit(n, tuple(ops), n_layers)


def random_circuits(rng: np.random.Generator, count: int, device: Device = DEFAULT_DEVICE) -> list[Circuit]:
    return [random_circuit(rng, device) for _ in range(count)]


def serialize_circuit(c: Circuit) -> str:
    return json.dumps(c.to_dict(), separators=(",", ":"))


def parse_circuit(data: str | bytes) -> Circuit:
    try:
        d = json.loads(data)
    except json.JSONDecodeError as exc:
        raise CircuitError(f"malformed JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise CircuitError("circuit record must be a JSON object")
    return Circuit.from_dict(d)


@dataclass(frozen=True)
class Sample:
    """Counts of measured bit strings; ``shots`` equals the total count."""

    counts: Mapping[str, int]
    shots: int = field(default=-1)

    def __post_init__(self):
        counts = {str(k): int(v) for k, v in self.counts.items() if int(v) != 0}
        object.__setattr__(self, "counts", dict(sorted(counts.items())))
        total = sum(counts.values())
        if self.shots == -1:
            object.__setattr__(self, "shots", total)
        elif total != self.shots:
            raise ValueError(f"counts sum to {total}, expected {self.shots} shots")
        lengths = {len(s) for s in counts}
        if len(lengths) > 1:
            raise ValueError("bit strings of different lengths")
        for s, v in counts.items():
            if v < 0 or set(s) - {"0", "1"}:
                raise ValueError(f"bad count entry {s!r}: {v}")

    @property
    def n_bits(self) -> int | None:
        return len(next(iter(self.counts))) if self.counts else None

    def frequencies(self, m: int) -> np.ndarray:
        """Length ``2**m`` frequency vector, index ``int(s, 2)``."""
        f = np.zeros(2**m)
        for s, v in self.counts.items():
            f[int(s, 2)] += v
        return f / max(self.shots, 1)

    def count_vector(self, m: int) -> np.ndarray:
        f = np.zeros(2**m)
        for s, v in self.counts.items():
            if len(s) != m:
                raise ValueError(f"bit string {s!r} does not have length {m}")
            f[int(s, 2)] += v
        return f

    @classmethod
    def from_count_vector(cls, counts: np.ndarray, m: int) -> "Sample":
        return cls(
            {format(i, f"0{m}b"): int(c) for i, c in enumerate(counts) if c},
            int(np.sum(counts)),
        )

    def to_dict(self, circuit_id: int | None = None) -> dict:
        d = {} if circuit_id is None else {"circuit_id": circuit_id}
        d.update(shots=self.shots, counts=dict(self.counts))
        return d


def parse_sample(data: str | bytes) -> tuple[int | None, Sample]:
    try:
        d = json.loads(data)
        return d.get("circuit_id"), Sample(d["counts"], int(d["shots"]))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CircuitError(f"malformed sample record: {exc}") from exc


def serialize_sample(sample: Sample, circuit_id: int | None = None) -> str:
    return json.dumps(sample.to_dict(circuit_id), separators=(",", ":"))


class GateSet(Mapping):
    """Mapping ``(label, target) -> Channel``."""

    def __init__(self, entries: Mapping[Key, Channel] | Iterable[tuple[Key, Channel]] = ()):
        items = entries.items() if isinstance(entries, Mapping) else entries
        self._d: dict[Key, Channel] = {}
        for (label, target), ch in items:
            key = (label, _norm_target(label, target))
            want = 4 if label in TWO_QUBIT_LABELS else 2
            if ch.dim != want:
                raise ValueError(f"{key} needs a {want}-dimensional channel, got {ch.dim}")
            self._d[key] = ch

    @classmethod
    def ideal(cls, device: Device = DEFAULT_DEVICE) -> "GateSet":
        return cls(
            {(l, t): unitary_channel(UNITARIES[l]) for l, t in device.keys()}
        )

    def __getitem__(self, key: Key) -> Channel:
        return self._d[key]

    def __iter__(self) -> Iterator[Key]:
        return iter(self._d)

    def __len__(self) -> int:
        return len(self._d)

    def __repr__(self):
        return f"GateSet({len(self)} entries)"

    def replace(self, updates: Mapping[Key, Channel]) -> "GateSet":
        d = dict(self._d)
        d.update(updates)
        return GateSet(d)

    def missing(self, circuits: Iterable[Circuit]) -> set[Key]:
        need = set()
        for c in circuits:
            need |= c.keys()
        return need - set(self._d)

    def require(self, circuits: Iterable[Circuit]) -> None:
        miss = self.missing(circuits)
        if miss:
            raise KeyError(f"gate set has no entry for {sorted(miss, key=str)}")

    def to_dict(self) -> dict:
        gates = []
        for (label, t), ch in self._d.items():
            gates.append(
                {
                    "label": label,
                    "target": list(t) if isinstance(t, tuple) else t,
                    **channel_to_dict(ch),
                }
            )
        return {"gates": gates}

    @classmethod
    def from_dict(cls, d: Mapping) -> "GateSet":
        entries = []
        for g in d["gates"]:
            t = g["target"]
            entries.append(((g["label"], tuple(t) if isinstance(t, list) else t), channel_from_dict(g)))
        return cls(entries)


def channel_to_dict(ch: Channel) -> dict:
    c = ch.choi
    return {
        "dim_in": ch.dim,
        "choi": np.stack([c.real, c.imag], axis=-1).tolist(),
    }


def channel_from_dict(d: Mapping) -> Channel:
    arr = np.asarray(d["choi"], dtype=float)
    choi = arr[..., 0] + 1j * arr[..., 1]
    if choi.shape != (d["dim_in"] ** 2,) * 2:
        raise ValueError(f"Choi shape {choi.shape} does not match dim_in={d['dim_in']}")
    return Channel.from_choi(choi, tol=1e-12)


def identity_gateset_entries(device: Device = DEFAULT_DEVICE, label: str = "P") -> dict[Key, Channel]:
    return {(label, q): identity_channel(2) for q in range(device.n_qubits)}
