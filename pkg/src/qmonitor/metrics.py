"""Evaluation metrics: prediction inaccuracy, channel distances, read-out error rates."""

from __future__ import annotations

import logging
import warnings
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .channels import Channel, povm_effect
from .circuits import Circuit, GateSet, Key, Sample
from .simulator import outcome_distribution, sample_outcomes

log = logging.getLogger(__name__)

MAX_ENUM_BITS = 12


def prediction_inaccuracy(g: GateSet, c: Circuit, sample: Sample) -> float:
    """L1 distance between predicted outcome probabilities and observed frequencies."""
    m = c.n_measured
    if m > MAX_ENUM_BITS:
        raise ValueError(f"enumerating 2**{m} outcomes exceeds the cap of 2**{MAX_ENUM_BITS}")
    p = outcome_distribution(c, g)
    f = sample.count_vector(m) / sample.shots
    return float(np.sum(np.abs(p - f)))


@dataclass
class CurveRow:
    i: int
    n_layers: int
    split: str
    mean_delta: float
    count: int


def layerwise_curves(
    checkpoints: Mapping[int, GateSet],
    circuits: Sequence[Circuit],
    samples: Sequence[Sample],
    max_eval: int | None = None,
) -> list[CurveRow]:
    """Mean prediction inaccuracy per (checkpoint, layer count, train/test split).

    Circuit ``j`` (0-based) is in the training set of checkpoint ``i`` when
    ``j < i``.  Empty groups are omitted.  ``max_eval`` caps how many circuits
    are evaluated (the first ``max_eval``).
    """
    n = len(circuits) if max_eval is None else min(max_eval, len(circuits))
    rows = []
    for i in sorted(checkpoints):
        g = checkpoints[i]
        groups: dict[tuple[int, str], list[float]] = defaultdict(list)
        for j in range(n):
            c = circuits[j]
            if c.n_layers is None:
                raise ValueError(f"circuit {j} carries no n_layers metadata")
            split = "train" if j < i else "test"
            groups[(c.n_layers, split)].append(prediction_inaccuracy(g, c, samples[j]))
        for (nl, split), vals in sorted(groups.items()):
            rows.append(CurveRow(i, nl, split, float(np.mean(vals)), len(vals)))
    return rows


# --------------------------------------------------------------------------
# diamond norm
# --------------------------------------------------------------------------


def trace_norm(a: np.ndarray) -> float:
    return float(np.sum(np.linalg.svd(a, compute_uv=False)))


@dataclass
class DiamondResult:
    value: float
    lower: float
    upper: float
    converged: bool


@lru_cache(maxsize=None)
def _diamond_problem(d: int):
    import cvxpy as cp

    j = cp.Parameter((d * d, d * d), hermitian=True)
    rho = cp.Variable((d, d), hermitian=True)
    w = cp.Variable((d * d, d * d), hermitian=True)
    cons = [
        rho >> 0,
        cp.real(cp.trace(rho)) == 1,
        w >> 0,
        cp.kron(np.eye(d), rho) - w >> 0,
    ]
    prob = cp.Problem(cp.Maximize(cp.real(cp.trace(j @ w))), cons)
    return prob, j


def diamond_norm_of_choi(delta: np.ndarray) -> DiamondResult:
    """Diamond norm of a Hermiticity-preserving map given its Choi matrix.

    Solves ``max Re Tr(J W)`` subject to ``0 <= W <= 1 (x) rho`` with ``rho`` a
    density matrix on the input factor; the norm is twice the optimum.  This
    form is exact for differences of trace-preserving maps.  The result is
    clamped to the certified window ``[||J||_1 / d, ||J||_1]``.  On solver
    failure the upper bound is returned with ``converged=False``.
    """
    import cvxpy as cp

    delta = 0.5 * (delta + delta.conj().T)
    d = int(round(np.sqrt(delta.shape[0])))
    upper = trace_norm(delta)
    lower = upper / d
    if upper < 1e-13:
        return DiamondResult(0.0, 0.0, upper, True)
    prob, j = _diamond_problem(d)
    # scaled to unit trace norm for solver conditioning
    j.value = delta / upper
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-8, tol_gap_rel=1e-8, tol_feas=1e-8)
        status = prob.status
    except cp.error.SolverError:
        status = "solver_error"
    if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or prob.value is None:
        log.warning("diamond-norm SDP failed (status %s); reporting the upper bound", status)
        return DiamondResult(upper, lower, upper, False)
    # inaccurate solutions still agree to ~1e-6 in practice and are clamped below
    value = 2 * prob.value * upper
    return DiamondResult(float(np.clip(value, lower, upper)), lower, upper, status == cp.OPTIMAL)


def diamond_distance(a: Channel, b: Channel) -> float:
    """``||a - b||_diamond`` for channels of equal dimension."""
    if a.dim != b.dim:
        raise ValueError("channels of different dimension")
    return diamond_norm_of_choi(a.choi - b.choi).value


def povm_l1_distance(a: Channel, b: Channel) -> float:
    """Trace norm of the difference of the outcome-0 effects of two measurement channels."""
    if a.dim != 2 or b.dim != 2:
        raise ValueError("POVM distance needs single-qubit channels")
    diff = povm_effect(a, 0) - povm_effect(b, 0)
    return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))


@dataclass(frozen=True)
class DistanceRow:
    i: int
    label: str
    target: int | tuple[int, int]
    metric: str
    value: float


class DistanceReport:
    """Per-checkpoint, per-gate channel distances.

    Metrics are ``diamond_ideal``, ``choi_frobenius_ideal`` and, for M
    entries, ``povm_l1_ideal``; the same three with suffix ``_true`` are
    present when a truth gate set was supplied.
    """

    def __init__(self, rows: Iterable[DistanceRow] = ()):
        self.rows = list(rows)
        self._index = {(r.i, r.label, r.target, r.metric): r.value for r in self.rows}

    def __len__(self):
        return len(self.rows)

    def get(self, i: int, key: Key, metric: str) -> float:
        return self._index[(i, key[0], key[1], metric)]

    def metrics(self) -> set[str]:
        return {r.metric for r in self.rows}

    def checkpoints(self) -> list[int]:
        return sorted({r.i for r in self.rows})

    def by_key(self, i: int, metric: str) -> dict[Key, float]:
        return {(r.label, r.target): r.value for r in self.rows if r.i == i and r.metric == metric}

    def mean(self, i: int, metric: str) -> float:
        vals = list(self.by_key(i, metric).values())
        if not vals:
            raise KeyError(f"no {metric} rows at checkpoint {i}")
        return float(np.mean(vals))

    def worst(self, i: int, metric: str, label: str) -> Key:
        """Key with the largest ``metric`` value among entries of ``label``."""
        cand = {k: v for k, v in self.by_key(i, metric).items() if k[0] == label}
        if not cand:
            raise KeyError(f"no {label} entries at checkpoint {i}")
        return max(cand, key=cand.get)


def distance_report(
    checkpoints: Mapping[int, GateSet],
    ideal: GateSet,
    truth: GateSet | None = None,
    keys: Iterable[Key] | None = None,
) -> DistanceReport:
    """Distances of every non-preparation entry of every checkpoint to ``ideal`` (and ``truth``)."""
    rows = []
    refs = [("ideal", ideal)] + ([("true", truth)] if truth is not None else [])
    for i in sorted(checkpoints):
        g = checkpoints[i]
        for key in (list(keys) if keys is not None else list(g)):
            if key[0] == "P":
                continue
            label, t = key
            for name, ref in refs:
                a, b = g[key], ref[key]
                rows.append(DistanceRow(i, label, t, f"diamond_{name}", diamond_distance(a, b)))
                rows.append(DistanceRow(i, label, t, f"choi_frobenius_{name}",
                                        float(np.linalg.norm(a.choi - b.choi))))
                if label == "M":
                    rows.append(DistanceRow(i, label, t, f"povm_l1_{name}", povm_l1_distance(a, b)))
    return DistanceReport(rows)


# --------------------------------------------------------------------------
# read-out calibration
# --------------------------------------------------------------------------


@dataclass
class CalibrationMatrix:
    """Row ``x``: observed-string frequencies for prepared basis state ``x``."""

    matrix: np.ndarray
    n_qubits: int
    shots: int = 0

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        dim = 2**self.n_qubits
        if self.matrix.shape != (dim, dim):
            raise ValueError(f"calibration matrix must be {dim}x{dim}")
        if np.any(self.matrix < 0) or not np.allclose(self.matrix.sum(axis=1), 1.0, atol=1e-12, rtol=0):
            raise ValueError("calibration rows must be non-negative and sum to 1")

    @property
    def labels(self) -> list[str]:
        return [format(x, f"0{self.n_qubits}b") for x in range(2**self.n_qubits)]


def calibration_circuit(bits: str) -> Circuit:
    n = len(bits)
    ops = [("P", q) for q in range(n)]
    ops += [("X", q) for q, b in enumerate(bits) if b == "1"]
    ops += [("M", q) for q in range(n)]
    return Circuit(n, tuple(ops))


def calibration_matrix(g: GateSet, shots: int, rng: np.random.Generator, n_qubits: int = 5) -> CalibrationMatrix:
    """Prepare and measure every computational basis state ``shots`` times."""
    dim = 2**n_qubits
    rows = np.zeros((dim, dim))
    for x in range(dim):
        c = calibration_circuit(format(x, f"0{n_qubits}b"))
        rows[x] = sample_outcomes(c, g, shots, rng).count_vector(n_qubits) / shots
    return CalibrationMatrix(rows, n_qubits, shots)


@dataclass
class ErrorRates:
    """Per-qubit read-out error rates keyed by qubit; the ``*_est`` maps stay empty until filled."""

    e01_exp: dict[int, float] = field(default_factory=dict)
    e10_exp: dict[int, float] = field(default_factory=dict)
    e01_est: dict[int, float] = field(default_factory=dict)
    e10_est: dict[int, float] = field(default_factory=dict)
    e10_est_acc: dict[int, float] = field(default_factory=dict)

    def rows(self) -> list[tuple[int, str, float]]:
        out = []
        for name in ("e01_exp", "e10_exp", "e01_est", "e10_est", "e10_est_acc"):
            for q, v in sorted(getattr(self, name).items()):
                out.append((q, name, v))
        return sorted(out)


def error_rates_from_calibration(cm: CalibrationMatrix) -> ErrorRates:
    """Average, over all rows with prepared bit ``x`` on qubit ``t``, of the
    frequency of observing bit ``y`` on qubit ``t``."""
    n = cm.n_qubits
    bits = np.array([[int(b) for b in s] for s in cm.labels])  # (2^n, n)
    rates = ErrorRates()
    for t in range(n):
        prepared = bits[:, t]
        observed_one = cm.matrix @ bits[:, t]  # P(observed bit t = 1) per row
        rates.e01_exp[t] = float(np.mean(observed_one[prepared == 0]))
        rates.e10_exp[t] = float(np.mean(1 - observed_one[prepared == 1]))
    return rates


def error_rates_estimated(g: GateSet, t: int) -> tuple[float, float, float]:
    """``(e01_est, e10_est, e10_est_acc)`` for qubit ``t`` from a gate set.

    ``e_{x->y} = <x| E_y |x>`` with ``E_y`` the effect of outcome ``y`` of the
    noisy measurement; the accurate 1->0 variant prepares ``|1>`` with the
    noisy X gate instead of ideally.
    """
    if ("M", t) not in g:
        raise KeyError(f"gate set has no M entry for qubit {t}")
    e0 = povm_effect(g[("M", t)], 0)
    e1 = povm_effect(g[("M", t)], 1)
    e01 = float(np.real(e1[0, 0]))
    e10 = float(np.real(e0[1, 1]))
    if ("X", t) not in g:
        raise KeyError(f"gate set has no X entry for qubit {t}")
    k = g[("X", t)].kraus
    one = np.einsum("ma,mb->ab", k[:, :, 0], k[:, :, 0].conj())  # X[|0><0|]
    acc = float(np.real(np.trace(one @ e0)))
    clip = lambda x: float(min(max(x, 0.0), 1.0))
    return clip(e01), clip(e10), clip(acc)


def fill_estimated_rates(rates: ErrorRates, g: GateSet, qubits: Iterable[int]) -> ErrorRates:
    for t in qubits:
        rates.e01_est[t], rates.e10_est[t], rates.e10_est_acc[t] = error_rates_estimated(g, t)
    return rates


def binomial_sigma(p: float, n: int) -> float:
    return float(np.sqrt(max(p * (1 - p), 1.0 / n) / n))
