"""Maximum-likelihood gate-set estimation over a sliding window of records.

Every trainable channel is parametrized by a stacked-Kraus isometry
``V = [K_0; K_1; ...; K_{r-1}]`` of shape ``(r*d, d)`` with ``V^dag V = 1``,
which is exactly the CPTP condition.  The loss is the negative
log-likelihood of the windowed samples plus a Frobenius penalty pulling every
Choi matrix towards the ideal gate set, and it is minimized with Riemannian
Adam on the product of complex Stiefel manifolds.

Gradient convention: for a real loss ``L(V)`` the *Euclidean gradient* is
``G = dL/dRe(V) + 1j * dL/dIm(V)``, so that ``L(V + E) ~ L(V) + Re tr(G^dag E)``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from collections import deque
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, field

import numpy as np

from .channels import Channel, choi_to_kraus, validate_cptp
from .circuits import TWO_QUBIT_LABELS, Circuit, GateSet, Key, Sample
from .simulator import PROB_FLOOR, CircuitBatch, log_likelihood

log = logging.getLogger(__name__)


class EstimationError(RuntimeError):
    """Raised when the optimization produces a non-finite loss."""


# --------------------------------------------------------------------------
# data window
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Record:
    circuit: Circuit
    sample: Sample

    @property
    def shots(self) -> int:
        return self.sample.shots


class DataWindow:
    """The ``min(i, M)`` most recent records after ``i`` arrivals.

    ``window_limit=None`` keeps every record.
    """

    def __init__(self, window_limit: int | None = None, records: Iterable[Record] = ()):
        if window_limit is not None and window_limit < 1:
            raise ValueError("window_limit must be >= 1")
        self.window_limit = window_limit
        self._records: deque[Record] = deque(maxlen=window_limit)
        self.n_seen = 0
        for r in records:
            self.push(r)

    def push(self, record: Record) -> None:
        if not isinstance(record, Record):
            record = Record(*record)
        if record.sample.n_bits not in (None, record.circuit.n_measured):
            raise ValueError("sample bit strings do not match the circuit's measured qubits")
        self._records.append(record)
        self.n_seen += 1

    @property
    def records(self) -> list[Record]:
        return list(self._records)

    @property
    def first_index(self) -> int:
        """1-based arrival index of the oldest retained record."""
        return self.n_seen - len(self._records) + 1

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        return iter(self._records)


# --------------------------------------------------------------------------
# configuration and manifold primitives
# --------------------------------------------------------------------------


@dataclass
class EstimatorConfig:
    """Hyperparameters of the estimator.

    The loss is the raw (not shot-normalized) negative log-likelihood, so the
    regularization weights are meaningful relative to the shot counts in the
    window; rescale ``lambda1``/``lambda2`` if the shots per circuit change by
    a large factor.  The learning rate decays geometrically from
    ``learning_rate`` to ``final_learning_rate`` over ``max_iters`` steps.
    """

    lambda1: float = 100.0
    lambda2: float = 200.0
    learning_rate: float = 3e-2
    final_learning_rate: float = 1e-4
    max_iters: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    kraus_rank_1q: int = 4
    kraus_rank_2q: int = 16
    init_perturbation: float = 3e-2
    convergence_tol: float = 1e-10
    patience: int = 500
    checkpoint_schedule: tuple[int, ...] = tuple(2**k for k in range(1, 11))
    window_limit: int | None = None
    optimize_preparation: bool = False
    seed: int = 0
    chunk_size: int = 128

    def __post_init__(self):
        if self.kraus_rank_1q < 1 or self.kraus_rank_2q < 1:
            raise ValueError("Kraus ranks must be >= 1")
        if self.convergence_tol <= 0 or self.eps <= 0:
            raise ValueError("tolerances must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("regularization weights must be non-negative")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        self.checkpoint_schedule = tuple(int(i) for i in self.checkpoint_schedule)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "EstimatorConfig":
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def herm(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


def project_to_tangent(v: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Orthogonal projection of ``g`` onto the tangent space of the Stiefel manifold at ``v``."""
    return g - v @ herm(v.conj().T @ g)


def retract(v: np.ndarray, step: np.ndarray) -> np.ndarray:
    """QR retraction of ``v + step`` with a positive real R diagonal."""
    y = v + step
    q, r = np.linalg.qr(y)
    diag = np.diag(r)
    if np.min(np.abs(diag)) < 1e-14 * max(1.0, np.max(np.abs(diag))):
        # degenerate column space: nudge once and retry
        rng = np.random.default_rng(0)
        y = y + 1e-10 * (rng.normal(size=y.shape) + 1j * rng.normal(size=y.shape))
        q, r = np.linalg.qr(y)
        diag = np.diag(r)
        if np.min(np.abs(diag)) < 1e-14 * max(1.0, np.max(np.abs(diag))):
            raise np.linalg.LinAlgError("rank-deficient retraction")
    return q * (diag / np.abs(diag))


def inner(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.real(np.vdot(a, b)))


@dataclass
class KrausIsometry:
    """Stacked Kraus operators of one channel, ``V`` of shape ``(rank*d, d)``."""

    v: np.ndarray

    @property
    def dim(self) -> int:
        return self.v.shape[1]

    @property
    def rank(self) -> int:
        return self.v.shape[0] // self.v.shape[1]

    @property
    def kraus(self) -> np.ndarray:
        return self.v.reshape(self.rank, self.dim, self.dim)

    def superop_matrix(self) -> np.ndarray:
        k = self.kraus
        d = self.dim
        return np.einsum("mai,mbj->abij", k, k.conj()).reshape(d * d, d * d)

    def channel(self) -> Channel:
        return Channel(self.kraus)

    def residual(self) -> float:
        return float(np.linalg.norm(self.v.conj().T @ self.v - np.eye(self.dim)))

    @classmethod
    def from_channel(cls, ch: Channel, rank: int) -> "KrausIsometry":
        ks = choi_to_kraus(ch.choi, tol=1e-14)
        if len(ks) > rank:
            # keep the dominant Kraus operators and restore the isometry
            ks = ks[:rank]
        v = np.zeros((rank * ch.dim, ch.dim), dtype=complex)
        v[: len(ks) * ch.dim] = ks.reshape(-1, ch.dim)
        if np.linalg.norm(v.conj().T @ v - np.eye(ch.dim)) > 1e-12:
            v = retract(v, np.zeros_like(v))
        return cls(v)


def superop_grad_to_isometry(v: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Pull a superoperator gradient back to the Euclidean gradient of ``V``.

    ``a[ab, ij]`` is the holomorphic derivative of the loss with respect to
    ``S[ab, ij] = sum_m K_m[a, i] conj(K_m[b, j])``.  Returns
    ``G_m[a, i] = 2 sum_bj conj(a[ab, ij]) K_m[b, j]``.
    """
    d = v.shape[1]
    k = v.reshape(-1, d, d)
    a4 = a.reshape(d, d, d, d)
    return (2 * np.einsum("abij,mbj->mai", a4.conj(), k)).reshape(v.shape)


# --------------------------------------------------------------------------
# loss and gradient
# --------------------------------------------------------------------------


def _is_two_qubit(key: Key) -> bool:
    return key[0] in TWO_QUBIT_LABELS


def _lam(key: Key, lambda1: float, lambda2: float) -> float:
    return lambda2 if _is_two_qubit(key) else lambda1


def regularizer(g: GateSet, ideal: GateSet, lambda1: float, lambda2: float,
                include_preparation: bool = False) -> float:
    """Weighted sum of squared Choi Frobenius distances to the ideal gate set.

    Single-qubit entries are weighted by ``lambda1``, two-qubit entries by
    ``lambda2``.  Preparation (P) entries are excluded unless asked for.
    """
    if set(g) != set(ideal):
        raise KeyError("gate set and ideal gate set cover different keys")
    total = 0.0
    for key in g:
        if key[0] == "P" and not include_preparation:
            continue
        diff = g[key].choi - ideal[key].choi
        total += _lam(key, lambda1, lambda2) * float(np.sum(np.abs(diff) ** 2))
    return total


def _trainable(key: Key, cfg: EstimatorConfig) -> bool:
    return key[0] != "P" or cfg.optimize_preparation


class _Problem:
    """Loss/gradient evaluator for a fixed window and key layout."""

    def __init__(self, window: DataWindow | Iterable[Record], ideal: GateSet, keys: list[Key],
                 cfg: EstimatorConfig, fixed: Mapping[Key, Channel]):
        records = list(window)
        self.cfg = cfg
        self.keys = keys
        self.ideal_s = [
            np.asarray(ideal[k].superop).reshape(ideal[k].dim ** 2, -1) for k in keys
        ]
        self.lams = np.array([_lam(k, cfg.lambda1, cfg.lambda2) for k in keys])
        self.fixed = dict(fixed)
        all_keys = list(keys) + list(self.fixed)
        self.fixed_s = [
            np.asarray(ch.superop).reshape(ch.dim ** 2, -1) for ch in self.fixed.values()
        ]
        # ideal preparation on |0> is a no-op
        skip = {
            k for k, ch in self.fixed.items()
            if k[0] == "P" and np.allclose(ch.choi, ideal[k].choi, rtol=0, atol=1e-15)
        }
        self.batches = []
        self.counts = []
        by_width: dict[int, list[Record]] = {}
        for r in records:
            by_width.setdefault(r.circuit.n_qubits, []).append(r)
        for recs in by_width.values():
            for s in range(0, len(recs), cfg.chunk_size):
                chunk = recs[s : s + cfg.chunk_size]
                circuits = [r.circuit for r in chunk]
                missing = {k for c in circuits for k in c.ops} - set(all_keys)
                if missing:
                    raise KeyError(f"gate set has no entry for {sorted(missing, key=str)}")
                self.batches.append(CircuitBatch(circuits, all_keys, skip))
                self.counts.append([r.sample.count_vector(c.n_measured) for r, c in zip(chunk, circuits)])

    def smats(self, vs: list[np.ndarray]) -> list[np.ndarray]:
        out = []
        for v in vs:
            d = v.shape[1]
            k = v.reshape(-1, d, d)
            out.append(np.einsum("mai,mbj->abij", k, k.conj()).reshape(d * d, d * d))
        return out

    def value(self, vs: list[np.ndarray], grad: bool = False):
        sm = self.smats(vs)
        full = sm + self.fixed_s
        nll = 0.0
        a_tot = [np.zeros_like(s) for s in sm] if grad else None
        for batch, counts in zip(self.batches, self.counts):
            probs = batch.forward(full, keep=grad)
            dps = []
            for p, n in zip(probs, counts):
                pf = np.maximum(p, PROB_FLOOR)
                nz = n > 0
                nll -= float(np.sum(n[nz] * np.log(pf[nz])))
                if grad:
                    dp = np.zeros_like(p)
                    dp[nz] = -n[nz] / pf[nz]
                    dps.append(dp)
            if grad:
                a = batch.backward(dps)
                for k in range(len(sm)):
                    a_tot[k] += a[k]
        reg = 0.0
        for k, (s, s0) in enumerate(zip(sm, self.ideal_s)):
            if self.lams[k] == 0:
                continue
            diff = s - s0
            reg += self.lams[k] * float(np.sum(np.abs(diff) ** 2))
            if grad:
                a_tot[k] += 2 * self.lams[k] * diff.conj()
        loss = nll + reg
        if not grad:
            return loss
        grads = [superop_grad_to_isometry(v, a) for v, a in zip(vs, a_tot)]
        return loss, grads


def _split_keys(g: GateSet, cfg: EstimatorConfig) -> tuple[list[Key], dict[Key, Channel]]:
    keys = [k for k in g if _trainable(k, cfg)]
    fixed = {k: g[k] for k in g if not _trainable(k, cfg)}
    return keys, fixed


def _rank(key: Key, cfg: EstimatorConfig) -> int:
    return cfg.kraus_rank_2q if _is_two_qubit(key) else cfg.kraus_rank_1q


def loss(g: GateSet, window: DataWindow | Iterable[Record], cfg: EstimatorConfig,
         ideal: GateSet | None = None) -> float:
    """Negative log-likelihood of the window plus the ideal-pull regularizer.

    Evaluated circuit by circuit with the reference simulator; the optimizer
    uses the batched engine instead.
    """
    ideal = GateSet.ideal() if ideal is None else ideal
    records = list(window)
    g.require([r.circuit for r in records])
    nll = -sum(log_likelihood(r.circuit, g, r.sample) for r in records)
    return nll + regularizer(g, ideal, cfg.lambda1, cfg.lambda2, cfg.optimize_preparation)


def loss_gradient(isometries: Mapping[Key, np.ndarray], window: DataWindow | Iterable[Record],
                  cfg: EstimatorConfig, ideal: GateSet | None = None,
                  fixed: Mapping[Key, Channel] | None = None) -> tuple[float, dict[Key, np.ndarray]]:
    """Loss and Euclidean gradient for every isometry, via the adjoint method.

    Contributions of repeated occurrences of a gate are accumulated.  Entries
    of ``fixed`` (by default the ideal preparation channels) are held
    constant and contribute no regularization.
    """
    ideal = GateSet.ideal() if ideal is None else ideal
    keys = list(isometries)
    if fixed is None:
        fixed = {k: ideal[k] for k in ideal if k[0] == "P" and k not in isometries}
    prob = _Problem(window, ideal, keys, cfg, fixed)
    value, grads = prob.value([np.asarray(isometries[k], dtype=complex) for k in keys], grad=True)
    return value, dict(zip(keys, grads))


def loss_from_isometries(isometries: Mapping[Key, np.ndarray], window, cfg: EstimatorConfig,
                         ideal: GateSet | None = None,
                         fixed: Mapping[Key, Channel] | None = None) -> float:
    ideal = GateSet.ideal() if ideal is None else ideal
    keys = list(isometries)
    if fixed is None:
        fixed = {k: ideal[k] for k in ideal if k[0] == "P" and k not in isometries}
    prob = _Problem(window, ideal, keys, cfg, fixed)
    return prob.value([np.asarray(isometries[k], dtype=complex) for k in keys])


# --------------------------------------------------------------------------
# Riemannian Adam
# --------------------------------------------------------------------------


@dataclass
class OptimizerState:
    """First moments (tangent vectors) and scalar second moments per isometry."""

    m: list[np.ndarray]
    v: list[float]
    step: int = 0

    @classmethod
    def zeros(cls, points: list[np.ndarray]) -> "OptimizerState":
        return cls([np.zeros_like(p) for p in points], [0.0] * len(points), 0)


def radam_step(state: OptimizerState, points: list[np.ndarray], rgrads: list[np.ndarray],
               lr: float, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8) -> tuple[OptimizerState, list[np.ndarray]]:
    """One Riemannian Adam update on a product of Stiefel manifolds.

    The second moment is the squared Riemannian gradient norm of each factor.
    After the retraction the first moment is transported to the new point by
    tangent-space projection.
    """
    t = state.step + 1
    new_pts, new_m, new_v = [], [], []
    corr = np.sqrt(1 - beta2**t) / (1 - beta1**t)
    for x, g, m, v in zip(points, rgrads, state.m, state.v):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * inner(g, g)
        direction = -lr * corr * m / (np.sqrt(v) + eps)
        x_new = retract(x, direction)
        new_pts.append(x_new)
        new_m.append(project_to_tangent(x_new, m))
        new_v.append(v)
    return OptimizerState(new_m, new_v, t), new_pts


# --------------------------------------------------------------------------
# fitting
# --------------------------------------------------------------------------


@dataclass
class FitResult:
    gateset: GateSet
    loss: float
    loss_trace: list[float]
    iterations: int
    best_iteration: int
    wall_time: float
    isometries: dict[Key, np.ndarray] = field(repr=False, default_factory=dict)


def _initial_points(init: GateSet, keys: list[Key], cfg: EstimatorConfig,
                    rng: np.random.Generator) -> tuple[list[np.ndarray], list[np.ndarray]]:
    exact, perturbed = [], []
    for k in keys:
        v = KrausIsometry.from_channel(init[k], _rank(k, cfg)).v
        exact.append(v)
        if cfg.init_perturbation > 0:
            z = rng.normal(size=v.shape) + 1j * rng.normal(size=v.shape)
            xi = project_to_tangent(v, z)
            xi *= cfg.init_perturbation / np.linalg.norm(xi)
            perturbed.append(retract(v, xi))
        else:
            perturbed.append(v)
    return exact, perturbed


def fit(window: DataWindow | Iterable[Record], cfg: EstimatorConfig, init: GateSet | None = None,
        ideal: GateSet | None = None, callback=None) -> FitResult:
    """Minimize the regularized negative log-likelihood over CPTP gate sets.

    Starts from ``init`` (default: ideal) with a small random tangent
    perturbation so that unused Kraus directions receive gradient.  Returns
    the best iterate seen, which is never worse than the unperturbed start.
    """
    t0 = time.perf_counter()
    records = list(window)
    if not records:
        raise ValueError("cannot fit an empty window")
    ideal = GateSet.ideal() if ideal is None else ideal
    init = ideal if init is None else init
    keys, fixed = _split_keys(init, cfg)
    prob = _Problem(records, ideal, keys, cfg, fixed)
    rng = np.random.default_rng(cfg.seed)
    exact, pts = _initial_points(init, keys, cfg, rng)

    best_loss = prob.value(exact)
    if not np.isfinite(best_loss):
        raise EstimationError(f"non-finite loss {best_loss} at the initial point")
    best_pts, best_it = exact, 0
    trace = []
    state = OptimizerState.zeros(pts)
    decay = (cfg.final_learning_rate / cfg.learning_rate) ** (1 / max(cfg.max_iters - 1, 1))
    stall = 0
    it = 0
    for it in range(1, cfg.max_iters + 1):
        value, grads = prob.value(pts, grad=True)
        if not np.isfinite(value):
            raise EstimationError(f"non-finite loss {value} at iteration {it}")
        trace.append(value)
        if value < best_loss:
            improvement = best_loss - value
            best_loss, best_pts, best_it = value, pts, it
            stall = 0 if improvement > cfg.convergence_tol * abs(value) else stall + 1
        else:
            stall += 1
        if callback is not None:
            callback(it, value)
        if stall >= cfg.patience:
            break
        rg = [project_to_tangent(x, g) for x, g in zip(pts, grads)]
        lr = cfg.learning_rate * decay ** (it - 1)
        state, pts = radam_step(state, pts, rg, lr, cfg.beta1, cfg.beta2, cfg.eps)
    else:
        final = prob.value(pts)
        trace.append(final)
        if final < best_loss:
            best_loss, best_pts, best_it = final, pts, it + 1

    est = dict(fixed)
    isos = {}
    for k, v in zip(keys, best_pts):
        est[k] = Channel(v.reshape(-1, v.shape[1], v.shape[1]))
        isos[k] = v
    g_est = GateSet({k: est[k] for k in init})
    for k in keys:
        rep = validate_cptp(g_est[k], tol=1e-8)
        if not rep.ok:
            raise EstimationError(f"estimate for {k} is not CPTP: {rep}")
    return FitResult(g_est, best_loss, trace, it, best_it, time.perf_counter() - t0, isos)


@dataclass
class Checkpoint:
    index: int
    gateset: GateSet
    loss: float
    iterations: int
    wall_time: float
    window_start: int
    loss_trace: list[float] = field(repr=False, default_factory=list)


def monitoring_run(stream: Iterable[Record], cfg: EstimatorConfig, init: GateSet | None = None,
                   ideal: GateSet | None = None, skip: Iterable[int] = ()) -> list[Checkpoint]:
    """Consume a record stream and fit at every scheduled arrival count.

    Each fit is warm-started from the previous checkpoint's estimate.
    Indices in ``skip`` are not fitted (used to resume runs whose checkpoints
    already exist); pass the latest existing estimate as ``init``.
    """
    ideal = GateSet.ideal() if ideal is None else ideal
    current = ideal if init is None else init
    window = DataWindow(cfg.window_limit)
    schedule = sorted(set(cfg.checkpoint_schedule))
    skip = set(skip)
    out = []
    for rec in stream:
        window.push(rec)
        i = window.n_seen
        if i not in schedule or i in skip:
            continue
        res = fit(window, cfg, init=current, ideal=ideal)
        log.info("checkpoint i=%d loss=%.6g iters=%d (%.1fs)", i, res.loss, res.iterations, res.wall_time)
        current = res.gateset
        out.append(Checkpoint(i, res.gateset, res.loss, res.iterations, res.wall_time,
                              window.first_index, res.loss_trace))
    return out
