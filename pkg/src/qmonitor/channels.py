"""Quantum channels on one or two qubits.

A channel is stored as a stack of Kraus operators with shape ``(r, d, d)``
and, lazily, as a Choi matrix.  The Choi matrix uses the ordering
output (x) input::

    C = sum_{j,j'} Phi[|j><j'|] (x) |j><j'|

so that ``C[(a, i), (b, j)] = Phi[|i><j|][a, b]``.  The same numbers viewed as
a rank-4 tensor ``S[a, b, i, j]`` form the superoperator acting as
``rho'[a, b] = sum_ij S[a, b, i, j] rho[i, j]``; both views are exposed.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "Channel",
    "CPTPReport",
    "kraus_to_choi",
    "choi_to_kraus",
    "choi_to_superop",
    "superop_to_choi",
    "validate_cptp",
    "apply",
    "compose",
    "tensor",
    "gate_fidelity",
    "povm_effect",
    "unitary_channel",
    "identity_channel",
    "random_channel",
]


def _as_kraus_stack(kraus) -> np.ndarray:
    ks = [np.asarray(k, dtype=complex) for k in kraus]
    if not ks:
        raise ValueError("empty Kraus list")
    d = ks[0].shape[0]
    for k in ks:
        if k.ndim != 2 or k.shape != (d, d):
            raise ValueError(
                f"Kraus operators must all be square of size {d}, got {k.shape}"
            )
    return np.stack(ks)


def kraus_to_choi(kraus) -> np.ndarray:
    """Choi matrix (output (x) input) of the map ``rho -> sum K rho K^dag``."""
    ks = _as_kraus_stack(kraus)
    d = ks.shape[1]
    s = np.einsum("mai,mbj->abij", ks, ks.conj())
    return superop_to_choi(s, d)


def superop_to_choi(s: np.ndarray, d: int | None = None) -> np.ndarray:
    s = np.asarray(s)
    if d is None:
        d = s.shape[0]
    s = s.reshape(d, d, d, d)
    return s.transpose(0, 2, 1, 3).reshape(d * d, d * d)


def choi_to_superop(choi: np.ndarray) -> np.ndarray:
    choi = np.asarray(choi)
    d = _dim_from_choi(choi)
    return choi.reshape(d, d, d, d).transpose(0, 2, 1, 3)


def _dim_from_choi(choi: np.ndarray) -> int:
    n = choi.shape[0]
    d = int(round(np.sqrt(n)))
    if choi.shape != (n, n) or d * d != n:
        raise ValueError(f"Choi matrix must be d^2 x d^2, got {choi.shape}")
    return d


def choi_to_kraus(choi: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Kraus operators from the eigendecomposition of a Choi matrix.

    Eigenvalues below ``tol`` are dropped.  Raises ``ValueError`` if the Choi
    matrix has an eigenvalue below ``-tol`` (the map is not completely
    positive).  At least one operator is always returned.
    """
    choi = np.asarray(choi, dtype=complex)
    d = _dim_from_choi(choi)
    herm = 0.5 * (choi + choi.conj().T)
    w, v = np.linalg.eigh(herm)
    if w[0] < -tol:
        raise ValueError(
            f"Choi matrix is not positive semidefinite: min eigenvalue {w[0]:.3e}"
        )
    keep = w > tol
    if not np.any(keep):
        return np.zeros((1, d, d), dtype=complex)
    w, v = w[keep][::-1], v[:, keep][:, ::-1]
    # column index (a, i) of the eigenvector -> K[a, i]
    return (np.sqrt(w)[:, None, None] * v.T.reshape(-1, d, d)).astype(complex)


@dataclass(frozen=True, eq=False)
class Channel:
    """Immutable CPTP map on ``dim`` = 2 or 4 dimensional Hilbert space.

    Build it from Kraus operators (``Channel(kraus)``) or from a Choi matrix
    (``Channel.from_choi``).  Kraus operators are the authoritative form for
    simulation; the Choi matrix and superoperator are derived on demand.
    """

    kraus: np.ndarray

    def __post_init__(self):
        ks = _as_kraus_stack(self.kraus)
        ks.setflags(write=False)
        object.__setattr__(self, "kraus", ks)

    @classmethod
    def from_choi(cls, choi, tol: float = 1e-10) -> "Channel":
        choi = np.asarray(choi, dtype=complex)
        ch = cls(choi_to_kraus(choi, tol=tol))
        return ch

    @property
    def dim(self) -> int:
        return self.kraus.shape[1]

    @property
    def rank(self) -> int:
        return self.kraus.shape[0]

    @cached_property
    def choi(self) -> np.ndarray:
        c = kraus_to_choi(self.kraus)
        c.setflags(write=False)
        return c

    @cached_property
    def superop(self) -> np.ndarray:
        """Superoperator tensor ``S[a, b, i, j]``."""
        s = np.einsum("mai,mbj->abij", self.kraus, self.kraus.conj())
        s.setflags(write=False)
        return s

    def __call__(self, rho):
        return apply(self, rho)

    def __repr__(self):
        return f"Channel(dim={self.dim}, rank={self.rank})"


@dataclass
class CPTPReport:
    psd_residual: float
    tp_residual: float
    herm_residual: float
    tol: float

    @property
    def completely_positive(self) -> bool:
        return self.psd_residual >= -self.tol

    @property
    def trace_preserving(self) -> bool:
        return self.tp_residual <= self.tol

    @property
    def hermitian(self) -> bool:
        return self.herm_residual <= self.tol

    @property
    def ok(self) -> bool:
        return self.completely_positive and self.trace_preserving and self.hermitian

    def __bool__(self):
        return self.ok


def validate_cptp(channel: Channel | np.ndarray, tol: float = 1e-9) -> CPTPReport:
    """Numeric CPTP diagnostics of a channel or a raw Choi matrix.

    ``psd_residual`` is the smallest eigenvalue of the Hermitian part of the
    Choi matrix, ``tp_residual`` the Frobenius norm of ``Tr_out(C) - 1`` and
    ``herm_residual`` the Frobenius norm of ``C - C^dag``.
    """
    choi = channel.choi if isinstance(channel, Channel) else np.asarray(channel)
    d = _dim_from_choi(choi)
    herm = 0.5 * (choi + choi.conj().T)
    psd = float(np.linalg.eigvalsh(herm)[0])
    tr_out = np.einsum("aiaj->ij", choi.reshape(d, d, d, d))
    tp = float(np.linalg.norm(tr_out - np.eye(d)))
    hr = float(np.linalg.norm(choi - choi.conj().T))
    return CPTPReport(psd, tp, hr, tol)


def apply(channel: Channel, rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho)
    if rho.shape != (channel.dim, channel.dim):
        raise ValueError(
            f"state of shape {rho.shape} does not match channel dimension {channel.dim}"
        )
    k = channel.kraus
    return np.einsum("mai,ij,mbj->ab", k, rho, k.conj())


def compose(second: Channel, first: Channel) -> Channel:
    """``second o first``: Kraus set of all products ``K2_m K1_n``."""
    if second.dim != first.dim:
        raise ValueError("cannot compose channels of different dimension")
    ks = np.einsum("mab,nbc->mnac", second.kraus, first.kraus)
    return Channel(ks.reshape(-1, first.dim, first.dim))


def tensor(a: Channel, b: Channel) -> Channel:
    """``a (x) b`` with ``a`` on the first (most significant) factor."""
    ks = np.einsum("mij,nkl->mnikjl", a.kraus, b.kraus)
    d = a.dim * b.dim
    return Channel(ks.reshape(-1, d, d))


def unitary_channel(u) -> Channel:
    u = np.asarray(u, dtype=complex)
    return Channel(u[None])


def identity_channel(dim: int = 2) -> Channel:
    return Channel(np.eye(dim, dtype=complex)[None])


def gate_fidelity(channel: Channel, ideal_unitary) -> float:
    """``(1/d^2) <Psi_U| C(Phi) |Psi_U>`` with ``|Psi_U> = (U (x) 1) sum_j |j, j>``."""
    u = np.asarray(ideal_unitary, dtype=complex)
    if u.shape != (channel.dim, channel.dim):
        raise ValueError(
            f"unitary of shape {u.shape} does not match channel dimension {channel.dim}"
        )
    psi = u.reshape(-1)
    d = channel.dim
    return float(np.real(psi.conj() @ channel.choi @ psi)) / d**2


def povm_effect(channel: Channel, outcome: int) -> np.ndarray:
    """Effect ``Phi^dag[|k><k|]`` of outcome ``k`` for a measurement preceded by ``channel``."""
    if channel.dim != 2:
        raise ValueError("POVM effects are defined for single-qubit channels only")
    if outcome not in (0, 1):
        raise ValueError("outcome must be 0 or 1")
    k = channel.kraus
    return np.einsum("ma,mb->ab", k[:, outcome, :].conj(), k[:, outcome, :])


def random_channel(dim: int, rng: np.random.Generator, rank: int | None = None) -> Channel:
    """Random CPTP map from a Haar-like random isometry of shape ``(rank*dim, dim)``."""
    rank = dim * dim if rank is None else rank
    z = rng.normal(size=(rank * dim, dim)) + 1j * rng.normal(size=(rank * dim, dim))
    q, r = np.linalg.qr(z)
    q = q * (np.diag(r) / np.abs(np.diag(r)))
    return Channel(q.reshape(rank, dim, dim))
