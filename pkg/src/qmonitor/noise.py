"""Parametric noise channels and the ground-truth emulator gate set."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.linalg

from .channels import Channel, compose, identity_channel, tensor
from .circuits import DEFAULT_DEVICE, UNITARIES, Device, GateSet, Key

_PAULIS = np.array(
    [[[1, 0], [0, 1]], [[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]],
    dtype=complex,
)


def _check_unit(name: str, x: float) -> float:
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x}")
    return x


def amplitude_damping(gamma: float) -> Channel:
    gamma = _check_unit("gamma", gamma)
    k0 = np.diag([1.0, np.sqrt(1 - gamma)]).astype(complex)
    k1 = np.array([[0, np.sqrt(gamma)], [0, 0]], dtype=complex)
    return Channel([k0, k1])


def phase_damping(mu: float) -> Channel:
    mu = _check_unit("mu", mu)
    k0 = np.diag([1.0, np.sqrt(1 - mu)]).astype(complex)
    k1 = np.diag([0.0, np.sqrt(mu)]).astype(complex)
    return Channel([k0, k1])


def depolarizing(p: float, dim: int = 2) -> Channel:
    """``rho -> (1 - p) rho + p Tr[rho] 1/dim`` in Pauli Kraus form."""
    p = _check_unit("p", p)
    if dim not in (2, 4):
        raise ValueError(f"dim must be 2 or 4, got {dim}")
    if dim == 2:
        paulis = _PAULIS
    else:
        paulis = np.einsum("aij,bkl->abikjl", _PAULIS, _PAULIS).reshape(16, 4, 4)
    n = len(paulis)
    w = np.full(n, p / n)
    w[0] += 1 - p
    return Channel(np.sqrt(w)[:, None, None] * paulis)


def eigenphases(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenphases in (-pi, pi] and a unitary eigenbasis (columns) of ``u``."""
    u = np.asarray(u, dtype=complex)
    if not np.allclose(u.conj().T @ u, np.eye(len(u)), atol=1e-10):
        raise ValueError("matrix is not unitary")
    t, z = scipy.linalg.schur(u, output="complex")
    theta = np.angle(np.diag(t))
    theta = np.where(theta <= -np.pi, theta + 2 * np.pi, theta)
    return theta, z


def smoothed_unitary(nu: float, u) -> Channel:
    """Gaussian average of ``U^tau rho U^-tau`` over ``tau ~ N(1, nu^2)``.

    Evaluated exactly in the eigenbasis of ``U``: the component along
    ``|v_j><v_k|`` picks up ``exp(i dtheta) exp(-nu^2 dtheta^2 / 2)`` with
    ``dtheta = theta_j - theta_k``.
    """
    if nu < 0:
        raise ValueError(f"nu must be non-negative, got {nu}")
    theta, z = eigenphases(u)
    d = len(theta)
    dth = theta[:, None] - theta[None, :]
    coeff = np.exp(1j * dth) * np.exp(-0.5 * nu**2 * dth**2)
    # S[a,b,i,j] = sum_jk coeff[j,k] z[a,j] z[i,j]^* z[b,k]^* z[j,k]
    s = np.einsum("jk,aj,ij,bk,lk->abil", coeff, z, z.conj(), z.conj(), z)
    choi = s.transpose(0, 2, 1, 3).reshape(d * d, d * d)
    return Channel.from_choi(0.5 * (choi + choi.conj().T), tol=1e-13)


@dataclass(frozen=True)
class NoiseParams:
    nu: float = 0.0
    p: float = 0.0
    mu: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError(f"nu must be non-negative, got {self.nu}")
        for name in ("p", "mu", "gamma"):
            _check_unit(name, getattr(self, name))


def _half_damping(params: NoiseParams) -> Channel:
    # The chain applies the damping block twice; each application carries half
    # of the tabulated strength so that the pair composes to it exactly.
    # The mu column drives amplitude damping, the gamma column phase damping.
    amp = 1 - np.sqrt(1 - params.mu)
    phase = 1 - np.sqrt(1 - params.gamma)
    return compose(amplitude_damping(amp), phase_damping(phase))


def build_noisy_single(label: str, params: NoiseParams) -> Channel:
    """damping o depolarizing o smoothed(U_label) o damping, single qubit."""
    if label not in ("ID", "RZ", "X", "SX", "M"):
        raise ValueError(f"unknown single-qubit gate label {label!r}")
    ap = _half_damping(params)
    core = compose(depolarizing(params.p, 2), smoothed_unitary(params.nu, UNITARIES[label]))
    return _simplify(compose(ap, compose(core, ap)))


def build_noisy_cx(params: NoiseParams) -> Channel:
    ap = _half_damping(params)
    ap2 = tensor(ap, ap)
    dep = depolarizing(params.p, 2)
    core = compose(tensor(dep, dep), smoothed_unitary(params.nu, UNITARIES["CX"]))
    return _simplify(compose(ap2, compose(core, ap2)))


def _simplify(ch: Channel) -> Channel:
    """Re-express with the minimal number of Kraus operators."""
    return Channel.from_choi(ch.choi, tol=1e-14)


@dataclass(frozen=True)
class NoiseRow:
    label: str
    target: int | tuple[int, int]
    params: NoiseParams
    f_ref: float | None = None

    @property
    def key(self) -> Key:
        return (self.label, self.target)


def _parse_target(text: str):
    text = text.strip().strip("()")
    parts = [int(x) for x in text.replace("-", ",").split(",") if x.strip()]
    return parts[0] if len(parts) == 1 else tuple(parts)


def load_noise_table(path: str | Path | None = None) -> list[NoiseRow]:
    """Rows of a ``label,target,nu,p,mu,gamma,F_ref`` CSV (bundled table by default)."""
    if path is None:
        text = resources.files("qmonitor").joinpath("data/noise_table.csv").read_text()
    else:
        text = Path(path).read_text()
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        f_ref = r.get("F_ref")
        rows.append(
            NoiseRow(
                r["label"].strip(),
                _parse_target(r["target"]),
                NoiseParams(float(r["nu"]), float(r["p"]), float(r["mu"]), float(r["gamma"])),
                float(f_ref) if f_ref not in (None, "") else None,
            )
        )
    check_damping_pairing(rows)
    return rows


def check_damping_pairing(rows: list[NoiseRow], labels=("ID", "RZ", "X", "SX")) -> None:
    """Gates of the listed labels acting on one qubit must share (mu, gamma)."""
    seen: dict[int, tuple[float, float, str]] = {}
    for row in rows:
        if row.label not in labels:
            continue
        pair = (row.params.mu, row.params.gamma)
        prev = seen.setdefault(row.target, (*pair, row.label))
        if prev[:2] != pair:
            raise ValueError(
                f"qubit {row.target}: {row.label} damping {pair} differs from {prev[2]} {prev[:2]}"
            )


def noisy_channel(row: NoiseRow) -> Channel:
    if row.label == "CX":
        return build_noisy_cx(row.params)
    return build_noisy_single(row.label, row.params)


def true_gateset(path: str | Path | None = None, device: Device = DEFAULT_DEVICE) -> GateSet:
    """Ground-truth emulator gate set: one noisy channel per table row, ideal P."""
    entries = {("P", q): identity_channel(2) for q in range(device.n_qubits)}
    for row in load_noise_table(path):
        entries[row.key] = noisy_channel(row)
    return GateSet(entries)
