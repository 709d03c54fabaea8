"""Two-level operator algebra: Pauli/ladder constants, named qubit states,
density-matrix helpers, Bloch conversion, and Uhlmann fidelity.

Everything here is pure; the module-level operator constants are read-only
arrays shared by reference, so the whole module is safe to use from
concurrent workers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PositivityError, ValidationError

# Tolerated transient negativity of a density-matrix eigenvalue.  Anything
# larger signals a physics or step-size problem, not integrator noise.
EPS_POS = 1e-9

_NORM_TOL = 1e-12
_FID_CLAMP = 1e-10


def _frozen(m) -> np.ndarray:
    a = np.array(m, dtype=complex)
    a.setflags(write=False)
    return a


IDENTITY = _frozen([[1, 0], [0, 1]])
SIGMA_X = _frozen([[0, 1], [1, 0]])
SIGMA_Y = _frozen([[0, -1j], [1j, 0]])
SIGMA_Z = _frozen([[1, 0], [0, -1]])
# Ladder operators carry no 1/2: sigma_plus = sigma_x + i sigma_y, so
# sigma_plus @ sigma_minus = diag(4, 0).  The drive scaling (u1 - i u2)/4
# assumes exactly this normalization; changing either side alone rescales
# every dissipation rate by a factor of 4.
SIGMA_PLUS = _frozen([[0, 2], [0, 0]])
SIGMA_MINUS = _frozen([[0, 0], [2, 0]])

_PAULI = {
    "x": SIGMA_X,
    "y": SIGMA_Y,
    "z": SIGMA_Z,
    "+": SIGMA_PLUS,
    "-": SIGMA_MINUS,
    "identity": IDENTITY,
}


def pauli(label: str) -> np.ndarray:
    """Return the operator for ``label`` in {x, y, z, +, -, identity}."""
    try:
        return _PAULI[label]
    except KeyError:
        raise ValidationError(
            f"unknown operator label {label!r}; expected one of "
            f"{sorted(_PAULI)}"
        ) from None


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(a).T


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def anticommutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b + b @ a


_C8 = np.cos(np.pi / 8)
_S8 = np.sin(np.pi / 8)
_R2 = 1 / np.sqrt(2)

_STATE_VECTORS = {
    "+Z": _frozen([[1], [0]]).reshape(2),
    "-Z": _frozen([[0], [1]]).reshape(2),
    "+X": _frozen([[_R2], [_R2]]).reshape(2),
    "-X": _frozen([[_R2], [-_R2]]).reshape(2),
    "+Y": _frozen([[_R2], [1j * _R2]]).reshape(2),
    "-Y": _frozen([[_R2], [-1j * _R2]]).reshape(2),
    "+S": _frozen([[_C8], [_S8]]).reshape(2),
    "+R": _frozen([[_C8], [1j * _S8]]).reshape(2),
}

STATE_LABELS = tuple(_STATE_VECTORS)


@dataclass(frozen=True)
class NamedState:
    """A labelled pure state of the qubit."""

    label: str
    vector: np.ndarray


def named_state(label: str) -> NamedState:
    """Look up one of the predefined states (+Z, -Z, +X, -X, +Y, -Y, +S, +R)."""
    try:
        return NamedState(label, _STATE_VECTORS[label])
    except KeyError:
        raise ValidationError(
            f"unknown state label {label!r}; valid labels: {', '.join(STATE_LABELS)}"
        ) from None


def density_from_state(psi) -> np.ndarray:
    """Projector |psi><psi| for a label, NamedState, or 2-amplitude vector.

    Raises ValidationError unless the amplitudes are normalized to 1e-12.
    """
    if isinstance(psi, str):
        psi = _STATE_VECTORS[psi] if psi in _STATE_VECTORS else named_state(psi).vector
    elif isinstance(psi, NamedState):
        psi = psi.vector
    v = np.asarray(psi, dtype=complex).reshape(-1)
    if v.shape != (2,):
        raise ValidationError(f"state vector must have 2 amplitudes, got shape {v.shape}")
    norm = np.linalg.norm(v)
    if abs(norm - 1.0) > _NORM_TOL:
        raise ValidationError(f"state vector not normalized: |psi| = {norm!r}")
    return np.outer(v, np.conj(v))


def bloch_vector(rho: np.ndarray) -> np.ndarray:
    """Bloch components (Tr rho sx, Tr rho sy, Tr rho sz) as a real 3-vector."""
    rho = np.asarray(rho)
    x = 2.0 * rho[0, 1].real
    y = -2.0 * rho[0, 1].imag
    z = (rho[0, 0] - rho[1, 1]).real
    return np.array([x, y, z])


def density_from_bloch(r) -> np.ndarray:
    """Inverse of bloch_vector: rho = (I + x sx + y sy + z sz) / 2."""
    x, y, z = np.asarray(r, dtype=float)
    if x * x + y * y + z * z > 1.0 + 1e-9:
        raise ValidationError(f"Bloch vector lies outside the unit ball: {(x, y, z)}")
    return 0.5 * np.array(
        [[1.0 + z, x - 1j * y], [x + 1j * y, 1.0 - z]], dtype=complex
    )


def trace_defect(rho: np.ndarray) -> float:
    return abs(np.trace(rho) - 1.0)


def hermiticity_defect(rho: np.ndarray) -> float:
    return float(np.abs(rho - np.conj(rho).T).max())


def eigenvalues(rho: np.ndarray) -> tuple[float, float]:
    """(lowest, highest) eigenvalue of a Hermitian 2x2 matrix, closed form."""
    a = rho[0, 0].real
    d = rho[1, 1].real
    half = np.hypot(0.5 * (a - d), abs(rho[0, 1]))
    mid = 0.5 * (a + d)
    return mid - half, mid + half


def min_eigenvalue(rho: np.ndarray) -> float:
    return eigenvalues(rho)[0]


def purity(rho: np.ndarray) -> float:
    return float(np.trace(rho @ rho).real)


def assert_density_matrix(rho: np.ndarray, name: str = "rho", tol: float = 1e-12) -> None:
    """Check Hermiticity and unit trace; positivity is monitored elsewhere."""
    h = hermiticity_defect(rho)
    if h > tol:
        raise ValidationError(f"{name} is not Hermitian: max|rho - rho^H| = {h:.3e}")
    t = trace_defect(rho)
    if t > tol:
        raise ValidationError(f"{name} does not have unit trace: |Tr rho - 1| = {t:.3e}")


def uhlmann_fidelity(rho_t: np.ndarray, rho_f: np.ndarray) -> float:
    """Uhlmann fidelity [Tr sqrt(sqrt(a) b sqrt(a))]^2 via the 2x2 closed form.

    For 2x2 states this reduces to Tr(a b) + 2 sqrt(det a det b), which is
    what the optimizer evaluates in its inner loop.  Inputs must be positive
    within EPS_POS; the result is clamped into [0, 1] only when the excursion
    is below 1e-10.
    """
    for name, rho in (("rho_t", rho_t), ("rho_f", rho_f)):
        lo = min_eigenvalue(rho)
        if lo < -EPS_POS:
            raise PositivityError(
                f"{name} has negative eigenvalue {lo:.3e} (tolerance {EPS_POS:.0e})"
            )
    det_t = max((rho_t[0, 0] * rho_t[1, 1] - rho_t[0, 1] * rho_t[1, 0]).real, 0.0)
    det_f = max((rho_f[0, 0] * rho_f[1, 1] - rho_f[0, 1] * rho_f[1, 0]).real, 0.0)
    f = float(np.trace(rho_t @ rho_f).real) + 2.0 * np.sqrt(det_t * det_f)
    if f < -_FID_CLAMP or f > 1.0 + _FID_CLAMP:
        raise PositivityError(f"fidelity {f!r} is outside [0, 1] beyond clamping range")
    return min(max(f, 0.0), 1.0)
