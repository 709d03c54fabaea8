"""Master-equation right-hand side and propagator for a driven two-level
system in scaled units (time in 1/omega_sl, amplitudes in omega_sl).

The equation of motion implemented here, with alpha(t) = (u1(t) - i u2(t))/4
and dm/dp the co-/counter-rotating frequencies, is

    drho/dt = -i alpha [s+, rho] e^{-i dm t}  -  i alpha* [s-, rho] e^{+i dm t}
            + 2 |alpha|^2 (b1 + b2) * (D[s+] + D[s-]) rho
            + Re(alpha^2) b2 * ([s+,[s+,rho]] e^{-2i dm t} + [s-,[s-,rho]] e^{+2i dm t})
            + chi * (p1 D[s+] + p2 D[s-]) rho

where D[A] rho = A rho A^dag - {A^dag A, rho}/2 and b1 = J(dp), b2 = J(dm)
with the Lorentzian spectral density J(x) = chi / (1 + (x chi)^2).

The three dissipative contributions (drive Lindblad pair, drive
double-commutator pair, environment) can be switched off individually,
which the analytic test oracles rely on.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import qops
from .errors import IntegrationError, ValidationError

# Hard failure thresholds for the propagated state.  Deviations beyond these
# mean the fixed-step integration is unresolved, not merely noisy.
TRACE_FAIL = 1e-6
HERM_FAIL = 1e-6
EIG_FAIL = 1e-6


def spectral_density(x, chi: float):
    """Lorentzian weight J(x) = chi / (1 + (x chi)^2); accepts array x."""
    if chi <= 0:
        raise ValidationError(f"chi must be positive, got {chi!r}")
    xc = np.asarray(x) * chi
    return chi / (1.0 + xc * xc)


@dataclass(frozen=True)
class ModelParams:
    """Dimensionless physics constants of the driven dissipative qubit.

    delta_plus is derived as delta_minus + 2 * omega_ratio when not given.
    The three boolean switches zero individual dissipation channels; they
    exist for analytic test oracles and diagnostic runs, and default to the
    full model.
    """

    omega_ratio: float = 572.3
    delta_minus: float = 0.0
    chi: float = 0.033
    p1: float = 0.8
    p2: float = 0.2
    delta_plus: float | None = None
    drive_lindblad: bool = True
    drive_double: bool = True
    environment: bool = True

    def __post_init__(self):
        if self.chi <= 0:
            raise ValidationError(f"chi must be positive, got {self.chi!r}")
        for name in ("p1", "p2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {v!r}")
        if abs(self.p1 + self.p2 - 1.0) > 1e-12:
            raise ValidationError(
                f"bath populations must satisfy p1 + p2 = 1, got {self.p1 + self.p2!r}"
            )
        if self.delta_plus is None:
            object.__setattr__(self, "delta_plus", self.delta_minus + 2.0 * self.omega_ratio)

    @property
    def beta1(self) -> float:
        return float(spectral_density(self.delta_plus, self.chi))

    @property
    def beta2(self) -> float:
        return float(spectral_density(self.delta_minus, self.chi))

    @property
    def beta(self) -> float:
        return self.beta1 + self.beta2

    def with_detuning(self, delta_minus: float) -> "ModelParams":
        """Copy with a new co-rotating detuning; delta_plus co-varies."""
        return dataclasses.replace(
            self,
            delta_minus=delta_minus,
            delta_plus=delta_minus + 2.0 * self.omega_ratio,
        )

    def dissipation_free(self) -> "ModelParams":
        """Copy with every dissipation channel switched off (closed system)."""
        return dataclasses.replace(
            self, drive_lindblad=False, drive_double=False, environment=False
        )

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True, eq=False)
class PulseSequence:
    """Piecewise-constant two-channel control: N steps of duration dt."""

    n_steps: int
    dt: float
    u1: np.ndarray
    u2: np.ndarray

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValidationError(f"n_steps must be >= 1, got {self.n_steps!r}")
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt!r}")
        for name in ("u1", "u2"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (self.n_steps,):
                raise ValidationError(
                    f"{name} must have shape ({self.n_steps},), got {arr.shape}"
                )
            if not np.isfinite(arr).all():
                raise ValidationError(f"{name} contains non-finite amplitudes")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def constant(cls, n_steps: int, dt: float, u1: float = 0.0, u2: float = 0.0):
        return cls(n_steps, dt, np.full(n_steps, float(u1)), np.full(n_steps, float(u2)))

    @property
    def total_time(self) -> float:
        return self.n_steps * self.dt

    @property
    def alphas(self) -> np.ndarray:
        """Per-step drive amplitude alpha_j = (u1_j - i u2_j) / 4."""
        return (self.u1 - 1j * self.u2) / 4.0


@dataclass(eq=False)
class Trajectory:
    """Sampled evolution rho(t) plus integration diagnostics.

    The Hermiticity defect is measured on the raw integrator output before
    each re-symmetrization, so it reports what the integrator actually did.
    """

    times: np.ndarray
    states: np.ndarray
    bloch: np.ndarray
    max_trace_defect: float
    max_herm_defect: float
    min_eigenvalue: float

    def __len__(self) -> int:
        return len(self.times)

    def samples(self):
        """Iterate over (t, rho, bloch_vector) tuples in time order."""
        for i in range(len(self.times)):
            yield self.times[i], self.states[i], self.bloch[i]

    @property
    def purities(self) -> np.ndarray:
        return np.einsum("tij,tji->t", self.states, self.states).real


def generator(rho: np.ndarray, t: float, u1: float, u2: float, params: ModelParams) -> np.ndarray:
    """Time derivative of rho: the master-equation right-hand side.

    Reference implementation by direct matrix algebra; the propagator uses
    an equivalent superoperator form that is unit-tested against this one.
    The output is Hermitian and traceless to rounding.
    """
    sp, sm = qops.SIGMA_PLUS, qops.SIGMA_MINUS
    a = (u1 - 1j * u2) / 4.0
    ph = np.exp(-1j * params.delta_minus * t)
    out = (-1j * a * ph) * qops.commutator(sp, rho)
    out = out + (-1j * np.conj(a * ph)) * qops.commutator(sm, rho)
    diss_p = sp @ rho @ sm - 0.5 * (_MM @ rho + rho @ _MM)
    diss_m = sm @ rho @ sp - 0.5 * (_PP @ rho + rho @ _PP)
    if params.drive_lindblad:
        out = out + (2.0 * (a * np.conj(a)).real * params.beta) * (diss_p + diss_m)
    if params.drive_double:
        # [s+,[s+,rho]] = -2 s+ rho s+ because s+^2 = 0 (same for s-).
        c2 = (a * a).real * params.beta2
        ph2 = ph * ph
        out = out + c2 * (ph2 * (-2.0 * (sp @ rho @ sp)) + np.conj(ph2) * (-2.0 * (sm @ rho @ sm)))
    if params.environment:
        out = out + params.chi * (params.p1 * diss_p + params.p2 * diss_m)
    return out


_PP = qops.SIGMA_PLUS @ qops.SIGMA_MINUS   # diag(4, 0)
_MM = qops.SIGMA_MINUS @ qops.SIGMA_PLUS   # diag(0, 4)


def _kron_lr(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Superoperator of rho -> a rho b acting on the row-major vectorization.
    return np.kron(a, b.T)


_I2 = np.eye(2, dtype=complex)
_I4 = np.eye(4, dtype=complex)
_COMM_P = _kron_lr(qops.SIGMA_PLUS, _I2) - _kron_lr(_I2, qops.SIGMA_PLUS)
_COMM_M = _kron_lr(qops.SIGMA_MINUS, _I2) - _kron_lr(_I2, qops.SIGMA_MINUS)
_DISS_P = _kron_lr(qops.SIGMA_PLUS, qops.SIGMA_MINUS) - 0.5 * (
    _kron_lr(_MM, _I2) + _kron_lr(_I2, _MM)
)
_DISS_M = _kron_lr(qops.SIGMA_MINUS, qops.SIGMA_PLUS) - 0.5 * (
    _kron_lr(_PP, _I2) + _kron_lr(_I2, _PP)
)
_DISS_SUM = _DISS_P + _DISS_M
_DBL_P = -2.0 * _kron_lr(qops.SIGMA_PLUS, qops.SIGMA_PLUS)
_DBL_M = -2.0 * _kron_lr(qops.SIGMA_MINUS, qops.SIGMA_MINUS)


@lru_cache(maxsize=64)
def _channel_weights(params: ModelParams):
    # (Lindblad weight, double-commutator weight, environment superoperator)
    b_lin = params.beta if params.drive_lindblad else 0.0
    b_dbl = params.beta2 if params.drive_double else 0.0
    if params.environment:
        l_env = params.chi * (params.p1 * _DISS_P + params.p2 * _DISS_M)
    else:
        l_env = np.zeros((4, 4), dtype=complex)
    return b_lin, b_dbl, l_env


def liouvillian(t: float, u1: float, u2: float, params: ModelParams) -> np.ndarray:
    """4x4 generator acting on the row-major vectorized density matrix."""
    b_lin, b_dbl, l_env = _channel_weights(params)
    a = (u1 - 1j * u2) / 4.0
    ph = np.exp(-1j * params.delta_minus * t)
    cd = -1j * a * ph
    ce = -1j * np.conj(a * ph)
    ph2 = ph * ph
    l = cd * _COMM_P + ce * _COMM_M + (2.0 * (a * np.conj(a)).real * b_lin) * _DISS_SUM
    c2 = (a * a).real * b_dbl
    return l + c2 * (ph2 * _DBL_P + np.conj(ph2) * _DBL_M) + l_env


def _liouvillian_batch(t: float, u1: np.ndarray, u2: np.ndarray, params: ModelParams) -> np.ndarray:
    # Stack of generators for a batch of control values at a shared time.
    b_lin, b_dbl, l_env = _channel_weights(params)
    a = (u1 - 1j * u2) / 4.0
    ph = np.exp(-1j * params.delta_minus * t)
    cd = (-1j * ph) * a
    ce = -1j * np.conj(ph) * np.conj(a)
    ph2 = ph * ph
    c2 = (a * a).real * b_dbl
    l = cd[:, None, None] * _COMM_P + ce[:, None, None] * _COMM_M
    l += ((2.0 * b_lin) * (a.real**2 + a.imag**2))[:, None, None] * _DISS_SUM
    l += c2[:, None, None] * (ph2 * _DBL_P + np.conj(ph2) * _DBL_M)
    l += l_env
    return l


def _stack_power(m: np.ndarray, k: int) -> np.ndarray:
    # Binary exponentiation of a stack of square matrices, k >= 1.
    result = None
    base = m
    while True:
        if k & 1:
            result = base if result is None else base @ result
        k >>= 1
        if not k:
            return result
        base = base @ base


def _rk4_map(l: np.ndarray, h: float) -> np.ndarray:
    # One-step RK4 map for a constant generator: the degree-4 Taylor
    # polynomial of exp(h L), which is exactly what the staged RK4 computes.
    hl = h * l
    return _I4 + hl @ (_I4 + hl @ (_I4 / 2.0 + hl @ (_I4 / 6.0 + hl / 24.0)))


def propagate_final(
    rho0: np.ndarray,
    u1: np.ndarray,
    u2: np.ndarray,
    dt: float,
    params: ModelParams,
    substeps: int = 16,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched final-state propagation without trajectory storage.

    u1 and u2 have shape (B, N): B independent piecewise-constant pulses on
    a shared time grid, integrated with fixed-step RK4 using `substeps`
    micro-steps per control interval.  Returns (states, valid) where states
    has shape (B, 2, 2) (re-symmetrized) and valid flags which batch members
    stayed physical (finite, unit trace, Hermitian, spectrum in [0, 1]
    within the module failure tolerances).
    """
    if substeps < 1:
        raise ValidationError(f"substeps must be >= 1, got {substeps!r}")
    u1 = np.atleast_2d(np.asarray(u1, dtype=float))
    u2 = np.atleast_2d(np.asarray(u2, dtype=float))
    if u1.shape != u2.shape:
        raise ValidationError(f"u1/u2 shape mismatch: {u1.shape} vs {u2.shape}")
    nb, n = u1.shape
    h = dt / substeps
    v = np.broadcast_to(np.asarray(rho0, dtype=complex).reshape(4), (nb, 4)).copy()
    with np.errstate(over="ignore", invalid="ignore"):
        if params.delta_minus == 0.0:
            for j in range(n):
                l = _liouvillian_batch(0.0, u1[:, j], u2[:, j], params)
                m = _stack_power(_rk4_map(l, h), substeps)
                v = (m @ v[:, :, None])[:, :, 0]
        else:
            for j in range(n):
                t0 = j * dt
                for k in range(substeps):
                    t = t0 + k * h
                    l1 = _liouvillian_batch(t, u1[:, j], u2[:, j], params)
                    l2 = _liouvillian_batch(t + 0.5 * h, u1[:, j], u2[:, j], params)
                    l4 = _liouvillian_batch(t + h, u1[:, j], u2[:, j], params)
                    k1 = (l1 @ v[:, :, None])[:, :, 0]
                    k2 = (l2 @ ((v + (0.5 * h) * k1)[:, :, None]))[:, :, 0]
                    k3 = (l2 @ ((v + (0.5 * h) * k2)[:, :, None]))[:, :, 0]
                    k4 = (l4 @ ((v + h * k3)[:, :, None]))[:, :, 0]
                    v = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        valid = _valid_states(v)
    rho = v.reshape(nb, 2, 2)
    rho = 0.5 * (rho + np.conj(np.swapaxes(rho, 1, 2)))
    return rho, valid


def _valid_states(v: np.ndarray) -> np.ndarray:
    # v has shape (B, 4); row-major vectorized 2x2 states.
    finite = np.isfinite(v).all(axis=1)
    v = np.where(finite[:, None], v, 0.0)
    trace_ok = np.abs(v[:, 0] + v[:, 3] - 1.0) <= TRACE_FAIL
    herm = np.maximum(
        np.abs(v[:, 1] - np.conj(v[:, 2])),
        np.maximum(np.abs(v[:, 0].imag), np.abs(v[:, 3].imag)),
    )
    a = v[:, 0].real
    d = v[:, 3].real
    half = np.hypot(0.5 * (a - d), np.abs(0.5 * (v[:, 1] + np.conj(v[:, 2]))))
    lo = 0.5 * (a + d) - half
    hi = 0.5 * (a + d) + half
    return (
        finite
        & trace_ok
        & (herm <= HERM_FAIL)
        & (lo >= -EIG_FAIL)
        & (hi <= 1.0 + EIG_FAIL)
    )


def _invalid_reason(rho: np.ndarray) -> str:
    if not np.isfinite(rho).all():
        return "non-finite entries in the propagated state"
    t = qops.trace_defect(rho)
    if t > TRACE_FAIL:
        return f"trace deviation {t:.3e} exceeds {TRACE_FAIL:.0e}"
    h = qops.hermiticity_defect(rho)
    if h > HERM_FAIL:
        return f"Hermiticity deviation {h:.3e} exceeds {HERM_FAIL:.0e}"
    lo, hi = qops.eigenvalues(0.5 * (rho + np.conj(rho).T))
    return f"spectrum [{lo:.3e}, {hi:.3e}] outside [0, 1] beyond {EIG_FAIL:.0e}"


def propagate(
    rho0: np.ndarray,
    pulse: PulseSequence,
    params: ModelParams,
    substeps: int = 16,
    sample_stride: int = 1,
) -> Trajectory:
    """Integrate the master equation over a pulse and record the trajectory.

    Fixed-step RK4 with `substeps` micro-steps per control interval; the
    explicit phase factors are evaluated at the RK4 stage times.  After each
    micro-step the state is re-symmetrized, rho <- (rho + rho^dag)/2, and the
    trace is checked.  Samples are taken every `sample_stride` micro-steps,
    always including t = 0 and t = T.

    Raises IntegrationError if the trace deviates beyond 1e-6 (the step size
    is too coarse) or the state stops being finite.
    """
    if substeps < 1:
        raise ValidationError(f"substeps must be >= 1, got {substeps!r}")
    if sample_stride < 1:
        raise ValidationError(f"sample_stride must be >= 1, got {sample_stride!r}")
    qops.assert_density_matrix(rho0, "rho0", tol=1e-9)
    h = pulse.dt / substeps
    static = params.delta_minus == 0.0
    v = np.asarray(rho0, dtype=complex).reshape(4).copy()

    times = [0.0]
    states = [v.reshape(2, 2).copy()]
    blochs = [qops.bloch_vector(states[0])]
    max_trace = qops.trace_defect(states[0])
    max_herm = 0.0
    min_eig = qops.min_eigenvalue(states[0])

    kg = 0
    total = pulse.n_steps * substeps
    for j in range(pulse.n_steps):
        u1j = pulse.u1[j]
        u2j = pulse.u2[j]
        if static:
            l1 = l2 = l4 = liouvillian(0.0, u1j, u2j, params)
        for k in range(substeps):
            t = kg * h
            if not static:
                l1 = liouvillian(t, u1j, u2j, params)
                l2 = liouvillian(t + 0.5 * h, u1j, u2j, params)
                l4 = liouvillian(t + h, u1j, u2j, params)
            k1 = l1 @ v
            k2 = l2 @ (v + (0.5 * h) * k1)
            k3 = l2 @ (v + (0.5 * h) * k2)
            k4 = l4 @ (v + h * k3)
            v = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            kg += 1
            if not np.isfinite(v).all():
                raise IntegrationError(
                    f"non-finite state at t = {kg * h!r}; reduce dt or increase substeps"
                )
            rho = v.reshape(2, 2)
            herm = qops.hermiticity_defect(rho)
            if herm > max_herm:
                max_herm = herm
            rho = 0.5 * (rho + np.conj(rho).T)
            v = rho.reshape(4).copy()
            tdef = qops.trace_defect(rho)
            if tdef > max_trace:
                max_trace = tdef
            if tdef > TRACE_FAIL:
                raise IntegrationError(
                    f"trace deviation {tdef:.3e} at t = {kg * h!r}; "
                    "reduce dt or increase substeps"
                )
            lo = qops.min_eigenvalue(rho)
            if lo < min_eig:
                min_eig = lo
            if kg % sample_stride == 0 or kg == total:
                times.append(kg * h)
                states.append(rho.copy())
                blochs.append(qops.bloch_vector(rho))

    return Trajectory(
        times=np.array(times),
        states=np.array(states),
        bloch=np.array(blochs),
        max_trace_defect=float(max_trace),
        max_herm_defect=float(max_herm),
        min_eigenvalue=float(min_eig),
    )


def final_state(
    rho0: np.ndarray, pulse: PulseSequence, params: ModelParams, substeps: int = 16
) -> np.ndarray:
    """Final density matrix of a single pulse, no trajectory storage."""
    states, valid = propagate_final(
        rho0, pulse.u1[None, :], pulse.u2[None, :], pulse.dt, params, substeps
    )
    if not valid[0]:
        raise IntegrationError(
            _invalid_reason(states[0]) + "; reduce dt or increase substeps"
        )
    return states[0]


def effective_final_state(
    rho0: np.ndarray,
    pulse: PulseSequence,
    params: ModelParams,
    target: np.ndarray,
    substeps: int = 16,
) -> tuple[np.ndarray, float]:
    """Propagate and score: (final state, Uhlmann fidelity against target)."""
    rho_f = final_state(rho0, pulse, params, substeps)
    return rho_f, qops.uhlmann_fidelity(target, rho_f)
