"""Gradient-ascent pulse engineering on the two control channels.

The objective is the Uhlmann fidelity of the propagated final state against
a target state.  Because the dissipation depends nonlinearly on the controls
(|alpha|^2 and Re(alpha^2) terms), gradients are taken by central finite
differences rather than the usual adjoint construction; the finite-difference
evaluations for all 2N parameters are propagated as one batch.
"""
from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass

import numpy as np

from . import qops
from .errors import IntegrationError, ValidationError
from .frqme import ModelParams, PulseSequence, Trajectory, propagate, propagate_final

# Improvement window for the f_tol stopping rule: stop once the fidelity has
# gained less than f_tol over this many accepted iterations.
STALL_WINDOW = 5

_H_MIN = 1e-14
_H_MAX = 1e6
_FID_CLAMP = 1e-10

_INIT_MODES = ("constant", "random", "file")


@dataclass(frozen=True)
class GrapeConfig:
    """Discretization, stopping rules, and line-search knobs for optimize()."""

    n_steps: int = 20
    dt: float = 0.1
    max_iterations: int = 2000
    f_tol: float = 1e-8
    g_tol: float = 1e-8
    h_fd: float = 1e-4
    h0: float = 1.0
    shrink: float = 0.5
    u_max: float = 50.0
    init: str = "constant"
    init_value: float = 0.1
    init_file: str | None = None
    seed: int = 0
    substeps: int = 16

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValidationError(f"n_steps must be >= 1, got {self.n_steps!r}")
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt!r}")
        if self.max_iterations < 0:
            raise ValidationError("max_iterations must be >= 0")
        if not self.h_fd > 0:
            raise ValidationError(f"h_fd must be positive, got {self.h_fd!r}")
        if not self.h0 > 0:
            raise ValidationError(f"h0 must be positive, got {self.h0!r}")
        if not 0.0 < self.shrink < 1.0:
            raise ValidationError(f"shrink must lie in (0, 1), got {self.shrink!r}")
        if not self.u_max > 0:
            raise ValidationError(f"u_max must be positive, got {self.u_max!r}")
        if self.substeps < 1:
            raise ValidationError(f"substeps must be >= 1, got {self.substeps!r}")
        if self.init not in _INIT_MODES:
            raise ValidationError(
                f"init must be one of {_INIT_MODES}, got {self.init!r}"
            )
        if self.init == "file" and not self.init_file:
            raise ValidationError("init='file' requires init_file")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(eq=False)
class OptimizationReport:
    """Result of one optimize() run."""

    pulse: PulseSequence
    fidelity_history: np.ndarray
    final_fidelity: float
    iterations: int
    reason: str
    trajectory: Trajectory
    wall_time: float


def _batch_fidelities(
    states: np.ndarray, valid: np.ndarray, target: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    # Closed-form Uhlmann fidelity for a batch of (already symmetrized)
    # states; members whose spectrum violates the positivity tolerance are
    # flagged invalid instead of raising.
    a = states[:, 0, 0].real
    d = states[:, 1, 1].real
    half = np.hypot(0.5 * (a - d), np.abs(states[:, 0, 1]))
    lo = 0.5 * (a + d) - half
    valid = valid & (lo >= -qops.EPS_POS)
    det_t = max((target[0, 0] * target[1, 1] - target[0, 1] * target[1, 0]).real, 0.0)
    det_s = (
        states[:, 0, 0] * states[:, 1, 1] - states[:, 0, 1] * states[:, 1, 0]
    ).real
    det_s = np.maximum(det_s, 0.0)
    f = np.einsum("ij,bji->b", target, states).real + 2.0 * np.sqrt(det_t * det_s)
    valid = valid & (f >= -_FID_CLAMP) & (f <= 1.0 + _FID_CLAMP)
    return np.clip(f, 0.0, 1.0), valid


def _evaluate(
    u1: np.ndarray,
    u2: np.ndarray,
    dt: float,
    rho0: np.ndarray,
    target: np.ndarray,
    params: ModelParams,
    substeps: int,
) -> tuple[np.ndarray, np.ndarray]:
    states, valid = propagate_final(rho0, u1, u2, dt, params, substeps)
    return _batch_fidelities(states, valid, target)


def objective(
    pulse: PulseSequence,
    rho0: np.ndarray,
    target: np.ndarray,
    params: ModelParams,
    substeps: int = 16,
) -> float:
    """Fidelity of the propagated final state against the target."""
    f, valid = _evaluate(
        pulse.u1[None, :], pulse.u2[None, :], pulse.dt, rho0, target, params, substeps
    )
    if not valid[0]:
        raise IntegrationError(
            "objective evaluation left the physical state space; "
            "reduce dt or increase substeps"
        )
    return float(f[0])


def gradient(
    pulse: PulseSequence,
    rho0: np.ndarray,
    target: np.ndarray,
    params: ModelParams,
    h_fd: float = 1e-4,
    substeps: int = 16,
) -> np.ndarray:
    """Central-difference gradient of the objective, shape (2N,).

    Entry j is dF/du1[j] for j < N and dF/du2[j-N] otherwise; each entry is
    (F(u + h e) - F(u - h e)) / (2h).  All 4N evaluations run as one batch.
    """
    n = pulse.n_steps
    base = np.concatenate([pulse.u1, pulse.u2])
    pert = np.tile(base, (4 * n, 1))
    idx = np.arange(2 * n)
    pert[idx, idx] += h_fd
    pert[idx + 2 * n, idx] -= h_fd
    f, valid = _evaluate(
        pert[:, :n], pert[:, n:], pulse.dt, rho0, target, params, substeps
    )
    if not valid.all():
        raise IntegrationError(
            "finite-difference evaluation left the physical state space; "
            "reduce dt or increase substeps"
        )
    return (f[: 2 * n] - f[2 * n :]) / (2.0 * h_fd)


def _initial_amplitudes(cfg: GrapeConfig, initial: PulseSequence | None) -> np.ndarray:
    if initial is not None:
        if initial.n_steps != cfg.n_steps:
            raise ValidationError(
                f"initial pulse has {initial.n_steps} steps, config wants {cfg.n_steps}"
            )
        return np.concatenate([initial.u1, initial.u2])
    if cfg.init == "constant":
        return np.full(2 * cfg.n_steps, cfg.init_value)
    if cfg.init == "random":
        rng = np.random.default_rng(cfg.seed)
        return rng.uniform(-cfg.init_value, cfg.init_value, size=2 * cfg.n_steps)
    pulse, _ = load_pulse(cfg.init_file)
    if pulse.n_steps != cfg.n_steps:
        raise ValidationError(
            f"pulse file has {pulse.n_steps} steps, config wants {cfg.n_steps}"
        )
    return np.concatenate([pulse.u1, pulse.u2])


def optimize(
    cfg: GrapeConfig,
    rho0: np.ndarray,
    target: np.ndarray,
    params: ModelParams,
    initial: PulseSequence | None = None,
) -> OptimizationReport:
    """Iteratively improve a piecewise-constant pulse to maximize fidelity.

    Plain gradient ascent with a backtracking line search: the step length
    starts from twice the last accepted value (at most _H_MAX, initially
    cfg.h0) and is halved until the fidelity strictly improves.  Candidate
    pulses that drive the integrator out of the physical state space are
    rejected like any non-improving step.  Amplitudes are clamped to
    [-u_max, u_max].  Stops on g_tol, on f_tol over STALL_WINDOW accepted
    iterations, on a fully stalled line search, or at max_iterations.
    """
    t_start = time.perf_counter()
    qops.assert_density_matrix(rho0, "rho0", tol=1e-9)
    qops.assert_density_matrix(target, "target", tol=1e-9)
    n = cfg.n_steps

    def split(u):
        return u[:n], u[n:]

    def try_objective(u):
        f, valid = _evaluate(
            u[None, :n], u[None, n:], cfg.dt, rho0, target, params, cfg.substeps
        )
        return float(f[0]) if valid[0] else None

    u = np.clip(_initial_amplitudes(cfg, initial), -cfg.u_max, cfg.u_max)
    f = try_objective(u)
    if f is None:
        raise IntegrationError(
            "objective is not finite at the initial guess; "
            "reduce dt, increase substeps, or change the guess"
        )
    history = [f]
    iterations = 0
    reason = "max_iter"
    h = cfg.h0

    for _ in range(cfg.max_iterations):
        pulse = PulseSequence(n, cfg.dt, *split(u))
        g = gradient(pulse, rho0, target, params, cfg.h_fd, cfg.substeps)
        if np.abs(g).max() < cfg.g_tol:
            reason = "g_tol"
            break
        h = min(h * 2.0, _H_MAX)
        accepted = False
        while h >= _H_MIN:
            u_try = np.clip(u + h * g, -cfg.u_max, cfg.u_max)
            if np.array_equal(u_try, u):
                break  # pinned at the clamp along every component
            f_try = try_objective(u_try)
            if f_try is not None and f_try > f:
                accepted = True
                break
            h *= cfg.shrink
        if not accepted:
            reason = "stall"
            break
        u, f = u_try, f_try
        iterations += 1
        history.append(f)
        if (
            len(history) > STALL_WINDOW
            and history[-1] - history[-1 - STALL_WINDOW] < cfg.f_tol
        ):
            reason = "f_tol"
            break

    pulse = PulseSequence(n, cfg.dt, *split(u))
    trajectory = propagate(rho0, pulse, params, substeps=cfg.substeps)
    return OptimizationReport(
        pulse=pulse,
        fidelity_history=np.array(history),
        final_fidelity=f,
        iterations=iterations,
        reason=reason,
        trajectory=trajectory,
        wall_time=time.perf_counter() - t_start,
    )


def warm_start(report: OptimizationReport, cfg: GrapeConfig) -> PulseSequence:
    """Initial guess taken from a previous run's optimized pulse.

    The source must match the target discretization exactly (same N, same dt).
    """
    pulse = report.pulse
    if pulse.n_steps != cfg.n_steps:
        raise ValidationError(
            f"warm start needs {cfg.n_steps} steps, source has {pulse.n_steps}"
        )
    if not np.isclose(pulse.dt, cfg.dt, rtol=1e-12, atol=0.0):
        raise ValidationError(
            f"warm start needs dt = {cfg.dt!r}, source has {pulse.dt!r}"
        )
    return pulse


def pulse_to_dict(pulse: PulseSequence, meta: dict | None = None) -> dict:
    return {
        "n_steps": pulse.n_steps,
        "dt": pulse.dt,
        "u1": pulse.u1.tolist(),
        "u2": pulse.u2.tolist(),
        "meta": dict(meta or {}),
    }


def pulse_from_dict(data: dict) -> tuple[PulseSequence, dict]:
    try:
        pulse = PulseSequence(
            int(data["n_steps"]),
            float(data["dt"]),
            np.array(data["u1"], dtype=float),
            np.array(data["u2"], dtype=float),
        )
    except KeyError as exc:
        raise ValidationError(f"pulse record is missing key {exc}") from None
    return pulse, dict(data.get("meta", {}))


def save_pulse(path, pulse: PulseSequence, meta: dict | None = None) -> None:
    """Write a pulse as JSON; floats round-trip bit-exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(pulse_to_dict(pulse, meta), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_pulse(path) -> tuple[PulseSequence, dict]:
    with open(path, encoding="utf-8") as fh:
        return pulse_from_dict(json.load(fh))
