"""Error-driven adaptive step-size controller around the implicit stepper.

A trial level is computed at the current step size, its change measure e
is evaluated (root-mean-square step change by default, optionally the
change relative to the new iterate's norm), and the step is accepted when
e < tol or the step already sits at tau_min.  Accepted steps propose

    tau_next = min( max(tau_min, tau_ada), ratio_cap * tau, tau_max ),
    tau_ada  = sqrt(tol / e) * rho * tau,

while rejected trials retry the same level at max(tau_min, tau_ada).  The
ratio cap (default 2.414) keeps every accepted mesh inside the kernel
admissibility region; the first two levels run at tau_min before the
controller engages, and the final step is shortened to land on the end
time exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import grid as g
from .grid import Field
from .model import ModelParams, observables
from .solver import (
    MarchResult,
    SolverConfig,
    SolverError,
    SolverState,
    _SnapshotQueue,
    _assemble_trace,
    step,
)
from .timekernels import dissipation_step_bound

__all__ = ["ControllerConfig", "AcceptedStep", "AdaptiveResult", "advance", "run_adaptive"]

log = logging.getLogger(__name__)


E_METRICS = ("absolute", "relative")


@dataclass(frozen=True)
class ControllerConfig:
    """Controller knobs; defaults follow the coarsening-run configuration.

    ``e_metric`` selects the per-step change measure: ``absolute`` is the
    root-mean-square step change ||u_new - u_old|| / L (the default; it
    tracks the solution's absolute motion, so the controller opens the
    step size up during slow-dissipation plateaus even when the height
    field is small), ``relative`` divides by ||u_new|| instead and falls
    back to the absolute change when that norm vanishes.
    """

    rho: float = 0.9
    tol: float = 1e-3
    tau_min: float = 1e-4
    tau_max: float = 0.1
    ratio_cap: float = 2.414
    max_retries: int = 20
    e_metric: str = "absolute"

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if self.tol <= 0.0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if not 0.0 < self.tau_min <= self.tau_max:
            raise ValueError(
                f"need 0 < tau_min <= tau_max, got {self.tau_min}, {self.tau_max}"
            )
        if not 1.0 < self.ratio_cap <= 4.864:
            raise ValueError(f"ratio_cap must lie in (1, 4.864], got {self.ratio_cap}")
        if self.max_retries < 1:
            raise ValueError("max_retries must be at least 1")
        if self.e_metric not in E_METRICS:
            raise ValueError(f"e_metric must be one of {E_METRICS}, got {self.e_metric}")

    def tau_ada(self, e: float, tau_cur: float) -> float:
        """Raw proposal sqrt(tol/e) * rho * tau_cur; infinite when e = 0
        (the caller clamps against the caps)."""
        if e < 0.0 or tau_cur <= 0.0:
            raise ValueError("need e >= 0 and tau_cur > 0")
        if e == 0.0:
            return math.inf
        return math.sqrt(self.tol / e) * self.rho * tau_cur


@dataclass(frozen=True)
class AcceptedStep:
    level: int
    t: float
    tau: float
    e: float
    rejections: int
    iterations: int
    residual: float
    residual_bound: float
    tau_next: float
    solvable_ok: bool = True


def _step_change(u_new: np.ndarray, u_old: np.ndarray, grid, metric: str) -> float:
    change = g.l2_array(u_new - u_old, grid.h)
    if metric == "absolute":
        return change / grid.L
    scale = g.l2_array(u_new, grid.h)
    # zero solution: fall back to the absolute change
    return change / scale if scale > 0.0 else change


def advance(
    state: SolverState,
    controller: ControllerConfig,
    solver_config: SolverConfig,
    params: ModelParams,
    tau_first: float,
    forcing_provider=None,
) -> tuple[Field, AcceptedStep]:
    """Accept one level, retrying at shrunken step sizes as needed.

    Does not commit; the caller pushes the returned field into ``state``.
    A trial whose nonlinear sweep diverges is treated like a rejected trial
    (retry from tau_min) rather than a fatal error, unless it was already
    at tau_min.
    """
    tau = tau_first
    rejections = 0
    while True:
        t_trial = state.t + tau
        forcing = forcing_provider(t_trial) if forcing_provider is not None else None
        try:
            u_trial, stats = step(state, solver_config, params, tau, forcing)
            e = _step_change(u_trial.values, state.u_prev, state.grid, controller.e_metric)
        except SolverError:
            if tau <= controller.tau_min:
                raise
            log.warning(
                "level %d: sweep failed at tau=%.3e, retrying from tau_min", state.n, tau
            )
            u_trial, stats, e = None, None, math.inf

        if u_trial is not None and (e < controller.tol or tau <= controller.tau_min):
            if e < controller.tol:
                tau_next = min(
                    max(controller.tau_min, controller.tau_ada(e, tau)),
                    controller.ratio_cap * tau,
                    controller.tau_max,
                )
            else:
                tau_next = controller.tau_min
            return u_trial, AcceptedStep(
                level=state.n,
                t=t_trial,
                tau=tau,
                e=e,
                rejections=rejections,
                iterations=stats.iterations,
                residual=stats.residual,
                residual_bound=stats.residual_bound,
                tau_next=tau_next,
                solvable_ok=stats.solvable_ok,
            )

        rejections += 1
        if rejections > controller.max_retries:
            raise SolverError(
                f"level {state.n}: {controller.max_retries} retries exhausted "
                f"(last e={e:.3e} at tau={tau:.3e})",
                level=state.n,
            )
        tau = max(controller.tau_min, controller.tau_ada(e, tau))


@dataclass
class AdaptiveResult(MarchResult):
    """March diagnostics plus the controller's per-level bookkeeping."""

    e_values: np.ndarray = None
    rejections: np.ndarray = None
    total_rejections: int = 0

    @property
    def accepted_steps(self) -> int:
        return self.mesh.N

    @property
    def tau_min_realized(self) -> float:
        return float(self.mesh.taus.min())

    @property
    def tau_max_realized(self) -> float:
        return float(self.mesh.taus.max())


def run_adaptive(
    u0: Field,
    T_final: float,
    controller: ControllerConfig,
    solver_config: SolverConfig,
    params: ModelParams,
    forcing_provider=None,
    snapshot_times=(),
) -> AdaptiveResult:
    """Integrate to T_final under the adaptive controller.

    The first two levels run at tau_min (the two-step formula needs one
    starting level before ratio feedback is meaningful); afterwards each
    accepted level's e proposes the next step.  The last step is truncated
    to land exactly on T_final, exempt from the ratio cap downward only.
    """
    if T_final <= 0.0:
        raise ValueError(f"T_final must be positive, got {T_final}")
    if u0.grid != params.grid:
        raise ValueError("initial data and model parameters use different grids")
    grid = u0.grid
    state = SolverState(u0)
    snaps = _SnapshotQueue(snapshot_times, grid)
    snaps.offer(0.0, u0.values)

    obs0 = observables(u0.values, grid, params.delta)
    energies = [obs0.energy]
    rough = [obs0.roughness]
    dnorms = [0.0]
    iters = [0]
    residuals = [0.0]
    bounds = [0.0]
    e_vals = [0.0]
    rejs = [0]
    max_grad, max_grad4, max_lap = obs0.grad_l2, obs0.grad_l4, obs0.lap_l2
    solv_viol = 0
    total_rej = 0
    tau_next = controller.tau_min
    eps_T = 1e-12 * max(1.0, T_final)

    while state.t < T_final - eps_T:
        proposal = controller.tau_min if state.n <= 2 else tau_next
        tau_try = min(proposal, T_final - state.t)
        u, rec = advance(state, controller, solver_config, params, tau_try, forcing_provider)
        dnorms.append(g.l2_array(u.values - state.u_prev, grid.h))
        state.commit(u, rec.tau)
        obs = observables(u.values, grid, params.delta)
        energies.append(obs.energy)
        rough.append(obs.roughness)
        iters.append(rec.iterations)
        residuals.append(rec.residual)
        bounds.append(rec.residual_bound)
        e_vals.append(rec.e)
        rejs.append(rec.rejections)
        total_rej += rec.rejections
        if not rec.solvable_ok:
            solv_viol += 1
        max_grad = max(max_grad, obs.grad_l2)
        max_grad4 = max(max_grad4, obs.grad_l4)
        max_lap = max(max_lap, obs.lap_l2)
        tau_next = rec.tau_next
        snaps.offer(state.t, u.values)

    mesh = state.mesh
    diss_viol = sum(
        1
        for n in range(1, mesh.N + 1)
        if mesh.tau(n) >= dissipation_step_bound(mesh, n, params.delta)
    )
    trace = _assemble_trace(
        mesh, np.array(energies), np.array(rough), np.array(dnorms), np.array(iters)
    )
    return AdaptiveResult(
        final=Field(grid, state.u_prev.copy()),
        trace=trace,
        mesh=mesh,
        snapshots=snaps.taken,
        iterations=np.array(iters, dtype=int),
        residuals=np.array(residuals),
        residual_bounds=np.array(bounds),
        solvability_violations=solv_viol,
        dissipation_violations=diss_viol,
        max_grad_l2=max_grad,
        max_grad_l4=max_grad4,
        max_lap_l2=max_lap,
        E0=float(energies[0]),
        e_values=np.array(e_vals),
        rejections=np.array(rejs, dtype=int),
        total_rejections=total_rej,
    )
