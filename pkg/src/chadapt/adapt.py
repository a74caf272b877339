"""Time-step size control and the time-space adaptive driver.

The time controller starts each step from the previous step size, then
shrinks (factor delta1) while the time indicator exceeds its upper
tolerance and grows (factor delta2) while it is below the lower one.  A
retry cap, a step floor, and an oscillation guard (accepting the trial
on the safe side of the band when the controller starts alternating)
make the loop terminating; any band miss is flagged on the log entry.

The outer driver alternates the time controller with space adaptation:
while the space indicator exceeds its tolerance, elements are marked by
the maximum strategy, the mesh is refined, past levels are
re-interpolated from their original meshes, and the step is re-solved.
After acceptance the energy is logged and low-indicator elements are
coarsened.  The run stops when the energy decrease per step falls to the
plateau tolerance or the final time is reached.
"""

import time as _time
from dataclasses import dataclass, field

import numpy as np

from . import estimators, fem, mesh as meshmod, scheme
from .errors import AdaptationError, ConfigError, StepFailureError
from .fem import FeFunction, QUAD_BARY, QUAD_W


@dataclass
class AdaptConfig:
    tol_t: float = 50.0
    tol_t_min: float = 5.0
    tol_s: float = 10.0
    tol_i: float = 0.002
    tol_e: float = 1e-7          # energy dissipation rate at which to stop
    tol_r: float = 0.7
    tol_c: float = 0.05
    delta1: float = 0.5
    delta2: float = 2.0
    tau0: float = 1e-6
    t_final: float = 0.01
    max_refine_depth: int = 30
    retry_cap: int = 25
    tau_floor_factor: float = 1e-12
    newton_tol: float = 1e-10
    newton_max_iter: int = 30
    estimator: str = "recovery"      # recovery | residual
    indicator_mode: str = "full"     # full | dominant
    c0: float = 1.0
    c_alpha: float = 1.0
    boundary_rule: str = "linear"
    time_adapt: bool = True
    space_adapt: bool = True
    max_steps: int = 100000

    def validate(self):
        if not (0 < self.tol_t_min < self.tol_t):
            raise ConfigError("need 0 < tol_t_min < tol_t")
        if not (0.0 < self.tol_c < self.tol_r < 1.0):
            raise ConfigError("need 0 < tol_c < tol_r < 1")
        if not (0.0 < self.delta1 < 1.0 < self.delta2):
            raise ConfigError("need 0 < delta1 < 1 < delta2")
        if self.tau0 <= 0 or self.t_final <= 0:
            raise ConfigError("tau0 and t_final must be positive")
        if self.estimator not in ("recovery", "residual"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.indicator_mode not in ("full", "dominant"):
            raise ConfigError(f"unknown indicator mode {self.indicator_mode!r}")
        return self


@dataclass
class StepLog:
    step: int
    t: float
    tau: float
    n_nodes: int
    n_elements: int
    energy: float
    eta_time: float
    eta_space: float
    newton_iters: int
    retries: int
    band_miss: bool
    time_terms: dict
    space_terms: dict


@dataclass
class RunResult:
    logs: list
    snapshots: list          # (step index, state, per-element indicator)
    state: object
    stop_reason: str
    wall_time: float


def _eta_time_of(breakdown, config):
    if config.indicator_mode == "dominant":
        return breakdown.theta_u
    return breakdown.eta_time


@dataclass
class _SpaceMeasure:
    eta_space: float
    eta_k: np.ndarray
    terms: dict


def _space_measure(state, config):
    if config.estimator == "recovery":
        sb = estimators.space_indicator(state, c0=config.c0,
                                        c_alpha=config.c_alpha,
                                        boundary_rule=config.boundary_rule)
        eta = sb.E_u if config.indicator_mode == "dominant" else sb.eta_space
        return _SpaceMeasure(eta, sb.eta_k,
                             {"E_tilde": sb.E_tilde, "alpha_u": sb.alpha_u,
                              "E_u": sb.E_u})
    rb = estimators.residual_indicator(state)
    sum1 = float(np.sqrt(np.sum(rb.eta_k1 ** 2)))
    sum2 = float(np.sqrt(np.sum(rb.eta_k2 ** 2)))
    if config.indicator_mode == "dominant":
        return _SpaceMeasure(sum1, rb.eta_k1,
                             {"res_eta1": sum1, "res_eta2": sum2})
    return _SpaceMeasure(rb.eta, rb.eta_k,
                         {"res_eta1": sum1, "res_eta2": sum2})


def control_time_step(state, config):
    """Algorithm-1 time-step controller from the state's current level.

    Returns (candidate state, TimeIndicatorBreakdown, info dict).
    """
    tau = state.tau
    remaining = config.t_final - state.t
    if remaining <= 0:
        raise AdaptationError("no time left before t_final")
    tau = min(tau, remaining)
    tau_floor = config.tau_floor_factor * config.t_final

    def solve(tau):
        u, w, rep = scheme.cn_step(state, tau, newton_tol=config.newton_tol,
                                   max_iter=config.newton_max_iter)
        cand = state.advance(u.values, w.values, tau)
        tb = estimators.time_indicator(cand)
        return cand, tb, rep

    retries = 0
    last_action = None
    best_low = None   # safe-side trial (eta <= tol_t)
    shrink_trials = []  # (tau, eta, cand, tb) along a shrink sequence
    while True:
        try:
            cand, tb, rep = solve(tau)
        except StepFailureError:
            retries += 1
            if retries > config.retry_cap or tau * config.delta1 < tau_floor:
                raise AdaptationError(
                    f"Newton kept failing down to tau={tau:.3e}")
            tau *= config.delta1
            last_action = "shrink"
            continue
        eta = _eta_time_of(tb, config)
        info = {"retries": retries, "newton_iters": rep.iterations,
                "band_miss": False}
        if not config.time_adapt:
            return cand, tb, info
        in_band = config.tol_t_min <= eta <= config.tol_t
        at_cap = abs(tau - remaining) < 1e-15 * max(remaining, 1.0)
        if in_band or (eta < config.tol_t_min and at_cap):
            # growth capped by the remaining time counts as acceptance
            info["band_miss"] = not in_band
            return cand, tb, info
        if eta <= config.tol_t:
            best_low = (cand, tb, tau)
        if retries >= config.retry_cap:
            if best_low is not None:
                info["band_miss"] = True
                cand, tb, _ = best_low
                return cand, tb, info
            raise AdaptationError(
                f"time controller exhausted {config.retry_cap} retries "
                f"(eta_time={eta:.3e} vs [{config.tol_t_min}, {config.tol_t}])")
        if eta > config.tol_t:
            if last_action == "grow" and best_low is not None:
                # alternating around the band: accept the safe trial
                cand, tb, _ = best_low
                info["band_miss"] = True
                return cand, tb, info
            shrink_trials.append((tau, eta, cand, tb))
            stagnant = (len(shrink_trials) >= 2
                        and eta > 0.9 * shrink_trials[-2][1])
            if stagnant or tau * config.delta1 < tau_floor:
                # the indicator has a tau-independent floor above tol_t;
                # halving tau for under 10% of indicator is futile, so
                # accept the largest step among near-equal trials
                eta_min = min(e for _, e, _, _ in shrink_trials)
                _, _, cand, tb = max(
                    (tr for tr in shrink_trials if tr[1] <= 1.1 * eta_min),
                    key=lambda tr: tr[0])
                info["band_miss"] = True
                return cand, tb, info
            tau *= config.delta1
            last_action = "shrink"
        else:
            if last_action == "shrink":
                info["band_miss"] = True
                return cand, tb, info
            tau = min(tau * config.delta2, remaining)
            last_action = "grow"
        retries += 1


def initial_error(mesh, u0, u_h):
    """Per-element L2 errors ||u0 - u_h||_{L2(K)} by degree-4 quadrature."""
    vals = u_h.values if isinstance(u_h, FeFunction) else np.asarray(u_h)
    pts = fem.quad_points(mesh)
    areas, _ = fem.element_geometry(mesh)
    exact = u0(pts[..., 0], pts[..., 1])
    approx = vals[mesh.triangles] @ QUAD_BARY.T
    err_sq = areas * (((exact - approx) ** 2) @ QUAD_W)
    return np.sqrt(np.maximum(err_sq, 0.0))


def prepare_initial_mesh(mesh0, u0, eps, config):
    """Refine until the initial L2 projection error is below tol_i."""
    msh = mesh0
    for _ in range(config.max_refine_depth + 1):
        u_h = fem.l2_project(msh, u0).values
        contrib = initial_error(msh, u0, u_h)
        eta0 = float(np.sqrt((contrib ** 2).sum()))
        if eta0 <= config.tol_i:
            return msh, scheme.init_state(msh, u0, eps, tau0=config.tau0)
        marked, _ = estimators.mark(contrib, float(contrib.max()),
                                    config.tol_r, config.tol_c)
        if not marked:
            marked = {int(np.argmax(contrib))}
        msh, _ = meshmod.refine(msh, marked)
    raise AdaptationError(
        f"initial refinement exceeded depth {config.max_refine_depth} "
        f"(eta0={eta0:.3e} > tol_i={config.tol_i})")


def run_adaptive(problem, config, snapshot_every=0, on_step=None):
    """Algorithm-2 time-space adaptive driver.

    ``problem`` provides u0(x, y), eps and an initial mesh.  Returns a
    RunResult with one StepLog per accepted step.
    """
    config.validate()
    t0 = _time.perf_counter()
    mesh0 = problem.initial_mesh()
    msh, state = prepare_initial_mesh(mesh0, problem.u0, problem.eps, config)

    energy_prev = 0.0  # matches the algorithm's E(u^{-1}) = 0 startup
    energy_curr = scheme.energy(state.mesh, state.u, state.eps)
    logs = []
    snapshots = []
    stop_reason = "max_steps"
    n = 0
    while n < config.max_steps:
        # plateau test on the dissipation rate so that a small accepted
        # step during a transient cannot trigger a false stop
        if n > 0 and (energy_prev - energy_curr) / state.tau <= config.tol_e:
            stop_reason = "energy_plateau"
            break
        if state.t >= config.t_final - 1e-15 * config.t_final:
            stop_reason = "t_final"
            break
        n += 1

        cand, tb, info = control_time_step(state, config)
        sp = _space_measure(cand, config)
        depth = 0
        while config.space_adapt and sp.eta_space > config.tol_s:
            refine_set, _ = estimators.mark(sp.eta_k, float(sp.eta_k.max()),
                                            config.tol_r, config.tol_c)
            if not refine_set:
                break
            if depth >= config.max_refine_depth:
                raise AdaptationError(
                    f"space adaptation exceeded depth {config.max_refine_depth} "
                    f"at step {n} (eta_space={sp.eta_space:.3e})")
            new_mesh, tmap = meshmod.refine(state.mesh, refine_set)
            state = state.with_mesh(new_mesh, tmap)
            cand, tb, info2 = control_time_step(state, config)
            info["retries"] += info2["retries"]
            info["newton_iters"] = info2["newton_iters"]
            info["band_miss"] = info2["band_miss"]
            eta_before = sp.eta_space
            sp = _space_measure(cand, config)
            depth += 1
            # stagnation guard: when refinement fails to reduce the
            # indicator (estimator terms sensitive to the mesh change
            # itself can grow with it), keep the refined mesh, flag the
            # step, and accept rather than livelock toward the depth cap
            if sp.eta_space >= 0.9 * eta_before:
                info["band_miss"] = True
                break

        # both levels are evaluated on the accepted mesh so that the
        # plateau test compares like with like across mesh changes
        energy_prev = scheme.energy(cand.mesh, cand.u_prev, cand.eps)
        energy_curr = scheme.energy(cand.mesh, cand.u, cand.eps)
        entry = StepLog(
            step=n, t=cand.t, tau=cand.tau,
            n_nodes=cand.mesh.n_vertices, n_elements=cand.mesh.n_triangles,
            energy=energy_curr,
            eta_time=_eta_time_of(tb, config), eta_space=sp.eta_space,
            newton_iters=info["newton_iters"], retries=info["retries"],
            band_miss=info["band_miss"],
            time_terms=tb.as_dict(), space_terms=dict(sp.terms))
        logs.append(entry)
        if snapshot_every and n % snapshot_every == 0:
            snapshots.append((n, cand, sp.eta_k.copy()))
        if on_step is not None:
            on_step(entry, cand, sp)

        if config.space_adapt:
            _, coarsen_set = estimators.mark(sp.eta_k, float(sp.eta_k.max()),
                                             config.tol_r, config.tol_c)
            if coarsen_set:
                cmesh, ctmap = meshmod.coarsen(cand.mesh, coarsen_set)
                if cmesh is not cand.mesh:
                    cand = cand.with_mesh(cmesh, ctmap)
        state = cand

    return RunResult(logs=logs, snapshots=snapshots, state=state,
                     stop_reason=stop_reason,
                     wall_time=_time.perf_counter() - t0)
