"""Conjugate gradient minimisation of the Tikhonov functional on a fixed mesh."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .discretization import PermittivityField, eps_values, lumped_mass
from .errors import ConfigurationError, DivergenceError
from .mesh import TetMesh
from .objective import Evaluation, GradientField, TikhonovParams, evaluate, project_admissible
from .wavefield import BoundaryObservation, SourceSpec, TimeGrid

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("iter", "F", "grad_norm", "gamma", "beta", "halvings", "eps_norm", "wall_time")


@dataclass
class CgSettings:
    theta: float = 1e-8
    max_iter: int = 10
    stagnation_window: int = 3
    stagnation_rtol: float = 1e-4
    safeguard: int = 20

    def __post_init__(self):
        if self.theta < 0 or self.max_iter < 1:
            raise ConfigurationError("need theta >= 0 and max_iter >= 1")


@dataclass
class CgCoefficients:
    beta: float
    direction: np.ndarray
    gamma: float
    restarted: bool = False
    converged: bool = False


@dataclass
class CgState:
    eps: PermittivityField
    grad: GradientField
    dir: np.ndarray | None
    iter: int
    history: list[dict] = field(default_factory=list)
    stop_reason: str = ""
    evaluation: Evaluation | None = None
    min_grad_norm: float = math.inf


def _inner(a, b, weights):
    return float(np.sum(a * b)) if weights is None else float(np.sum(weights * a * b))


def cg_coefficients(grad_now, grad_prev, dir_prev, alpha: float, weights=None) -> CgCoefficients:
    """Fletcher-Reeves ``beta``, new direction and the closed-form step.

    ``beta = |R^n|^2 / |R^{n-1}|^2``, ``d^n = -R^n + beta d^{n-1}`` and
    ``gamma = -<R^n, d^n> / (alpha |d^n|^2)``. Pass ``grad_prev=None`` on the
    first iteration. ``weights`` are the L2 quadrature weights (Euclidean if
    None). The direction restarts from ``-R`` when the previous gradient
    vanished or the conjugate direction is not a descent direction.
    """
    if alpha <= 0:
        raise ConfigurationError("alpha must be positive")
    R = np.asarray(grad_now, dtype=float)
    beta = 0.0
    restarted = False
    if grad_prev is None or dir_prev is None:
        d = -R
    else:
        prev = _inner(grad_prev, grad_prev, weights)
        if prev == 0.0:
            restarted = True
            d = -R
        else:
            beta = _inner(R, R, weights) / prev
            d = -R + beta * np.asarray(dir_prev, dtype=float)
            if _inner(R, d, weights) >= 0 and _inner(R, R, weights) > 0:
                beta, d, restarted = 0.0, -R, True
    dd = _inner(d, d, weights)
    if dd == 0.0:
        return CgCoefficients(beta, d, 0.0, restarted, converged=True)
    gamma = -_inner(R, d, weights) / (alpha * dd)
    return CgCoefficients(beta, d, gamma, restarted)


def _safeguarded_step(state, coef, mesh, params, settings, ev):
    """Try ``gamma``, halving it until the objective decreases."""
    gamma = coef.gamma
    halvings = 0
    for halvings in range(settings.safeguard + 1):
        trial_eps = project_admissible(state.eps.values + gamma * coef.direction, mesh, params.eps_max).values
        if np.array_equal(trial_eps, state.eps.values):
            break
        trial = ev(trial_eps, state.iter + 1, with_gradient=False)
        if trial.value < state.evaluation.value:
            return (trial_eps, ev(trial_eps, state.iter + 1)), gamma, halvings
        gamma *= 0.5
    return None, gamma, halvings


def run_cg(
    mesh: TetMesh,
    eps_init,
    data: Sequence[BoundaryObservation],
    sources: Sequence[SourceSpec],
    params: TikhonovParams,
    grid: TimeGrid,
    settings: CgSettings | None = None,
) -> CgState:
    """Projected CG with step-halving safeguard.

    Each accepted step strictly lowers the objective. Stops on a small
    gradient (``grad_tol``), a stabilised ``|eps|`` (``stagnation``), an
    exhausted safeguard (``no_descent``) or ``max_iter``.
    """
    settings = settings or CgSettings()
    if not data:
        raise ConfigurationError("run_cg needs at least one data record")
    weights = lumped_mass(mesh)
    eps = project_admissible(eps_values(eps_init, mesh), mesh, params.eps_max).values
    t0 = time.perf_counter()

    def ev(e, it, with_gradient=True):
        try:
            return evaluate(mesh, e, data, sources, params, grid, with_gradient=with_gradient)
        except DivergenceError as exc:
            exc.iteration = it
            raise

    cur = ev(eps, 0)
    gnorm = cur.gradient.norm()
    state = CgState(PermittivityField(eps, mesh), cur.gradient, None, 0, evaluation=cur, min_grad_norm=gnorm)

    def record(gamma, beta, halvings):
        state.history.append(
            {
                "iter": state.iter,
                "F": state.evaluation.value,
                "grad_norm": state.grad.norm(),
                "gamma": gamma,
                "beta": beta,
                "halvings": halvings,
                "eps_norm": math.sqrt(_inner(state.eps.values, state.eps.values, weights)),
                "wall_time": time.perf_counter() - t0,
            }
        )

    record(0.0, 0.0, 0)
    prev_grad = None
    prev_dir = None
    while True:
        if state.grad.norm() <= settings.theta:
            state.stop_reason = "grad_tol"
            break
        if state.iter >= settings.max_iter:
            state.stop_reason = "max_iter"
            break
        coef = cg_coefficients(state.grad.values, prev_grad, prev_dir, params.alpha, weights)
        if coef.converged:
            state.stop_reason = "grad_tol"
            break
        accepted, gamma, halvings = _safeguarded_step(state, coef, mesh, params, settings, ev)
        if accepted is None and not (coef.restarted or prev_dir is None):
            # the conjugate direction failed under projection: retry steepest descent
            coef = cg_coefficients(state.grad.values, None, None, params.alpha, weights)
            coef.restarted = True
            accepted, gamma, halvings = _safeguarded_step(state, coef, mesh, params, settings, ev)
        if accepted is None:
            state.stop_reason = "no_descent"
            log.info("no decrease after %d halvings at iteration %d", halvings, state.iter)
            break
        prev_grad, prev_dir = state.grad.values, coef.direction
        state.eps = PermittivityField(accepted[0], mesh)
        state.evaluation = accepted[1]
        state.grad = accepted[1].gradient
        state.dir = coef.direction
        state.iter += 1
        state.min_grad_norm = min(state.min_grad_norm, state.grad.norm())
        record(gamma, coef.beta, halvings)
        norms = [h["eps_norm"] for h in state.history]
        w = settings.stagnation_window
        if len(norms) > w:
            recent = np.asarray(norms[-(w + 1):])
            change = np.abs(np.diff(recent)) / np.maximum(np.abs(recent[1:]), 1e-300)
            if np.all(change < settings.stagnation_rtol):
                state.stop_reason = "stagnation"
                break
    return state
