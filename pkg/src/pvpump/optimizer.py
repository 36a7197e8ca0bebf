"""Box-constrained smooth minimization with analytic gradients.

A limited-memory quasi-Newton method with gradient projection: search
directions come from the standard two-loop L-BFGS recursion, every trial
point is projected onto the box, and steps are accepted under an Armijo
sufficient-decrease test on the projected path.  The solver never raises on
numerical trouble; the outcome is encoded in ``SolveReport.status``.

Callers supply the objective as a single callback returning ``(value,
gradient)`` so value/gradient work can be fused.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = ["NlpProblem", "SolveReport", "minimize", "check_gradient"]

#: Armijo sufficient-decrease parameter.
ARMIJO_C1 = 1e-4
#: Backtracking contraction factor.
BACKTRACK = 0.5
#: Smallest step length tried before a line search is declared failed.
MIN_STEP = 1e-14
#: Curvature threshold below which an (s, y) pair is not stored.
CURVATURE_EPS = 1e-10


@dataclass
class NlpProblem:
    """Smooth objective on a box.

    Parameters
    ----------
    dim : int
        Number of decision variables.
    lower, upper : ndarray
        Elementwise bounds, ``lower <= upper``, both finite.
    objective : callable
        ``objective(x) -> (f, grad)`` with ``grad`` of shape ``(dim,)``.
    x0 : ndarray
        Initial point; projected onto the box before the first iteration.
    """

    dim: int
    lower: np.ndarray
    upper: np.ndarray
    objective: Callable[[np.ndarray], tuple[float, np.ndarray]]
    x0: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.lower.shape != (self.dim,) or self.upper.shape != (self.dim,):
            raise ValueError("bounds must have shape (dim,)")
        if self.x0.shape != (self.dim,):
            raise ValueError("x0 must have shape (dim,)")
        if not (np.isfinite(self.lower).all() and np.isfinite(self.upper).all()):
            raise ValueError("bounds must be finite")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)


@dataclass
class SolveReport:
    """Solver outcome.

    ``status`` is one of ``"converged"`` (projected-gradient norm below
    tolerance), ``"max_iter"`` or ``"line_search_failure"``.  ``x`` is always
    feasible and ``f`` is the best objective value seen.
    """

    x: np.ndarray
    f: float
    iterations: int
    grad_proj_norm: float
    status: str
    history: list = field(default_factory=list, repr=False)


def _projected_gradient_norm(problem: NlpProblem, x: np.ndarray,
                             g: np.ndarray) -> float:
    return float(np.max(np.abs(x - problem.project(x - g)))) if x.size else 0.0


def _lbfgs_direction(g: np.ndarray, s_list: list, y_list: list) -> np.ndarray:
    """Two-loop recursion for -H*g with the stored curvature pairs."""
    q = g.copy()
    k = len(s_list)
    rhos = [1.0 / float(np.dot(y, s)) for s, y in zip(s_list, y_list)]
    alphas = [0.0] * k
    for i in range(k - 1, -1, -1):
        alphas[i] = rhos[i] * float(np.dot(s_list[i], q))
        q -= alphas[i] * y_list[i]
    if k:
        s, y = s_list[-1], y_list[-1]
        q *= float(np.dot(s, y)) / float(np.dot(y, y))
    for i in range(k):
        beta = rhos[i] * float(np.dot(y_list[i], q))
        q += (alphas[i] - beta) * s_list[i]
    return -q


def minimize(problem: NlpProblem, tol: float = 1e-8, max_iter: int = 500,
             memory: int = 10, trace_path: Optional[str] = None) -> SolveReport:
    """Minimize ``problem`` and report the outcome; never raises numerically.

    Parameters
    ----------
    problem : NlpProblem
    tol : float
        Stationarity tolerance on the projected-gradient infinity norm
        ``||x - P(x - grad)||_inf``.
    max_iter : int
        Iteration cap.
    memory : int
        Number of curvature pairs kept for the two-loop recursion.
    trace_path : str, optional
        When given, an iteration trace CSV with columns
        ``iter,f,gnorm,step`` is written there.

    Notes
    -----
    The accepted-objective sequence is nonincreasing (Armijo test with
    c1 = 1e-4 on the projected path) and every iterate is feasible.  The
    method is deterministic: identical problems produce identical reports.
    """
    x = problem.project(problem.x0)
    f, g = problem.objective(x)
    f = float(f)
    g = np.asarray(g, dtype=float)

    s_list: list[np.ndarray] = []
    y_list: list[np.ndarray] = []
    trace_rows = [(0, f, _projected_gradient_norm(problem, x, g), 0.0)]
    history = [f]
    status = "max_iter"
    pgn = _projected_gradient_norm(problem, x, g)
    it = 0

    while it < max_iter:
        pgn = _projected_gradient_norm(problem, x, g)
        if not np.isfinite(f):
            status = "line_search_failure"
            break
        if pgn <= tol:
            status = "converged"
            break
        it += 1

        accepted = False
        step_used = 0.0
        for direction in (_lbfgs_direction(g, s_list, y_list), -g):
            alpha = 1.0
            while alpha > MIN_STEP:
                x_new = problem.project(x + alpha * direction)
                dx = x_new - x
                slope = float(np.dot(g, dx))
                if slope >= 0.0 or not np.any(dx):
                    # Projection turned the step into a non-descent move;
                    # shrinking can re-open descent near active bounds.
                    alpha *= BACKTRACK
                    continue
                f_new, g_new = problem.objective(x_new)
                f_new = float(f_new)
                if np.isfinite(f_new) and f_new <= f + ARMIJO_C1 * slope:
                    s = dx
                    y = np.asarray(g_new, dtype=float) - g
                    sy = float(np.dot(s, y))
                    if sy > CURVATURE_EPS * np.linalg.norm(s) * np.linalg.norm(y):
                        s_list.append(s)
                        y_list.append(y)
                        if len(s_list) > memory:
                            s_list.pop(0)
                            y_list.pop(0)
                    x, f, g = x_new, f_new, np.asarray(g_new, dtype=float)
                    accepted = True
                    step_used = alpha
                    break
                alpha *= BACKTRACK
            if accepted:
                break
            # L-BFGS direction failed entirely; retry with steepest descent
            # and a cleared memory before giving up.
            s_list.clear()
            y_list.clear()
        if not accepted:
            status = "line_search_failure"
            pgn = _projected_gradient_norm(problem, x, g)
            trace_rows.append((it, f, pgn, 0.0))
            break

        history.append(f)
        pgn = _projected_gradient_norm(problem, x, g)
        trace_rows.append((it, f, pgn, step_used))
    else:
        status = "max_iter"
    if status == "max_iter" and pgn <= tol:
        status = "converged"

    if trace_path is not None:
        with open(trace_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "f", "gnorm", "step"])
            writer.writerows(trace_rows)

    return SolveReport(x=x, f=f, iterations=it, grad_proj_norm=pgn,
                       status=status, history=history)


def check_gradient(problem: NlpProblem, point: np.ndarray,
                   step: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``point`` should lie in the interior of the box with margin ``step``;
    each coordinate is perturbed by ``+-step``.  The relative error for
    coordinate ``i`` is ``|g_i - fd_i| / max(1, |fd_i|)``.

    Raises
    ------
    ValueError
        If ``step`` is not strictly positive.
    """
    if step <= 0.0:
        raise ValueError("step must be > 0")
    point = np.asarray(point, dtype=float)
    _, g = problem.objective(point)
    g = np.asarray(g, dtype=float)
    worst = 0.0
    for i in range(problem.dim):
        e = np.zeros(problem.dim)
        e[i] = step
        f_plus, _ = problem.objective(point + e)
        f_minus, _ = problem.objective(point - e)
        fd = (float(f_plus) - float(f_minus)) / (2.0 * step)
        worst = max(worst, abs(g[i] - fd) / max(1.0, abs(fd)))
    return worst
