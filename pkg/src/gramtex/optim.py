"""Limited-memory BFGS over flat vectors, driven by a loss-and-gradient callback.

Search directions come from the standard two-loop recursion over the last m
curvature pairs; step lengths satisfy the strong Wolfe conditions via a
bracket-and-zoom line search with quadratic interpolation and a bisection
safeguard.  Everything is deterministic: same callback, start point and
options give the same iterate sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ValidationError

# Curvature pairs with s.y below this relative threshold are discarded.
CURVATURE_SKIP = 1e-10


@dataclass(frozen=True)
class LbfgsOptions:
    memory: int = 20
    max_iters: int = 1000
    grad_tol: float = 1e-7
    rel_loss_tol: float = 1e-9
    c1: float = 1e-4
    c2: float = 0.9
    ls_max_evals: int = 40

    def __post_init__(self):
        if self.memory < 1:
            raise ValidationError("memory must be >= 1")
        if self.grad_tol <= 0 or self.rel_loss_tol <= 0:
            raise ValidationError("tolerances must be > 0")
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValidationError("need 0 < c1 < c2 < 1")
        if self.max_iters < 0 or self.ls_max_evals < 1:
            raise ValidationError("iteration budgets must be positive")


@dataclass
class OptimResult:
    x: np.ndarray
    loss: float
    iterations: int
    termination: str  # grad_tol | rel_loss_tol | max_iters | line_search_failure
    trace: list[tuple[float, float]] = field(default_factory=list)


class OptimizerAbort(NumericError):
    """The callback produced a non-finite loss or gradient."""

    def __init__(self, message: str, iteration: int, trace: list[tuple[float, float]]):
        super().__init__(message)
        self.iteration = iteration
        self.trace = trace


class _Evaluator:
    """Wraps the callback: validates outputs, tracks the best point seen."""

    def __init__(self, f, dim: int, trace):
        self.f = f
        self.dim = dim
        self.trace = trace
        self.iteration = 0
        self.best_x = None
        self.best_loss = np.inf

    def __call__(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        loss, grad = self.f(x)
        loss = float(loss)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != (self.dim,):
            raise ValidationError(
                f"callback returned gradient of shape {grad.shape}, expected ({self.dim},)"
            )
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise OptimizerAbort(
                f"callback returned non-finite loss/gradient at iteration {self.iteration}",
                self.iteration,
                list(self.trace),
            )
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_x = x.copy()
        return loss, grad


def _two_loop(grad: np.ndarray, history: list[tuple[np.ndarray, np.ndarray, float]]):
    """H·grad via the two-loop recursion; H0 = gamma·I with gamma = s.y / y.y."""
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * s.dot(q)
        alphas.append(a)
        q -= a * y
    if history:
        s, y, _ = history[-1]
        q *= s.dot(y) / y.dot(y)
    for (s, y, rho), a in zip(history, reversed(alphas)):
        b = rho * y.dot(q)
        q += (a - b) * s
    return q


def _interpolate(a_lo, f_lo, d_lo, a_hi, f_hi):
    """Minimizer of the quadratic through (a_lo, f_lo, d_lo) and (a_hi, f_hi),
    safeguarded to the interior of the bracket."""
    denom = f_hi - f_lo - d_lo * (a_hi - a_lo)
    if denom <= 0 or not np.isfinite(denom):
        return 0.5 * (a_lo + a_hi)
    cand = a_lo - 0.5 * d_lo * (a_hi - a_lo) ** 2 / denom
    lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
    margin = 0.1 * (hi - lo)
    if not np.isfinite(cand) or cand < lo + margin or cand > hi - margin:
        return 0.5 * (a_lo + a_hi)
    return cand


def _wolfe_search(evaluate, x, d, f0, g0, opts: LbfgsOptions):
    """Strong Wolfe line search along d from x.

    Returns (alpha, f_new, g_new) or None on failure.  The accepted point is
    always the last one evaluated, so callers may reuse cached per-evaluation
    state for the accepted iterate.
    """
    d0 = g0.dot(d)
    if d0 >= 0:
        return None

    def phi(alpha):
        f_a, g_a = evaluate(x + alpha * d)
        return f_a, g_a, g_a.dot(d)

    def zoom(a_lo, f_lo, d_lo, a_hi, f_hi, evals_left):
        for _ in range(evals_left):
            a = _interpolate(a_lo, f_lo, d_lo, a_hi, f_hi)
            f_a, g_a, d_a = phi(a)
            if f_a > f0 + opts.c1 * a * d0 or f_a >= f_lo:
                a_hi, f_hi = a, f_a
            else:
                if abs(d_a) <= -opts.c2 * d0:
                    return a, f_a, g_a
                if d_a * (a_hi - a_lo) >= 0:
                    a_hi, f_hi = a_lo, f_lo
                a_lo, f_lo, d_lo = a, f_a, d_a
            if abs(a_hi - a_lo) < 1e-16 * max(1.0, abs(a_lo)):
                return None
        return None

    a_prev, f_prev, d_prev = 0.0, f0, d0
    a = 1.0
    for i in range(opts.ls_max_evals):
        f_a, g_a, d_a = phi(a)
        if f_a > f0 + opts.c1 * a * d0 or (i > 0 and f_a >= f_prev):
            return zoom(a_prev, f_prev, d_prev, a, f_a, opts.ls_max_evals - i - 1)
        if abs(d_a) <= -opts.c2 * d0:
            return a, f_a, g_a
        if d_a >= 0:
            return zoom(a, f_a, d_a, a_prev, f_prev, opts.ls_max_evals - i - 1)
        a_prev, f_prev, d_prev = a, f_a, d_a
        a *= 2.0
    return None


def lbfgs_minimize(
    f,
    x0: np.ndarray,
    opts: LbfgsOptions = LbfgsOptions(),
    observer=None,
) -> OptimResult:
    """Minimize f(x) -> (loss, gradient) from x0.

    observer, if given, is called as observer(iteration, x, loss, grad) for
    the start point and every accepted iterate.  Raises OptimizerAbort (with
    the partial trace attached) if the callback ever returns non-finite
    values; a failed line search instead returns the best point seen with
    termination "line_search_failure".
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    if x.ndim != 1:
        raise ValidationError(f"x0 must be a flat vector, got shape {x.shape}")
    trace: list[tuple[float, float]] = []
    evaluate = _Evaluator(f, x.size, trace)
    loss, grad = evaluate(x)
    trace.append((loss, float(np.max(np.abs(grad))) if x.size else 0.0))
    if observer is not None:
        observer(0, x, loss, grad)
    if np.max(np.abs(grad), initial=0.0) <= opts.grad_tol:
        return OptimResult(x, loss, 0, "grad_tol", trace)

    history: list[tuple[np.ndarray, np.ndarray, float]] = []
    for k in range(1, opts.max_iters + 1):
        evaluate.iteration = k
        d = -_two_loop(grad, history)
        if grad.dot(d) >= 0:
            # H approximation lost descent; restart from steepest descent.
            history.clear()
            d = -grad
        accepted = _wolfe_search(evaluate, x, d, loss, grad, opts)
        if accepted is None:
            best_x = evaluate.best_x if evaluate.best_x is not None else x
            best_loss = min(evaluate.best_loss, loss)
            return OptimResult(best_x, best_loss, k - 1, "line_search_failure", trace)
        alpha, new_loss, new_grad = accepted
        s = alpha * d
        y = new_grad - grad
        sy = s.dot(y)
        if sy > CURVATURE_SKIP * np.linalg.norm(s) * np.linalg.norm(y):
            history.append((s, y, 1.0 / sy))
            if len(history) > opts.memory:
                history.pop(0)
        x = x + s
        prev_loss, loss, grad = loss, new_loss, new_grad
        trace.append((loss, float(np.max(np.abs(grad)))))
        if observer is not None:
            observer(k, x, loss, grad)
        if np.max(np.abs(grad)) <= opts.grad_tol:
            return OptimResult(x, loss, k, "grad_tol", trace)
        if abs(prev_loss - loss) <= opts.rel_loss_tol * max(abs(prev_loss), abs(loss), 1.0):
            return OptimResult(x, loss, k, "rel_loss_tol", trace)
    return OptimResult(x, loss, opts.max_iters, "max_iters", trace)
