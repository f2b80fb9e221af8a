"""Adaptive third-order exponential Rosenbrock integrator (exprb32).

The linear operator ``J`` only has to be available as an action ``v -> J v``;
it may be real-linear (J v = A v + B conj(v)), which is what the exact
Jacobian of a non-holomorphic complex right-hand side looks like.

phi-function combinations are evaluated with the augmented-operator identity

    exp(X_aug) [b_0; e_p] = sum_k phi_k(X) b_k        (top block)

and a Taylor series for the exponential, sub-stepped when the operator is large.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import SeriesConvergenceError, StepSizeError

LinearAction = Callable[[np.ndarray], np.ndarray]


def _norm(x) -> float:
    """Frobenius norm without temporaries (BLAS dot product)."""
    if not np.size(x):
        return 0.0
    flat = np.ravel(x)
    return math.sqrt(abs(np.vdot(flat, flat)))


def _as_action(op) -> LinearAction:
    if callable(op):
        return op
    mat = np.atleast_2d(np.asarray(op))
    return lambda v: (mat @ v) if v.ndim == 1 else (mat @ v.reshape(mat.shape[1], -1)).reshape(v.shape)


def phi_combination(op, vectors: Sequence[Optional[np.ndarray]], scale: float = 1.0, *,
                    tol: float | None = None, max_terms: int = 80, norm_ratio: float = 2.0,
                    norm_estimate: float | None = None, stats: dict | None = None) -> np.ndarray:
    """Return ``sum_k phi_k(scale * J) vectors[k]`` for k = 0..p.

    ``vectors[k]`` may be ``None`` (treated as zero); at least one must be an array.
    ``op`` acts on arrays shaped like the vectors.  Without ``norm_estimate`` the
    size of ``scale * J`` is probed with one application, which sets the number
    of sub-steps; the Taylor series in each sub-step runs until the next term is
    below ``tol`` relative to the partial sum.
    """
    act = _as_action(op)
    ref = next(v for v in vectors if v is not None)
    dtype = np.asarray(ref).dtype
    if np.iscomplexobj(ref):
        dtype = np.result_type(dtype, np.complex64)
    # None entries stay None: zero vectors are skipped rather than multiplied through
    vecs = [None if v is None else np.asarray(v).astype(dtype, copy=False) for v in vectors]
    p = len(vecs) - 1
    if tol is None:
        tol = float(np.finfo(np.dtype(dtype).type(0).real.dtype).eps)

    top = np.zeros_like(ref, dtype=dtype) if vecs[0] is None else vecs[0].copy()
    tail = np.zeros(p, dtype=float)
    if p:
        tail[-1] = 1.0
    if scale == 0.0:
        return top + sum(v / math.factorial(k) for k, v in enumerate(vecs) if k and v is not None)

    norms = [0.0 if v is None else _norm(v) for v in vecs]
    if norm_estimate is None:
        k_big = int(np.argmax(norms))
        if norms[k_big] == 0.0:
            return top
        rho = _norm(act(vecs[k_big])) / norms[k_big] * abs(scale)
    else:
        rho = norm_estimate * abs(scale)
    w_norm = max(norms[1:], default=0.0)
    eps = float(np.finfo(np.dtype(dtype).type(0).real.dtype).eps)
    flush = eps * eps * max(norms)
    substeps = max(1, math.ceil(max(rho, 1.0 if w_norm else 0.0) / norm_ratio))
    ds = scale / substeps
    inv = 1.0 / substeps
    applications = 0
    top_norm = norms[0]

    for _ in range(substeps):
        term_top, term_tail = top, tail
        sum_top, sum_tail = top.copy(), tail.copy()
        term_zero = top_norm == 0.0
        # triangle-inequality bound on |sum_top|; the exact norm is only taken when
        # the bound says the series might have converged
        bound = top_norm
        for j in range(1, max_terms + 1):
            if term_zero:
                new_top = np.zeros_like(top)
            else:
                new_top = act(term_top)
                applications += 1
                new_top *= ds / j
                flush_small(new_top, flush)
            for i in range(p):
                if term_tail[i] != 0.0 and vecs[p - i] is not None:
                    new_top += (inv * term_tail[i] / j) * vecs[p - i]
            new_tail = np.zeros_like(term_tail)
            if p > 1:
                new_tail[:-1] = (inv / j) * term_tail[1:]
            sum_top += new_top
            sum_tail += new_tail
            term_top, term_tail = new_top, new_tail
            top_size = _norm(new_top)
            term_zero = top_size == 0.0
            size = top_size + float(np.sum(np.abs(new_tail)))
            if not np.isfinite(size):
                raise SeriesConvergenceError("phi series produced non-finite terms")
            bound += top_size
            tail_sum = float(np.sum(np.abs(sum_tail)))
            if size == 0.0 or (size <= tol * (bound + tail_sum)
                               and size <= tol * (_norm(sum_top) + tail_sum)):
                break
        else:
            raise SeriesConvergenceError(
                f"phi series did not converge in {max_terms} terms (norm estimate {rho:.3g})"
            )
        top, tail = sum_top, sum_tail
        top_norm = _norm(top)
    if stats is not None:
        stats["applications"] = stats.get("applications", 0) + applications
        stats["substeps"] = substeps
    return top


def flush_small(x: np.ndarray, threshold: float) -> None:
    """Zero entries below ``threshold`` in place.

    Series terms decay geometrically; without this their tails end up as
    subnormal floats, which are an order of magnitude slower to operate on.
    """
    if x.flags.c_contiguous:
        parts = (x.view(x.real.dtype),) if np.iscomplexobj(x) else (x,)
    else:
        parts = (x.real, x.imag) if np.iscomplexobj(x) else (x,)
    for part in parts:
        # multiplying by the mask is several times faster than masked assignment and keeps nan/inf
        part *= np.abs(part) >= threshold


def phi_action(k: int, op, v: np.ndarray, h: float = 1.0, **kw) -> np.ndarray:
    """phi_k(h J) v with phi_k(z) = sum_j z^j / (j + k)!."""
    if k < 0:
        raise ValueError("k must be >= 0")
    vecs = [None] * (k + 1)
    vecs[k] = np.asarray(v)
    return phi_combination(op, vecs, h, **kw)


class Problem:
    """Right-hand side y' = F(t, y) with the pieces exprb32 needs.

    ``jac(t, y)`` returns either a matrix or a linear action; ``dfdt(t, y)`` returns
    the explicit time derivative of F (or None for autonomous problems).
    """

    def __init__(self, rhs, jac=None, dfdt=None):
        self._rhs = rhs
        self._jac = jac
        self._dfdt = dfdt

    def rhs(self, t, y):
        return self._rhs(t, y)

    def linearize(self, t, y) -> LinearAction:
        if self._jac is None:
            return lambda v: np.zeros_like(v)
        return _as_action(self._jac(t, y))

    def dfdt(self, t, y):
        return None if self._dfdt is None else self._dfdt(t, y)


def exprb32_step(problem, t: float, y: np.ndarray, h: float, *, f0=None, linear=None,
                 phi_options: dict | None = None) -> tuple[np.ndarray, np.ndarray]:
    """One exprb32 step; returns (y_next, local_error_vector).

    The error vector is the difference to the embedded second-order exponential
    Rosenbrock-Euler stage.
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    opts = phi_options or {}
    f0 = problem.rhs(t, y) if f0 is None else f0
    J = problem.linearize(t, y) if linear is None else linear
    v = problem.dfdt(t, y)
    first = [None, h * f0] if v is None else [None, h * f0, (h * h) * v]
    u2 = y + phi_combination(J, first, h, **opts)
    defect = problem.rhs(t + h, u2) - f0 - J(u2 - y)
    if v is not None:
        defect = defect - h * v
    corr = phi_combination(J, [None, None, None, (2.0 * h) * defect], h, **opts)
    y_next = u2 + corr
    return y_next, corr


def weighted_rms(err: np.ndarray, y_old: np.ndarray, y_new: np.ndarray, rtol: float, atol: float,
                 batch_axis: int = 0) -> np.ndarray:
    """Per-trajectory norm sqrt(mean((e_i / (atol + rtol |y_i|))^2)).

    The mean runs over every axis except ``batch_axis``; 1-D inputs are one trajectory.
    """
    scale = atol + rtol * np.maximum(np.abs(y_old), np.abs(y_new))
    ratio = np.abs(err) / scale
    if ratio.ndim < 2:
        return np.atleast_1d(np.sqrt(np.mean(ratio**2)))
    ratio = np.moveaxis(ratio, batch_axis, 0)
    return np.sqrt(np.mean(ratio.reshape(ratio.shape[0], -1) ** 2, axis=1))


@dataclass
class StepController:
    rtol: float = 1e-6
    atol: float = 1e-9
    safety: float = 0.9
    min_factor: float = 0.2
    max_factor: float = 5.0
    initial_step: float = 0.05
    min_step: float = 1e-10
    max_step: float = np.inf

    @classmethod
    def for_precision(cls, precision: str = "double", **kw) -> "StepController":
        if precision == "single":
            kw.setdefault("rtol", 1e-4)
            kw.setdefault("atol", 1e-6)
        return cls(**kw)


def adapt(controller: StepController, error: float, h: float) -> tuple[bool, float]:
    """Accept if error <= 1; rescale h by safety * error^(-1/3) within the factor limits."""
    if error < 0 or np.isnan(error):
        accept, factor = False, controller.min_factor
    elif error == 0.0:
        accept, factor = True, controller.max_factor
    else:
        accept = error <= 1.0
        factor = controller.safety * error ** (-1.0 / 3.0)
        factor = min(controller.max_factor, max(controller.min_factor, factor))
    h_next = float(min(h * factor, controller.max_step))
    if h_next < controller.min_step:
        raise StepSizeError(
            f"step size {h_next:.3g} below floor {controller.min_step:.3g} (error {error:.3g}); "
            "the problem is too stiff for these tolerances"
        )
    return accept, h_next


@dataclass
class IntegrationStats:
    accepted: int = 0
    rejected: int = 0
    phi_applications: int = 0


def integrate(problem, t0: float, y0: np.ndarray, record_times, controller: StepController,
              callback: Callable[[float, np.ndarray], None], *, after_step=None,
              check_state=None, max_steps: int = 10_000_000,
              phi_options: dict | None = None, batch_axis: int = 0) -> IntegrationStats:
    """Advance from t0 through every record time, calling ``callback(t, y)`` at each.

    Steps are shortened to land exactly on record times.  ``after_step(y)`` may
    rescale the accepted state (it must leave F's physics invariant).
    ``check_state(y)`` raises for invalid states.  The step size is shared by the
    whole batch and set by the worst trajectory along ``batch_axis``.
    """
    stats = IntegrationStats()
    opts = dict(phi_options or {})
    # series truncation far below the step tolerance; machine precision buys nothing here
    opts.setdefault("tol", 1e-3 * min(controller.rtol, 1e-4))
    phi_stats: dict = {}
    opts["stats"] = phi_stats
    # plain Python floats: NumPy float64 scalars would promote single-precision states
    rec = [float(x) for x in np.asarray(record_times, dtype=float)]
    t, y = float(t0), y0
    while rec and rec[0] <= t + 1e-12 * max(1.0, abs(t)):
        callback(rec.pop(0), y)
    h_try = min(controller.initial_step, controller.max_step)
    while rec:
        if stats.accepted + stats.rejected >= max_steps:
            raise StepSizeError(f"exceeded {max_steps} steps")
        target = rec[0]
        clipped = h_try >= target - t
        h = target - t if clipped else h_try
        f0 = problem.rhs(t, y)
        try:
            y_new, err = exprb32_step(problem, t, y, h, f0=f0, phi_options=opts)
            enorm = float(np.max(weighted_rms(err, y, y_new, controller.rtol, controller.atol, batch_axis)))
            if not np.isfinite(enorm) or not np.all(np.isfinite(y_new)):
                raise FloatingPointError("non-finite stage")
        except (SeriesConvergenceError, FloatingPointError):
            stats.rejected += 1
            h_try = h / 2
            if h_try < controller.min_step:
                raise StepSizeError("step size collapsed after repeated stage failures")
            continue
        accept, h_next = adapt(controller, enorm, h)
        if not accept:
            stats.rejected += 1
            h_try = h_next
            continue
        if check_state is not None:
            check_state(y_new)
        stats.accepted += 1
        t = target if clipped else t + h
        y = y_new if after_step is None else after_step(y_new)
        h_try = max(h_next, h_try) if clipped else h_next
        while rec and rec[0] <= t + 1e-12 * max(1.0, abs(t)):
            callback(rec.pop(0), y)
    stats.phi_applications = phi_stats.get("applications", 0)
    return stats
