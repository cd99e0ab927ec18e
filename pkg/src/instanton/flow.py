"""Trajectories of a field: adaptive integration, capture by rest points, level crossings."""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import EvaluationError, IntegrationError, LevelNotReached
from .expr import Expr, compile_vector, parse_expr
from .field import DomainSpec, FieldSpec, RestPoint, find_rest_points

CAPTURE_RADIUS = 1e-3
T_MAX = 1e3
ESCAPE_TOL = 1e-8
DEFAULT_TOL = 1e-9

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = _A[6]
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


class Stepper:
    """Dormand-Prince 5(4) with PI step-size control.

    The error of a step is the RMS of ``e_i / (tol * (1 + max(|y_i|, |y_new_i|)))``
    so ``tol`` acts as both absolute and relative tolerance.
    """

    def __init__(self, rhs: Callable, t0: float, y0, tol: float, direction: float = 1.0,
                 h0: float | None = None, h_max: float = math.inf):
        self.rhs = rhs
        self.tol = tol
        self.dir = 1.0 if direction >= 0 else -1.0
        self.h_max = h_max
        self.t = float(t0)
        self.y = np.array(y0, dtype=float)
        self.f = self._eval(self.y)
        if not np.all(np.isfinite(self.f)):
            raise IntegrationError("field is not finite at the start point", t=self.t,
                                   point=self.y)
        self.h = h0 if h0 is not None else self._initial_step()
        self.err_prev = 1e-4
        self.steps = 0

    def _eval(self, y):
        return np.asarray(self.rhs(y), dtype=float)

    def _initial_step(self):
        sc = self.tol * (1.0 + np.abs(self.y))
        d0 = np.sqrt(np.mean((self.y / sc) ** 2))
        d1 = np.sqrt(np.mean((self.f / sc) ** 2))
        h = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        h = min(h, self.h_max)
        try:
            f1 = self._eval(self.y + self.dir * h * self.f)
        except EvaluationError:
            return h * 1e-3
        d2 = np.sqrt(np.mean(((f1 - self.f) / sc) ** 2)) / h
        if max(d1, d2) <= 1e-15:
            h1 = max(1e-6, h * 1e-3)
        else:
            h1 = (0.01 / max(d1, d2)) ** 0.2
        return min(100 * h, h1, self.h_max)

    def trial(self, h):
        """One step of signed size ``h`` from the current state: ``(y5, f5, error)``."""
        y, f = self.y, self.f
        n = len(y)
        k = np.empty((7, n))
        k[0] = f
        for i in range(1, 7):
            k[i] = self._eval(y + h * (_A[i] @ k[:i]))
        y5 = y + h * (_B5 @ k[:6])
        err_vec = h * (_E @ k)
        sc = self.tol * (1.0 + np.maximum(np.abs(y), np.abs(y5)))
        err = float(np.sqrt(np.mean((err_vec / sc) ** 2)))
        return y5, k[6], err

    def point_at(self, h):
        """State after a single (unchecked) substep of signed size ``h``."""
        if h == 0.0:
            return self.y.copy()
        return self.trial(h)[0]

    def step(self, t_end: float | None = None):
        """Advance by one accepted step; returns the previous ``(t, y, f)``."""
        while True:
            h = min(self.h, self.h_max)
            if t_end is not None:
                h = min(h, abs(t_end - self.t))
            h_min = 1e-14 * max(1.0, abs(self.t))
            if h < h_min:
                raise IntegrationError(f"step size underflow (h = {h:.3g})", t=self.t,
                                       point=self.y)
            try:
                y5, f5, err = self.trial(self.dir * h)
                ok = np.all(np.isfinite(y5)) and np.all(np.isfinite(f5)) and math.isfinite(err)
            except EvaluationError:
                ok = False
            if not ok:
                self.h = h * 0.25
                continue
            if err <= 1.0:
                prev = (self.t, self.y, self.f)
                last = t_end is not None and h == abs(t_end - self.t)
                self.t = t_end if last else self.t + self.dir * h
                self.y, self.f = y5, f5
                fac = err ** 0.17 / self.err_prev ** 0.04 / 0.9 if err > 0 else 0.1
                fac = min(5.0, max(0.1, fac))
                self.h = h / fac
                self.err_prev = max(err, 1e-4)
                self.steps += 1
                return prev
            self.h = h / min(5.0, max(1.0, err ** 0.2 / 0.9))

    def reset(self, y):
        """Replace the state in place (e.g. after re-orthonormalisation)."""
        self.y = np.array(y, dtype=float)
        self.f = self._eval(self.y)


def hermite(t0, y0, f0, t1, y1, f1, t):
    h = t1 - t0
    s = (t - t0) / h
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


@dataclass
class Trajectory:
    """Sampled solution in lifted (unwrapped) coordinates, times ascending.

    ``points`` never jump by a period, so ``points[-1] - points[0]`` keeps
    track of how often the path winds around each torus direction;
    ``samples`` gives the wrapped points.
    """

    t: np.ndarray
    points: np.ndarray
    velocities: np.ndarray
    field_id: str = ""
    tol: float = DEFAULT_TOL
    domain: DomainSpec | None = None
    truncated: bool = False
    limit_forward: RestPoint | None = None
    limit_backward: RestPoint | None = None
    status: str = "complete"
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.points = np.asarray(self.points, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self):
        return len(self.t)

    @property
    def wrapped(self):
        if self.domain is None:
            return self.points.copy()
        return self.domain.wrap(self.points.T).T

    @property
    def samples(self):
        return list(zip(self.t.tolist(), self.wrapped))

    @property
    def start(self):
        return self.points[0]

    @property
    def end(self):
        return self.points[-1]

    def __call__(self, t):
        """Dense output by cubic Hermite interpolation (lifted coordinates)."""
        t = float(t)
        if not self.t[0] <= t <= self.t[-1]:
            raise ValueError(f"t = {t} outside [{self.t[0]}, {self.t[-1]}]")
        j = int(np.searchsorted(self.t, t, side="right")) - 1
        j = min(max(j, 0), len(self.t) - 2)
        if len(self.t) == 1:
            return self.points[0].copy()
        return hermite(self.t[j], self.points[j], self.velocities[j],
                       self.t[j + 1], self.points[j + 1], self.velocities[j + 1], t)

    def deck(self, limit: RestPoint | None = None):
        """Integer period offsets of the forward end relative to ``limit``."""
        limit = limit or self.limit_forward
        if self.domain is None or not self.domain.is_torus or limit is None:
            return (0,) * self.points.shape[1]
        k = np.round((self.points[-1] - limit.position) / self.domain.periods)
        return tuple(int(v) for v in k)

    def shifted(self, dt):
        return Trajectory(self.t + dt, self.points, self.velocities, self.field_id, self.tol,
                          self.domain, self.truncated, self.limit_forward, self.limit_backward,
                          self.status, dict(self.meta))

    def to_text(self, names: Sequence[str] | None = None, header: str = ""):
        n = self.points.shape[1]
        names = list(names) if names else [f"x{i}" for i in range(n)]
        lines = [f"# field={self.field_id} tol={self.tol:.17g}{header}",
                 ", ".join(["t"] + names)]
        for t, p in zip(self.t, self.wrapped):
            lines.append(", ".join(f"{v:.17g}" for v in (t, *p)))
        return "\n".join(lines) + "\n"


def concatenate(first: Trajectory, second: Trajectory) -> Trajectory:
    """Join two pieces that share an endpoint (``first.end ~ second.start``)."""
    dt = first.t[-1] - second.t[0]
    offset = first.points[-1] - second.points[0]
    t = np.concatenate([first.t, second.t[1:] + dt])
    pts = np.concatenate([first.points, second.points[1:] + offset])
    vel = np.concatenate([first.velocities, second.velocities[1:]])
    return Trajectory(t, pts, vel, first.field_id, max(first.tol, second.tol), first.domain,
                      first.truncated or second.truncated, second.limit_forward,
                      first.limit_backward, second.status)


# ---------------------------------------------------------------------------
# Capture by rest points

@lru_cache(maxsize=64)
def _census(field: FieldSpec):
    return tuple(find_rest_points(field))


def default_rest_points(field: FieldSpec):
    """Cached hyperbolic rest-point census of ``field``."""
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return list(_census(field))


@dataclass
class _Catcher:
    rest_points: list
    radii: np.ndarray
    projectors: list
    escape_tol: float | None
    domain: DomainSpec

    @classmethod
    def build(cls, field, rest_points, radius, escape_tol, backward):
        rps = list(rest_points)
        radii = np.array([radius * min(1.0, rp.spectral_margin) for rp in rps])
        projectors = []
        for rp in rps:
            P, k = rp.basis
            rows = rp.dual_basis
            # moving away from z in the chosen time direction: unstable (forward) or stable
            projectors.append(rows[:k] if backward else rows[k:])
        return cls(rps, radii, projectors, escape_tol, field.domain)

    def check(self, y, speed, prev_speed):
        if not self.rest_points or speed > prev_speed * (1 + 1e-9) + 1e-300:
            return None
        for rp, r, E in zip(self.rest_points, self.radii, self.projectors):
            d = self.domain.displacement(rp.position, y)
            if np.linalg.norm(d) > r:
                continue
            if self.escape_tol is not None and E.shape[0] and np.linalg.norm(E @ d) > self.escape_tol:
                continue
            return rp
        return None


def _box_exit(domain, y):
    if domain.is_torus:
        return False
    return bool(np.any(y < domain.lower) or np.any(y > domain.upper))


def integrate(field: FieldSpec, start, t_span=(0.0, T_MAX), tol: float = DEFAULT_TOL, *,
              rest_points: Sequence[RestPoint] | str | None = "auto",
              capture_radius: float = CAPTURE_RADIUS, escape_tol: float | None = ESCAPE_TOL,
              stop: Callable | None = None, post_step: Callable | None = None,
              h_max: float = math.inf) -> Trajectory:
    """Integrate ``field`` from ``start`` over ``t_span``.

    Backward spans (``t_span[1] < t_span[0]``) integrate ``-X`` and return
    samples in ascending time.  Integration stops early when the path is
    captured by one of ``rest_points``: within the capture radius, speed not
    increasing, and (unless ``escape_tol`` is None) with its component along
    the escaping eigendirections below ``escape_tol``.  On a box, leaving the
    domain truncates the path at the boundary.  ``stop(t, y)`` may end the
    run early; ``post_step(stepper)`` is called after each accepted step.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    backward = t1 < t0
    sign = -1.0 if backward else 1.0
    domain = field.domain
    y0 = np.asarray(start, dtype=float)
    if y0.shape != (field.dim,):
        raise ValueError(f"start must have shape ({field.dim},)")
    if not domain.contains(y0):
        raise ValueError("start point outside the box domain")
    if rest_points == "auto":
        rest_points = default_rest_points(field)
    catcher = _Catcher.build(field, rest_points or [], capture_radius, escape_tol, backward)

    rhs = field.rhs
    stepper = Stepper(lambda y: rhs(y.tolist()), t0, y0, tol, direction=sign, h_max=h_max)
    ts, ys, fs = [t0], [stepper.y.copy()], [stepper.f.copy()]
    speed_prev = float(np.linalg.norm(stepper.f))
    limit = catcher.check(stepper.y, speed_prev, speed_prev)
    status = "captured" if limit is not None else "time"
    truncated = False
    while limit is None and stepper.t != t1:
        tp, yp, fp = stepper.step(t1)
        y = stepper.y
        if _box_exit(domain, y):
            # locate the boundary crossing on the Hermite interpolant
            def excess(t):
                z = hermite(tp, yp, fp, stepper.t, y, stepper.f, t)
                return float(np.max(np.maximum(domain.lower - z, z - domain.upper)))

            tb = brentq(excess, tp, stepper.t, xtol=1e-14)
            yb = np.clip(hermite(tp, yp, fp, stepper.t, y, stepper.f, tb), domain.lower, domain.upper)
            if tb != tp:
                ts.append(tb)
                ys.append(yb)
                fs.append(np.asarray(rhs(yb.tolist()), dtype=float))
            truncated = True
            status = "truncated"
            break
        if post_step is not None:
            post_step(stepper)
        ts.append(stepper.t)
        ys.append(stepper.y.copy())
        fs.append(stepper.f.copy())
        speed = float(np.linalg.norm(stepper.f))
        limit = catcher.check(stepper.y, speed, speed_prev)
        speed_prev = speed
        if limit is not None:
            status = "captured"
            break
        if stop is not None and stop(stepper.t, stepper.y):
            status = "stopped"
            break
    return _assemble(field, ts, ys, fs, tol, backward, limit, truncated, status)


def _assemble(field, ts, ys, fs, tol, backward, limit, truncated, status):
    t = np.array(ts)
    y = np.array(ys)
    f = np.array(fs)
    if backward:
        t, y, f = t[::-1], y[::-1], f[::-1]
    return Trajectory(t, y, f, field.field_id, tol, field.domain, truncated,
                      None if backward else limit, limit if backward else None, status)


def omega_limit(field: FieldSpec, start, direction: str = "forward",
                rest_points: Sequence[RestPoint] | None = None, tol: float = DEFAULT_TOL,
                t_max: float = T_MAX, **kwargs) -> RestPoint | None:
    """Rest point capturing the forward (or backward) orbit of ``start``, or None."""
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    span = (0.0, t_max) if direction == "forward" else (0.0, -t_max)
    traj = integrate(field, start, span, tol,
                     rest_points="auto" if rest_points is None else rest_points, **kwargs)
    return traj.limit_forward if direction == "forward" else traj.limit_backward


# ---------------------------------------------------------------------------
# Level sets of a Lyapunov function

def _level_function(field: FieldSpec, f):
    if f is None:
        f = field.lyapunov
        if f is None:
            raise ValueError("no Lyapunov function given")
    if isinstance(f, str):
        f = parse_expr(f, field.dim)
    fn = compile_vector([f])
    return lambda y: fn.scalar(list(y))[0]


def flow_to_level(field: FieldSpec, f: Expr | str | None, start, level: float,
                  tol: float = DEFAULT_TOL, t_max: float = T_MAX,
                  rest_points: Sequence[RestPoint] | str | None = "auto",
                  return_trajectory: bool = False, **kwargs):
    """First point of the forward orbit of ``start`` with ``f = level``.

    The crossing is bracketed between accepted steps and polished by a
    root search on ``f`` along a single Runge-Kutta substep, so the result
    satisfies ``|f - level| <= 1e-10`` to roundoff.  Raises
    :class:`LevelNotReached` if the orbit is captured or the time runs out.
    """
    fval = _level_function(field, f)
    y0 = np.asarray(start, dtype=float)
    f0 = fval(y0)
    if f0 < level:
        raise LevelNotReached(f"f(start) = {f0:.17g} is already below level {level:.17g}")

    def stop(t, y):
        return fval(y) <= level

    if f0 == level:
        point = y0.copy()
        if return_trajectory:
            fv = np.asarray(field.rhs(point.tolist()))
            return point, Trajectory(np.array([0.0]), point[None], fv[None], field.field_id, tol,
                                     field.domain)
        return point

    traj = integrate(field, y0, (0.0, t_max), tol, rest_points=rest_points, stop=stop, **kwargs)
    if traj.status != "stopped":
        what = {"captured": "captured by a rest point", "time": "time limit reached",
                "truncated": "left the box"}[traj.status]
        raise LevelNotReached(f"level {level:.17g} not reached: {what}")
    ta, ya = traj.t[-2], traj.points[-2]
    stepper = Stepper(lambda y: field.rhs(y.tolist()), ta, ya, tol)
    H = traj.t[-1] - ta

    def g(h):
        return fval(stepper.point_at(h)) - level

    ga, gb = g(0.0), g(H)
    if gb > 0:
        # the re-taken step may differ from the recorded one by roundoff
        gb = fval(traj.points[-1]) - level
    if ga < 0 or gb > 0:
        raise LevelNotReached("failed to bracket the level crossing")
    if gb == 0:
        h_star = H
    else:
        h_star = brentq(g, 0.0, H, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    point = stepper.point_at(h_star)
    if not return_trajectory:
        return point
    fv = np.asarray(field.rhs(point.tolist()), dtype=float)
    t = np.append(traj.t[:-1], ta + h_star) if h_star > 0 else traj.t[:-1]
    pts = np.vstack([traj.points[:-1], point]) if h_star > 0 else traj.points[:-1]
    vel = np.vstack([traj.velocities[:-1], fv]) if h_star > 0 else traj.velocities[:-1]
    out = Trajectory(t, pts, vel, field.field_id, tol, field.domain, status="level")
    return point, out


def lyapunov_values(field: FieldSpec, traj: Trajectory, f=None):
    fval = _level_function(field, f)
    return np.array([fval(p) for p in traj.points])
