"""Vector fields on flat tori and boxes, their rest points and Lyapunov checks."""
from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.stats import qmc

from .errors import (
    EvaluationError,
    FieldSpecError,
    NonHyperbolicWarning,
    NotARestPoint,
    ParseError,
    PeriodicityError,
)
from .expr import Expr, compile_vector, gradient, neg, parse_expr

REST_TOL = 1e-10
DEDUP_RADIUS = 1e-6
SPECTRAL_TOL = 1e-6
NEWTON_MAX_ITER = 50


@dataclass(frozen=True)
class DomainSpec:
    """A flat torus (``periods``) or an axis-aligned box (``bounds``)."""

    kind: str
    dim: int
    extents: tuple

    def __post_init__(self):
        if self.kind not in ("torus", "box"):
            raise FieldSpecError(f"unknown domain kind {self.kind!r}")
        if self.dim < 1:
            raise FieldSpecError("dimension must be at least 1")
        if len(self.extents) != self.dim:
            raise FieldSpecError(
                f"{len(self.extents)} extents given for dimension {self.dim}")
        if self.kind == "torus":
            for i, period in enumerate(self.extents):
                if not period > 0:
                    raise FieldSpecError(f"period_{i} must be positive")
        else:
            for i, (lo, hi) in enumerate(self.extents):
                if not lo < hi:
                    raise FieldSpecError(f"bounds_{i} must satisfy lo < hi")

    @classmethod
    def torus(cls, dim, periods=None):
        periods = tuple(float(p) for p in (periods or [2 * math.pi] * dim))
        return cls("torus", dim, periods)

    @classmethod
    def box(cls, bounds):
        bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        return cls("box", len(bounds), bounds)

    @property
    def is_torus(self):
        return self.kind == "torus"

    @cached_property
    def periods(self):
        return np.array(self.extents, dtype=float) if self.is_torus else None

    @cached_property
    def lower(self):
        if self.is_torus:
            return np.zeros(self.dim)
        return np.array([lo for lo, _ in self.extents])

    @cached_property
    def upper(self):
        if self.is_torus:
            return self.periods.copy()
        return np.array([hi for _, hi in self.extents])

    def wrap(self, p):
        """Reduce torus coordinates into ``[0, period)``; identity on boxes."""
        p = np.asarray(p, dtype=float)
        if not self.is_torus:
            return p.copy()
        periods = self.periods.reshape((-1,) + (1,) * (p.ndim - 1))
        w = np.mod(p, periods)
        # mod can round up to the period itself
        return np.where(w >= periods, w - periods, w)

    def displacement(self, a, b):
        """Shortest vector from ``a`` to ``b`` (per-coordinate wrapped on tori)."""
        d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
        if self.is_torus:
            periods = self.periods.reshape((-1,) + (1,) * (d.ndim - 1))
            d = d - periods * np.round(d / periods)
        return d

    def distance(self, a, b):
        return float(np.linalg.norm(self.displacement(a, b)))

    def contains(self, p):
        if self.is_torus:
            return True
        p = np.asarray(p)
        return bool(np.all(p >= self.lower) and np.all(p <= self.upper))

    def canonical(self, p, snap=1e-9):
        """Wrapped position with near-period and signed-zero noise removed."""
        p = self.wrap(p)
        if self.is_torus:
            p = np.where(self.periods - p < snap * self.periods, 0.0, p)
        return np.where(np.abs(p) < 1e-300, 0.0, p) + 0.0

    def sample(self, count, seed=0):
        """Scrambled Halton points covering the domain."""
        sampler = qmc.Halton(d=self.dim, scramble=True, seed=seed)
        unit = sampler.random(count)
        return (self.lower + unit * (self.upper - self.lower)).T

    def grid(self, density):
        axes = []
        for lo, hi in zip(self.lower, self.upper):
            if self.is_torus:
                axes.append(lo + (hi - lo) * np.arange(density) / density)
            else:
                axes.append(np.linspace(lo, hi, density))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh])

    def describe(self):
        lines = [f"domain = {self.kind}", f"dim = {self.dim}"]
        for i, e in enumerate(self.extents):
            if self.is_torus:
                lines.append(f"period_{i} = {e!r}")
            else:
                lines.append(f"bounds_{i} = {e[0]!r}, {e[1]!r}")
        return lines


@dataclass(frozen=True)
class FieldSpec:
    """A vector field X given by one expression per coordinate.

    ``lyapunov`` is an optional candidate f with df(X) < 0 off the rest
    points; ``gradient`` declares X = -grad f, which is what allows a rest
    point to be flagged as Morse type.
    """

    domain: DomainSpec
    components: tuple[Expr, ...]
    lyapunov: Expr | None = None
    gradient: bool = False
    name: str = dc_field(default="", compare=False)

    def __post_init__(self):
        n = self.domain.dim
        if len(self.components) != n:
            raise FieldSpecError(f"expected {n} components, got {len(self.components)}")
        exprs = list(self.components) + ([self.lyapunov] if self.lyapunov is not None else [])
        for e in exprs:
            bad = [i for i in e.variables() if i >= n]
            if bad:
                raise FieldSpecError(f"expression {e} uses x{max(bad)} but dim = {n}")

    @property
    def dim(self):
        return self.domain.dim

    @cached_property
    def _vec(self):
        return compile_vector(self.components)

    @cached_property
    def _jac(self):
        n = self.dim
        return compile_vector([c.diff(j) for c in self.components for j in range(n)])

    @cached_property
    def _f(self):
        if self.lyapunov is None:
            raise FieldSpecError("field has no Lyapunov expression")
        n = self.dim
        grad = gradient(self.lyapunov, n)
        hess = [g.diff(j) for g in grad for j in range(n)]
        return (compile_vector([self.lyapunov]), compile_vector(grad), compile_vector(hess))

    def __call__(self, p):
        return np.array(self._vec.scalar(np.asarray(p, dtype=float).tolist()))

    def rhs(self, p):
        """Fast scalar evaluation; returns a tuple."""
        return self._vec.scalar(p)

    def values(self, points):
        """Vectorised X on an array of shape ``(n, ...)``."""
        return self._vec.array(points)

    def jacobian(self, p):
        n = self.dim
        return np.array(self._jac.scalar(np.asarray(p, dtype=float).tolist())).reshape(n, n)

    def jacobians(self, points):
        n = self.dim
        points = np.asarray(points, dtype=float)
        return self._jac.array(points).reshape((n, n) + points.shape[1:])

    def f(self, p):
        return self._f[0].scalar(np.asarray(p, dtype=float).tolist())[0]

    def f_values(self, points):
        return self._f[0].array(points)[0]

    def grad_f(self, p):
        return np.array(self._f[1].scalar(np.asarray(p, dtype=float).tolist()))

    def grad_f_values(self, points):
        return self._f[1].array(points)

    def hessian_f(self, p):
        n = self.dim
        return np.array(self._f[2].scalar(np.asarray(p, dtype=float).tolist())).reshape(n, n)

    def negated(self):
        """The field -X with Lyapunov -f (stable and unstable sets swap)."""
        lyap = neg(self.lyapunov) if self.lyapunov is not None else None
        return FieldSpec(self.domain, tuple(neg(c) for c in self.components), lyap,
                         False, f"-({self.field_id})")

    def to_text(self):
        lines = self.domain.describe()
        lines += [f"X_{i} = {c}" for i, c in enumerate(self.components)]
        if self.lyapunov is not None:
            lines.append(f"f = {self.lyapunov}")
        if self.gradient:
            lines.append("gradient = true")
        return "\n".join(lines) + "\n"

    @cached_property
    def digest(self):
        return hashlib.sha1(self.to_text().encode()).hexdigest()

    @property
    def field_id(self):
        return self.name or self.digest[:12]


def jacobian_at(field: FieldSpec, p) -> tuple[np.ndarray, np.ndarray]:
    """X(p) and the exact derivative DX(p) from the symbolic derivatives."""
    return field(p), field.jacobian(p)


# ---------------------------------------------------------------------------
# Field-spec documents

def _constant(text, lineno, what):
    try:
        node = parse_expr(text, dim=0)
    except ParseError as exc:
        raise ParseError(f"{what}: {exc}", line=lineno) from None
    return float(node(np.zeros(0)))


def parse_field(source_text: str, name: str = "", check_periodicity: bool = True,
                seed: int = 0) -> FieldSpec:
    """Parse a key/value field-spec document.

    Recognised keys: ``domain`` (torus|box), ``dim``, ``period_i``,
    ``bounds_i = lo, hi``, ``X_i``, ``f``, ``gradient`` and ``name``.
    Lines starting with ``#`` are comments.
    """
    entries = {}
    for lineno, raw in enumerate(source_text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key in entries:
            raise ParseError(f"duplicate key {key!r}", line=lineno)
        entries[key] = (value, lineno)

    def get(key, default=None):
        return entries[key][0] if key in entries else default

    kind = get("domain")
    if kind is None:
        raise FieldSpecError("missing 'domain'")
    if "dim" not in entries:
        raise FieldSpecError("missing 'dim'")
    try:
        dim = int(get("dim"))
    except ValueError:
        raise ParseError("dim must be an integer", line=entries["dim"][1]) from None
    if dim < 1:
        raise FieldSpecError("dimension must be at least 1")

    known = {"domain", "dim", "f", "gradient", "name"}
    known |= {f"X_{i}" for i in range(dim)}
    known |= {f"period_{i}" for i in range(dim)} | {f"bounds_{i}" for i in range(dim)}
    for key, (_, lineno) in entries.items():
        if key not in known:
            if key.startswith("X_"):
                raise FieldSpecError(f"component {key} exceeds dimension {dim} (line {lineno})")
            raise ParseError(f"unknown key {key!r}", line=lineno)

    if kind == "torus":
        periods = []
        for i in range(dim):
            key = f"period_{i}"
            periods.append(_constant(entries[key][0], entries[key][1], key)
                           if key in entries else 2 * math.pi)
        domain = DomainSpec("torus", dim, tuple(periods))
    elif kind == "box":
        bounds = []
        for i in range(dim):
            key = f"bounds_{i}"
            if key not in entries:
                raise FieldSpecError(f"box domain needs {key}")
            value, lineno = entries[key]
            parts = value.split(",")
            if len(parts) != 2:
                raise ParseError(f"{key} must be 'lo, hi'", line=lineno)
            bounds.append(tuple(_constant(p, lineno, key) for p in parts))
        domain = DomainSpec("box", dim, tuple(bounds))
    else:
        raise FieldSpecError(f"unknown domain kind {kind!r}")

    components = []
    for i in range(dim):
        key = f"X_{i}"
        if key not in entries:
            raise FieldSpecError(f"missing component {key}")
        value, lineno = entries[key]
        try:
            components.append(parse_expr(value, dim))
        except ParseError as exc:
            raise ParseError(f"{key}: {exc}", line=lineno) from None
    lyap = None
    if "f" in entries:
        value, lineno = entries["f"]
        try:
            lyap = parse_expr(value, dim)
        except ParseError as exc:
            raise ParseError(f"f: {exc}", line=lineno) from None
    grad_flag = str(get("gradient", "false")).lower() in ("1", "true", "yes")
    spec = FieldSpec(domain, tuple(components), lyap, grad_flag, get("name", name) or "")
    if check_periodicity and domain.is_torus:
        check_periodic(spec, seed=seed)
    return spec


def load_field(path, check_periodicity=True) -> FieldSpec:
    from pathlib import Path

    path = Path(path)
    return parse_field(path.read_text(), name=path.stem, check_periodicity=check_periodicity)


def check_periodic(field: FieldSpec, samples: int = 64, seed: int = 0):
    """Raise :class:`PeriodicityError` unless every expression is periodic."""
    domain = field.domain
    pts = domain.sample(samples, seed=seed)
    exprs = [("X_%d" % i, c) for i, c in enumerate(field.components)]
    if field.lyapunov is not None:
        exprs.append(("f", field.lyapunov))
    for label, e in exprs:
        fn = compile_vector([e])
        base = fn.array(pts)[0]
        for i in range(domain.dim):
            shifted = pts.copy()
            shifted[i] += domain.periods[i]
            moved = fn.array(shifted)[0]
            err = np.abs(moved - base)
            if np.any(err > 1e-8 * (1.0 + np.abs(base))):
                raise PeriodicityError(
                    f"{label} = {e} is not periodic in x{i} with period {domain.periods[i]!r}")


# ---------------------------------------------------------------------------
# Rest points

def adapted_basis(jacobian):
    """Real basis splitting R^n into stable (first) and unstable blocks.

    Returns ``(P, k)`` where the first ``k`` columns of ``P`` span the sum of
    generalised eigenspaces with Re < 0 and the rest those with Re > 0, such
    that ``inv(P) @ J @ P`` is block diagonal.  Columns have unit norm and
    their first significant entry positive.
    """
    J = np.asarray(jacobian, dtype=float)
    n = J.shape[0]
    T, Z, k = scipy.linalg.schur(J, output="real", sort="lhp")
    if 0 < k < n:
        Y = scipy.linalg.solve_sylvester(T[:k, :k], -T[k:, k:], -T[:k, k:])
        E = np.eye(n)
        E[:k, k:] = Y
        P = Z @ E
    else:
        P = Z.copy()
    for j in range(n):
        col = P[:, j] / np.linalg.norm(P[:, j])
        lead = np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())[0]
        P[:, j] = col if col[lead] > 0 else -col
    return P, int(k)


def classify_jacobian(jacobian, spectral_tol=SPECTRAL_TOL):
    """Spectrum (sorted), Morse index, hyperbolicity and spectral margin."""
    try:
        eig = np.linalg.eigvals(np.asarray(jacobian, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise EvaluationError(f"eigenvalue computation failed: {exc}") from None
    eig = sorted((complex(z) for z in eig), key=lambda z: (z.real, z.imag))
    re = np.array([z.real for z in eig])
    margin = float(np.min(np.abs(re)))
    index = int(np.sum(re > spectral_tol))
    return tuple(eig), index, margin > spectral_tol, margin


@dataclass(frozen=True, eq=False)
class RestPoint:
    position: np.ndarray
    linearization: np.ndarray
    spectrum: tuple
    index: int
    hyperbolic: bool
    spectral_margin: float
    residual: float = 0.0
    morse_type: bool = False
    value: float | None = None

    @property
    def dim(self):
        return len(self.position)

    @cached_property
    def basis(self):
        """Adapted basis (stable columns first) and stable dimension."""
        return adapted_basis(self.linearization)

    @property
    def unstable_basis(self):
        P, k = self.basis
        return P[:, k:]

    @property
    def stable_basis(self):
        P, k = self.basis
        return P[:, :k]

    @cached_property
    def dual_basis(self):
        """Rows of ``inv(P)``: coordinate functionals of the adapted basis."""
        return np.linalg.inv(self.basis[0])

    def key(self, digits=8):
        return tuple(round(float(c), digits) + 0.0 for c in self.position)

    def __repr__(self):
        pos = ", ".join(f"{c:.6g}" for c in self.position)
        return f"RestPoint(({pos}), index={self.index}, hyperbolic={self.hyperbolic})"


def classify_rest_point(field: FieldSpec, p, tol=REST_TOL, spectral_tol=SPECTRAL_TOL) -> RestPoint:
    value, jac = jacobian_at(field, p)
    residual = float(np.linalg.norm(value))
    if not residual <= tol:
        raise NotARestPoint(f"|X(p)| = {residual:.3g} exceeds tolerance {tol:.3g}")
    spectrum, index, hyperbolic, margin = classify_jacobian(jac, spectral_tol)
    morse = False
    fval = None
    if field.lyapunov is not None:
        fval = float(field.f(p))
        if field.gradient:
            h = np.linalg.eigvalsh(0.5 * (field.hessian_f(p) + field.hessian_f(p).T))
            morse = bool(np.min(np.abs(h)) > spectral_tol)
    return RestPoint(np.array(p, dtype=float), jac, spectrum, index, hyperbolic, margin,
                     residual, morse, fval)


def _newton(field, seeds, max_iter):
    domain = field.domain
    x = seeds.astype(float).copy()
    n, count = x.shape
    active = np.ones(count, dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        xa = x[:, idx]
        try:
            v = field.values(xa)
            J = field.jacobians(xa)
        except EvaluationError:
            # fall back to per-seed evaluation so one bad seed does not stop the rest
            v = np.full_like(xa, np.nan)
            J = np.full((n, n, len(idx)), np.nan)
            for j in range(len(idx)):
                try:
                    v[:, j] = field(xa[:, j])
                    J[:, :, j] = field.jacobian(xa[:, j])
                except EvaluationError:
                    pass
        bad = ~np.all(np.isfinite(v), axis=0) | ~np.all(np.isfinite(J), axis=(0, 1))
        Jt = np.moveaxis(np.nan_to_num(J), -1, 0)
        step = np.einsum("sij,js->is", np.linalg.pinv(Jt, rcond=1e-15), np.nan_to_num(v))
        xa = xa - step
        if domain.is_torus:
            xa = domain.wrap(xa)
        x[:, idx] = xa
        small = np.linalg.norm(step, axis=0) <= 1e-14 * (1.0 + np.linalg.norm(xa, axis=0))
        diverged = bad | ~np.all(np.isfinite(xa), axis=0) | (np.abs(xa).max(axis=0) > 1e12)
        x[:, idx[diverged]] = np.nan
        active[idx[small | diverged]] = False
    return x


def find_zeros(field: FieldSpec, grid_density: int = 16, tol: float = REST_TOL,
               dedup_radius: float = DEDUP_RADIUS, spectral_tol: float = SPECTRAL_TOL,
               max_iter: int = NEWTON_MAX_ITER) -> list[RestPoint]:
    """All zeros reached by Newton from a uniform seed grid, hyperbolic or not."""
    if grid_density < 2:
        raise ValueError("grid_density must be at least 2")
    domain = field.domain
    x = _newton(field, domain.grid(grid_density), max_iter)
    candidates = []
    for j in range(x.shape[1]):
        p = x[:, j]
        if not np.all(np.isfinite(p)) or not domain.contains(p):
            continue
        try:
            r = float(np.linalg.norm(field(p)))
        except EvaluationError:
            continue
        if r <= tol:
            candidates.append((r, j, p))
    candidates.sort(key=lambda c: (c[0], c[1]))
    reps = []
    for r, _, p in candidates:
        if all(domain.distance(p, q) > dedup_radius for q in reps):
            reps.append(p)
    points = [classify_rest_point(field, domain.canonical(p), tol=tol, spectral_tol=spectral_tol)
              for p in reps]
    points.sort(key=lambda rp: (-rp.index, rp.key()))
    return points


def find_rest_points(field: FieldSpec, grid_density: int = 16, tol: float = REST_TOL,
                     **kwargs) -> list[RestPoint]:
    """Hyperbolic rest points, sorted by descending index then position.

    Zeros with a non-hyperbolic linearisation are excluded and reported
    through a :class:`NonHyperbolicWarning`.
    """
    zeros = find_zeros(field, grid_density, tol, **kwargs)
    if not zeros:
        warnings.warn("Newton iteration converged from no seed", NonHyperbolicWarning,
                      stacklevel=2)
        return []
    bad = [z for z in zeros if not z.hyperbolic]
    if bad:
        where = "; ".join(f"[{', '.join(f'{c:.6g}' for c in z.position)}] (margin {z.spectral_margin:.3g})"
                          for z in bad)
        warnings.warn(f"non-hyperbolic zeros excluded: {where}", NonHyperbolicWarning,
                      stacklevel=2)
    return [z for z in zeros if z.hyperbolic]


# ---------------------------------------------------------------------------
# Lyapunov functions

@dataclass(frozen=True)
class LyapunovReport:
    passes: bool
    worst_value: float
    worst_point: np.ndarray
    samples: int


def check_lyapunov(field: FieldSpec, f: Expr | str | None = None, samples: int = 4096,
                   seed: int = 0, exclusion_radius: float = 1e-2,
                   zeros: Sequence[RestPoint] | None = None) -> LyapunovReport:
    """Sample df(X) at quasi-random points away from the zeros of X.

    Passes iff every sampled value is strictly negative.
    """
    n = field.dim
    if f is None:
        f = field.lyapunov
        if f is None:
            raise ValueError("no Lyapunov candidate given")
    if isinstance(f, str):
        from .expr import parse_expr as _p

        f = _p(f, n)
    grad = compile_vector(gradient(f, n))
    if zeros is None:
        zeros = find_zeros(field)
    pts = field.domain.sample(samples, seed=seed)
    keep = np.ones(pts.shape[1], dtype=bool)
    for z in zeros:
        d = np.linalg.norm(field.domain.displacement(z.position[:, None], pts), axis=0)
        keep &= d > exclusion_radius
    pts = pts[:, keep]
    values = np.sum(grad.array(pts) * field.values(pts), axis=0)
    worst = int(np.argmax(values))
    return LyapunovReport(bool(np.all(values < 0)), float(values[worst]), pts[:, worst].copy(),
                          int(pts.shape[1]))
