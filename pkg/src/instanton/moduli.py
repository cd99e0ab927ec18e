"""Instantons between rest points, their signs, broken strata and one-parameter families.

Unstable manifolds are seeded on the linear unstable space at radius
``r0``.  For a rest point of index 1 the two seeds ``x +- r0 u`` are shot
forward; for index 2 a circle of directions is swept and every pair of
neighbouring directions whose orbits end differently is bisected until
the orbit is captured by the intermediate saddle.  The outcome of a
single shot is its *signature*: the capturing rest point together with
the integer period offsets of the lifted endpoint.

Directions on the unstable circle are parametrised by the fraction of a
full turn, evaluated so that quarter turns give exact axis directions.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numpy as np

from .errors import (
    DegenerateFrame,
    IndexGapError,
    InstantonError,
    IntegrationError,
    LevelNotReached,
    NoLyapunovFunction,
    ResolutionError,
    UnresolvedCellWarning,
)
from .field import FieldSpec, RestPoint, check_lyapunov, find_rest_points
from .flow import (
    CAPTURE_RADIUS,
    ESCAPE_TOL,
    T_MAX,
    Stepper,
    Trajectory,
    concatenate,
    flow_to_level,
    integrate,
)

SEED_RADIUS = 1e-2
MESH_DENSITY = 64
THETA_TOL = 1e-14
SIDE_OFFSET = 1e-7
SHOT_TOL = 1e-10
ANCHOR_DEDUP = 1e-6
DEGENERACY_TOL = 1e-6


# ---------------------------------------------------------------------------
# Per-field context

class _Context:
    """Rest-point census, Lyapunov verdict and caches for one field."""

    def __init__(self, field: FieldSpec):
        self.field = field
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            self.rest_points = find_rest_points(field)
        self._lyapunov = None
        self.sweeps = {}
        self.instantons = {}
        self.shots = {}

    def ordinal(self, rp: RestPoint) -> int:
        for i, z in enumerate(self.rest_points):
            if self.field.domain.distance(z.position, rp.position) <= 1e-6:
                return i
        raise InstantonError(f"{rp} is not a hyperbolic rest point of the field")

    def label(self, rp):
        return f"#{self.ordinal(rp)}"

    def require_lyapunov(self):
        if self._lyapunov is None:
            if self.field.lyapunov is None:
                self._lyapunov = False
            else:
                self._lyapunov = check_lyapunov(self.field, zeros=self.rest_points).passes
        if not self._lyapunov:
            raise NoLyapunovFunction("the field has no verified Lyapunov function")


@lru_cache(maxsize=32)
def context(field: FieldSpec) -> _Context:
    return _Context(field)


def resolve(field: FieldSpec, ref) -> RestPoint:
    """Rest point from an ordinal (int or ``'#k'``), a coordinate vector or a RestPoint."""
    ctx = context(field)
    if isinstance(ref, RestPoint):
        return ctx.rest_points[ctx.ordinal(ref)]
    if isinstance(ref, str) and ref.startswith("#"):
        ref = int(ref[1:])
    if isinstance(ref, (int, np.integer)):
        if not 0 <= ref < len(ctx.rest_points):
            raise InstantonError(f"no rest point with ordinal {ref}")
        return ctx.rest_points[int(ref)]
    p = np.asarray(ref, dtype=float)
    for z in ctx.rest_points:
        if field.domain.distance(z.position, p) <= 1e-6:
            return z
    raise InstantonError(f"no hyperbolic rest point at {list(p)}")


# ---------------------------------------------------------------------------
# Data types

@dataclass(frozen=True, eq=False)
class Instanton:
    source: RestPoint
    target: RestPoint
    anchor_point: np.ndarray
    representative: Trajectory
    sign: int
    departure_direction: np.ndarray
    deck: tuple
    label: str = ""

    @property
    def level(self):
        return self.representative.meta.get("level")


@dataclass(frozen=True, eq=False)
class BrokenInstanton:
    legs: tuple
    free_end: bool = False

    @property
    def depth(self):
        return len(self.legs) - 1

    @property
    def source(self):
        return self.legs[0].source

    @property
    def target(self):
        return self.legs[-1].target

    @property
    def sign(self):
        return int(np.prod([leg.sign for leg in self.legs]))

    @property
    def label(self):
        return "|".join(leg.label for leg in self.legs) + ("|*" if self.free_end else "")


@dataclass(frozen=True, eq=False)
class UnstableSphereMesh:
    rest_point: RestPoint
    radius: float
    frame: np.ndarray
    parameters: np.ndarray

    def direction(self, theta):
        """Unit direction for the parameter ``theta`` (turns, or the sign for index 1)."""
        k = self.frame.shape[1]
        if k == 1:
            return self.frame[:, 0] * (1.0 if theta >= 0 else -1.0)
        c, s = cos_sin_turn(theta)
        return c * self.frame[:, 0] + s * self.frame[:, 1]

    def points(self):
        return np.array([self.rest_point.position + self.radius * self.direction(t)
                         for t in self.parameters])


def cos_sin_turn(turns: float):
    """``(cos, sin)`` of ``2 pi turns``, exact at multiples of a quarter turn."""
    r = turns % 1.0
    q = round(4 * r)
    a = 2 * math.pi * (r - q / 4)
    c, s = math.cos(a), math.sin(a)
    for _ in range(q % 4):
        c, s = -s, c
    return c, s


def unstable_frame(rp: RestPoint) -> np.ndarray:
    """Orthonormal basis of the unstable space with the reference orientation."""
    B = rp.unstable_basis
    if B.shape[1] == 0:
        return B
    Q, R = np.linalg.qr(B)
    return Q * np.sign(np.diag(R))


def unstable_sphere_mesh(rp: RestPoint, density: int = MESH_DENSITY,
                         radius: float = SEED_RADIUS) -> UnstableSphereMesh:
    k = rp.index
    if k == 1:
        params = np.array([1.0, -1.0])
    elif k == 2:
        params = (np.arange(density) + 0.5) / density
    else:
        raise InstantonError(f"unstable spheres of dimension {k - 1} are not supported")
    return UnstableSphereMesh(rp, radius, unstable_frame(rp), params)


@dataclass
class Shot:
    theta: float
    direction: np.ndarray
    trajectory: Trajectory
    limit: int | None
    deck: tuple

    @property
    def signature(self):
        return (self.limit, self.deck)


@dataclass
class Transition:
    theta: float
    shot: Shot | None
    left: Shot | None = None
    right: Shot | None = None

    @property
    def saddle(self):
        return None if self.shot is None else self.shot.limit

    @property
    def resolved(self):
        return self.shot is not None


@dataclass
class Sweep:
    source: int
    mesh: UnstableSphereMesh
    shots: list
    transitions: list


# ---------------------------------------------------------------------------
# Shooting

def _shoot(ctx: _Context, mesh: UnstableSphereMesh, theta: float, tol=SHOT_TOL) -> Shot:
    key = (ctx.ordinal(mesh.rest_point), float(theta), mesh.radius, tol)
    if key in ctx.shots:
        return ctx.shots[key]
    d = mesh.direction(theta)
    start = mesh.rest_point.position + mesh.radius * d
    traj = integrate(ctx.field, start, (0.0, T_MAX), tol, rest_points=ctx.rest_points,
                     escape_tol=ESCAPE_TOL)
    traj.limit_backward = mesh.rest_point
    limit = None if traj.limit_forward is None else ctx.ordinal(traj.limit_forward)
    shot = Shot(float(theta), d, traj, limit, traj.deck() if limit is not None else ())
    ctx.shots[key] = shot
    return shot


def _refine(ctx, mesh, a, sa, b, sb, source_index, theta_tol, out):
    if sa.signature == sb.signature:
        return
    while b - a > theta_tol:
        m = 0.5 * (a + b)
        if m <= a or m >= b:
            break
        sm = _shoot(ctx, mesh, m)
        if sm.signature not in (sa.signature, sb.signature) and sm.limit is not None \
                and 0 < ctx.rest_points[sm.limit].index < source_index:
            left = _shoot(ctx, mesh, m - SIDE_OFFSET)
            right = _shoot(ctx, mesh, m + SIDE_OFFSET)
            _refine(ctx, mesh, a, sa, m - SIDE_OFFSET, left, source_index, theta_tol, out)
            out.append(Transition(m, sm, left, right))
            _refine(ctx, mesh, m + SIDE_OFFSET, right, b, sb, source_index, theta_tol, out)
            return
        if sm.signature == sa.signature:
            a, sa = m, sm
        elif sm.signature == sb.signature:
            b, sb = m, sm
        else:
            _refine(ctx, mesh, a, sa, m, sm, source_index, theta_tol, out)
            _refine(ctx, mesh, m, sm, b, sb, source_index, theta_tol, out)
            return
    warnings.warn(f"unresolved cell [{a:.17g}, {b:.17g}] between signatures "
                  f"{sa.signature} and {sb.signature}", UnresolvedCellWarning, stacklevel=3)
    out.append(Transition(0.5 * (a + b), None, sa, sb))


def sweep(field: FieldSpec, x: RestPoint, mesh_density: int = MESH_DENSITY,
          theta_tol: float = THETA_TOL, radius: float = SEED_RADIUS) -> Sweep:
    """Shoot the unstable sphere of ``x`` and locate all signature changes."""
    ctx = context(field)
    i = ctx.ordinal(x)
    key = (i, mesh_density, theta_tol, radius)
    if key in ctx.sweeps:
        return ctx.sweeps[key]
    mesh = unstable_sphere_mesh(ctx.rest_points[i], mesh_density, radius)
    shots = [_shoot(ctx, mesh, t) for t in mesh.parameters]
    transitions = []
    if x.index == 2:
        m = len(shots)
        for j in range(m):
            a, sa = shots[j].theta, shots[j]
            if j + 1 < m:
                b, sb = shots[j + 1].theta, shots[j + 1]
            else:
                b, sb = shots[0].theta + 1.0, shots[0]
            found = []
            _refine(ctx, mesh, a, sa, b, sb, x.index, theta_tol, found)
            transitions.extend(found)
    result = Sweep(i, mesh, shots, transitions)
    ctx.sweeps[key] = result
    return result


# ---------------------------------------------------------------------------
# Instantons

def anchor_level(field: FieldSpec, x: RestPoint, y: RestPoint, rest_points) -> float:
    """Midpoint of the Lyapunov values, nudged off critical values."""
    fx, fy = field.f(x.position), field.f(y.position)
    level = 0.5 * (fx + fy)
    gap = fx - fy
    critical = [field.f(z.position) for z in rest_points]
    if any(abs(c - level) <= 1e-9 * (1 + abs(level)) for c in critical):
        level -= 1e-3 * gap
    return level


def _make_instanton(ctx: _Context, x: RestPoint, y: RestPoint, shot: Shot) -> Instanton:
    field = ctx.field
    level = anchor_level(field, x, y, ctx.rest_points)
    start = shot.trajectory.points[0]
    try:
        anchor, first = flow_to_level(field, None, start, level, SHOT_TOL,
                                      rest_points=ctx.rest_points, return_trajectory=True)
    except LevelNotReached as exc:
        raise InstantonError(f"anchor level not reached: {exc}") from None
    second = integrate(field, anchor, (0.0, T_MAX), SHOT_TOL, rest_points=ctx.rest_points,
                       escape_tol=ESCAPE_TOL)
    if second.limit_forward is None or ctx.ordinal(second.limit_forward) != ctx.ordinal(y):
        raise InstantonError("orbit through the anchor does not reach the target")
    rep = concatenate(first, second).shifted(-first.t[-1])
    rep.limit_backward = x
    rep.limit_forward = y
    rep.meta["level"] = level
    deck = tuple(int(v) for v in np.round((rep.points[-1] - rep.points[0] - (
        y.position - x.position)) / field.domain.periods)) if field.domain.is_torus else ()
    sign = _reference_sign(ctx, x, y, rep)
    return Instanton(x, y, anchor, rep, sign, shot.direction.copy(), deck)


def _transport_frame(ctx: _Context, x: RestPoint, y: RestPoint, traj: Trajectory):
    """Carry the reference unstable frame of ``x`` along ``traj`` until it is near ``y``."""
    field = ctx.field
    n, k = field.dim, x.index
    V0 = unstable_frame(x)
    radius = CAPTURE_RADIUS * min(1.0, y.spectral_margin)

    def rhs(state):
        p = state[:n]
        V = state[n:].reshape(n, k)
        return np.concatenate([field.rhs(p.tolist()), (field.jacobian(p) @ V).ravel()])

    stepper = Stepper(rhs, 0.0, np.concatenate([traj.points[0], V0.ravel()]), SHOT_TOL)
    while stepper.t < T_MAX:
        stepper.step(T_MAX)
        p = stepper.y[:n]
        Q, R = np.linalg.qr(stepper.y[n:].reshape(n, k))
        Q = Q * np.sign(np.diag(R))
        stepper.reset(np.concatenate([p, Q.ravel()]))
        if np.linalg.norm(field.domain.displacement(y.position, p)) <= radius:
            return p, Q
    raise IntegrationError("frame transport did not reach the target")


def _reference_sign(ctx, x, y, traj) -> int:
    p, V = _transport_frame(ctx, x, y, traj)
    X = ctx.field(p)
    Pinv = y.dual_basis
    ks = y.dim - y.index
    cx = Pinv @ X
    cv = Pinv @ V
    xs = cx[:ks]
    alpha = (xs @ cv[:ks]) / (xs @ xs)
    M = np.vstack([alpha, cv[ks:] - np.outer(cx[ks:], alpha)])
    det = float(np.linalg.det(M))
    scale = float(np.prod(np.linalg.norm(M, axis=1)))
    if scale == 0 or abs(det) < DEGENERACY_TOL * scale:
        raise DegenerateFrame(f"frame comparison is degenerate (|det| / rows = "
                              f"{abs(det) / scale if scale else 0:.3g})")
    return 1 if det > 0 else -1


def _gap_check(x, y):
    if x.index - y.index != 1:
        raise IndexGapError(
            f"index gap {x.index - y.index} != 1; instantons form families of dimension "
            f"{x.index - y.index - 1} (use trace_family for gap 2)")


def find_instantons(field: FieldSpec, x, y, mesh_density: int = MESH_DENSITY,
                    tol: float = THETA_TOL) -> list[Instanton]:
    """Instantons from ``x`` to ``y`` (index gap 1), sorted and labelled."""
    ctx = context(field)
    x, y = resolve(field, x), resolve(field, y)
    _gap_check(x, y)
    ctx.require_lyapunov()
    key = (ctx.ordinal(x), ctx.ordinal(y), mesh_density, tol)
    if key in ctx.instantons:
        return ctx.instantons[key]
    j = ctx.ordinal(y)
    if x.index == 1:
        sw = sweep(field, x, mesh_density, tol)
        shots = [s for s in sw.shots if s.limit == j]
    elif x.index == 2:
        sw = sweep(field, x, mesh_density, tol)
        shots = [tr.shot for tr in sw.transitions if tr.resolved and tr.saddle == j]
    else:
        raise InstantonError(f"sources of index {x.index} are not supported")
    found = []
    for shot in shots:
        inst = _make_instanton(ctx, x, y, shot)
        if all(field.domain.distance(inst.anchor_point, o.anchor_point) >= ANCHOR_DEDUP
               for o in found):
            found.append(inst)
    found.sort(key=lambda i: (i.deck, tuple(np.round(field.domain.wrap(i.anchor_point), 8))))
    ix, iy = ctx.ordinal(x), ctx.ordinal(y)
    labelled = [Instanton(i.source, i.target, i.anchor_point, i.representative, i.sign,
                          i.departure_direction, i.deck, f"#{ix}>#{iy}:{n}")
                for n, i in enumerate(found)]
    ctx.instantons[key] = labelled
    return labelled


def instanton_table(field: FieldSpec, mesh_density: int = MESH_DENSITY,
                    tol: float = THETA_TOL) -> dict:
    """Instantons for every index-gap-1 pair, keyed by census ordinals."""
    ctx = context(field)
    table = {}
    for i, x in enumerate(ctx.rest_points):
        for j, y in enumerate(ctx.rest_points):
            if x.index - y.index == 1:
                table[(i, j)] = find_instantons(field, x, y, mesh_density, tol)
    return table


def orientation_sign(rp: RestPoint, basis) -> int:
    """Sign of a chosen basis of the unstable space relative to the reference one."""
    basis = np.asarray(basis, dtype=float).reshape(rp.dim, rp.index)
    if rp.index == 0:
        return 1
    P, k = rp.basis
    coords = rp.dual_basis[k:] @ basis
    det = float(np.linalg.det(coords))
    if abs(det) < 1e-12:
        raise DegenerateFrame("given basis does not span the unstable space")
    return 1 if det > 0 else -1


def instanton_sign(inst: Instanton, orientations=None) -> int:
    """Sign of ``inst`` for chosen unstable-space bases.

    ``orientations`` maps rest points (RestPoint, ordinal or label) to
    bases; missing entries use the reference orientation.
    """
    if inst.source.index - inst.target.index != 1:
        raise IndexGapError("signs are defined for index gap 1 only")
    orientations = orientations or {}

    def lookup(rp):
        for key, basis in orientations.items():
            if key is rp:
                return basis
            if isinstance(key, RestPoint) and np.allclose(key.position, rp.position, atol=1e-6):
                return basis
            if isinstance(key, tuple) and np.allclose(key, rp.position, atol=1e-6):
                return basis
        return None

    s = inst.sign
    for rp in (inst.source, inst.target):
        b = lookup(rp)
        if b is not None:
            s *= orientation_sign(rp, b)
    return s


def verify_instanton(field: FieldSpec, inst: Instanton, tol: float = SHOT_TOL) -> bool:
    """Re-integrate from the anchor in both directions and confirm both limits."""
    ctx = context(field)
    fwd = integrate(field, inst.anchor_point, (0.0, T_MAX), tol, rest_points=ctx.rest_points)
    bwd = integrate(field, inst.anchor_point, (0.0, -T_MAX), tol, rest_points=ctx.rest_points,
                    escape_tol=None)
    return (fwd.limit_forward is not None and bwd.limit_backward is not None
            and ctx.ordinal(fwd.limit_forward) == ctx.ordinal(inst.target)
            and ctx.ordinal(bwd.limit_backward) == ctx.ordinal(inst.source))


# ---------------------------------------------------------------------------
# Strata

def stratum_dimension(x: RestPoint, y: RestPoint, k: int):
    if k < 0:
        raise ValueError("k must be non-negative")
    d = x.index - y.index - 1 - k
    return d if d >= 0 else "empty"


def stratum_pieces(field: FieldSpec, x, y, k: int):
    """Chains ``x = y0 > y1 > ... > y(k+1) = y`` of rest points with their dimensions."""
    ctx = context(field)
    x, y = resolve(field, x), resolve(field, y)
    ix, iy = ctx.ordinal(x), ctx.ordinal(y)
    mids = [i for i, z in enumerate(ctx.rest_points) if y.index < z.index < x.index]
    pieces = []
    for combo in itertools.permutations(mids, k):
        chain = (ix,) + combo + (iy,)
        idx = [ctx.rest_points[c].index for c in chain]
        if all(a > b for a, b in zip(idx, idx[1:])):
            dim = sum(a - b - 1 for a, b in zip(idx, idx[1:]))
            pieces.append((chain, dim))
    pieces.sort()
    return pieces


def enumerate_broken(field: FieldSpec, x, y, table: dict | None = None, max_depth: int = 1,
                     with_free_end: bool = False) -> dict:
    """Broken instantons from ``x`` to ``y`` built from gap-1 legs, keyed by depth.

    With ``with_free_end`` the chains from ``x`` to every rest point ``z``
    with ``ind z >= ind y`` are returned instead (the strata of the
    compactified unstable set, whose last piece is a free orbit in W-_z).
    """
    ctx = context(field)
    x, y = resolve(field, x), resolve(field, y)
    if table is None:
        table = instanton_table(field)
    ix, iy = ctx.ordinal(x), ctx.ordinal(y)
    strata = {k: [] for k in range(max_depth + 1)}

    def extend(chain, node):
        legs_so_far = len(chain)
        if with_free_end:
            if legs_so_far and legs_so_far - 1 <= max_depth:
                strata[legs_so_far - 1].append(BrokenInstanton(tuple(chain), True))
        elif node == iy and legs_so_far:
            if legs_so_far - 1 <= max_depth:
                strata[legs_so_far - 1].append(BrokenInstanton(tuple(chain)))
            return
        if legs_so_far > max_depth:
            return
        for (a, b), insts in sorted(table.items()):
            if a != node or ctx.rest_points[b].index < y.index:
                continue
            for inst in insts:
                extend(chain + [inst], b)

    extend([], ix)
    return strata


# ---------------------------------------------------------------------------
# Families

@dataclass
class BrokenEnd:
    theta: float
    end: int
    broken: BrokenInstanton

    @property
    def product_sign(self):
        return self.broken.sign


@dataclass
class Family:
    label: str
    theta_start: float
    theta_end: float
    signature: tuple
    samples: list
    initial: BrokenEnd | None
    terminal: BrokenEnd | None

    @property
    def orientation(self):
        """Arc orientation induced by the leg signs, if the two ends agree."""
        if self.initial is None or self.terminal is None:
            return None
        a = -self.initial.product_sign
        b = self.terminal.product_sign
        return a if a == b else 0


@dataclass
class FamilyReport:
    source: RestPoint
    target: RestPoint
    families: list
    depth_one: list
    usage: dict
    signed_sum: int
    oriented_sum: int
    coherent: bool
    exhausts_once: bool
    saddle_counts: dict
    even_per_saddle: bool
    notes: list = dc_field(default_factory=list)


def _leg_into(ctx, insts, direction):
    for inst in insts:
        if np.linalg.norm(inst.departure_direction - direction) <= 1e-6:
            return inst
    return None


def _branch_from(ctx, saddle: RestPoint, insts, side_shot: Shot):
    """Leg out of ``saddle`` followed by the side shot after passing near it."""
    field = ctx.field
    pts = side_shot.trajectory.points
    d = field.domain.displacement(saddle.position[:, None], pts.T).T
    j = int(np.argmin(np.linalg.norm(d, axis=1)))
    P, k = saddle.basis
    coord = float((saddle.dual_basis[k:] @ d[j])[0])
    u = saddle.unstable_basis[:, 0]
    matches = [i for i in insts if np.sign(i.departure_direction @ u) == np.sign(coord)]
    return matches[0] if len(matches) == 1 else None


def trace_family(field: FieldSpec, x, y, steps: int = MESH_DENSITY,
                 tol: float = THETA_TOL) -> FamilyReport:
    """Arcs of directions on the unstable circle of ``x`` whose orbits reach ``y``.

    Each arc is one family of instantons; its ends are the broken
    instantons through the intermediate saddles where the arc stops.
    """
    ctx = context(field)
    x, y = resolve(field, x), resolve(field, y)
    if x.index - y.index != 2:
        raise IndexGapError(f"trace_family needs index gap 2, got {x.index - y.index}")
    if x.index != 2:
        raise InstantonError("only sources of index 2 are supported")
    ctx.require_lyapunov()
    sw = sweep(field, x, steps, tol)
    ix, iy = ctx.ordinal(x), ctx.ordinal(y)
    table = instanton_table(field, steps, tol)
    depth_one = enumerate_broken(field, x, y, table, 1)[1]
    trs = sorted(sw.transitions, key=lambda t: t.theta % 1.0)
    families = []
    notes = []
    if not trs:
        sigs = {s.signature for s in sw.shots}
        if any(sig[0] == iy for sig in sigs):
            notes.append("closed family without boundary")
            families.append(Family("F0", 0.0, 1.0, sw.shots[0].signature,
                                   [(s.theta, s.trajectory) for s in sw.shots], None, None))
    used = {b.label: 0 for b in depth_one}
    m = len(trs)
    for i in range(m):
        a, b = trs[i], trs[(i + 1) % m]
        ta = a.theta % 1.0
        tb = b.theta % 1.0
        if i + 1 >= m or tb <= ta:
            tb += 1.0
        right = a.right
        if right is None or right.limit != iy:
            continue
        if not a.resolved or not b.resolved:
            raise ResolutionError(f"family end near theta = {ta:.6g} or {tb:.6g} is unresolved")
        if b.left is not None and b.left.signature != right.signature:
            raise ResolutionError("arc signature changes between its ends")
        ends = []
        for tr, side, end in ((a, a.right, -1), (b, b.left, +1)):
            s = ctx.rest_points[tr.saddle]
            first = _leg_into(ctx, table.get((ix, tr.saddle), []), tr.shot.direction)
            second = _branch_from(ctx, s, table.get((tr.saddle, iy), []), side)
            if first is None or second is None:
                raise ResolutionError(f"arc end at theta = {tr.theta:.6g} matches no broken "
                                      f"instanton through {ctx.label(s)}")
            broken = BrokenInstanton((first, second))
            if broken.label not in used:
                raise ResolutionError(f"{broken.label} is not in the depth-1 stratum")
            used[broken.label] += 1
            ends.append(BrokenEnd(tr.theta % 1.0, end, broken))
        samples = []
        for s in sw.shots:
            t = s.theta if s.theta >= ta else s.theta + 1.0
            if ta < t < tb:
                samples.append((t, s.trajectory))
        families.append(Family(f"F{len(families)}", ta, tb, right.signature, samples,
                               ends[0], ends[1]))
    signed = sum(f.initial.product_sign + f.terminal.product_sign
                 for f in families if f.initial is not None)
    oriented = sum(f.initial.end * f.initial.product_sign + f.terminal.end * f.terminal.product_sign
                   for f in families if f.initial is not None)
    coherent = all(f.orientation not in (0,) for f in families)
    saddle_counts = {}
    for b in depth_one:
        mid = ctx.label(b.legs[0].target)
        saddle_counts[mid] = saddle_counts.get(mid, 0) + used[b.label]
    return FamilyReport(x, y, families, depth_one, used, signed, oriented, coherent,
                        all(v == 1 for v in used.values()), saddle_counts,
                        all(v % 2 == 0 for v in saddle_counts.values()), notes)
