"""Hyperbolic local models X = Az + g(z) and their two-point boundary problems.

Near a hyperbolic rest point the field is written in adapted coordinates
``z`` (stable block first).  A trajectory with prescribed stable part ``p``
at ``T1`` and unstable part ``q`` at ``T2`` is the fixed point of

    F(z)(t) = e^{(t-T1)A} p + e^{(t-T2)A} q
              + int_{T1}^{t} e^{(t-s)A} (g+(z(s)), 0) ds
              - int_{t}^{T2} e^{(t-s)A} (0, g-(z(s))) ds,

which is a contraction on a small ball once the constants C, rho', B are
known.  Everything here is in adapted coordinates unless noted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.linalg import expm
from scipy.stats import qmc

from .errors import ContractionError, EvaluationError, NonHyperbolicError
from .field import DomainSpec, FieldSpec, RestPoint, classify_rest_point
from .flow import Trajectory

MARGIN_SLACK = 0.05
DECAY_SLACK = 0.1
DEFAULT_NODES = 512
MAX_ITER = 200
CHI_NOTE = ("chi_2(p, q, 0) is taken to be (0, q): the line chi_2^-(p, q, 0) = 0 is read "
            "as a misprint for chi_2^+(p, q, 0) = 0")


# ---------------------------------------------------------------------------
# Smooth cut-off

def _h(s):
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        return np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)


def bump(r, r_cut):
    """Smooth radial cut-off: 1 for ``r <= r_cut/2``, 0 for ``r >= r_cut``."""
    s = np.clip((r_cut - np.asarray(r, dtype=float)) / (0.5 * r_cut), 0.0, 1.0)
    a, b = _h(s), _h(1.0 - s)
    return a / (a + b)


def bump_derivative(r, r_cut):
    s = np.clip((r_cut - np.asarray(r, dtype=float)) / (0.5 * r_cut), 0.0, 1.0)
    a, b = _h(s), _h(1.0 - s)
    with np.errstate(divide="ignore", invalid="ignore"):
        da = np.where(s > 0, a / np.where(s > 0, s, 1.0) ** 2, 0.0)
        db = np.where(s < 1, b / np.where(s < 1, 1.0 - s, 1.0) ** 2, 0.0)
        dphi_ds = (da * b + a * db) / (a + b) ** 2
    return -dphi_ds * 2.0 / r_cut


# ---------------------------------------------------------------------------
# Constants

def hyperbolic_constants(A_s, A_u, margin, margin_slack=MARGIN_SLACK, samples=4000):
    """``(C, rho')`` with ``|e^{tA_s}| <= C e^{-rho' t}`` and ``|e^{-tA_u}| <= C e^{-rho' t}``.

    ``rho' = margin (1 - margin_slack)``; C is the supremum of the scaled
    norms over a time grid long enough for them to have decayed again.
    """
    rho = margin * (1.0 - margin_slack)
    tau_max = max(50.0, 50.0 / margin)
    dt = tau_max / samples
    C = 1.0
    for block in (A_s, -A_u):
        if block.size == 0:
            continue
        step = expm(block * dt)
        M = np.eye(block.shape[0])
        for j in range(1, samples + 1):
            M = M @ step
            C = max(C, float(np.linalg.norm(M, 2)) * math.exp(rho * j * dt))
    return C, rho


def contraction_parameters(C, rho_prime, B, cap=math.inf):
    """``(eta, eps)`` with ``eta <= rho'/(4BC)`` (capped) and ``eps < eta/(4C)``."""
    eta = cap if B <= 0 else min(cap, rho_prime / (4.0 * B * C))
    if not math.isfinite(eta):
        raise ContractionError("eta is unbounded; give a finite cap")
    return eta, eta / (4.0 * C) * (1.0 - 1e-9)


def _sphere_directions(n, count=256, seed=0):
    if n == 1:
        return np.array([[1.0, -1.0]])
    if n == 2:
        a = 2 * math.pi * np.arange(64) / 64
        return np.stack([np.cos(a), np.sin(a)])
    u = qmc.Halton(d=n, scramble=True, seed=seed).random(count)
    from scipy.stats import norm

    v = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12)).T
    v = np.concatenate([v, np.eye(n), -np.eye(n)], axis=1)
    return v / np.linalg.norm(v, axis=0)


@dataclass(frozen=True, eq=False)
class LocalModel:
    """Data of the local problem at one rest point (adapted coordinates)."""

    field: FieldSpec
    rest_point: RestPoint
    A: np.ndarray
    change_of_basis: np.ndarray
    k_plus: int
    r_cut: float
    C: float
    rho_prime: float
    B: float
    eta: float
    eps_contract: float
    margin_slack: float = MARGIN_SLACK
    B_support: float = 0.0
    notes: tuple = ()
    normalization: str = "invariant"

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def k_minus(self):
        return self.n - self.k_plus

    @property
    def rho(self):
        """Decay rate used by the estimates: ``rho' (1 - 0.1)``."""
        return self.rho_prime * (1.0 - DECAY_SLACK)

    @property
    def A_s(self):
        return self.A[: self.k_plus, : self.k_plus]

    @property
    def A_u(self):
        return self.A[self.k_plus:, self.k_plus:]

    @property
    def inverse_basis(self):
        return np.linalg.inv(self.change_of_basis)

    def to_physical(self, z):
        """Map adapted coordinates (shape ``(n,)`` or ``(m, n)``) to the field's chart."""
        z = np.asarray(z, dtype=float)
        return self.rest_point.position + z @ self.change_of_basis.T

    def to_adapted(self, x):
        x = np.asarray(x, dtype=float)
        d = self.field.domain.displacement(self.rest_point.position, x.T).T
        return d @ self.inverse_basis.T

    # raw nonlinearity, vectorised over columns
    def _raw(self, Z):
        X = self.rest_point.position[:, None] + self.change_of_basis @ Z
        return self.inverse_basis @ self.field.values(X) - self.A @ Z

    def _raw_jac(self, Z):
        X = self.rest_point.position[:, None] + self.change_of_basis @ Z
        J = self.field.jacobians(X)
        Pinv, P = self.inverse_basis, self.change_of_basis
        return np.einsum("ij,jkm,kl->ilm", Pinv, J, P) - self.A[:, :, None]

    def _cut(self, Z):
        r = np.linalg.norm(Z, axis=0)
        return bump(r, self.r_cut) * self._raw(Z)

    def g(self, Z):
        """Cut-off nonlinearity, normalised so that the requested restrictions vanish.

        With ``normalization == "invariant"`` we subtract ``g+(0, z-)`` and
        ``g-(z+, 0)``, which keeps both coordinate planes invariant; with
        ``"printed"`` we subtract ``g+(z+, 0)`` and ``g-(0, z-)`` instead.
        ``Z`` has shape ``(n, m)``; returns the same shape.
        """
        Z = np.asarray(Z, dtype=float)
        single = Z.ndim == 1
        if single:
            Z = Z[:, None]
        k = self.k_plus
        out = self._cut(Z)
        if 0 < k < self.n:
            Zs = Z.copy()
            Zs[k:] = 0.0
            Zu = Z.copy()
            Zu[:k] = 0.0
            if self.normalization == "invariant":
                out[:k] -= self._cut(Zu)[:k]
                out[k:] -= self._cut(Zs)[k:]
            else:
                out[:k] -= self._cut(Zs)[:k]
                out[k:] -= self._cut(Zu)[k:]
        return out[:, 0] if single else out

    def _cut_jac(self, Z):
        r = np.linalg.norm(Z, axis=0)
        phi = bump(r, self.r_cut)
        dphi = bump_derivative(r, self.r_cut)
        with np.errstate(invalid="ignore", divide="ignore"):
            grad_phi = np.where(r > 0, dphi / np.where(r > 0, r, 1.0), 0.0) * Z
        return phi * self._raw_jac(Z) + np.einsum("im,jm->ijm", self._raw(Z), grad_phi)

    def g_jacobian(self, Z):
        """Analytic Dg for the corrected, cut-off nonlinearity; shape ``(n, n, m)``."""
        Z = np.asarray(Z, dtype=float)
        k = self.k_plus
        D = self._cut_jac(Z)
        if 0 < k < self.n:
            Zs = Z.copy()
            Zs[k:] = 0.0
            Zu = Z.copy()
            Zu[:k] = 0.0
            if self.normalization == "invariant":
                D[:k, k:] -= self._cut_jac(Zu)[:k, k:]
                D[k:, :k] -= self._cut_jac(Zs)[k:, :k]
            else:
                D[:k, :k] -= self._cut_jac(Zs)[:k, :k]
                D[k:, k:] -= self._cut_jac(Zu)[k:, k:]
        return D

    def vector_field(self, z):
        """The model field ``Az + g(z)`` at a single point."""
        z = np.asarray(z, dtype=float)
        return self.A @ z + self.g(z)

    def slope_bound(self, radius, shells=24):
        """Sampled ``sup |Dg(z)| / |z|`` over the ball of the given radius."""
        dirs = _sphere_directions(self.n)
        radii = radius * np.arange(1, shells + 1) / shells
        Z = np.concatenate([r * dirs for r in radii], axis=1)
        D = self.g_jacobian(Z)
        norms = np.linalg.norm(np.moveaxis(D, -1, 0), ord=2, axis=(1, 2))
        ratio = norms / np.linalg.norm(Z, axis=0)
        if not np.all(np.isfinite(ratio)):
            raise ContractionError("non-finite derivative of g in the cut-off ball")
        return float(ratio.max())


def _self_consistent_eta(model_stub, C, rho_prime, r_cut):
    """Largest ``eta <= r_cut`` with ``eta <= rho' / (4 B(eta) C)``."""

    def ok(eta):
        B = model_stub.slope_bound(eta)
        return 4.0 * B * C * eta <= rho_prime, B

    good, B = ok(r_cut)
    if good:
        return r_cut, B
    hi = r_cut
    lo = None
    for _ in range(40):
        trial = hi / 2
        good, B_trial = ok(trial)
        if good:
            lo, B = trial, B_trial
            break
        hi = trial
    if lo is None:
        raise ContractionError("no admissible contraction radius", suggested_r_cut=hi / 2)
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        good, B_mid = ok(mid)
        if good:
            lo, B = mid, B_mid
        else:
            hi = mid
        if hi - lo <= 1e-6 * lo:
            break
    return lo, B


def build_local_model(field: FieldSpec, x: RestPoint, r_cut: float = 1.0,
                      margin_slack: float = MARGIN_SLACK,
                      normalization: str = "invariant") -> LocalModel:
    """Local model of ``field`` at the hyperbolic rest point ``x``.

    ``normalization`` picks which restrictions of g are removed (see
    :meth:`LocalModel.g`); only the default makes the decay estimates hold
    for long time intervals.

    B is the sampled slope of Dg over the ball the contraction actually
    uses, so eta solves ``eta = min(r_cut, rho'/(4 B(eta) C))``.
    """
    if not x.hyperbolic:
        raise NonHyperbolicError(f"rest point {x} is not hyperbolic")
    if not r_cut > 0:
        raise ValueError("r_cut must be positive")
    if normalization not in ("invariant", "printed"):
        raise ValueError("normalization must be 'invariant' or 'printed'")
    P, k = x.basis
    Pinv = np.linalg.inv(P)
    A = Pinv @ x.linearization @ P
    A[:k, k:] = 0.0
    A[k:, :k] = 0.0
    C, rho_prime = hyperbolic_constants(A[:k, :k], A[k:, k:], x.spectral_margin, margin_slack)
    stub = LocalModel(field, x, A, P, k, r_cut, C, rho_prime, 0.0, r_cut, 0.0, margin_slack,
                      normalization=normalization)
    try:
        B_support = stub.slope_bound(r_cut)
        if B_support * 4.0 * C * r_cut <= rho_prime:
            eta, B = r_cut, B_support
        else:
            eta, B = _self_consistent_eta(stub, C, rho_prime, r_cut)
    except EvaluationError as exc:
        raise ContractionError(f"field evaluation failed inside the cut-off ball: {exc}",
                               suggested_r_cut=r_cut / 2) from None
    if eta < r_cut * 2.0 ** -20:
        raise ContractionError(f"contraction radius {eta:.3g} is negligible against r_cut",
                               suggested_r_cut=2 * eta)
    eta, eps = contraction_parameters(C, rho_prime, B, cap=eta)
    return LocalModel(field, x, A, P, k, r_cut, C, rho_prime, B, eta, eps, margin_slack,
                      B_support, normalization=normalization)


def linear_field(A, half_width: float = 10.0) -> FieldSpec:
    """The linear field ``x -> A x`` on a centred box, for synthetic models."""
    from .expr import Const, Var, add, mul

    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    comps = []
    for i in range(n):
        e = Const(0.0)
        for j in range(n):
            e = add(e, mul(Const(float(A[i, j])), Var(j)))
        comps.append(e)
    domain = DomainSpec.box([(-half_width, half_width)] * n)
    return FieldSpec(domain, tuple(comps), name="linear")


def linear_model(A, r_cut: float = 1.0, **kwargs) -> LocalModel:
    field = linear_field(A)
    x = classify_rest_point(field, np.zeros(len(A)))
    return build_local_model(field, x, r_cut, **kwargs)


# ---------------------------------------------------------------------------
# Boundary problem

@dataclass(frozen=True)
class BoundaryProblem:
    p: np.ndarray
    q: np.ndarray
    T1: float
    T2: float
    N: int = DEFAULT_NODES

    def __post_init__(self):
        object.__setattr__(self, "p", np.atleast_1d(np.asarray(self.p, dtype=float)))
        object.__setattr__(self, "q", np.atleast_1d(np.asarray(self.q, dtype=float)))
        if not self.T1 < self.T2:
            raise ValueError("need T1 < T2")
        if self.N < 16:
            raise ValueError("need at least 16 nodes")

    @property
    def times(self):
        return np.linspace(self.T1, self.T2, self.N)


@dataclass
class SolveReport:
    iterations: int
    changes: list
    ratios: list
    residual: float
    converged: bool
    notes: list = dc_field(default_factory=list)


def _check_problem(model, prob):
    k = model.k_plus
    if prob.p.shape != (k,) or prob.q.shape != (model.n - k,):
        raise ValueError(f"p must have length {k} and q length {model.n - k}"
                         if k else f"q must have length {model.n}")


def _linear_part(model, prob):
    N, k, n = prob.N, model.k_plus, model.n
    h = (prob.T2 - prob.T1) / (N - 1)
    L = np.zeros((N, n))
    Es = expm(model.A_s * h) if k else None
    Eu = expm(-model.A_u * h) if k < n else None
    if k:
        v = prob.p.copy()
        for j in range(N):
            L[j, :k] = v
            v = Es @ v
    if k < n:
        v = prob.q.copy()
        for j in range(N - 1, -1, -1):
            L[j, k:] = v
            v = Eu @ v
    return L, Es, Eu, h


def _integral_terms(model, G, Es, Eu, h):
    N, n = G.shape
    k = model.k_plus
    out = np.zeros_like(G)
    if k:
        gs = G[:, :k]
        I = np.zeros(k)
        for j in range(N - 1):
            I = Es @ I + 0.5 * h * (Es @ gs[j] + gs[j + 1])
            out[j + 1, :k] = I
    if k < n:
        gu = G[:, k:]
        I = np.zeros(n - k)
        for j in range(N - 1, 0, -1):
            I = Eu @ I + 0.5 * h * (gu[j - 1] + Eu @ gu[j])
            out[j - 1, k:] = -I
    return out


def fixed_point_map(model, prob, x, _cache=None):
    """One application of F to the node values ``x`` (shape ``(N, n)``)."""
    L, Es, Eu, h = _cache or _linear_part(model, prob)
    G = model.g(x.T).T
    return L + _integral_terms(model, G, Es, Eu, h)


def solve_boundary_trajectory(model: LocalModel, prob: BoundaryProblem, tol: float = 1e-12,
                              max_iter: int = MAX_ITER, initial=None,
                              check_box: bool = True) -> Trajectory:
    """Fixed-point iteration of F on the node grid until the sup change is below ``tol``.

    Returns a :class:`Trajectory` in adapted coordinates; ``meta`` carries
    the :class:`SolveReport` (per-iteration sup-norm changes and their
    ratios) and the basis matrix.
    """
    _check_problem(model, prob)
    eps = model.eps_contract
    if check_box and (np.linalg.norm(prob.p) > eps or np.linalg.norm(prob.q) > eps):
        raise ContractionError(
            f"|p| = {np.linalg.norm(prob.p):.3g}, |q| = {np.linalg.norm(prob.q):.3g} "
            f"outside the contraction box of radius {eps:.3g}")
    cache = _linear_part(model, prob)
    x = cache[0].copy() if initial is None else np.array(initial, dtype=float)
    if x.shape != (prob.N, model.n):
        raise ValueError("initial iterate has the wrong shape")
    changes, ratios = [], []
    converged = False
    scale = max(1e-300, float(np.abs(cache[0]).max()))
    for it in range(1, max_iter + 1):
        Fx = fixed_point_map(model, prob, x, cache)
        change = float(np.abs(Fx - x).max())
        x = Fx
        if changes and changes[-1] > 1e-12 * scale and change > 1e-14 * scale:
            ratios.append(change / changes[-1])
        changes.append(change)
        if change < tol:
            converged = True
            break
    if not converged:
        raise ContractionError(f"fixed-point iteration did not converge in {max_iter} steps "
                               f"(last change {changes[-1]:.3g})")
    residual = float(np.abs(fixed_point_map(model, prob, x, cache) - x).max())
    report = SolveReport(it, changes, ratios, residual, converged)
    velocities = (model.A @ x.T + model.g(x.T)).T
    traj = Trajectory(prob.times, x, velocities, model.field.field_id + ":adapted", tol,
                      None, status="solved")
    traj.meta.update(report=report, basis=model.change_of_basis, k_plus=model.k_plus)
    return traj


def richardson_error(model: LocalModel, prob: BoundaryProblem, tol: float = 1e-13) -> float:
    """Sup difference between the N-node and (2N-1)-node solutions on shared nodes."""
    coarse = solve_boundary_trajectory(model, prob, tol, check_box=False).points
    fine_prob = BoundaryProblem(prob.p, prob.q, prob.T1, prob.T2, 2 * prob.N - 1)
    fine = solve_boundary_trajectory(model, fine_prob, tol, check_box=False).points
    return float(np.abs(fine[::2] - coarse).max())


# ---------------------------------------------------------------------------
# Decay estimates

@dataclass
class DecayReport:
    rho_fit_plus: float | None
    rho_fit_minus: float | None
    rho: float
    bounds_hold: bool
    passes: bool
    notes: list

    def relative_deviation(self):
        out = {}
        for name, v in (("plus", self.rho_fit_plus), ("minus", self.rho_fit_minus)):
            if v is not None:
                out[name] = (v - self.rho) / self.rho
        return out


def _fit_rate(t, norms):
    y = np.log(norms)
    slope = np.polyfit(t, y, 1)[0]
    return float(slope)


def verify_decay(model: LocalModel, traj: Trajectory, prob: BoundaryProblem,
                 slack: float = DECAY_SLACK) -> DecayReport:
    """Fit exponential rates of the stable and unstable branches and test the bounds.

    Passes iff each fitted rate is at least ``(1 - slack) rho`` and the
    pointwise bounds ``|z+(t)| <= eps C e^{-rho (t - T1)}``,
    ``|z-(t)| <= eps C e^{rho (t - T2)}`` hold with ``eps = eps_contract``.
    """
    t = traj.t
    z = traj.points
    k = model.k_plus
    rho = model.rho
    L = prob.T2 - prob.T1
    window = (t >= prob.T1 + 0.1 * L) & (t <= prob.T2 - 0.1 * L)
    notes = []
    rates = {}
    bounds_ok = True
    eps, C = model.eps_contract, model.C
    branches = (("plus", z[:, :k], -1.0, prob.T1), ("minus", z[:, k:], 1.0, prob.T2))
    for name, block, sign, T in branches:
        if block.shape[1] == 0:
            rates[name] = None
            notes.append(f"{name} branch is empty (dimension 0)")
            continue
        norms = np.linalg.norm(block, axis=1)
        bound = eps * C * np.exp(sign * rho * (t - T))
        if np.any(norms > bound * (1 + 1e-9) + 1e-300):
            bounds_ok = False
            notes.append(f"{name} branch violates the pointwise bound")
        w = norms[window]
        if np.all(w <= 1e-250) or np.max(norms) <= 1e-300:
            rates[name] = None
            notes.append(f"{name} branch is identically zero; fit is degenerate")
            continue
        if np.any(w <= 0):
            rates[name] = None
            notes.append(f"{name} branch vanishes inside the window; fit skipped")
            continue
        slope = _fit_rate(t[window], w)
        rates[name] = -slope if sign < 0 else slope
    rate_ok = all(r is None or r >= (1.0 - slack) * rho for r in rates.values())
    return DecayReport(rates["plus"], rates["minus"], rho, bounds_ok, rate_ok and bounds_ok, notes)


# ---------------------------------------------------------------------------
# Chart maps

def chart_chi(model: LocalModel, p, q, s: float, N: int = DEFAULT_NODES, s_max: float = 1e3,
              tol: float = 1e-12):
    """``(chi_1, chi_2)`` for ``p`` on the stable sphere and ``q`` in the unstable disc.

    For ``s > 0`` the boundary problem on ``[-1/s, 1/s]`` gives
    ``chi_1 = (p, z-(-1/s))`` and ``chi_2 = (z+(1/s), q)``; at ``s = 0``
    the values are ``(p, 0)`` and ``(0, q)`` (see ``CHI_NOTE``).
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if s < 0:
        raise ValueError("s must be non-negative")
    if s == 0:
        return np.concatenate([p, np.zeros_like(q)]), np.concatenate([np.zeros_like(p), q])
    if s >= s_max:
        raise ValueError(f"s = {s} too large: horizon {2 / s:.3g} is below node resolution")
    horizon = 2.0 / s
    scale = float(np.abs(model.A).max())
    nodes = int(min(20000, max(N, math.ceil(8 * horizon * scale) + 1)))
    prob = BoundaryProblem(p, q, -1.0 / s, 1.0 / s, nodes)
    traj = solve_boundary_trajectory(model, prob, tol)
    k = model.k_plus
    chi1 = np.concatenate([p, traj.points[0, k:]])
    chi2 = np.concatenate([traj.points[-1, :k], q])
    return chi1, chi2


def omega_chart(p, q, t):
    """Linear chart ``(p, q, t) -> ((p, t q), (t p, q))`` with ``t = e^{-2/s}``.

    For the linear model with unit rates this is exactly ``chart_chi``
    reparametrised by ``t``; ``t = 0`` gives the broken configuration.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    return np.concatenate([p, t * q]), np.concatenate([t * p, q])
