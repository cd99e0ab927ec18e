"""Integer chain complexes, Smith normal form, and incidence complexes of corner posets."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dc_field
from fractions import Fraction

import numpy as np

from .errors import InstantonError, RelationError, ResolutionError


# ---------------------------------------------------------------------------
# Smith normal form

def _as_int_rows(A):
    A = np.asarray(A, dtype=object)
    if A.ndim != 2:
        raise ValueError("expected a 2-d integer matrix")
    out = []
    for row in A.tolist():
        r = []
        for v in row:
            iv = int(v)
            if iv != v:
                raise ValueError(f"non-integer entry {v!r}")
            r.append(iv)
        out.append(r)
    return out, A.shape


def _identity(n):
    return [[int(i == j) for j in range(n)] for i in range(n)]


def smith_normal_form(A):
    """``(D, U, V)`` with ``U @ A @ V == D`` and ``U``, ``V`` unimodular.

    ``D`` is diagonal with non-negative entries ``d1 | d2 | ...``.  All
    arithmetic is on Python integers; the pivot is always the entry of
    least absolute value in the remaining block.
    """
    M, (m, n) = _as_int_rows(A)
    U, V = _identity(m), _identity(n)

    def swap_rows(i, j):
        M[i], M[j] = M[j], M[i]
        U[i], U[j] = U[j], U[i]

    def swap_cols(i, j):
        for R in (M, V):
            for row in R:
                row[i], row[j] = row[j], row[i]

    def add_row(dst, src, q):  # row_dst -= q * row_src
        if q:
            M[dst] = [a - q * b for a, b in zip(M[dst], M[src])]
            U[dst] = [a - q * b for a, b in zip(U[dst], U[src])]

    def add_col(dst, src, q):  # col_dst -= q * col_src
        if q:
            for R in (M, V):
                for row in R:
                    row[dst] -= q * row[src]

    t = 0
    while t < min(m, n):
        entries = [(abs(M[i][j]), i, j) for i in range(t, m) for j in range(t, n) if M[i][j]]
        if not entries:
            break
        _, i, j = min(entries)
        swap_rows(t, i)
        swap_cols(t, j)
        while True:
            p = M[t][t]
            for i in range(t + 1, m):
                add_row(i, t, M[i][t] // p)
            for j in range(t + 1, n):
                add_col(j, t, M[t][j] // p)
            rest = [(abs(M[i][t]), i, "r") for i in range(t + 1, m) if M[i][t]]
            rest += [(abs(M[t][j]), j, "c") for j in range(t + 1, n) if M[t][j]]
            if rest:
                _, k, kind = min(rest)
                if kind == "r":
                    swap_rows(t, k)
                else:
                    swap_cols(t, k)
                continue
            bad = next(((i, j) for i in range(t + 1, m) for j in range(t + 1, n)
                        if M[i][j] % p), None)
            if bad is None:
                break
            add_row(t, bad[0], -1)
        if M[t][t] < 0:
            M[t] = [-a for a in M[t]]
            U[t] = [-a for a in U[t]]
        t += 1
    arr = lambda R, shape: np.array(R, dtype=object).reshape(shape)
    return arr(M, (m, n)), arr(U, (m, m)), arr(V, (n, n))


def invariant_factors(A) -> list[int]:
    D, _, _ = smith_normal_form(A)
    return [int(D[i, i]) for i in range(min(D.shape)) if D[i, i] != 0]


def integer_rank(A) -> int:
    A = np.asarray(A, dtype=object)
    if A.size == 0:
        return 0
    return len(invariant_factors(A))


def rational_rank(A) -> int:
    """Rank over Q by fraction-exact Gaussian elimination."""
    A = np.asarray(A, dtype=object)
    if A.size == 0:
        return 0
    rows = [[Fraction(int(v)) for v in row] for row in A.tolist()]
    rank = 0
    ncols = len(rows[0])
    for c in range(ncols):
        piv = next((r for r in range(rank, len(rows)) if rows[r][c] != 0), None)
        if piv is None:
            continue
        rows[rank], rows[piv] = rows[piv], rows[rank]
        for r in range(len(rows)):
            if r != rank and rows[r][c] != 0:
                f = rows[r][c] / rows[rank][c]
                rows[r] = [a - f * b for a, b in zip(rows[r], rows[rank])]
        rank += 1
    return rank


# ---------------------------------------------------------------------------
# Chain complexes

@dataclass
class HomologyGroup:
    betti: int
    torsion: list

    def __str__(self):
        parts = [f"Z^{self.betti}"] if self.betti else []
        parts += [f"Z/{t}" for t in self.torsion]
        return " + ".join(parts) or "0"


def _zeros(r, c):
    return np.zeros((r, c), dtype=object)


@dataclass
class ChainComplex:
    """Free graded complex with labelled generators.

    With ``direction == "chain"`` ``maps[k]`` is the boundary
    ``C_k -> C_(k-1)`` of shape ``(rank C_(k-1), rank C_k)``; with
    ``"cochain"`` it is ``d^k: C^k -> C^(k+1)`` of shape
    ``(rank C^(k+1), rank C^k)``.  Missing maps are zero.
    """

    labels: dict
    maps: dict
    direction: str = "chain"

    def __post_init__(self):
        if self.direction not in ("chain", "cochain"):
            raise ValueError("direction must be 'chain' or 'cochain'")
        self.labels = {int(k): list(v) for k, v in sorted(self.labels.items())}
        seen = set()
        for v in self.labels.values():
            for lab in v:
                if lab in seen:
                    raise ValueError(f"duplicate generator label {lab!r}")
                seen.add(lab)
        maps = {}
        for k, M in self.maps.items():
            M = np.asarray(M, dtype=object)
            src, dst = (k, k - 1) if self.direction == "chain" else (k, k + 1)
            shape = (self.rank(dst), self.rank(src))
            if M.size == 0:
                M = _zeros(*shape)
            if M.shape != shape:
                raise ValueError(f"map in degree {k} has shape {M.shape}, expected {shape}")
            maps[int(k)] = M
        self.maps = maps

    @property
    def degrees(self):
        return sorted(self.labels)

    def rank(self, k):
        return len(self.labels.get(k, []))

    @property
    def ranks(self):
        lo, hi = min(self.degrees), max(self.degrees)
        return tuple(self.rank(k) for k in range(lo, hi + 1))

    def map(self, k):
        if k in self.maps:
            return self.maps[k]
        src, dst = (k, k - 1) if self.direction == "chain" else (k, k + 1)
        return _zeros(self.rank(dst), self.rank(src))

    def check(self):
        """Raise :class:`RelationError` unless consecutive maps compose to zero."""
        violations = []
        step = -1 if self.direction == "chain" else 1
        for k in self.degrees:
            a, b = self.map(k), self.map(k + step)
            if a.size == 0 or b.size == 0:
                continue
            comp = b.dot(a)
            for (i, j), v in np.ndenumerate(comp):
                if v != 0:
                    src = self.labels[k][j]
                    dst = self.labels[k + 2 * step][i]
                    violations.append((k, src, dst, int(v)))
        if violations:
            k, src, dst, v = violations[0]
            raise RelationError(f"composite of maps from degree {k} is nonzero: "
                                f"entry ({dst}, {src}) = {v}", violations)

    def to_text(self):
        kind = "chain_complex" if self.direction == "chain" else "cochain_complex"
        lines = [f"type: {kind}"]
        for k in self.degrees:
            lines.append(f"degree {k}: " + " ".join(self.labels[k]))
        for k in sorted(self.maps):
            M = self.maps[k]
            hi_deg, lo_deg = (k, k - 1) if self.direction == "chain" else (k + 1, k)
            for (i, j), v in np.ndenumerate(M):
                if v != 0:
                    if self.direction == "chain":
                        hi, lo = self.labels[k][j], self.labels[k - 1][i]
                    else:
                        hi, lo = self.labels[k + 1][i], self.labels[k][j]
                    lines.append(f"{hi} {lo} {int(v)}")
        return "\n".join(lines) + "\n"


def homology(complex_: ChainComplex, use_rationals: bool = False) -> dict:
    """Homology (or cohomology, for cochain complexes) in each degree via SNF."""
    complex_.check()
    out = {}
    chain = complex_.direction == "chain"
    for k in complex_.degrees:
        outgoing = complex_.map(k)
        incoming = complex_.map(k + 1) if chain else complex_.map(k - 1)
        r_out = rational_rank(outgoing) if use_rationals else integer_rank(outgoing)
        if use_rationals:
            r_in, torsion = rational_rank(incoming), []
        else:
            factors = invariant_factors(incoming) if incoming.size else []
            r_in = len(factors)
            torsion = [f for f in factors if f > 1]
        out[k] = HomologyGroup(complex_.rank(k) - r_out - r_in, torsion)
    return out


def betti_numbers(groups: dict) -> tuple:
    return tuple(groups[k].betti for k in sorted(groups))


def build_morse_complex(rest_points, signed_counts: dict, labels=None) -> ChainComplex:
    """Morse complex graded by index, ``d(x) = sum_y n(x, y) y`` over ``ind y = ind x - 1``.

    ``signed_counts`` maps ``(i, j)`` (positions in ``rest_points``) to the
    signed instanton count; every index-gap-1 pair must be present.
    """
    labels = labels or [f"#{i}" for i in range(len(rest_points))]
    by_degree = {}
    for i, rp in enumerate(rest_points):
        by_degree.setdefault(rp.index, []).append(i)
    dim = max((rp.dim for rp in rest_points), default=0)
    for k in range(0, dim + 1):
        by_degree.setdefault(k, [])
    maps = {}
    missing = []
    for k in sorted(by_degree):
        if k == 0:
            continue
        rows, cols = by_degree.get(k - 1, []), by_degree[k]
        M = _zeros(len(rows), len(cols))
        for c, i in enumerate(cols):
            for r, j in enumerate(rows):
                if (i, j) not in signed_counts:
                    missing.append((labels[i], labels[j]))
                    continue
                M[r, c] = int(signed_counts[(i, j)])
        maps[k] = M
    if missing:
        raise InstantonError(f"missing signed counts for pairs {missing}")
    lab = {k: [labels[i] for i in v] for k, v in by_degree.items()}
    return ChainComplex(lab, maps, "chain")


def morse_complex(field, mesh_density: int | None = None):
    """Full pipeline: census, instanton table, signs and the Morse complex."""
    from . import moduli

    ctx = moduli.context(field)
    table = moduli.instanton_table(field, **({"mesh_density": mesh_density} if mesh_density else {}))
    counts = {key: sum(i.sign for i in insts) for key, insts in table.items()}
    return build_morse_complex(ctx.rest_points, counts), table


# ---------------------------------------------------------------------------
# Corner posets

@dataclass
class CornerReport:
    passes: bool
    violations: list


@dataclass
class CornerPoset:
    """Components of a manifold with corners graded by dimension, with incidences.

    ``incidence[(a, b)]`` is ``I(a, b)`` for ``dim a = dim b + 1``;
    ``closure[a]`` lists the components in the closure of ``a`` (including
    ``a``); ``orientations`` records the declared orientation symbol.
    """

    components: dict
    incidence: dict
    closure: dict = dc_field(default_factory=dict)
    orientations: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.components = {int(k): list(v) for k, v in sorted(self.components.items())}
        self.dim_of = {}
        for k, labs in self.components.items():
            for lab in labs:
                if lab in self.dim_of:
                    raise ValueError(f"duplicate component label {lab!r}")
                self.dim_of[lab] = k
        inc = {}
        for (a, b), v in self.incidence.items():
            if a not in self.dim_of or b not in self.dim_of:
                raise ValueError(f"incidence ({a}, {b}) names an unknown component")
            if self.dim_of[a] != self.dim_of[b] + 1:
                raise ValueError(f"incidence ({a}, {b}) is not between adjacent dimensions")
            v = int(v)
            if v not in (-1, 0, 1):
                raise ValueError(f"incidence ({a}, {b}) = {v} is not in {{-1, 0, 1}}")
            if v:
                inc[(a, b)] = v
        self.incidence = inc
        if not self.closure:
            self.closure = self._generated_closure()
        else:
            self.closure = {a: set(c) | {a} for a, c in self.closure.items()}
            for lab in self.dim_of:
                self.closure.setdefault(lab, {lab})
        for (a, b) in self.incidence:
            if b not in self.closure[a]:
                raise ValueError(f"I({a}, {b}) is nonzero but {b} is not in the closure of {a}")
        for lab in self.dim_of:
            self.orientations.setdefault(lab, 1)

    def _generated_closure(self):
        down = {lab: set() for lab in self.dim_of}
        for (a, b) in self.incidence:
            down[a].add(b)
        closure = {}
        for k in sorted(self.components):
            for lab in self.components[k]:
                c = {lab}
                for b in down[lab]:
                    c |= closure[b]
                closure[lab] = c
        return closure

    @property
    def dims(self):
        return sorted(self.components)

    @property
    def counts(self):
        if not self.components:
            return ()
        return tuple(len(self.components.get(k, [])) for k in range(max(self.components) + 1))

    def I(self, a, b):
        return self.incidence.get((a, b), 0)

    def reoriented(self, signs: dict) -> "CornerPoset":
        """Change orientation of components by ``signs``; ``I(a, b)`` picks up ``s_a s_b``."""
        s = {lab: int(signs.get(lab, 1)) for lab in self.dim_of}
        inc = {(a, b): v * s[a] * s[b] for (a, b), v in self.incidence.items()}
        ori = {lab: self.orientations[lab] * s[lab] for lab in self.dim_of}
        return CornerPoset(self.components, inc, self.closure, ori)

    def to_text(self):
        lines = ["type: corner_poset"]
        for k in self.dims:
            lines.append(f"degree {k}: " + " ".join(self.components[k]))
        flipped = [lab for lab in sorted(self.dim_of) if self.orientations[lab] != 1]
        if flipped:
            lines.append("orientation: " + " ".join(f"{lab}=-1" for lab in flipped))
        generated = self._generated_closure()
        for k in self.dims:
            for lab in self.components[k]:
                if self.closure[lab] != generated[lab]:
                    extra = sorted(self.closure[lab] - {lab})
                    lines.append(f"closure {lab}: " + " ".join(extra))
        for k in self.dims:
            for a in self.components[k]:
                for b in self.components.get(k - 1, []):
                    v = self.incidence.get((a, b), 0)
                    if v:
                        lines.append(f"{a} {b} {v}")
        return "\n".join(lines) + "\n"


def point_poset(label="pt"):
    return CornerPoset({0: [label]}, {})


def interval_poset(label="e", ends=None):
    a, b = ends or (f"{label}0", f"{label}1")
    return CornerPoset({0: [a, b], 1: [label]}, {(label, a): -1, (label, b): 1})


def incidence_check(P: CornerPoset) -> CornerReport:
    """Exhaustive test of ``sum_b I(a', b) I(b, a'') = 0`` for ``dim a' = dim a'' + 2``."""
    violations = []
    for k in P.dims:
        for a1 in P.components[k]:
            for a2 in P.components.get(k - 2, []):
                total = sum(P.I(a1, b) * P.I(b, a2) for b in P.components.get(k - 1, []))
                if total:
                    violations.append((a1, a2, total))
    return CornerReport(not violations, violations)


def corner_poset_product(P: CornerPoset, Q: CornerPoset, sep: str = "*") -> CornerPoset:
    """Product poset with graded Leibniz signs."""
    for X in (P, Q):
        rep = incidence_check(X)
        if not rep.passes:
            raise RelationError("input poset fails the incidence relation", rep.violations)
    name = lambda a, b: f"{a}{sep}{b}"
    comps = {}
    for kp in P.dims:
        for kq in Q.dims:
            for a in P.components[kp]:
                for b in Q.components[kq]:
                    comps.setdefault(kp + kq, []).append(name(a, b))
    inc = {}
    for (a1, b1), v in P.incidence.items():
        for lab2 in Q.dim_of:
            inc[(name(a1, lab2), name(b1, lab2))] = v
    for (a2, b2), v in Q.incidence.items():
        for lab1 in P.dim_of:
            inc[(name(lab1, a2), name(lab1, b2))] = (-1) ** P.dim_of[lab1] * v
    closure = {name(a, b): {name(c, d) for c in P.closure[a] for d in Q.closure[b]}
               for a in P.dim_of for b in Q.dim_of}
    ori = {name(a, b): P.orientations[a] * Q.orientations[b] for a in P.dim_of for b in Q.dim_of}
    return CornerPoset(comps, inc, closure, ori)


def disjoint_union(*posets, prefixes=None) -> CornerPoset:
    prefixes = prefixes or [f"u{i}." for i in range(len(posets))]
    comps, inc, closure, ori = {}, {}, {}, {}
    for pre, P in zip(prefixes, posets):
        for k, labs in P.components.items():
            comps.setdefault(k, []).extend(pre + lab for lab in labs)
        for (a, b), v in P.incidence.items():
            inc[(pre + a, pre + b)] = v
        for a, c in P.closure.items():
            closure[pre + a] = {pre + x for x in c}
        for a, o in P.orientations.items():
            ori[pre + a] = o
    return CornerPoset(comps, inc, closure, ori)


def incidence_complex(P: CornerPoset) -> ChainComplex:
    """Cochain complex ``C^k = Maps(P_k, Z)`` with ``d^k(f)(a) = sum_b I(a, b) f(b)``."""
    maps = {}
    for k in P.dims:
        upper = P.components.get(k + 1, [])
        lower = P.components[k]
        M = _zeros(len(upper), len(lower))
        for i, a in enumerate(upper):
            for j, b in enumerate(lower):
                M[i, j] = P.I(a, b)
        maps[k] = M
    labels = {k: list(P.components[k]) for k in P.dims}
    return ChainComplex(labels, maps, "cochain")


def incidence_cohomology(P: CornerPoset, use_rationals: bool = False) -> dict:
    rep = incidence_check(P)
    if not rep.passes:
        raise RelationError("incidence relation fails", rep.violations)
    return homology(incidence_complex(P), use_rationals)


def cube_poset(n: int) -> CornerPoset:
    P = interval_poset("a0")
    for i in range(1, n):
        P = corner_poset_product(P, interval_poset(f"a{i}"))
    return P


def moduli_corner_poset(families, broken=None) -> CornerPoset:
    """Corner poset of a compactified one-dimensional moduli space.

    ``families`` is a :class:`~instanton.moduli.FamilyReport` or a list of
    families; ``broken`` the depth-1 stratum.  Arcs get incidence ``+1``
    with their terminal end and ``-1`` with their initial end.
    """
    if broken is None and hasattr(families, "depth_one"):
        broken = families.depth_one
    fams = families.families if hasattr(families, "families") else list(families)
    known = None if broken is None else [b.label for b in broken]
    vertices, inc, closure = [], {}, {}
    for fam in fams:
        closure[fam.label] = {fam.label}
        for end in (fam.initial, fam.terminal):
            if end is None:
                continue
            lab = end.broken.label
            if known is not None and lab not in known:
                raise ResolutionError(f"family end {lab} is not in the depth-1 stratum")
            if lab not in vertices:
                vertices.append(lab)
            inc[(fam.label, lab)] = inc.get((fam.label, lab), 0) + end.end
            closure[fam.label].add(lab)
    order = known if known is not None else sorted(vertices)
    vertices = [v for v in order if v in vertices]
    return CornerPoset({0: vertices, 1: [f.label for f in fams]}, inc, closure)


# ---------------------------------------------------------------------------
# Text serialisation

def parse_structure(text: str):
    """Read a ``corner_poset``, ``chain_complex`` or ``cochain_complex`` document."""
    kind = None
    labels = {}
    triples = []
    orientation = {}
    closure = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("type:"):
            kind = line.split(":", 1)[1].strip()
        elif line.startswith("degree"):
            head, _, rest = line.partition(":")
            try:
                k = int(head.split()[1])
            except (IndexError, ValueError):
                raise ValueError(f"line {lineno}: bad degree header") from None
            labels[k] = rest.split()
        elif line.startswith("orientation:"):
            for item in line.split(":", 1)[1].split():
                lab, _, v = item.partition("=")
                orientation[lab] = int(v)
        elif line.startswith("closure "):
            head, _, rest = line.partition(":")
            closure[head.split()[1]] = set(rest.split())
        else:
            parts = line.replace(",", " ").split()
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected 'higher lower value'")
            triples.append((parts[0], parts[1], int(parts[2])))
    if kind == "corner_poset":
        inc = {(a, b): v for a, b, v in triples}
        P = CornerPoset(labels, inc, closure)
        P.orientations.update(orientation)
        return P
    if kind in ("chain_complex", "cochain_complex"):
        direction = "chain" if kind == "chain_complex" else "cochain"
        index = {lab: (k, i) for k, labs in labels.items() for i, lab in enumerate(labs)}
        maps = {}
        for hi, lo, v in triples:
            (kh, ih), (kl, il) = index[hi], index[lo]
            if kh != kl + 1:
                raise ValueError(f"entry ({hi}, {lo}) is not between adjacent degrees")
            if direction == "chain":
                M = maps.setdefault(kh, _zeros(len(labels.get(kl, [])), len(labels[kh])))
                M[il, ih] = v
            else:
                M = maps.setdefault(kl, _zeros(len(labels[kh]), len(labels[kl])))
                M[ih, il] = v
        return ChainComplex(labels, maps, direction)
    raise ValueError(f"unknown or missing type: {kind!r}")


def load_structure(path):
    from pathlib import Path

    return parse_structure(Path(path).read_text())
