"""Command-line front end.

Every subcommand reads a field-spec (or poset) file, prints structured
records to standard output and, with ``--out DIR``, writes data files.
Domain failures exit with status 1, usage errors with status 2.
"""
from __future__ import annotations

import argparse
import sys
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import complexes, moduli
from .errors import InstantonError
from .field import check_lyapunov, find_rest_points, load_field
from .local_model import CHI_NOTE, BoundaryProblem, build_local_model, chart_chi, \
    solve_boundary_trajectory, verify_decay
from .records import num, record, vec


@dataclass
class RunConfig:
    command: str
    path: Path
    out: Path | None = None
    seed: int = 0
    args: argparse.Namespace | None = None


def shipped(name: str) -> Path | None:
    ref = resources.files("instanton") / "data" / name
    return Path(str(ref)) if ref.is_file() else None


def _input_path(text: str) -> Path:
    path = Path(text)
    if path.is_file():
        return path
    for candidate in (text, text + ".field", text + ".poset"):
        found = shipped(candidate)
        if found is not None:
            return found
    raise FileNotFoundError(text)


def _point(field, text: str):
    if text.startswith("#"):
        return moduli.resolve(field, text)
    try:
        coords = [float(v) for v in text.replace(" ", "").split(",")]
    except ValueError:
        raise InstantonError(f"cannot read rest point {text!r}; use '#k' or 'a,b,...'") from None
    return moduli.resolve(field, coords)


def _write(cfg: RunConfig, name: str, text: str):
    if cfg.out is None:
        return
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / name).write_text(text)


def _safe(label: str) -> str:
    return label.replace("#", "").replace(">", "-").replace(":", "_").replace("|", "+")


def _rest_point_records(field, rps):
    lines = []
    for i, rp in enumerate(rps):
        lines.append(record("rest_point", ordinal=i, index=rp.index, hyperbolic=rp.hyperbolic,
                            spectral_margin=rp.spectral_margin, position=rp.position,
                            spectrum=list(rp.spectrum), residual=rp.residual,
                            morse_type=rp.morse_type,
                            f=rp.value if rp.value is not None else None))
    return lines


def cmd_rest_points(cfg, out):
    field = load_field(cfg.path)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rps = find_rest_points(field, cfg.args.grid, cfg.args.tol)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out.append(record("census", field=field.field_id, count=len(rps),
                      indices=[rp.index for rp in rps]))
    out.extend(_rest_point_records(field, rps))
    if field.lyapunov is not None:
        rep = check_lyapunov(field, samples=cfg.args.samples, seed=cfg.seed)
        out.append(record("lyapunov", f=str(field.lyapunov), passes=rep.passes,
                          worst_value=rep.worst_value, worst_point=rep.worst_point,
                          samples=rep.samples))
    return 0


def _instanton_record(inst):
    return record("instanton", label=inst.label, source=f"#{_ord(inst.source)}",
                  target=f"#{_ord(inst.target)}", sign=inst.sign, deck=list(inst.deck),
                  level=inst.level, anchor=inst.anchor_point,
                  departure=inst.departure_direction,
                  trajectory=f"traj_{_safe(inst.label)}.csv")


_CURRENT = {}


def _ord(rp):
    return _CURRENT["ctx"].ordinal(rp)


def cmd_instantons(cfg, out):
    field = load_field(cfg.path)
    ctx = moduli.context(field)
    _CURRENT["ctx"] = ctx
    x, y = _point(field, cfg.args.x), _point(field, cfg.args.y)
    insts = moduli.find_instantons(field, x, y, cfg.args.mesh)
    out.append(record("instantons", source=f"#{ctx.ordinal(x)}", target=f"#{ctx.ordinal(y)}",
                      count=len(insts), signed_count=sum(i.sign for i in insts),
                      dimension=moduli.stratum_dimension(x, y, 0)))
    for inst in insts:
        out.append(_instanton_record(inst))
        _write(cfg, f"traj_{_safe(inst.label)}.csv", inst.representative.to_text())
    return 0


def cmd_strata(cfg, out):
    field = load_field(cfg.path)
    ctx = moduli.context(field)
    _CURRENT["ctx"] = ctx
    x, y = _point(field, cfg.args.x), _point(field, cfg.args.y)
    strata = moduli.enumerate_broken(field, x, y, max_depth=cfg.args.max_depth,
                                     with_free_end=cfg.args.free_end)
    for k in range(cfg.args.max_depth + 1):
        dim = moduli.stratum_dimension(x, y, k)
        pieces = moduli.stratum_pieces(field, x, y, k)
        count = len(strata[k])
        if k == 0 and not cfg.args.free_end and dim not in (0, "empty"):
            count = "continuum"
        out.append(record("stratum", depth=k, dimension=dim, count=count,
                          pieces=["-".join(f"#{c}" for c in chain) + f":{d}"
                                  for chain, d in pieces]))
        for b in strata[k]:
            out.append(record("broken", depth=k, label=b.label, sign=b.sign))
    return 0


def _vector_arg(text, length, default):
    if text is None:
        return default
    v = np.array([float(s) for s in text.split(",")]) if text else np.zeros(0)
    if v.shape != (length,):
        raise InstantonError(f"expected {length} comma-separated values, got {text!r}")
    return v


def cmd_local_solve(cfg, out):
    a = cfg.args
    field = load_field(cfg.path)
    x = _point(field, a.at)
    model = build_local_model(field, x, a.r_cut, normalization=a.normalization)
    k = model.k_plus
    eps = model.eps_contract
    p = _vector_arg(a.p, k, np.eye(k)[0] * 0.5 * eps if k else np.zeros(0))
    q = _vector_arg(a.q, model.n - k, np.eye(model.n - k)[0] * 0.5 * eps if k < model.n
                    else np.zeros(0))
    prob = BoundaryProblem(p, q, a.T1, a.T2, a.nodes)
    traj = solve_boundary_trajectory(model, prob, a.tol)
    rep = traj.meta["report"]
    decay = verify_decay(model, traj, prob)
    out.append(record("local_model", rest_point=x.position, k_plus=k, k_minus=model.n - k,
                      C=model.C, rho_prime=model.rho_prime, rho=model.rho, B=model.B,
                      eta=model.eta, eps_contract=eps, r_cut=model.r_cut,
                      normalization=model.normalization))
    out.append(record("matrix", name="A", rows=model.n, values=model.A))
    out.append(record("matrix", name="basis", rows=model.n, values=model.change_of_basis))
    out.append(record("problem", p=p, q=q, T1=a.T1, T2=a.T2, nodes=a.nodes))
    out.append(record("solve", iterations=rep.iterations, converged=rep.converged,
                      residual=rep.residual,
                      max_ratio=max(rep.ratios) if rep.ratios else 0.0,
                      start=traj.points[0], end=traj.points[-1]))
    out.append(record("decay", rho_fit_plus=decay.rho_fit_plus,
                      rho_fit_minus=decay.rho_fit_minus, rho=decay.rho,
                      bounds_hold=decay.bounds_hold, passes=decay.passes,
                      notes=";".join(decay.notes) or "-"))
    if a.chi is not None:
        chi1, chi2 = chart_chi(model, p, q, a.chi)
        out.append(record("chi", s=a.chi, chi1=chi1, chi2=chi2))
    out.append(f"note {CHI_NOTE}")
    header = " basis=" + vec(model.change_of_basis) + f" rest_point={vec(x.position)}"
    _write(cfg, "local_solution.csv",
           traj.to_text([f"z{i}" for i in range(model.n)], header=header))
    return 0


def cmd_morse(cfg, out):
    field = load_field(cfg.path)
    ctx = moduli.context(field)
    _CURRENT["ctx"] = ctx
    cx, table = complexes.morse_complex(field, cfg.args.mesh)
    groups = complexes.homology(cx)
    out.append(record("morse", field=field.field_id, ranks=list(cx.ranks),
                      betti=list(complexes.betti_numbers(groups)),
                      torsion=";".join(",".join(str(t) for t in groups[k].torsion) or "-"
                                       for k in sorted(groups)),
                      boundary_squared="zero"))
    out.extend(_rest_point_records(field, ctx.rest_points))
    for (i, j), insts in sorted(table.items()):
        out.append(record("pair", source=f"#{i}", target=f"#{j}", count=len(insts),
                          signed_count=sum(t.sign for t in insts)))
    for (i, j), insts in sorted(table.items()):
        for inst in insts:
            out.append(_instanton_record(inst))
            _write(cfg, f"traj_{_safe(inst.label)}.csv", inst.representative.to_text())
    for k in sorted(groups):
        out.append(record("homology", degree=k, betti=groups[k].betti,
                          torsion=groups[k].torsion))
    _write(cfg, "morse_complex.txt", cx.to_text())
    return 0


def _cohomology_lines(P, rationals):
    rep = complexes.incidence_check(P)
    lines = []
    if rep.passes:
        groups = complexes.incidence_cohomology(P, rationals)
        lines.append("relation: pass; H: " + ",".join(str(groups[k].betti) for k in sorted(groups)))
        for k in sorted(groups):
            lines.append(record("cohomology", degree=k, betti=groups[k].betti,
                                torsion=groups[k].torsion))
    else:
        lines.append(f"relation: fail; violations: {len(rep.violations)}")
        for a1, a2, total in rep.violations:
            lines.append(record("violation", upper=a1, lower=a2, sum=total))
    return lines, rep.passes


def cmd_incidence(cfg, out):
    P = complexes.load_structure(cfg.path)
    if not isinstance(P, complexes.CornerPoset):
        raise InstantonError("incidence expects a corner_poset document")
    out.append(record("poset", counts=list(P.counts)))
    lines, ok = _cohomology_lines(P, cfg.args.rationals)
    out.extend(lines)
    return 0 if ok else 1


def cmd_families(cfg, out):
    field = load_field(cfg.path)
    ctx = moduli.context(field)
    _CURRENT["ctx"] = ctx
    x, y = _point(field, cfg.args.x), _point(field, cfg.args.y)
    rep = moduli.trace_family(field, x, y, cfg.args.mesh)
    out.append(record("families", source=f"#{ctx.ordinal(x)}", target=f"#{ctx.ordinal(y)}",
                      count=len(rep.families), depth_one=len(rep.depth_one),
                      signed_sum=rep.signed_sum, coherent=rep.coherent,
                      exhausts_once=rep.exhausts_once, even_per_saddle=rep.even_per_saddle))
    for fam in rep.families:
        ends = {}
        for name, end in (("initial", fam.initial), ("terminal", fam.terminal)):
            ends[name] = end.broken.label if end else "none"
            ends[name + "_sign"] = end.product_sign if end else 0
        out.append(record("family", label=fam.label, start=fam.theta_start, end=fam.theta_end,
                          limit=f"#{fam.signature[0]}", deck=list(fam.signature[1]),
                          samples=len(fam.samples), orientation=fam.orientation, **ends))
    for b in rep.depth_one:
        out.append(record("endpoint", label=b.label, uses=rep.usage[b.label], sign=b.sign))
    P = complexes.moduli_corner_poset(rep)
    lines, _ = _cohomology_lines(P, False)
    out.extend(lines)
    _write(cfg, "moduli.poset", P.to_text())
    return 0


COMMANDS = {
    "rest-points": cmd_rest_points,
    "instantons": cmd_instantons,
    "strata": cmd_strata,
    "local-solve": cmd_local_solve,
    "morse": cmd_morse,
    "incidence": cmd_incidence,
    "families": cmd_families,
}


def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="instanton",
                                     description="Instanton structure of smooth vector fields.")
    parser.add_argument("--out", type=Path, help="directory for data files")
    parser.add_argument("--seed", type=int, default=0, help="seed for quasi-random sampling")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, target="field"):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("path", help=f"{target} file (or the name of a shipped example)")
        return p

    p = add("rest-points", "census of rest points")
    p.add_argument("--grid", type=int, default=16, help="Newton seeds per coordinate")
    p.add_argument("--tol", type=_positive, default=1e-10, help="rest-point tolerance")
    p.add_argument("--samples", type=int, default=4096, help="Lyapunov check samples")

    for name, text in (("instantons", "instantons between two rest points"),
                       ("families", "one-parameter families for an index gap of 2")):
        p = add(name, text)
        p.add_argument("x", help="source: '#k' ordinal or comma-separated coordinates")
        p.add_argument("y", help="target: '#k' ordinal or comma-separated coordinates")
        p.add_argument("--mesh", type=int, default=moduli.MESH_DENSITY,
                       help="directions on the unstable circle")

    p = add("strata", "broken-instanton strata")
    p.add_argument("x")
    p.add_argument("y")
    p.add_argument("--max-depth", type=int, default=1)
    p.add_argument("--free-end", action="store_true",
                   help="chains from x with a free last piece instead of chains ending at y")

    p = add("local-solve", "boundary problem near a rest point with decay report")
    p.add_argument("--at", default="#0", help="rest point ('#k' or coordinates)")
    p.add_argument("--p", help="stable boundary value, comma-separated")
    p.add_argument("--q", help="unstable boundary value, comma-separated")
    p.add_argument("--T1", type=float, default=0.0)
    p.add_argument("--T2", type=float, default=8.0)
    p.add_argument("--nodes", type=int, default=512)
    p.add_argument("--r-cut", type=_positive, default=1.0)
    p.add_argument("--tol", type=_positive, default=1e-12)
    p.add_argument("--normalization", choices=("invariant", "printed"), default="invariant",
                   help="restrictions of g removed before solving")
    p.add_argument("--chi", type=float, help="also evaluate the chart maps at this s")

    p = add("morse", "Morse complex and its homology")
    p.add_argument("--mesh", type=int, default=moduli.MESH_DENSITY)

    p = add("incidence", "incidence relation and cohomology of a corner poset", "poset")
    p.add_argument("--rationals", action="store_true", help="compute over Q")
    return parser


def run(cfg: RunConfig) -> tuple[int, list]:
    out: list = []
    status = COMMANDS[cfg.command](cfg, out)
    return status, out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        path = _input_path(args.path)
    except FileNotFoundError:
        parser.print_usage(sys.stderr)
        print(f"instanton: error: no such file: {args.path}", file=sys.stderr)
        return 2
    cfg = RunConfig(args.command, path, args.out, args.seed, args)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            warnings.showwarning = _show_warning
            status, lines = run(cfg)
    except (InstantonError, ValueError) as exc:
        print(f"instanton: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write("\n".join(lines) + "\n")
    return status


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {category.__name__}: {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
