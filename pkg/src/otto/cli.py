"""Configuration-driven experiment runner: ``otto run | check | grad-test``."""
from __future__ import annotations

import argparse
import math
import os
import sys
import time
import traceback
from dataclasses import dataclass, field

import numpy as np

from .diagram_ops import LloydConfig, lloyd_mesh_seeds, uniform_points
from .functionals import (EIGENVALUE, ELASTIC_COMPLIANCE, MEAN_TEMPERATURE,
                          PERIMETER, STRESS, VOLUME, FunctionalKind, PDEProblem,
                          geometric_value_and_grad)
from .geometry import (CLASSICAL, DIRICHLET, MODIFIED, NEUMANN, SIDES, Domain,
                       build_diagram, diagram_mesh, dump_poly)
from .optimize import (HISTORY_HEADER, DriverConfig, ProblemSetup, evaluate, history_line, run)

SUPPORT = 3          # boundary label fixing only the vertical displacement

KINDS = ("perimeter", "eigenvalue", "two_phase_conduction", "cantilever_compliance",
         "bridge_compliance_topo", "stress_bridge")

BESSEL_J01 = 2.404825557695773


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass
class BoundarySegment:
    side: str
    a: float | None = None      # None: the whole side
    b: float | None = None


@dataclass
class RunConfig:
    kind: str
    box: tuple
    n: int
    iters: int
    k: int = 1
    vt: float | None = None
    rng_seed: int = 0
    out: str = "otto_out"
    snapshot_every: int = 0
    dirichlet: list = field(default_factory=list)
    neumann: list = field(default_factory=list)
    support: list = field(default_factory=list)
    load: tuple = (0.0, -1.0)
    gamma0: float = 1.0
    gamma1: float = 10.0
    lam: float = 1.0
    mu: float = 0.5
    source: float = 1.0
    perimeter_weight: float = 0.0
    lloyd: int = 0
    resample: int = 0
    islands: int = 0
    topo: int = 0
    topo_fraction: float = 0.005
    a_js: float = 0.5
    a_gs: float = 0.5
    a_jnu: float = 0.25
    a_gnu: float = 0.25
    alpha: float = 2.0
    max_halvings: int = 8
    penalty: bool = False
    stall_stop: int = 5
    gradient: str = "exact"
    init_region: str = "center"
    init_fraction: float = 0.75
    phase: tuple = ()

    @property
    def domain_area(self) -> float:
        x0, y0, x1, y1 = self.box
        return (x1 - x0) * (y1 - y0)


# --------------------------------------------------------------------------- parsing
def _float(v):
    return float(v)


def _int(v):
    f = float(v)
    if f != int(f):
        raise ValueError("expected an integer")
    return int(f)


def _bool(v):
    t = v.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _floats(count):
    def conv(v):
        vals = [float(x) for x in v.split()]
        if len(vals) != count:
            raise ValueError(f"expected {count} numbers")
        return tuple(vals)
    return conv


def _segments(v):
    out = []
    for tok in v.replace(",", " ").split():
        parts = tok.split(":")
        if parts[0] not in SIDES:
            raise ValueError(f"unknown boundary side {parts[0]!r}")
        if len(parts) == 1:
            out.append(BoundarySegment(parts[0]))
        elif len(parts) == 3:
            a, b = float(parts[1]), float(parts[2])
            if not a < b:
                raise ValueError("segment bounds must satisfy a < b")
            out.append(BoundarySegment(parts[0], a, b))
        else:
            raise ValueError("segments read side or side:a:b")
    return out


def _phase(v):
    parts = v.split()
    if not parts:
        raise ValueError("empty phase indicator")
    shape, nums = parts[0], parts[1:]
    need = {"all": 0, "box": 4, "hole": 3}
    if shape not in need:
        raise ValueError("phase indicator is one of: all, box x0 y0 x1 y1, hole cx cy r")
    if len(nums) != need[shape]:
        raise ValueError(f"phase '{shape}' takes {need[shape]} numbers")
    return (shape,) + tuple(float(x) for x in nums)


def _region(v):
    if v not in ("center", "full"):
        raise ValueError("init region is 'center' or 'full'")
    return v


def _kind(v):
    if v not in KINDS:
        raise ValueError(f"unknown problem kind {v!r}")
    return v


def _gradient(v):
    if v not in ("exact", "volume_form"):
        raise ValueError("gradient is 'exact' or 'volume_form'")
    return v


SCHEMA = {
    "problem": {"kind": ("kind", _kind), "k": ("k", _int)},
    "domain": {"box": ("box", _floats(4)), "dirichlet": ("dirichlet", _segments),
               "neumann": ("neumann", _segments), "support": ("support", _segments),
               "load": ("load", _floats(2))},
    "run": {"n": ("n", _int), "iters": ("iters", _int), "rng_seed": ("rng_seed", _int),
            "vt": ("vt", _float), "out": ("out", str), "snapshot_every": ("snapshot_every", _int)},
    "materials": {"gamma0": ("gamma0", _float), "gamma1": ("gamma1", _float),
                  "lambda": ("lam", _float), "mu": ("mu", _float), "source": ("source", _float),
                  "perimeter_weight": ("perimeter_weight", _float)},
    "cadence": {"lloyd": ("lloyd", _int), "resample": ("resample", _int),
                "islands": ("islands", _int), "topo": ("topo", _int),
                "topo_fraction": ("topo_fraction", _float)},
    "optimizer": {"a_js": ("a_js", _float), "a_gs": ("a_gs", _float), "a_jnu": ("a_jnu", _float),
                  "a_gnu": ("a_gnu", _float), "alpha": ("alpha", _float),
                  "max_halvings": ("max_halvings", _int), "penalty": ("penalty", _bool),
                  "stall_stop": ("stall_stop", _int), "gradient": ("gradient", _gradient)},
    "init": {"region": ("init_region", _region), "fraction": ("init_fraction", _float),
             "phase": ("phase", _phase)},
}

REQUIRED = (("problem", "kind"), ("domain", "box"), ("run", "n"), ("run", "iters"))

# Per-kind defaults: volume target, boundary conditions and initial material indicator.
DEFAULTS = {
    "perimeter": dict(vt=0.25),
    "eigenvalue": dict(vt=0.25),
    "two_phase_conduction": dict(vt=0.3, dirichlet=[BoundarySegment("left", 0.4, 0.6)],
                                 phase=("box", 0.0, 0.0, 0.3, 1.0)),
    "cantilever_compliance": dict(vt=0.7, dirichlet=[BoundarySegment("left")],
                                  neumann=[BoundarySegment("right", 0.45, 0.55)],
                                  phase=("box", 0.0, 0.325, 2.0, 0.675), islands=5),
    "bridge_compliance_topo": dict(vt=0.7, dirichlet=[BoundarySegment("bottom", 0.0, 0.1)],
                                   support=[BoundarySegment("bottom", 1.9, 2.0)],
                                   neumann=[BoundarySegment("bottom", 0.95, 1.05)],
                                   phase=("box", 0.0, 0.0, 2.0, 0.35), islands=5, topo=10),
    "stress_bridge": dict(vt=0.8, dirichlet=[BoundarySegment("bottom")],
                          neumann=[BoundarySegment("top")], phase=("hole", 0.5, 0.5, 0.25),
                          islands=5),
}


def parse_config(text: str) -> RunConfig:
    """Parse the ``[section]`` / ``key = value`` format; raises ConfigError listing
    every problem with its line number."""
    errors = []
    values, where = {}, {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                errors.append(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, val = (t.strip() for t in line.split("=", 1))
        if section is None:
            errors.append(f"line {lineno}: key {key!r} outside any section")
            continue
        if section not in SCHEMA:
            continue
        if key not in SCHEMA[section]:
            errors.append(f"line {lineno}: unknown key {key!r} in [{section}]")
            continue
        attr, conv = SCHEMA[section][key]
        try:
            values[attr] = conv(val)
        except ValueError as exc:
            errors.append(f"line {lineno}: bad value for {section}.{key}: {exc}")
            continue
        where[attr] = lineno
    for sec, key in REQUIRED:
        attr = SCHEMA[sec][key][0]
        if attr not in values and not any(e.find(f"{sec}.{key}") >= 0 for e in errors):
            errors.append(f"missing required key {sec}.{key}")
    if errors:
        raise ConfigError(errors)
    kw = dict(DEFAULTS[values["kind"]])
    kw.update(values)
    cfg = RunConfig(**kw)
    _validate(cfg, where, errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def _validate(cfg: RunConfig, where, errors):
    def err(attr, msg):
        loc = f"line {where[attr]}: " if attr in where else ""
        errors.append(loc + msg)

    x0, y0, x1, y1 = cfg.box
    if not (x1 > x0 and y1 > y0):
        err("box", "domain box needs x1 > x0 and y1 > y0")
        return
    if cfg.n < 2:
        err("n", "need at least two cells")
    if cfg.iters < 0:
        err("iters", "iteration budget must be non-negative")
    if cfg.vt is None or cfg.vt <= 0:
        err("vt", "V_T must be positive")
    elif cfg.vt >= cfg.domain_area:
        err("vt", "V_T exceeds |D|")
    if cfg.k < 1:
        err("k", "eigenvalue index starts at 1")
    if not 0.0 < cfg.init_fraction <= 1.0:
        err("init_fraction", "init fraction must lie in (0, 1]")
    for attr in ("dirichlet", "neumann", "support"):
        for seg in getattr(cfg, attr):
            if seg.a is None:
                continue
            lo, hi = (x0, x1) if seg.side in ("bottom", "top") else (y0, y1)
            if seg.a < lo or seg.b > hi:
                err(attr, f"segment {seg.side}:{seg.a}:{seg.b} leaves the side")
    if cfg.kind in ("two_phase_conduction",) and not cfg.dirichlet:
        err("kind", "the conduction problem needs a Dirichlet segment")
    if cfg.kind in ("cantilever_compliance", "bridge_compliance_topo", "stress_bridge"):
        if not cfg.dirichlet:
            err("kind", "elastic problems need a Dirichlet segment")
        if not cfg.neumann:
            err("kind", "elastic problems need a loaded (Neumann) segment")


# --------------------------------------------------------------------------- problem assembly
def build_domain(cfg: RunConfig) -> Domain:
    x0, y0, x1, y1 = cfg.box
    labels, marks = {}, []
    for attr, lab in (("dirichlet", DIRICHLET), ("neumann", NEUMANN), ("support", SUPPORT)):
        for seg in getattr(cfg, attr):
            if seg.a is None:
                labels[seg.side] = lab
            else:
                marks.append((seg.side, seg.a, seg.b, lab))
    return Domain.box(x0, y0, x1, y1, labels=labels, marks=marks)


def build_setup(cfg: RunConfig):
    dom = build_domain(cfg)
    common = dict(perimeter_weight=cfg.perimeter_weight, gradient=cfg.gradient)
    if cfg.kind == "perimeter":
        return ProblemSetup("perimeter", dom, MODIFIED, cfg.vt, optimize_nu=False,
                            constrained=False, **common)
    if cfg.kind == "eigenvalue":
        return ProblemSetup("eigenvalue", dom, MODIFIED, cfg.vt,
                            functional=FunctionalKind(EIGENVALUE, cfg.k),
                            pde=PDEProblem("scalar"), optimize_nu=False, constrained=False,
                            **common)
    if cfg.kind == "two_phase_conduction":
        pde = PDEProblem("scalar", [(DIRICHLET, None)], {}, cfg.source, dom.area)
        return ProblemSetup("two_phase_conduction", dom, CLASSICAL, cfg.vt,
                            functional=FunctionalKind(MEAN_TEMPERATURE), pde=pde,
                            gamma=(cfg.gamma0, cfg.gamma1), **common)
    load = np.array(cfg.load, dtype=float)
    dirichlet = [(DIRICHLET, None)]
    if cfg.support:
        dirichlet.append((SUPPORT, [1]))
    pde = PDEProblem("elastic", dirichlet, {NEUMANN: load}, 0.0)
    name = STRESS if cfg.kind == "stress_bridge" else ELASTIC_COMPLIANCE
    forced = (DIRICHLET, NEUMANN) + ((SUPPORT,) if cfg.support else ())
    return ProblemSetup(cfg.kind, dom, CLASSICAL, cfg.vt, functional=FunctionalKind(name), pde=pde,
                        lame=(cfg.lam, cfg.mu), anchor_label=DIRICHLET, forced_labels=forced,
                        **common)


def driver_config(cfg: RunConfig, callback=None) -> DriverConfig:
    return DriverConfig(iterations=cfg.iters, a_js=cfg.a_js, a_gs=cfg.a_gs, a_jnu=cfg.a_jnu,
                        a_gnu=cfg.a_gnu, alpha=cfg.alpha, max_halvings=cfg.max_halvings,
                        penalty=cfg.penalty, lloyd_every=cfg.lloyd, resample_every=cfg.resample,
                        islands_every=cfg.islands, topo_every=cfg.topo,
                        topo_fraction=cfg.topo_fraction, stall_stop=cfg.stall_stop,
                        lloyd=LloydConfig(), callback=callback)


def _in_phase(x, phase):
    shape = phase[0]
    if shape == "all":
        return True
    if shape == "box":
        return phase[1] <= x[0] <= phase[3] and phase[2] <= x[1] <= phase[4]
    return math.hypot(x[0] - phase[1], x[1] - phase[2]) > phase[3]


def initial_design(cfg: RunConfig, setup: ProblemSetup):
    """Seeds, cell measures and (for two-phase problems) the material indicator."""
    rng = np.random.default_rng(cfg.rng_seed)
    dom = setup.domain
    if setup.mode == MODIFIED:
        if cfg.init_region == "full":
            s = uniform_points(cfg.n, dom, rng, margin=1e-3)
        else:
            # centred square whose area is a fraction of the volume target
            half = 0.5 * math.sqrt(cfg.init_fraction * cfg.vt)
            c = dom.vertices.mean(axis=0)
            s = c - half + 2.0 * half * rng.random((cfg.n, 2))
        return s, np.full(cfg.n, cfg.vt / cfg.n), None
    s = lloyd_mesh_seeds(cfg.n, dom, iterations=20, rng=rng)
    D = build_diagram(s, dom, CLASSICAL, psi=np.zeros(len(s)))
    nu = D.areas().copy()
    phase = np.array([_in_phase(x, cfg.phase or ("all",)) for x in s])
    return s, nu, phase


# --------------------------------------------------------------------------- artifacts
def _colour(t):
    t = min(max(float(t), 0.0), 1.0)
    r, g, b = (int(255 * (0.2 + 0.8 * t)), int(255 * (0.3 + 0.4 * (1 - abs(2 * t - 1)))),
               int(255 * (1.0 - 0.8 * t)))
    return f"#{r:02x}{g:02x}{b:02x}"


def svg_snapshot(D, phase=None, values=None, n_arc=8, width=600) -> str:
    """Flat coloured polygons: by phase, or by a per-cell scalar when given."""
    mesh = diagram_mesh(D, n_arc)
    lo, hi = D.domain.vertices.min(axis=0), D.domain.vertices.max(axis=0)
    scale = width / float(hi[0] - lo[0])
    height = scale * float(hi[1] - lo[1])

    def pt(p):
        return f"{(p[0] - lo[0]) * scale:.3f},{height - (p[1] - lo[1]) * scale:.3f}"

    if values is not None:
        v = np.asarray(values, dtype=float)
        vmin, vmax = float(v.min()), float(v.max())
        span = vmax - vmin if vmax > vmin else 1.0
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height:.0f}">',
           f'<polygon points="{" ".join(pt(p) for p in D.domain.vertices)}" '
           'fill="white" stroke="black" stroke-width="1"/>']
    for e, E in enumerate(mesh.elements):
        c = int(mesh.elem_cell[e])
        if values is not None:
            fill = _colour((v[c] - vmin) / span)
        elif phase is None or phase[c]:
            fill = "#606060"
        else:
            fill = "#f4f4f4"
        out.append(f'<polygon points="{" ".join(pt(mesh.points[k]) for k in E)}" fill="{fill}" '
                   'stroke="#202020" stroke-width="0.3"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def shape_metrics(cfg: RunConfig, setup: ProblemSetup, ev, nu, phase):
    """Problem-specific figures of merit for the summary."""
    out = {}
    if setup.mode == MODIFIED:
        mesh = diagram_mesh(ev.diagram, setup.n_arc)
        vol, _ = geometric_value_and_grad(mesh, VOLUME)
        per, _ = geometric_value_and_grad(mesh, PERIMETER)
        out["volume"] = vol
        out["perimeter"] = per
        out["isoperimetric_ratio"] = 4.0 * math.pi * vol / per ** 2
        if cfg.kind == "eigenvalue":
            out["eigenvalue"] = ev.J
            out["eigenvalue_times_volume"] = ev.J * vol
            if cfg.k == 1:
                out["faber_krahn_ratio"] = ev.J * vol / (math.pi * BESSEL_J01 ** 2)
    else:
        out["volume"] = float(np.asarray(nu)[phase].sum())
    return out


def run_experiment(cfg: RunConfig, out_dir=None, snapshot_every=None, log=None) -> int:
    """Run one experiment and write its artifacts; returns a process exit status."""
    out_dir = out_dir or cfg.out
    every = cfg.snapshot_every if snapshot_every is None else snapshot_every
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.time()
    setup = build_setup(cfg)
    s0, nu0, phase0 = initial_design(cfg, setup)
    hist_path = os.path.join(out_dir, "history.csv")

    def dump(idx, ev, phase):
        with open(os.path.join(out_dir, f"diagram_{idx:04d}.poly"), "w") as fh:
            fh.write(dump_poly(ev.diagram, setup.n_arc))
        with open(os.path.join(out_dir, f"snapshot_{idx:04d}.svg"), "w") as fh:
            fh.write(svg_snapshot(ev.diagram, phase, n_arc=setup.n_arc))

    last = {"it": -1}

    def callback(it, st, ev, rec):
        with open(hist_path, "a") as fh:
            fh.write(history_line(rec) + "\n")
        if every and it % every == 0 and it != last["it"]:
            dump(it, ev, st.phase)
        last["it"] = it
        if log is not None:
            log(f"iter {it} {rec.substep}: J = {rec.objective:.6g}  |G| = {rec.violation:.3g}"
                f"  {'accepted' if rec.accepted else 'rejected'}")

    with open(hist_path, "w") as fh:
        fh.write(HISTORY_HEADER + "\n")
    try:
        rng = np.random.default_rng(cfg.rng_seed + 1)
        history, st, ev = run(setup, s0, nu0, driver_config(cfg, callback), phase0, rng)
        if ev is None:
            ev = evaluate(setup, st.s, st.nu, st.psi, st.phase, gradients=False)
    except Exception as exc:  # any sub-module abort ends the run with a diagnostic
        with open(os.path.join(out_dir, "error.txt"), "w") as fh:
            fh.write(f"{type(exc).__name__}: {exc}\n\n")
            fh.write(traceback.format_exc())
        if log is not None:
            log(f"error: {exc}")
        return 2
    final = len(history) and history[-1].iteration
    dump(final, ev, st.phase)
    viol = float(np.abs(ev.G).max()) if len(ev.G) else 0.0
    lines = [f"problem = {cfg.kind}", f"iterations = {len(set(r.iteration for r in history))}",
             f"final_objective = {float(ev.J)!r}", f"constraint_violation = {viol!r}",
             f"N = {len(st.s)}", f"wall_time = {time.time() - t0:.2f}"]
    for key, val in shape_metrics(cfg, setup, ev, st.nu, st.phase).items():
        lines.append(f"{key} = {float(val)!r}")
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


# --------------------------------------------------------------------------- finite-difference check
def gradient_check(cfg: RunConfig, components=6, step=1e-6, rng=None):
    """Compare the design gradient with central differences of the full pipeline
    (Newton solve, mesh, PDE solve).  Returns a list of (variable, index, analytic,
    finite difference, relative error)."""
    rng = np.random.default_rng(cfg.rng_seed) if rng is None else rng
    setup = build_setup(cfg)
    setup.newton_rtol = 1e-10
    s, nu, phase = initial_design(cfg, setup)
    ev = evaluate(setup, s, nu, None, phase, gradients=True)
    scale_s = max(float(np.abs(ev.grad_J_s).max()), 1e-300)
    scale_nu = max(float(np.abs(ev.grad_J_nu).max()), 1e-300)
    out = []
    variables = ["s"] + (["nu"] if setup.optimize_nu else [])
    for _ in range(components):
        var = variables[int(rng.integers(len(variables)))]
        if var == "s":
            i, c = int(rng.integers(len(s))), int(rng.integers(2))
            h = step * math.sqrt(float(nu.mean()))
            vals = []
            for sg in (1.0, -1.0):
                s2 = s.copy()
                s2[i, c] += sg * h
                vals.append(evaluate(setup, s2, nu, ev.psi, phase, gradients=False).J)
            fd = (vals[0] - vals[1]) / (2 * h)
            an = float(ev.grad_J_s[i, c])
            out.append(("s", (i, c), an, fd, abs(an - fd) / scale_s))
        else:
            i = int(rng.integers(len(nu)))
            h = step * float(nu.mean())
            # classical diagrams tile the domain, so only sum-preserving changes are
            # admissible; the gradient there has zero mean and e_i - 1/N probes entry i
            d = np.zeros(len(nu))
            d[i] = 1.0
            if setup.mode == CLASSICAL:
                d -= 1.0 / len(nu)
            vals = []
            for sg in (1.0, -1.0):
                nu2 = nu + sg * h * d
                vals.append(evaluate(setup, s, nu2, ev.psi, phase, gradients=False).J)
            fd = (vals[0] - vals[1]) / (2 * h)
            an = float(ev.grad_J_nu @ d)
            out.append(("nu", i, an, fd, abs(an - fd) / scale_nu))
    return out


# --------------------------------------------------------------------------- entry point
def _load(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="otto", description="Laguerre-diagram shape optimization")
    sub = ap.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--snapshot-every", type=int, default=None,
                       help="dump diagram and SVG every K iterations")
    p_run.add_argument("--quiet", action="store_true")
    p_chk = sub.add_parser("check", help="validate a configuration and its initial design")
    p_chk.add_argument("config")
    p_grad = sub.add_parser("grad-test", help="finite-difference check of the design gradient")
    p_grad.add_argument("config")
    p_grad.add_argument("--components", type=int, default=6)
    p_grad.add_argument("--tol", type=float, default=1e-3)
    args = ap.parse_args(argv)
    try:
        cfg = _load(args.config)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"{args.config}: {e}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"cannot read {args.config}: {exc}", file=sys.stderr)
        return 1
    if args.command == "check":
        setup = build_setup(cfg)
        s, nu, phase = initial_design(cfg, setup)
        ev = evaluate(setup, s, nu, None, phase, gradients=False)
        print(f"{cfg.kind}: N = {len(s)}, V_T = {cfg.vt}, |D| = {cfg.domain_area}, "
              f"initial objective = {ev.J:.6g}, Newton iterations = {ev.newton_iters}")
        return 0
    if args.command == "grad-test":
        rows = gradient_check(cfg, args.components)
        worst = 0.0
        for var, idx, an, fd, err in rows:
            print(f"{var}{idx}: analytic {an:+.8e}  finite difference {fd:+.8e}  rel. error {err:.2e}")
            worst = max(worst, err)
        ok = worst <= args.tol
        print(f"max relative error {worst:.2e} ({'pass' if ok else 'FAIL'} at {args.tol:g})")
        return 0 if ok else 1
    log = None if args.quiet else (lambda msg: print(msg, flush=True))
    status = run_experiment(cfg, args.out, args.snapshot_every, log)
    if status:
        print("run aborted; see error.txt in the output directory", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
