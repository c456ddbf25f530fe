"""Command line front end: ``qlsch <subcommand> [--config PATH] [--out DIR] ...``.

Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 a failed
``--assert`` check.  Failures print one line ``ERROR <code> <module> <detail>``
to stderr.  Every output file is written to a temporary name and renamed into
place once the whole command has succeeded.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import math
import os
import sys
from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from pydantic import ValidationError as SchemaError

from . import dyadic_spaces as ds
from . import estimate_lab as lab
from .errors import NumericalError, ValidationError
from .expr_dsl import MetricSpec, NonlinearitySpec, metric_preset, nonlinearity_preset
from .field_core import GridSpec, SpaceTimeField, SpatialField, read_field, write_field
from .linear_prop import (
    LinearProblem,
    MorawetzSpec,
    PropagatorConfig,
    energy_identity_residual,
    free_evolution,
    morawetz_residual,
    solve_linear,
)
from .lp_multipliers import dump_profiles
from .quasilinear import IterationConfig, QuasilinearProblem, envelope_persistence, initial_data, iterate

SUBCOMMANDS = ("norms", "envelope", "verify", "solve-linear", "solve", "smoothing-scan", "dump-profiles")


# ---------------------------------------------------------------------------
# configuration schema


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridBlock(_Strict):
    d: Literal[1, 2] = 1
    N: int = 512
    L: float = 32.0
    M: int = 65
    m: int = 1

    def spec(self) -> GridSpec:
        return GridSpec(d=self.d, N=self.N, L=self.L, M=self.M, m=self.m)


class DataBlock(_Strict):
    """Initial data: a named shape scaled to an l^1 H^s size, or a DFF1 file."""

    kind: Literal["gaussian", "band", "file"] = "gaussian"
    target: float = 1e-3
    width: float = 1.0
    k0: float = 0.0
    j0: int = 2
    path: Optional[str] = None


class NormRequest(_Strict):
    name: str
    s: Optional[float] = None
    p: Optional[Union[float, Literal["inf"]]] = None
    j: Optional[int] = None
    base: Optional[str] = None


class NormsConfig(_Strict):
    grid: GridBlock = GridBlock()
    field: DataBlock = DataBlock()
    s: Optional[float] = None
    evolve: bool = True  # free evolution gives the space-time field for X/Y norms
    norms: list[NormRequest] = Field(default_factory=lambda: [NormRequest(name="l1Hs", s=2.25)])


class EnvelopeConfig(_Strict):
    grid: GridBlock = GridBlock()
    field: DataBlock = DataBlock()
    s: Optional[float] = None
    space: Literal["H", "X", "Y"] = "H"
    delta: Optional[float] = None


class VerifyConfig(_Strict):
    grid: GridBlock = GridBlock(N=1024, L=32.0, M=65)
    estimate: Optional[str] = None
    seed: int = 0
    count: int = 100
    s: float = 2.75
    bump_centers: int = 2
    amplitude: float = 1.0
    params: dict[str, Any] = Field(default_factory=dict)
    baseline: Optional[float] = None


class MetricBlock(_Strict):
    """Linear-problem metric: identity or 1 + amplitude * Gaussian bump."""

    kind: Literal["identity", "conformal-bump"] = "identity"
    amplitude: float = 1e-3
    width: float = 2.0


class ForcingBlock(_Strict):
    kind: Literal["none", "bump"] = "none"
    amplitude: float = 1.0
    width: float = 1.0
    omega: float = 2 * math.pi


class MorawetzBlock(_Strict):
    l: int
    j: int
    axis: int = 1
    x0: float = 0.0


class SolveLinearConfig(_Strict):
    grid: GridBlock = GridBlock()
    u0: DataBlock = DataBlock(target=1.0)
    s: Optional[float] = None
    metric: MetricBlock = MetricBlock()
    forcing: ForcingBlock = ForcingBlock()
    morawetz: Optional[MorawetzBlock] = None
    fixed_point_tol: float = 1e-10
    max_inner_iters: int = 200
    substeps: Optional[int] = None
    max_drift: float = 1e-8


class SolveConfig(_Strict):
    grid: GridBlock = GridBlock()
    metric: Union[str, list[list[str]]] = "conformal"
    F: Union[str, list[str]] = "cubic"
    u0: Union[DataBlock, str] = DataBlock()
    s: Optional[float] = None
    eps0: float = 1e-2
    tol: float = 1e-9
    max_iters: int = 12
    max_contraction: float = 0.5


class ScanConfig(_Strict):
    grid: GridBlock = GridBlock(N=1024, L=4.0, M=65)
    j_range: tuple[int, int] = (3, 7)
    metric: Literal["identity", "conformal"] = "identity"
    amplitude: float = 1e-3
    mode: Literal["homogeneous", "inhomogeneous"] = "homogeneous"


class ProfilesConfig(_Strict):
    j_max: int = 6
    r_max: float = 200.0
    points: int = 2001


CONFIGS = {
    "norms": NormsConfig,
    "envelope": EnvelopeConfig,
    "verify": VerifyConfig,
    "solve-linear": SolveLinearConfig,
    "solve": SolveConfig,
    "smoothing-scan": ScanConfig,
    "dump-profiles": ProfilesConfig,
}


def load_config(command: str, path: Optional[str]):
    model = CONFIGS[command]
    if path is None:
        return model()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed JSON in {path} at line {exc.lineno} column {exc.colno} (char {exc.pos}): {exc.msg}") from None
    try:
        return model.model_validate(raw)
    except SchemaError as exc:
        first = exc.errors()[0]
        where = ".".join(str(x) for x in first["loc"]) or "<root>"
        raise ValidationError(f"config {path}: {where}: {first['msg']}") from None


# ---------------------------------------------------------------------------
# output


class Outputs:
    """Buffers every artifact in memory, then commits them all at the end."""

    def __init__(self, out: Path):
        # ``--out report.csv`` names a file; its directory receives every artifact
        self.target = out if out.suffix == ".csv" else None
        self.dir = out.parent if self.target is not None else out
        self.files: dict[str, bytes] = {}

    def csv(self, name: str, header: list, rows) -> None:
        buf = io.StringIO()
        stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        buf.write(f"# generated {stamp}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
        self.files[name] = buf.getvalue().encode()

    def json(self, name: str, obj) -> None:
        self.files[name] = (json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n").encode()

    def field(self, name: str, f) -> None:
        self.files[name] = f

    def commit(self) -> list[Path]:
        self.dir.mkdir(parents=True, exist_ok=True)
        staged = []
        try:
            for name, payload in self.files.items():
                final = self.dir / name
                if isinstance(payload, bytes):
                    tmp = final.with_name(final.name + ".tmp")
                    tmp.write_bytes(payload)
                    staged.append((tmp, final))
                else:
                    tmp = final.with_name(final.name + ".tmp")
                    write_field(tmp, payload)
                    staged.append((tmp, final))
        except Exception:
            for tmp, _ in staged:
                tmp.unlink(missing_ok=True)
            raise
        for tmp, final in staged:
            os.replace(tmp, final)
        return [f for _, f in staged]


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# commands


def _data(block, grid: GridSpec, s: Optional[float]) -> SpatialField:
    if isinstance(block, str):
        # a bare string names a data preset or a DFF1 file
        block = DataBlock(kind=block) if block in ("gaussian", "band") else DataBlock(kind="file", path=block)
    if block.kind == "file":
        if not block.path:
            raise ValidationError("data kind 'file' needs a path")
        f = read_field(block.path)
        if isinstance(f, SpaceTimeField):
            f = f.slice(0)
        if f.grid.shape != grid.shape or f.grid.m != grid.m:
            raise ValidationError(f"{block.path} does not match the configured grid")
        return SpatialField(grid, f.values)
    return initial_data(grid, block.kind, block.target, s, block.width, block.k0, block.j0)


def cmd_norms(cfg: NormsConfig, args, out: Outputs) -> bool:
    grid = cfg.grid.spec()
    u = _data(cfg.field, grid, cfg.s)
    ut = free_evolution(u) if cfg.evolve else SpaceTimeField.constant_in_time(u)
    rows = []
    for req in cfg.norms:
        p = math.inf if req.p == "inf" else req.p
        tag = ds.NormTag(req.name, s=req.s, p=p, j=req.j, base=req.base)
        target = u if req.name in ("l1Hs",) or (req.name in ("l1jL2", "lpjU") and (req.base in (None, "L2"))) else ut
        rows.append((req.name, tag.label(), ds.norm(target, tag)))
    out.csv("norms.csv", ["norm", "params", "value"], rows)
    return True


def cmd_envelope(cfg: EnvelopeConfig, args, out: Outputs) -> bool:
    grid = cfg.grid.spec()
    s = cfg.s if cfg.s is not None else grid.d / 2 + 2.25
    u = _data(cfg.field, grid, s)
    target = u if cfg.space == "H" else free_evolution(u)
    env = ds.frequency_envelope(target, s, cfg.space, cfg.delta)
    out.csv("envelope.csv", ["j", "a_j"], [(j, a) for j, a in enumerate(env.a)])
    out.json("envelope.json", {"delta": env.delta, "norm_of_u": env.norm_of_u, "flags": env.flags})
    return env.slowly_varying and env.dominates


def cmd_verify(cfg: VerifyConfig, args, out: Outputs) -> bool:
    name = args.estimate or cfg.estimate
    if name is None:
        raise ValidationError("verify needs --estimate NAME")
    if name not in lab.ESTIMATES:
        raise ValidationError(f"unknown-estimate {name!r}; expected one of {', '.join(lab.ESTIMATES)}")
    seed = args.seed if args.seed is not None else cfg.seed
    count = args.count if args.count is not None else cfg.count
    spec = lab.EnsembleSpec(
        seed=seed,
        count=count,
        s=cfg.s,
        bump_centers=cfg.bump_centers,
        amplitude=cfg.amplitude,
        grid=cfg.grid.spec(),
    )
    params = dict(cfg.params)
    if cfg.baseline is not None:
        params["baseline"] = cfg.baseline
    rep = lab.verify(name, spec, params)
    report, summary = "report.csv", "summary.json"
    if out.target is not None:
        report, summary = out.target.name, out.target.stem + ".json"
    out.csv(report, ["sample", "band", "lhs", "rhs", "ratio"], [(x.index, x.band, x.lhs, x.rhs, x.ratio) for x in rep.samples])
    out.json(summary, rep.summary())
    return rep.passed


def _bump(grid: GridSpec, width: float) -> np.ndarray:
    x = grid.coords()
    r2 = sum((c - grid.L / 2) ** 2 for c in x)
    return np.exp(-r2 / (2 * width**2))


def cmd_solve_linear(cfg: SolveLinearConfig, args, out: Outputs) -> bool:
    grid = cfg.grid.spec()
    u0 = _data(cfg.u0, grid, cfg.s)
    g = None
    if cfg.metric.kind == "conformal-bump":
        eye = np.eye(grid.d)[(..., *([None] * grid.d))]
        g = eye * (1.0 + cfg.metric.amplitude * _bump(grid, cfg.metric.width))
    h = None
    if cfg.forcing.kind == "bump":
        prof = cfg.forcing.amplitude * _bump(grid, cfg.forcing.width)
        vals = np.cos(cfg.forcing.omega * grid.times)[:, None, None] * prof[None, None]
        h = SpaceTimeField(grid, np.broadcast_to(vals, (grid.M, grid.m, *grid.shape)))
    pcfg = PropagatorConfig(cfg.fixed_point_tol, cfg.max_inner_iters, cfg.substeps)
    rep = solve_linear(LinearProblem(grid, u0, g=g, h=h), pcfg)
    energy = energy_identity_residual(rep)
    mor = np.full(grid.M - 1, float("nan"))
    if cfg.morawetz is not None:
        spec = MorawetzSpec(cfg.morawetz.l, cfg.morawetz.axis, cfg.morawetz.x0)
        mor, _ = morawetz_residual(rep, spec, cfg.morawetz.j)
    rows = [(0, 0.0, rep.l2[0], "", "")]
    rows += [(n + 1, grid.times[n + 1], rep.l2[n + 1], energy[n], mor[n]) for n in range(grid.M - 1)]
    out.csv("diagnostics.csv", ["step", "t", "l2", "energy_residual", "morawetz_residual"], rows)
    out.field("solution.dff", rep.u)
    ok = True
    if h is None:
        ok = rep.conservation_drift <= cfg.max_drift
    return ok


def _metric(spec, d: int) -> MetricSpec:
    return metric_preset(spec, d) if isinstance(spec, str) else MetricSpec.from_strings(spec)


def _nonlinearity(spec) -> NonlinearitySpec:
    return nonlinearity_preset(spec) if isinstance(spec, str) else NonlinearitySpec.from_strings(spec)


def cmd_solve(cfg: SolveConfig, args, out: Outputs) -> bool:
    grid = cfg.grid.spec()
    u0 = _data(cfg.u0, grid, cfg.s)
    p = QuasilinearProblem(_metric(cfg.metric, grid.d), _nonlinearity(cfg.F), u0, cfg.s, cfg.eps0)
    trace = iterate(p, IterationConfig(cfg.tol, cfg.max_iters))
    out.field("solution.dff", trace.solution)
    out.csv("trace.csv", ["n", "l1Xs", "diff_sminus1", "contraction_ratio"], trace.rows())
    ok = trace.converged
    ratios = trace.contraction_ratios
    if any(r > cfg.max_contraction for r in ratios):
        ok = False
    if np.any(trace.solution.values != 0):
        ep = envelope_persistence(p, trace)
        out.csv("envelope.csv", ["j", "a_j", "b_j"], [(j, ep.a.a[j], ep.b.a[j]) for j in range(len(ep.a.a))])
        summary_env = ep.C
    else:
        summary_env = None
    out.json(
        "summary.json",
        {
            "converged": trace.converged,
            "iterations": len(trace.diffs),
            "final_ratio": trace.final_ratio,
            "contraction_ratios": ratios,
            "envelope_C": summary_env,
            "eps_gauge": p.eps_gauge,
        },
    )
    return ok


def cmd_scan(cfg: ScanConfig, args, out: Outputs) -> bool:
    a, b = cfg.j_range
    rep = lab.smoothing_scan(range(a, b + 1), cfg.metric, cfg.grid.spec(), cfg.amplitude, mode=cfg.mode)
    out.csv("scan.csv", ["j", "lhs", "rhs", "ratio"], [(x.band, x.lhs, x.rhs, x.ratio) for x in rep.samples])
    out.json("summary.json", rep.summary())
    return rep.passed


def cmd_profiles(cfg: ProfilesConfig, args, out: Outputs) -> bool:
    if cfg.points < 2 or cfg.r_max <= 0:
        raise ValidationError("need at least two points on a positive range")
    r = np.linspace(0.0, cfg.r_max, cfg.points)
    header, rows = dump_profiles(r, cfg.j_max)
    out.csv("profiles.csv", header, rows.tolist())
    return bool(np.all(np.abs(rows[:, -1][r <= 2.0 ** cfg.j_max] - 1.0) <= 1e-12))


HANDLERS = {
    "norms": cmd_norms,
    "envelope": cmd_envelope,
    "verify": cmd_verify,
    "solve-linear": cmd_solve_linear,
    "solve": cmd_solve,
    "smoothing-scan": cmd_scan,
    "dump-profiles": cmd_profiles,
}


# ---------------------------------------------------------------------------
# dispatch


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, help="ensemble seed")
    common.add_argument("--threads", type=int, default=1, help="worker cap (computation is single threaded)")
    common.add_argument("--assert", dest="check", action="store_true", help="exit 3 if the command's check fails")
    parser = argparse.ArgumentParser(prog="qlsch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "verify":
            p.add_argument("--estimate", help=f"one of {', '.join(lab.ESTIMATES)}")
            p.add_argument("--count", type=int, help="ensemble size")
    return parser


def _module_of(exc: BaseException) -> str:
    pkg = Path(__file__).resolve().parent
    mod = getattr(exc, "module", None)
    tb = exc.__traceback__
    last = None
    while tb is not None:
        path = Path(tb.tb_frame.f_code.co_filename).resolve()
        if path.parent == pkg:
            last = path.stem
        tb = tb.tb_next
    if last is not None and not (last == "cli" and mod not in (None, "qlsch")):
        return last
    return mod or "cli"


def _fail(code: int, module: str, detail: str) -> int:
    detail = " ".join(str(detail).split())
    print(f"ERROR {code} {module} {detail}", file=sys.stderr)
    return code


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgError(message)


def dispatch(argv=None) -> int:
    parser = build_parser()
    parser.__class__ = _Parser
    for action in parser._subparsers._group_actions:
        for p in action.choices.values():
            p.__class__ = _Parser
    try:
        args = parser.parse_args(argv)
    except _ArgError as exc:
        return _fail(1, "cli", str(exc))
    if args.threads is not None and args.threads < 1:
        return _fail(1, "cli", "--threads must be >= 1")
    try:
        cfg = load_config(args.command, args.config)
        out = Outputs(Path(args.out))
        ok = HANDLERS[args.command](cfg, args, out)
        out.commit()
    except ValidationError as exc:
        return _fail(1, _module_of(exc), exc)
    except NumericalError as exc:
        return _fail(2, _module_of(exc), exc)
    except FloatingPointError as exc:
        return _fail(2, _module_of(exc), exc)
    if args.check and not ok:
        return _fail(3, "cli", f"{args.command} check failed")
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
