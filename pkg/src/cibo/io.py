"""Configuration files and trajectory / table serialisation.

Config files are INI-style with four optional sections::

    [object]    name = gear1        ; catalog entry used as the base
                mass = 140 g        ; g/kg and mm/m suffixes are accepted
    [planner]   kind = cibo-com     ; any PlanConfig field
    [solver]    delta_min = 1e-8    ; SolverOptions overrides
    [eval]      kind = mass         ; PerturbationSpec fields

Unknown sections or keys are rejected with the offending line number.
Trajectories are CSV with one leading ``#`` line holding a JSON header.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import io as _io
import json
import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .evaluation import PerturbationSpec
from .exceptions import CiboError, ConfigError
from .kinematics import (ContactForceKnot, ControlKnot, Knot, StateKnot,
                         control_to_world, fk)
from .nlp import SolveReport, SolverOptions
from .objects import CATALOG, ObjectSpec
from .planner import PlanConfig, Trajectory, default_options

SCHEMA_VERSION = 1

OBJECT_KEYS = ("name", "mass", "l", "w", "mu_A", "mu_B", "mu_P", "shape", "l1", "l2", "w1", "w2")
_LENGTH_KEYS = {"l", "w", "l1", "l2", "w1", "w2"}
_UNITS = {"mass": {"kg": 1.0, "g": 1e-3}, "length": {"m": 1.0, "mm": 1e-3, "cm": 1e-2}}
_PLANNER_FIELDS = {f.name: f for f in fields(PlanConfig) if f.name != "spec"}
_SOLVER_FIELDS = {f.name: f for f in fields(SolverOptions) if f.name != "log"}
_EVAL_FIELDS = {f.name: f for f in fields(PerturbationSpec)}
_TUPLE_FIELDS = {"Q", "R", "x_s", "x_g", "theta_range", "T_bounds"}
_NUMBER = re.compile(r"^\s*([-+0-9.eE]+)\s*([a-zA-Z]*)\s*$")

BASE_COLUMNS = ("k", "t", "theta", "p_y", "theta_dot", "p_y_dot", "f_nP", "f_tP", "f_x", "f_y",
                "f_nA", "f_tA", "f_nB", "f_tB", "A_x", "A_y", "P_x", "P_y", "C_x")
MARGIN_COLUMNS = {"mass": ("eps_plus", "eps_minus"), "com": ("r_plus", "r_minus"),
                  "friction": ("epsA_plus", "epsA_minus", "epsB_plus", "epsB_minus")}
TAIL_COLUMNS = ("mode", "T1", "T2")


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class RunConfig:
    spec: ObjectSpec
    planner: PlanConfig
    solver: dict = field(default_factory=dict)      # overrides of the planner defaults
    eval: Optional[PerturbationSpec] = None

    def solver_options(self) -> SolverOptions:
        try:
            return replace(default_options(self.planner), **self.solver)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[solver]: {exc}") from None

    def to_dict(self) -> dict:
        spec = {k: getattr(self.spec, k) for k in OBJECT_KEYS}
        planner = {k: _plain(getattr(self.planner, k)) for k in _PLANNER_FIELDS}
        ev = None if self.eval is None else {k: _plain(getattr(self.eval, k)) for k in _EVAL_FIELDS}
        return {"object": spec, "planner": planner, "solver": dict(self.solver), "eval": ev}

    def config_hash(self) -> str:
        """Digest of every field that changes what gets computed (names excluded)."""
        d = self.to_dict()
        d["object"].pop("name")
        d["solver"] = self.solver_options().to_dict()
        blob = json.dumps(d, sort_keys=True, default=_plain)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _plain(v):
    if isinstance(v, (tuple, list, np.ndarray)):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def _err(lines, section, key, msg):
    where = lines.get((section, key.lower() if key else None))
    prefix = f"line {where}: " if where else ""
    return ConfigError(f"{prefix}[{section}] {key + ': ' if key else ''}{msg}")


def _line_index(text):
    """(section, key) -> 1-based line number, for error messages."""
    out, section = {}, None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            out[(section, None)] = i
        elif section and ("=" in line or ":" in line):
            key = re.split(r"[=:]", line, 1)[0].strip().lower()
            out[(section, key)] = i
    return out


def _quantity(text, dim):
    m = _NUMBER.match(text)
    if not m:
        raise ValueError(f"expected a number with optional unit, got {text!r}")
    value, unit = float(m.group(1)), m.group(2)
    if not unit:
        return value
    table = _UNITS[dim]
    if unit not in table:
        raise ValueError(f"unit {unit!r} not one of {sorted(table)}")
    return value * table[unit]


def _scalar(text):
    t = text.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "auto", ""):
        return None
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        return t


def _list(text):
    return tuple(float(v) for v in re.split(r"[,\s]+", text.strip()) if v)


def _parse_object(sec, lines):
    keys = {k.lower(): k for k in OBJECT_KEYS}
    vals = {}
    for raw, text in sec.items():
        key = keys.get(raw)
        if key is None:
            raise _err(lines, "object", raw, "unknown key")
        try:
            if key == "mass":
                vals[key] = _quantity(text, "mass")
            elif key in _LENGTH_KEYS:
                vals[key] = _quantity(text, "length")
            elif key.startswith("mu_"):
                vals[key] = float(text)
            else:
                vals[key] = text.strip()
        except ValueError as exc:
            raise _err(lines, "object", raw, str(exc)) from None
    name = vals.pop("name", None)
    if name in CATALOG:
        try:
            return replace(CATALOG[name], **vals)
        except CiboError as exc:
            raise _err(lines, "object", None, str(exc)) from None
    # any other name is a label for a fully specified object
    if name is not None:
        if not {"mass", "l", "w"} <= set(vals) and not {"l1", "l2", "w1", "w2"} <= set(vals):
            raise _err(lines, "object", "name", f"unknown catalog object {name!r}")
        vals["name"] = name
    try:
        if "shape" not in vals:
            vals["shape"] = "rectangle"
        if vals.get("shape") == "peg":
            vals.setdefault("l", vals.get("l2"))
            vals.setdefault("w", vals.get("w2"))
        return ObjectSpec(**vals)
    except TypeError as exc:
        raise _err(lines, "object", None, f"incomplete object: {exc}") from None
    except CiboError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise _err(lines, "object", None, str(exc)) from None


def _parse_fields(section, sec, known, lines):
    lookup = {k.lower(): k for k in known}
    out = {}
    for raw, text in sec.items():
        key = lookup.get(raw)
        if key is None:
            raise _err(lines, section, raw, "unknown key")
        listy = key in _TUPLE_FIELDS or (key in ("lo", "hi", "values")
                                         and re.search(r"[,\s]", text.strip()))
        try:
            out[key] = _list(text) if listy else _scalar(text)
        except ValueError as exc:
            raise _err(lines, section, raw, str(exc)) from None
    return out


def parse_config(text: str) -> RunConfig:
    lines = _line_index(text)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str.lower
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).replace("\n", " ")) from None
    unknown = set(cp.sections()) - {"object", "planner", "solver", "eval"}
    if unknown:
        sec = sorted(unknown)[0]
        raise _err(lines, sec, None, "unknown section")
    if not cp.has_section("object"):
        raise ConfigError("missing [object] section")
    spec = _parse_object(cp["object"], lines)
    pl = _parse_fields("planner", cp["planner"] if cp.has_section("planner") else {},
                       _PLANNER_FIELDS, lines)
    try:
        planner = PlanConfig(spec=spec, **pl)
    except ConfigError as exc:
        raise _err(lines, "planner", None, str(exc)) from None
    except (TypeError, ValueError) as exc:
        raise _err(lines, "planner", None, str(exc)) from None
    solver = _parse_fields("solver", cp["solver"] if cp.has_section("solver") else {},
                           _SOLVER_FIELDS, lines)
    ev = None
    if cp.has_section("eval"):
        raw = _parse_fields("eval", cp["eval"], _EVAL_FIELDS, lines)
        for key in ("lo", "hi"):
            if isinstance(raw.get(key), tuple) and len(raw[key]) == 1:
                raw[key] = raw[key][0]
        if "values" in raw and not isinstance(raw["values"], tuple):
            raw["values"] = (float(raw["values"]),)
        try:
            ev = PerturbationSpec(**raw)
        except (ConfigError, TypeError) as exc:
            raise _err(lines, "eval", None, str(exc)) from None
    cfg = RunConfig(spec=spec, planner=planner, solver=solver, eval=ev)
    cfg.solver_options()  # validate now rather than at solve time
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def emit_config(cfg: RunConfig) -> str:
    """INI text that parses back to an equal :class:`RunConfig` (SI units)."""
    d = cfg.to_dict()
    out = ["[object]"]
    for k in OBJECT_KEYS:
        if d["object"][k] is not None:
            out.append(f"{k} = {_fmt(d['object'][k])}")
    out.append("\n[planner]")
    out += [f"{k} = {_fmt(getattr(cfg.planner, k))}" for k in _PLANNER_FIELDS]
    if cfg.solver:
        out.append("\n[solver]")
        out += [f"{k} = {_fmt(v)}" for k, v in cfg.solver.items()]
    if cfg.eval is not None:
        out.append("\n[eval]")
        for k in _EVAL_FIELDS:
            v = getattr(cfg.eval, k)
            if v is not None:
                out.append(f"{k} = {_fmt(v)}")
    return "\n".join(out) + "\n"


# ------------------------------------------------------------ trajectory

def margin_family(cfg: PlanConfig) -> str:
    """Which margin columns a plan writes; baselines report the mass margin."""
    return {"baseline": "mass", "cibo-mass": "mass", "cibo-com": "com",
            "cibo-friction": "friction"}.get(cfg.kind, cfg.margin_kind)


def _margin_values(traj: Trajectory, family: str, k: int):
    if family == "friction":
        a, b = traj.margins["friction-A"][k], traj.margins["friction-B"][k]
        return (a.eps_plus, a.eps_minus, b.eps_plus, b.eps_minus)
    iv = traj.margins[family][k]
    return (iv.eps_plus, iv.eps_minus)


def _g17(v) -> str:
    return format(float(v), ".17g")


def trajectory_columns(family: str, patch: bool):
    cols = BASE_COLUMNS + MARGIN_COLUMNS[family] + TAIL_COLUMNS
    if family == "friction":
        cols += ("epsA_star", "epsB_star")
    if patch:
        cols += ("patch_len",)
    return cols


def write_trajectory(traj: Trajectory, path, run: Optional[RunConfig] = None) -> Path:
    run = run or RunConfig(spec=traj.cfg.spec, planner=traj.cfg)
    family = margin_family(traj.cfg)
    patch = traj.patch_len is not None
    cols = trajectory_columns(family, patch)
    T1, T2 = traj.durations if traj.durations else (float(traj.times[-1]), 0.0)
    header = {"schema": SCHEMA_VERSION, "config_hash": run.config_hash(),
              "config": run.to_dict(), "margin_family": family,
              "report": traj.report.summary() if traj.report else None,
              "worst": _worst_summary(traj, family)}
    buf = _io.StringIO()
    buf.write("# " + json.dumps(header, default=_plain, allow_nan=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for k, kn in enumerate(traj.knots):
        s, u, c, g = kn.state, kn.control, kn.contact, kn.geom
        fx, fy = control_to_world(s.theta, u.f_nP, u.f_tP)
        row = [k, traj.times[k], s.theta, s.p_y, s.theta_dot, s.p_y_dot, u.f_nP, u.f_tP, fx, fy,
               c.f_nA, c.f_tA, c.f_nB, c.f_tB, g.A[0], g.A[1], g.P[0], g.P[1], g.C[0]]
        row += list(_margin_values(traj, family, k))
        row += [int(traj.modes[k]), T1, T2]
        if family == "friction":
            oA = traj.others.get("friction-B")
            oB = traj.others.get("friction-A")
            row += [oA[k] if oA is not None else 0.0, oB[k] if oB is not None else 0.0]
        if patch:
            row.append(_patch_len_of(traj, k))
        w.writerow([str(v) if isinstance(v, (int, np.integer)) else _g17(v) for v in row])
    path = Path(path)
    path.write_text(buf.getvalue())
    return path


def _patch_len_of(traj, k):
    return float(np.clip(traj.patch_len[k], 0.0, traj.cfg.spec.face_width))


def _worst_summary(traj, family):
    kinds = ("friction-A", "friction-B") if family == "friction" else (family,)
    out = {}
    for kind in kinds:
        if not traj.converged:
            out[kind] = None
            continue
        try:
            plus, minus, (kp, km) = traj.worst_margin(kind)
            out[kind] = {"plus": plus, "minus": minus, "k_plus": kp, "k_minus": km}
        except CiboError:
            out[kind] = None
    return out


@dataclass
class TrajectoryFile:
    header: dict
    columns: tuple
    data: np.ndarray   # (rows, columns)

    def column(self, name) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    @property
    def spec(self) -> ObjectSpec:
        o = dict(self.header["config"]["object"])
        return ObjectSpec(**o)

    @property
    def family(self) -> str:
        return self.header["margin_family"]


def read_trajectory(path) -> TrajectoryFile:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read trajectory {path}: {exc.strerror}") from None
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# "):
        raise ConfigError("line 1: missing JSON header")
    try:
        header = json.loads(lines[0][2:])
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line 1: bad JSON header ({exc.msg})") from None
    if header.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"line 1: unsupported schema {header.get('schema')!r}")
    reader = list(csv.reader(lines[1:]))
    if not reader:
        raise ConfigError("line 2: missing column header")
    cols = tuple(reader[0])
    rows = []
    for i, r in enumerate(reader[1:], 3):
        if len(r) != len(cols):
            raise ConfigError(f"line {i}: expected {len(cols)} fields, got {len(r)}")
        try:
            vals = [float(v) for v in r]
        except ValueError:
            raise ConfigError(f"line {i}: non-numeric field") from None
        if not all(math.isfinite(v) for v in vals[:len(BASE_COLUMNS)]):
            raise ConfigError(f"line {i}: non-finite value")
        rows.append(vals)
    if not rows:
        raise ConfigError("trajectory file has no knots")
    return TrajectoryFile(header=header, columns=cols, data=np.array(rows, float))


def knots_from_file(tf: TrajectoryFile):
    """Rebuild knots; geometry is recomputed from the stored states."""
    spec = tf.spec
    patch = "patch_len" in tf.columns
    out = []
    for row in tf.data:
        r = dict(zip(tf.columns, row))
        geom = fk(r["theta"], r["p_y"], spec, int(r["mode"]),
                  patch_len=r["patch_len"] if patch else None)
        st = StateKnot.from_rate(r["theta"], r["p_y"], r["theta_dot"], r["p_y_dot"])
        fc = ContactForceKnot(r["f_nA"], r["f_tA"], r["f_nB"], r["f_tB"])
        out.append(Knot(st, ControlKnot(r["f_nP"], r["f_tP"]), fc, geom))
    return out


def plan_config_from_file(tf: TrajectoryFile) -> PlanConfig:
    raw = {k: tuple(v) if isinstance(v, list) else v
           for k, v in tf.header["config"]["planner"].items()}
    return PlanConfig(spec=tf.spec, **raw)


def trajectory_from_file(tf: TrajectoryFile) -> Trajectory:
    """A :class:`Trajectory` carrying the stored knots and freshly computed margins."""
    from . import margins as mg
    from .planner import _safe_margin

    cfg = plan_config_from_file(tf)
    knots = knots_from_file(tf)
    rep = tf.header.get("report") or {}
    report = SolveReport(status=rep.get("status", "unknown"), objective=rep.get("objective", np.nan),
                         residuals=rep.get("residuals", {}),
                         stationarity=rep.get("stationarity", np.nan), stages=[],
                         iterations=rep.get("iterations", 0), wall_time=rep.get("wall_time", 0.0),
                         final_delta=rep.get("final_delta", np.nan))
    patch = "patch_len" in tf.columns
    T1, T2 = tf.column("T1")[0], tf.column("T2")[0]
    traj = Trajectory(cfg=cfg, knots=knots, times=tf.column("t"),
                      modes=tf.column("mode").astype(int), margins={}, solver_margins={},
                      discrepancy={}, others={}, report=report,
                      durations=(T1, T2) if cfg.kind in ("cibo-modes", "hierarchical") else None,
                      patch_len=tf.column("patch_len") if patch else None)
    if "epsA_star" in tf.columns:
        traj.others = {"friction-A": tf.column("epsB_star"), "friction-B": tf.column("epsA_star")}
    for kind in mg.KINDS:
        others = traj.others.get(kind, np.zeros(len(knots)))
        traj.margins[kind] = [_safe_margin(inp, kind, o)
                              for inp, o in zip(traj.margin_inputs(), others)]
    return traj


def recompute_margins(tf: TrajectoryFile, kind: Optional[str] = None):
    """Per-knot margins recomputed from a trajectory file.

    Returns ``(columns, rows)`` where each row starts with ``k, t``.  Knots
    whose margins are undefined get NaN entries.
    """
    from . import margins as mg

    family = kind or tf.family
    if family not in MARGIN_COLUMNS:
        raise ConfigError(f"unknown margin kind {family!r}")
    spec = tf.spec
    patch = "patch_len" in tf.columns
    rows = []
    for i, kn in enumerate(knots_from_file(tf)):
        inp = mg.KnotMarginInputs.from_knot(kn.geom, kn.control, spec, kn.contact, patch=patch)
        try:
            if family == "friction":
                oA = tf.column("epsA_star")[i] if "epsA_star" in tf.columns else 0.0
                oB = tf.column("epsB_star")[i] if "epsB_star" in tf.columns else 0.0
                a, b = mg.friction_margin(inp, eps_A_other=oA, eps_B_other=oB)
                vals = [a.eps_plus, a.eps_minus, b.eps_plus, b.eps_minus]
            else:
                iv = mg.margin(inp, family)
                vals = [iv.eps_plus, iv.eps_minus]
        except CiboError:
            vals = [float("nan")] * len(MARGIN_COLUMNS[family])
        rows.append([int(tf.column("k")[i]), tf.column("t")[i]] + vals)
    return ("k", "t") + MARGIN_COLUMNS[family], rows


# ---------------------------------------------------------------- tables

def write_table(path, columns, rows) -> Optional[Path]:
    """CSV table; ``path`` of ``None`` or ``-`` returns the text instead."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    if path in (None, "-"):
        return buf.getvalue()
    p = Path(path)
    p.write_text(buf.getvalue())
    return p


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _g17(v)
    return str(v)
