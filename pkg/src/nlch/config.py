"""Scenario configuration files (TOML) and the objects built from them.

Sections: ``domain``, ``kernel``, ``potential``, ``scheme`` (with
``scheme.newton``), ``initial`` and ``output``.  Only ``domain.cells``,
``kernel.alpha`` and ``scheme.dt`` are required; everything else has a
documented default.  Validation collects every problem before failing,
with the line of the offending key where it can be found.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):  # pragma: no cover
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import ConstructionError, ValidationError
from .expr import ExpressionError, compile_expression
from .kernel import Kernel
from .operators import Grid, State
from .potential import Potential
from .timestepper import NewtonConfig, SchemeConfig, mollify_initial, random_initial, smooth_field

__all__ = ["ScenarioConfig", "load_config", "parse_config", "DEFAULTS"]

DEFAULTS: dict[str, dict[str, Any]] = {
    "domain": {"extents": None, "max_cells": 65536},
    "kernel": {"family": "homogeneous", "amplitude": 1.0, "modulation": None, "c0": None, "C0": None,
               "refinement": 4},
    "potential": {"family": "logarithmic", "T_abs": 1.0, "T_crit": 2.0, "coeffs": None, "a": None, "b": None,
                  "d": None},
    "scheme": {"theta_reg": 0.0, "splitting": "convex_split", "T_final": 0.1},
    "newton": {"tol": 1e-10, "max_iter": 50, "backtrack_factor": 0.5, "feasibility_margin": None},
    "initial": {"family": "noise", "m": 0.0, "amplitude": 0.01, "seed": 0, "expression": None, "path": None,
                "mollify": False, "smoothing": 0.0},
    "output": {"directory": "out", "snapshot_stride": 0, "diagnostic_stride": 1},
}

_KNOWN = {
    "domain": {"dimension", "extents", "cells", "max_cells"},
    "kernel": set(DEFAULTS["kernel"]) | {"alpha"},
    "potential": set(DEFAULTS["potential"]),
    "scheme": set(DEFAULTS["scheme"]) | {"dt", "newton"},
    "newton": set(DEFAULTS["newton"]),
    "initial": set(DEFAULTS["initial"]),
    "output": set(DEFAULTS["output"]),
}


@dataclass
class ScenarioConfig:
    domain: dict
    kernel: dict
    potential: dict
    scheme: SchemeConfig
    T_final: float
    initial: dict
    output: dict
    source: str | None = None
    raw: dict = field(default_factory=dict, repr=False)

    # -- builders ---------------------------------------------------------
    def grid(self) -> Grid:
        return Grid(tuple(self.domain["extents"]), tuple(self.domain["cells"]), self.domain["max_cells"])

    def build_kernel(self) -> Kernel:
        k = self.kernel
        dim = len(self.domain["cells"])
        if k["family"] == "modulated":
            names = ["x1", "x2", "y1", "y2", "x", "y"]
            fn = compile_expression(k["modulation"], names)

            def modulation(x, y, _fn=fn):
                env = {"x1": x[..., 0], "y1": y[..., 0], "x": x[..., 0], "y": y[..., 0]}
                env["x2"] = x[..., 1] if dim > 1 else np.zeros_like(x[..., 0])
                env["y2"] = y[..., 1] if dim > 1 else np.zeros_like(y[..., 0])
                return _fn(**env)

            modulation.source = k["modulation"]  # type: ignore[attr-defined]
            return Kernel(k["alpha"], dim, "modulated", k["amplitude"], modulation=modulation,
                          c0=k["c0"], C0=k["C0"])
        return Kernel(k["alpha"], dim, "homogeneous", k["amplitude"])

    def build_potential(self) -> Potential:
        p = self.potential
        return Potential(p["family"], p["T_abs"], p["T_crit"], p["coeffs"], p["a"], p["b"], p["d"])

    def build_initial(self, grid: Grid, seed: int | None = None) -> State:
        ini = self.initial
        fam = ini["family"]
        if fam == "noise":
            st = random_initial(grid, ini["m"], ini["amplitude"], ini["seed"] if seed is None else seed)
        elif fam == "expression":
            names = ["x1", "x2", "x"]
            fn = compile_expression(ini["expression"], names, allow_functions=True)
            X = grid.centers
            env = {"x1": X[:, 0], "x": X[:, 0], "x2": X[:, 1] if grid.dim > 1 else np.zeros(grid.N)}
            c = fn(**env)
            st = State(c, float(np.mean(c)))
        else:
            from .io import read_snapshot

            snap = read_snapshot(ini["path"])
            if tuple(snap.cells) != tuple(grid.cells):
                raise ValidationError(f"snapshot cells {snap.cells} do not match grid {grid.cells}")
            st = snap.state
        if ini["smoothing"] > 0:
            st = smooth_field(st, grid, ini["smoothing"])
        if ini["mollify"] and self.scheme.theta_reg > 0:
            st = mollify_initial(st, grid, self.scheme.theta_reg)
        return st


def _line_of(text: str, section: str | None, key: str) -> int | None:
    """Best-effort line number of ``key`` inside ``[section]``."""
    lines = text.splitlines()
    current = None
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for no, line in enumerate(lines, 1):
        m = re.match(r"^\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            continue
        if pat.match(line) and (section is None or current == section):
            return no
    return None


class _Collector:
    def __init__(self, text: str):
        self.text = text
        self.problems: list[str] = []

    def add(self, section: str, key: str, message: str):
        sec_name = "scheme.newton" if section == "newton" else section
        line = _line_of(self.text, sec_name, key) if key else None
        where = f"line {line}: " if line else ""
        self.problems.append(f"{where}{sec_name}.{key}: {message}" if key else f"{where}{sec_name}: {message}")


def _num(col, sec, key, val, positive=False, nonneg=False, integer=False):
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        col.add(sec, key, f"must be a number, got {val!r}")
        return None
    if integer and not isinstance(val, int):
        col.add(sec, key, f"must be an integer, got {val!r}")
        return None
    if positive and not val > 0:
        col.add(sec, key, f"must be positive, got {val}")
        return None
    if nonneg and not val >= 0:
        col.add(sec, key, f"must be nonnegative, got {val}")
        return None
    return val


def parse_config(text: str, source: str | None = None) -> ScenarioConfig:
    """Parse and validate TOML text; raises :class:`ValidationError` listing every problem."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError([f"parse error: {exc}"]) from None
    col = _Collector(text)
    raw = data

    for sec in data:
        if sec not in _KNOWN:
            col.add(sec, "", "unknown section")
    sections = {}
    for sec in ("domain", "kernel", "potential", "scheme", "initial", "output"):
        body = data.get(sec, {})
        if not isinstance(body, dict):
            col.add(sec, "", "must be a table")
            body = {}
        sections[sec] = body
    newton_raw = sections["scheme"].get("newton", {})
    if not isinstance(newton_raw, dict):
        col.add("scheme", "newton", "must be a table")
        newton_raw = {}
    for sec, body in list(sections.items()) + [("newton", newton_raw)]:
        for key in body:
            if key not in _KNOWN[sec]:
                col.add(sec, key, "unknown key")

    def merged(sec, body):
        out = dict(DEFAULTS.get(sec, {}))
        out.update({k: v for k, v in body.items() if k in _KNOWN[sec] and k != "newton"})
        return out

    dom = merged("domain", sections["domain"])
    ker = merged("kernel", sections["kernel"])
    pot = merged("potential", sections["potential"])
    sch = merged("scheme", sections["scheme"])
    nwt = merged("newton", newton_raw)
    ini = merged("initial", sections["initial"])
    out = merged("output", sections["output"])

    # domain
    cells = dom.get("cells")
    if cells is None:
        col.add("domain", "cells", "is required")
        cells = [1]
    elif not (isinstance(cells, list) and 1 <= len(cells) <= 2
              and all(isinstance(c, int) and not isinstance(c, bool) and c >= 1 for c in cells)):
        col.add("domain", "cells", "must be a list of 1 or 2 positive integers")
        cells = [1]
    dim = len(cells)
    if "dimension" in dom and dom["dimension"] != dim:
        col.add("domain", "dimension", f"is {dom['dimension']} but cells has {dim} entries")
    ext = dom["extents"] if dom["extents"] is not None else [1.0] * dim
    if not (isinstance(ext, list) and len(ext) == dim
            and all(isinstance(e, (int, float)) and not isinstance(e, bool) and e > 0 for e in ext)):
        col.add("domain", "extents", f"must be a list of {dim} positive numbers")
        ext = [1.0] * dim
    dom["extents"] = [float(e) for e in ext]
    dom["cells"] = list(cells)
    _num(col, "domain", "max_cells", dom["max_cells"], positive=True, integer=True)
    if isinstance(dom["max_cells"], int) and int(np.prod(cells)) > dom["max_cells"]:
        col.add("domain", "cells", f"{int(np.prod(cells))} cells exceed max_cells={dom['max_cells']}")

    # kernel
    if "alpha" not in ker:
        col.add("kernel", "alpha", "is required")
    else:
        a = _num(col, "kernel", "alpha", ker["alpha"])
        if a is not None and not 1.0 < a < 2.0:
            col.add("kernel", "alpha", f"must lie in the open interval (1, 2), got {a}")
    if ker["family"] not in ("homogeneous", "modulated"):
        col.add("kernel", "family", f"must be 'homogeneous' or 'modulated', got {ker['family']!r}")
    _num(col, "kernel", "amplitude", ker["amplitude"], positive=True)
    _num(col, "kernel", "refinement", ker["refinement"], positive=True, integer=True)
    if ker["family"] == "modulated":
        if not isinstance(ker["modulation"], str):
            col.add("kernel", "modulation", "modulated kernels need a modulation expression")
        else:
            try:
                compile_expression(ker["modulation"], ["x1", "x2", "y1", "y2", "x", "y"])
            except ExpressionError as exc:
                col.add("kernel", "modulation", str(exc))
        for key in ("c0", "C0"):
            if ker[key] is None:
                col.add("kernel", key, "modulated kernels must declare bound constants")
            else:
                _num(col, "kernel", key, ker[key], positive=True)

    # potential
    potential_obj = None
    if pot["family"] not in ("logarithmic", "polynomial"):
        col.add("potential", "family", f"must be 'logarithmic' or 'polynomial', got {pot['family']!r}")
    else:
        try:
            potential_obj = Potential(pot["family"], pot["T_abs"], pot["T_crit"], pot["coeffs"], pot["a"],
                                      pot["b"], pot["d"])
        except (ConstructionError, TypeError, ValueError) as exc:
            col.add("potential", "", str(exc))

    # scheme
    dt = sch.get("dt")
    if dt is None:
        col.add("scheme", "dt", "is required")
    else:
        _num(col, "scheme", "dt", dt, positive=True)
    _num(col, "scheme", "theta_reg", sch["theta_reg"], nonneg=True)
    _num(col, "scheme", "T_final", sch["T_final"], nonneg=True)
    if sch["splitting"] not in ("convex_split", "fully_implicit"):
        col.add("scheme", "splitting", f"must be 'convex_split' or 'fully_implicit', got {sch['splitting']!r}")
    _num(col, "newton", "tol", nwt["tol"], positive=True)
    _num(col, "newton", "max_iter", nwt["max_iter"], positive=True, integer=True)
    bf = _num(col, "newton", "backtrack_factor", nwt["backtrack_factor"])
    if bf is not None and not 0 < bf < 1:
        col.add("newton", "backtrack_factor", "must lie in (0, 1)")
    if nwt["feasibility_margin"] is not None:
        fm = _num(col, "newton", "feasibility_margin", nwt["feasibility_margin"], positive=True)
        if fm is not None and potential_obj is not None and not fm < (potential_obj.b - potential_obj.a) / 4:
            col.add("newton", "feasibility_margin", "must be below (b - a)/4")

    # initial data
    if ini["family"] not in ("noise", "expression", "snapshot"):
        col.add("initial", "family", f"must be 'noise', 'expression' or 'snapshot', got {ini['family']!r}")
    m = _num(col, "initial", "m", ini["m"])
    if m is not None and potential_obj is not None and not potential_obj.a < m < potential_obj.b:
        col.add("initial", "m", f"mean must lie in ({potential_obj.a}, {potential_obj.b}), got {m}")
    amp = _num(col, "initial", "amplitude", ini["amplitude"], nonneg=True)
    if (amp is not None and m is not None and potential_obj is not None and ini["family"] == "noise"
            and not (potential_obj.a < m - 2 * amp and m + 2 * amp < potential_obj.b)):
        col.add("initial", "amplitude", "noise could leave the open interval (a, b)")
    _num(col, "initial", "seed", ini["seed"], nonneg=True, integer=True)
    if ini["family"] == "expression":
        if not isinstance(ini["expression"], str):
            col.add("initial", "expression", "is required for family 'expression'")
        else:
            try:
                compile_expression(ini["expression"], ["x1", "x2", "x"], allow_functions=True)
            except ExpressionError as exc:
                col.add("initial", "expression", str(exc))
    if ini["family"] == "snapshot" and not isinstance(ini["path"], str):
        col.add("initial", "path", "is required for family 'snapshot'")
    _num(col, "initial", "smoothing", ini["smoothing"], nonneg=True)
    if not isinstance(ini["mollify"], bool):
        col.add("initial", "mollify", "must be true or false")

    # output
    if not isinstance(out["directory"], str):
        col.add("output", "directory", "must be a string")
    _num(col, "output", "snapshot_stride", out["snapshot_stride"], nonneg=True, integer=True)
    _num(col, "output", "diagnostic_stride", out["diagnostic_stride"], positive=True, integer=True)

    if col.problems:
        raise ValidationError(col.problems)

    newton = NewtonConfig(float(nwt["tol"]), int(nwt["max_iter"]), float(nwt["backtrack_factor"]),
                          None if nwt["feasibility_margin"] is None else float(nwt["feasibility_margin"]))
    if newton.feasibility_margin is None:
        newton.feasibility_margin = 1e-9 * (potential_obj.b - potential_obj.a)
    scheme = SchemeConfig(float(sch["dt"]), float(sch["theta_reg"]), sch["splitting"], newton)
    ker["alpha"] = float(ker["alpha"])
    return ScenarioConfig(dom, ker, pot, scheme, float(sch["T_final"]), ini, out, source, raw)


def load_config(path) -> ScenarioConfig:
    """Read and validate a scenario file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError([f"cannot read {path}: {exc.strerror}"]) from None
    return parse_config(text, str(path))
