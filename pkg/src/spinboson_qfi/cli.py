"""Batch command-line front end.

Usage::

    spinboson-qfi <command> --config run.ini [--out DIR] [--threads K] [--seed U64]

Commands: ``qfi``, ``trajectories``, ``oracle``, ``meanfield``, ``check-class``.

Configuration is an INI file (sections ``[model]``, ``[space]``, ``[run]``,
``[oracle]``, ``[meanfield]``, ``[check_class]``, ``[outputs]``) or the same
structure as JSON.  Number fields in INI files may use ``pi``, e.g.
``phi_lo = pi/2``.  Unknown sections or keys are rejected before anything
runs.

Every command writes ``manifest.json`` (schema 1) next to its data files.
The manifest echoes the full configuration with defaults filled in, so it
can be fed back as ``--config``.  Each CSV starts with a
``# manifest_hash <sha1>`` line; the hash covers the command, the
configuration and the package version, so an identical rerun produces
identical CSVs.

Output files per command (``outputs.formats`` selects CSV and/or JSON;
the manifest is always written):

``qfi``
    ``qfi.csv`` with columns ``t, F_SE``.
``trajectories``
    ``fisher.csv`` with columns ``t, F_SE, F_total, I_E, F_S, stderr_total``
    and ``condition_II.csv`` with columns ``t, B_first, max_abs_B``
    (``B`` of trajectory 0 and the ensemble maximum of ``|B|`` at each
    sample).  A ``phi_lo`` sweep appends ``_phi<i>`` to both names.
    ``trajectories.json`` summarizes maxima of ``|B|`` and Fock leakage.
    With ``dump_trajectories = k`` the first ``k`` trajectories are also
    written to ``records/[phi<i>_]traj<k>.csv`` with columns
    ``step, t, outcome, A, B, phi_norm_sq``; ``outcome`` is the click bit
    or the homodyne current of the step ending at that row.
``oracle``
    ``oracle.json``: exact enumeration over all counting records.
``meanfield``
    ``branches.csv`` (``lambda, branch, m_x, m_y, m_z, m_q, m_p,
    stability``), ``meanfield.json`` and, if a flow is requested,
    ``flow.csv`` (``t, m_x, m_y, m_z, m_q, m_p``).
``check-class``
    ``class_report.json``.
"""

from __future__ import annotations

import argparse
import ast
import configparser
import copy
import csv
import hashlib
import json
import logging
import math
import operator
import os
import re
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .fisher import (
    check_condition_II,
    check_saturating_class,
    class_closure_test,
    enumerate_counting_records,
    propagate_two_sided,
    qfi_system_environment,
    trajectory_fisher,
)
from .hilbert import CompositeSpace, dicke_number_state, spin_coherent_state
from .meanfield import (
    branch_table,
    critical_coupling,
    integrate_meanfield,
    locate_pitchfork,
)
from .models import Model, ModelParams, Target, build_dH, build_hamiltonian, build_jump_operator
from .trajectories import (
    LEAKAGE_TOLERANCE,
    DiscretizationError,
    EnsembleConfig,
    FockLeakageError,
    ModelContext,
    TrajectoryError,
    run_ensemble,
    run_trajectory,
    write_trajectory_csv,
)

log = logging.getLogger("spinboson_qfi")

MANIFEST_SCHEMA_VERSION = 1
EXIT_CONFIG = 2
EXIT_NUMERICS = 3


class ConfigError(ValueError):
    """The configuration failed parsing or schema validation."""


_number = {"type": "number"}
_nonneg = {"type": "number", "minimum": 0}
_positive = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "space"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["model"],
            "properties": {
                "model": {"enum": [m.value for m in Model]},
                "omega": _number,
                "delta_spin": _number,
                "delta_boson": _number,
                "lambda": _number,
                "kappa": _positive,
                "gamma": _positive,
            },
        },
        "space": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n_spins", "fock_cutoff"],
            "properties": {
                "n_spins": {"type": "integer", "minimum": 1},
                "fock_cutoff": {"type": "integer", "minimum": 0},
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "unravelling": {"enum": ["counting", "homodyne", "none"]},
                "target": {"enum": [t.value for t in Target]},
                "initial": {"type": "string"},
                "dt": _positive,
                "ode_dt": _positive,
                "t_final": _nonneg,
                "t_output": _positive,
                "n_traj": {"type": "integer", "minimum": 0},
                "master_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "sample_stride": {"type": "integer", "minimum": 1},
                "phi_lo": {"type": "array", "items": _number, "minItems": 1},
                "sampler": {"enum": ["bernoulli", "waiting"]},
                "homodyne_drift": {"enum": ["first_order", "exponential"]},
                "chunk_size": {"type": "integer", "minimum": 1},
                "dump_trajectories": {"type": "integer", "minimum": 0},
                "compute_qfi": {"type": "boolean"},
            },
        },
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"steps": {"type": "integer", "minimum": 0}},
        },
        "meanfield": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "couplings": {"type": "array", "items": _nonneg},
                "flow_initial": {"type": "array", "items": _number, "minItems": 5, "maxItems": 5},
                "flow_t_final": _nonneg,
                "flow_t_output": _positive,
            },
        },
        "check_class": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_random": {"type": "integer", "minimum": 0},
                "kraus_dt": _positive,
                "negative_delta": _number,
            },
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["csv", "json"]}},
            },
        },
    },
}

DEFAULTS = {
    "model": {"omega": 0.0, "delta_spin": 0.0, "delta_boson": 0.0, "lambda": 0.0, "kappa": 1.0, "gamma": 1.0},
    "run": {
        "unravelling": "none",
        "target": "Omega",
        "initial": "dicke(S, 0)",
        "dt": 1e-3,
        "ode_dt": 1e-3,
        "t_final": 10.0,
        "t_output": 0.1,
        "n_traj": 1000,
        "master_seed": 0,
        "sample_stride": 100,
        "phi_lo": [0.0],
        "sampler": "bernoulli",
        "homodyne_drift": "first_order",
        "chunk_size": 2000,
        "dump_trajectories": 0,
        "compute_qfi": True,
    },
    "oracle": {"steps": 8},
    "meanfield": {"couplings": [], "flow_t_final": 0.0, "flow_t_output": 1.0},
    "check_class": {"n_random": 100, "kraus_dt": 0.05, "negative_delta": 0.3},
    "outputs": {"directory": "out", "formats": ["csv", "json"]},
}


# --- number expressions ----------------------------------------------------------

_BINARY = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def parse_number(text: str, names: dict[str, float] | None = None) -> float:
    """Evaluate an arithmetic expression of numbers, ``pi`` and ``+ - * /``."""
    names = {"pi": math.pi, **(names or {})}

    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in names:
            return float(names[node.id])
        if isinstance(node, ast.BinOp) and type(node.op) in _BINARY:
            return _BINARY[type(node.op)](walk(node.left), walk(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            return _UNARY[type(node.op)](walk(node.operand))
        raise ConfigError(f"unsupported expression {text!r}")

    try:
        tree = ast.parse(str(text).strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse number {text!r}") from exc
    try:
        return walk(tree)
    except ZeroDivisionError as exc:
        raise ConfigError(f"division by zero in {text!r}") from exc


def _coerce(value, spec: dict):
    """Convert INI strings (and JSON strings in number fields) to schema types."""
    kind = spec.get("type")
    if kind == "array":
        if isinstance(value, str):
            value = [v for v in (p.strip() for p in value.split(",")) if v]
        elif not isinstance(value, list):
            value = [value]
        return [_coerce(v, spec.get("items", {})) for v in value]
    if not isinstance(value, str):
        return value
    if kind == "number":
        return parse_number(value)
    if kind == "integer":
        number = parse_number(value)
        if number != int(number):
            raise ConfigError(f"expected an integer, got {value!r}")
        return int(number)
    if kind == "boolean":
        lowered = value.strip().lower()
        if lowered in ("1", "yes", "true", "on"):
            return True
        if lowered in ("0", "no", "false", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {value!r}")
    return value.strip()


def _coerce_tree(raw: dict) -> dict:
    out = {}
    for section, values in raw.items():
        section_schema = CONFIG_SCHEMA["properties"].get(section)
        if section_schema is None or not isinstance(values, dict):
            out[section] = values  # left for the schema check to reject
            continue
        props = section_schema["properties"]
        out[section] = {k: (_coerce(v, props[k]) if k in props else v) for k, v in values.items()}
    return out


# --- configuration ---------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration with all defaults filled in."""

    data: dict

    def __eq__(self, other):
        return isinstance(other, RunConfig) and _canonical(self.data) == _canonical(other.data)

    @property
    def run(self) -> dict:
        return self.data["run"]

    def model_params(self, phi_lo: float = 0.0) -> ModelParams:
        m = self.data["model"]
        return ModelParams(
            model=m["model"],
            omega=m["omega"],
            delta_spin=m["delta_spin"],
            delta_boson=m["delta_boson"],
            lam=m["lambda"],
            kappa=m["kappa"],
            gamma=m["gamma"],
            phi_lo=phi_lo,
        )

    def space(self) -> CompositeSpace:
        s = self.data["space"]
        return CompositeSpace(s["n_spins"], s["fock_cutoff"])

    def initial_state(self, space: CompositeSpace) -> np.ndarray:
        return parse_initial_state(self.run["initial"], space)

    def with_seed(self, seed: int) -> "RunConfig":
        data = copy.deepcopy(self.data)
        data["run"]["master_seed"] = int(seed)
        return validate_config(data)


def _canonical(data: dict) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def validate_config(raw: dict) -> RunConfig:
    """Coerce types, check the schema and fill defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping of sections")
    data = _coerce_tree(raw)
    try:
        jsonschema.validate(data, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "top level"
        raise ConfigError(f"invalid configuration at {where}: {exc.message}") from exc
    full = copy.deepcopy(DEFAULTS)
    for section, values in data.items():
        full.setdefault(section, {}).update(values)
    full["run"]["phi_lo"] = [float(v) for v in full["run"]["phi_lo"]]
    for key in ("omega", "delta_spin", "delta_boson", "lambda", "kappa", "gamma"):
        full["model"][key] = float(full["model"][key])
    return RunConfig(full)


def load_config(path: str | os.PathLike) -> RunConfig:
    """Read an INI or JSON configuration file, or the ``config`` echo of a manifest."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    if path.suffix.lower() == ".json" or text.lstrip().startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        if isinstance(raw, dict) and raw.get("schema") == MANIFEST_SCHEMA_VERSION and "config" in raw:
            raw = raw["config"]  # a manifest written by a previous run
    else:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"invalid INI in {path}: {exc}") from exc
        raw = {section: dict(parser[section]) for section in parser.sections()}
    return validate_config(raw)


_INITIAL = re.compile(r"^\s*(dicke|coherent)\s*\((.*)\)\s*$")


def parse_initial_state(spec: str, space: CompositeSpace) -> np.ndarray:
    """``dicke(M_z, n)`` or ``coherent(theta, phi, n)``; ``S`` names the total spin."""
    match = _INITIAL.match(spec)
    if not match:
        raise ConfigError(f"initial state {spec!r} is not dicke(M_z, n) or coherent(theta, phi, n)")
    kind, body = match.groups()
    args = [parse_number(a, {"S": space.total_spin}) for a in body.split(",") if a.strip()]
    try:
        if kind == "dicke":
            if len(args) != 2:
                raise ConfigError("dicke(M_z, n) takes two arguments")
            return dicke_number_state(space, args[0], int(args[1]))
        if len(args) != 3:
            raise ConfigError("coherent(theta, phi, n) takes three arguments")
        return spin_coherent_state(space, args[0], args[1], int(args[2]))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


# --- manifest and output helpers -----------------------------------------------------


def content_hash(text: str) -> str:
    """Git blob hash (``sha1("blob <len>\\0" + text)``)."""
    payload = text.encode()
    return hashlib.sha1(b"blob %d\0" % len(payload) + payload).hexdigest()


class Output:
    """Output directory bound to one command invocation."""

    def __init__(self, directory: Path, command: str, config: RunConfig):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.config = config
        self.hash = content_hash(
            _canonical({"command": command, "config": config.data, "version": __version__})
        )
        self.files: list[str] = []
        self.started = time.perf_counter()

    def path(self, name: str) -> Path:
        p = self.directory / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(name)
        return p

    @property
    def header(self) -> list[str]:
        return [f"manifest_hash {self.hash}"]

    def wants(self, fmt: str) -> bool:
        return fmt in self.config.data["outputs"]["formats"]

    def write_csv(self, name: str, columns, rows) -> None:
        if not self.wants("csv"):
            return
        with open(self.path(name), "w", newline="") as fh:
            for line in self.header:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])

    def write_json(self, name: str, payload: dict) -> None:
        if not self.wants("json"):
            return
        body = {"manifest_hash": self.hash, **payload}
        with open(self.path(name), "w") as fh:
            json.dump(body, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")

    def finish(self) -> dict:
        manifest = {
            "schema": MANIFEST_SCHEMA_VERSION,
            "command": self.command,
            "package_version": __version__,
            "config": self.config.data,
            "manifest_hash": self.hash,
            "wall_time_s": time.perf_counter() - self.started,
            "outputs": sorted(self.files),
        }
        with open(self.directory / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return manifest


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _time_grid(t_final: float, spacing: float) -> np.ndarray:
    if not t_final > 0:
        raise ConfigError("empty time grid: t_final must be positive")
    n = int(math.floor(t_final / spacing + 1e-9))
    grid = np.arange(n + 1) * spacing
    if t_final - grid[-1] > 1e-9 * max(1.0, t_final):
        grid = np.append(grid, t_final)
    return grid


def _fock_leakage(space: CompositeSpace, rho: np.ndarray) -> float:
    if space.fock_cutoff < 2:
        return 0.0
    _, n = space.labels()
    return float(np.real(np.diag(rho))[n >= space.fock_cutoff - 1].sum())


# --- commands ---------------------------------------------------------------------


def cmd_qfi(config: RunConfig, out: Output, threads: int = 1) -> None:
    run = config.run
    space = config.space()
    params = config.model_params()
    target = Target(run["target"])
    psi0 = config.initial_state(space)
    grid = _time_grid(run["t_final"], run["t_output"])
    log.info("qfi: %s N=%d n_max=%d target=%s, %d grid points", params.model.value, space.n_spins,
             space.fock_cutoff, target.value, len(grid))
    states = propagate_two_sided(
        build_hamiltonian(space, params),
        build_dH(space, params, target),
        build_jump_operator(space, params),
        psi0,
        grid,
        dt=run["ode_dt"],
    )
    if params.model is not Model.BTC:
        worst = max(_fock_leakage(space, s.rho) for s in states)
        if worst > LEAKAGE_TOLERANCE:
            raise FockLeakageError(
                f"population {worst:.2e} in the top two Fock levels; increase fock_cutoff (now {space.fock_cutoff})"
            )
    out.write_csv("qfi.csv", ["t", "F_SE"], [(s.t, s.fisher) for s in states])


def cmd_trajectories(config: RunConfig, out: Output, threads: int = 1) -> None:
    run = config.run
    if run["unravelling"] == "none":
        raise ConfigError("the trajectories command needs run.unravelling = counting or homodyne")
    if run["n_traj"] < 1:
        raise ConfigError("n_traj must be at least 1")
    space = config.space()
    target = Target(run["target"])
    psi0 = config.initial_state(space)
    ens = EnsembleConfig(
        n_traj=run["n_traj"],
        master_seed=run["master_seed"],
        dt=run["dt"],
        t_final=run["t_final"],
        sample_stride=run["sample_stride"],
    )
    phases = run["phi_lo"] if run["unravelling"] == "homodyne" else [run["phi_lo"][0]]
    sweep = len(phases) > 1
    F_SE = None
    if run["compute_qfi"]:
        t_samples = ens.sample_steps() * ens.dt
        F_SE = qfi_system_environment(psi0, space, config.model_params(), target, t_samples, dt=run["ode_dt"])
    summary = []
    for i, phi_lo in enumerate(phases):
        suffix = f"_phi{i}" if sweep else ""
        params = config.model_params(phi_lo)
        ctx = ModelContext(space, params, target, ens.dt, run["unravelling"], run["homodyne_drift"])
        sampler = run["sampler"] if run["unravelling"] == "counting" else "bernoulli"
        log.info("trajectories: %s phi_lo=%.6g, %d trajectories, %d steps", run["unravelling"], phi_lo,
                 ens.n_traj, ens.n_steps)
        result = run_ensemble(psi0, ctx, ens, chunk_size=run["chunk_size"], workers=threads, sampler=sampler)
        series = trajectory_fisher(result, F_SE)
        if out.wants("csv"):
            series.to_csv(out.path(f"fisher{suffix}.csv"), header_lines=tuple(out.header))
        cond = check_condition_II(result)
        out.write_csv(
            f"condition_II{suffix}.csv",
            ["t", "B_first", "max_abs_B"],
            zip(cond.t, cond.B[:, 0], np.abs(cond.B).max(axis=1)),
        )
        for k in range(min(run["dump_trajectories"], ens.n_traj)):
            single = run_trajectory(psi0, ctx, ens, index=k, keep_records=True, sampler=sampler)
            prefix = f"phi{i}_" if sweep else ""
            if out.wants("csv"):
                write_trajectory_csv(out.path(f"records/{prefix}traj{k}.csv"), single, 0)
        summary.append(
            {
                "phi_lo": phi_lo,
                "max_abs_B": cond.ensemble_max,
                "median_max_abs_B": float(np.median(cond.per_trajectory_max)),
                "max_fock_leakage": float(result.max_leakage.max()),
                "n_traj": result.n_traj,
            }
        )
    out.write_json("trajectories.json", {"unravelling": run["unravelling"], "series": summary})


def cmd_oracle(config: RunConfig, out: Output, threads: int = 1) -> None:
    run = config.run
    space = config.space()
    params = config.model_params()
    target = Target(run["target"])
    psi0 = config.initial_state(space)
    steps = config.data["oracle"]["steps"]
    dt = run["dt"]
    try:
        exact = enumerate_counting_records(psi0, space, params, target, steps, dt)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    t_end = steps * dt
    ode_dt = min(run["ode_dt"], t_end) if t_end > 0 else run["ode_dt"]
    F_SE = float(qfi_system_environment(psi0, space, params, target, [t_end], dt=ode_dt)[0])
    out.write_json(
        "oracle.json",
        {
            "steps": steps,
            "dt": dt,
            "t": t_end,
            "total_probability": exact.total_probability,
            "completeness_deviation": exact.total_probability - 1.0,
            "F_counting_exact": exact.F_counting,
            "I_E": exact.I_E,
            "F_S": exact.F_S,
            "F_SE_discrete": exact.F_SE_discrete,
            "F_SE": F_SE,
            "discrepancy": exact.F_counting - F_SE,
        },
    )


def cmd_meanfield(config: RunConfig, out: Output, threads: int = 1) -> None:
    params = config.model_params()
    if params.model is not Model.GD:
        raise ConfigError("the meanfield command applies to the GD model")
    mf = config.data["meanfield"]
    couplings = mf["couplings"] or [params.lam]
    out.write_csv("branches.csv", ["lambda", "branch", "m_x", "m_y", "m_z", "m_q", "m_p", "stability"],
                  branch_table(params, couplings))
    info = {"couplings": couplings}
    if params.delta_boson > 0:
        info["critical_coupling"] = critical_coupling(params)
        info["pitchfork_bisection"] = locate_pitchfork(params)
    if "flow_initial" in mf and mf["flow_t_final"] > 0:
        grid = _time_grid(mf["flow_t_final"], mf["flow_t_output"])
        flow = integrate_meanfield(np.array(mf["flow_initial"]), params, grid, dt=config.run["ode_dt"])
        out.write_csv("flow.csv", ["t", "m_x", "m_y", "m_z", "m_q", "m_p"],
                      ([t, *row] for t, row in zip(grid, flow)))
        info["flow_final"] = flow[-1].tolist()
    out.write_json("meanfield.json", info)


def cmd_check_class(config: RunConfig, out: Output, threads: int = 1) -> None:
    run = config.run
    space = config.space()
    params = config.model_params(run["phi_lo"][0])
    psi0 = config.initial_state(space)
    settings = config.data["check_class"]
    report = check_saturating_class(psi0, space, params.model)
    payload = {
        "initial_state": {
            "is_member": report.is_member,
            "max_violation_first": report.max_violation_first,
            "max_violation_second": report.max_violation_second,
        }
    }
    unravellings = ["counting", "homodyne"] if run["unravelling"] == "none" else [run["unravelling"]]
    rng = np.random.Generator(np.random.Philox(run["master_seed"]))
    for unravelling in unravellings:
        closure = class_closure_test(
            space, params, unravelling, settings["n_random"], rng,
            dt=settings["kraus_dt"], negative_delta=settings["negative_delta"],
        )
        payload[f"closure_{unravelling}"] = {
            "passed": closure.passed,
            "worst_violation": closure.worst_violation,
            "negative_min_violation": closure.negative_min_violation,
            "negative_passed": closure.negative_passed,
        }
    out.write_json("class_report.json", payload)


COMMANDS = {
    "qfi": cmd_qfi,
    "trajectories": cmd_trajectories,
    "oracle": cmd_oracle,
    "meanfield": cmd_meanfield,
    "check-class": cmd_check_class,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spinboson-qfi", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI or JSON run configuration")
        p.add_argument("--out", help="output directory (overrides outputs.directory)")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker processes")
        p.add_argument("--seed", type=int, help="master seed (overrides run.master_seed)")
        p.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    try:
        config = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must fit in 64 unsigned bits")
            config = config.with_seed(args.seed)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        out = Output(Path(args.out or config.data["outputs"]["directory"]), args.command, config)
        COMMANDS[args.command](config, out, threads=args.threads)
        manifest = out.finish()
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except TrajectoryError as exc:
        hint = " (reduce run.dt)" if isinstance(exc.cause, DiscretizationError) else ""
        log.error("%s%s", exc, hint)
        return EXIT_NUMERICS
    except (DiscretizationError, FockLeakageError, FloatingPointError) as exc:
        log.error("%s", exc)
        return EXIT_NUMERICS
    log.info("wrote %d files to %s (manifest %s, %.1f s)", len(manifest["outputs"]), out.directory,
             manifest["manifest_hash"][:12], manifest["wall_time_s"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
