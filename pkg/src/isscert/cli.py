"""Batch front end.

Subcommands: gain, net, sim, sweep, report.  Every run reads one JSON
config (schema in SCHEMA.md), writes a deterministic report.json plus CSV
artifacts into the output directory, and exits with 0 (pass), 1 (analysis
fail, witness in the report), 2 (config error), or 3 (numerical failure).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import compfun, gainops, netlyap, pdelab
from .errors import ConfigError, IsscertError, NumericalFailure

GAIN_TASKS = ("small-gain", "spectral-radius", "kleene-star")
NET_TASKS = ("omega-path", "compose-lf")
SIM_TASKS = ("simulate", "dissipation", "envelope", "ensemble")
SWEEP_TASKS = ("threshold-sweep",)

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def _require_keys(cfg: dict, allowed: set, where: str):
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in {where}")


def _load_config(path: str) -> tuple[dict, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {path!r} not found")
    raw = p.read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    try:
        cfg = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"config does not parse: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("top-level config must be an object")
    return cfg, digest


def _network_from_config(node) -> gainops.GainOperator:
    if not isinstance(node, dict):
        raise ConfigError("network must be an object")
    _require_keys(node, {"n", "rows", "entries", "truncation"}, "network")
    try:
        n = int(node["n"])
        rows = node.get("rows", ["max"] * n)
        entries = node["entries"]
    except KeyError as exc:
        raise ConfigError(f"network missing field {exc}") from exc
    if len(rows) != n or any(r not in ("max", "sum") for r in rows):
        raise ConfigError("rows must list 'max'/'sum' once per index")
    gains = {}
    for item in entries:
        if not (isinstance(item, list) and len(item) == 3):
            raise ConfigError("each entry must be [i, j, function]")
        i, j, fd = item
        gains[(int(i), int(j))] = compfun.kfun_from_dict(fd)
    gm = gainops.gain_matrix(n, gains)
    return gainops.maf_operator(gm, rows)


def _opt_kfun(cfg, key):
    return compfun.kfun_from_dict(cfg[key]) if key in cfg and cfg[key] is not None \
        else None


def _write_atomic(path: Path, text: str):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _emit(out_dir: Path, report: dict) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n"
    _write_atomic(out_dir / "report.json", text)
    code = report["exit_code"]
    status = {0: "PASS", 1: "FAIL"}.get(code, f"exit {code}")
    print(f"[isscert] task={report['task']} verdict={status} "
          f"out={out_dir / 'report.json'}")
    return code


# ---------------------------------------------------------------------------
# task runners
# ---------------------------------------------------------------------------

def _run_gain(cfg: dict, seed: int) -> dict:
    task = cfg["task"]
    if "network" not in cfg:
        raise ConfigError(f"{task} task needs a network")
    op = _network_from_config(cfg["network"])
    caveats = []
    if cfg["network"].get("truncation"):
        caveats.append(
            "finite-evidence: results describe this finite truncation only, "
            "not the infinite network"
        )
    if task == "spectral-radius":
        _require_keys(cfg, {"task", "network"}, "spectral-radius task")
        radius, iters = gainops.spectral_radius_report(op)
        return {
            "task": task,
            "verdicts": {"radius_below_one": bool(radius < 1.0)},
            "margins": {"radius": radius},
            "iterations": iters,
            "caveats": caveats,
            "exit_code": EXIT_PASS if radius < 1.0 else EXIT_FAIL,
        }
    if task == "kleene-star":
        _require_keys(cfg, {"task", "network", "s"}, "kleene-star task")
        s = np.asarray(cfg.get("s", [1.0] * op.n), dtype=float)
        try:
            q = gainops.kleene_star(op, s)
        except gainops.DivergenceError as exc:
            return {
                "task": task,
                "verdicts": {"convergent": False},
                "margins": {},
                "detail": str(exc),
                "caveats": caveats,
                "exit_code": EXIT_FAIL,
            }
        img = gainops.apply(op, q)
        return {
            "task": task,
            "verdicts": {
                "convergent": True,
                "dominates_seed": bool(np.all(s <= q)),
                "invariant": bool(np.all(img <= q)),
            },
            "margins": {"closure": q.tolist()},
            "caveats": caveats,
            "exit_code": EXIT_PASS,
        }
    # small-gain
    _require_keys(cfg, {"task", "network", "mode", "rho", "eta", "omega",
                        "trials"}, "small-gain task")
    verdict = gainops.check_small_gain(
        op,
        mode=cfg.get("mode", "no-joint-increase"),
        rho=_opt_kfun(cfg, "rho"),
        eta=_opt_kfun(cfg, "eta"),
        omega=_opt_kfun(cfg, "omega"),
        trials=int(cfg.get("trials", 256)),
        seed=seed,
    )
    report = {
        "task": task,
        "mode": verdict.mode,
        "verdicts": {"small_gain": verdict.verdict},
        "margins": {},
        "method": verdict.method,
        "iterations": verdict.iterations,
        "caveats": caveats + list(verdict.caveats),
        "exit_code": EXIT_PASS if verdict.passed else EXIT_FAIL,
    }
    if verdict.radius is not None:
        report["margins"]["radius"] = verdict.radius
    if verdict.witness is not None:
        report["witness"] = np.asarray(verdict.witness).tolist()
    return report


def _run_net(cfg: dict, seed: int, out_dir: Path) -> dict:
    task = cfg["task"]
    if "chi12" in cfg:
        chi12 = compfun.kfun_from_dict(cfg["chi12"])
        chi21 = compfun.kfun_from_dict(cfg["chi21"])
        path = netlyap.two_system_path(chi12, chi21)
        op = netlyap._two_system_operator(chi12, chi21)
    elif "network" in cfg and "s0" in cfg:
        op = _network_from_config(cfg["network"])
        path = netlyap.path_from_point(
            op, np.asarray(cfg["s0"], dtype=float), float(cfg.get("lam", 0.5))
        )
    else:
        raise ConfigError("net tasks need either chi12/chi21 or network+s0")
    verdict = netlyap.validate_path(op, path)
    report = {
        "task": task,
        "verdicts": {"path_valid": verdict.ok},
        "margins": {"worst_margin": verdict.worst_margin},
        "lipschitz": [list(c) for c in verdict.lipschitz],
        "exit_code": EXIT_PASS if verdict.ok else EXIT_FAIL,
    }
    if task == "compose-lf":
        grid = np.geomspace(1e-3, 1e3, 25)
        gains = cfg.get("external_gains")
        kfs = [(_opt_kfun({"g": g}, "g") if g else None) for g in gains] \
            if gains else [None] * path.n
        rows = []
        for r in grid:
            row = [r] + [s(float(r)) for s in path.sigma]
            chi_val = 0.0
            for g, s in zip(kfs, path.sigma):
                if g is not None:
                    chi_val = max(chi_val, compfun.inverse(s)(g(float(r))))
            row.append(chi_val)
            rows.append(row)
        lines = ["r," + ",".join(f"sigma_{i+1}" for i in range(path.n)) + ",chi"]
        lines += [",".join(repr(float(v)) for v in row) for row in rows]
        _write_atomic(out_dir / "path_table.csv", "\n".join(lines) + "\n")
        report["artifacts"] = ["path_table.csv"]
    return report


def _scenario_parts(cfg: dict):
    scen = cfg.get("scenario")
    if not isinstance(scen, dict):
        raise ConfigError("sim tasks need a scenario object")
    model = pdelab.build_model(scen)
    x0 = cfg.get("x0", "zero")
    if isinstance(x0, list):
        x0 = np.asarray(x0, dtype=float)
    u = cfg.get("u")
    T = float(cfg.get("T", 1.0))
    dt = cfg.get("dt")
    return model, x0, u, T, (float(dt) if dt is not None else None)


def _run_sim(cfg: dict, seed: int, out_dir: Path) -> dict:
    task = cfg["task"]
    if task == "ensemble":
        _require_keys(cfg, {"task", "K", "T"}, "ensemble task")
        res = pdelab.ensemble_s1(int(cfg.get("K", 8)), float(cfg.get("T", 3.0)))
        ok = bool(np.all(res.peaks >= np.arange(1, res.peaks.size + 1)))
        out_dir.mkdir(parents=True, exist_ok=True)
        res.trajectory.to_csv(out_dir / "trajectory.csv")
        return {
            "task": task,
            "verdicts": {"peaks_grow_linearly": ok},
            "margins": {"peaks": res.peaks.tolist()},
            "artifacts": ["trajectory.csv"],
            "exit_code": EXIT_PASS if ok else EXIT_FAIL,
        }
    model, x0, u, T, dt = _scenario_parts(cfg)
    traj = pdelab.simulate(model, x0, u, T, dt)
    out_dir.mkdir(parents=True, exist_ok=True)
    traj.to_csv(out_dir / "trajectory.csv")
    base = {
        "task": task,
        "blowup": traj.blowup,
        "final_norm": model.state_norm(traj.states[-1]),
        "initial_norm": model.state_norm(traj.states[0]),
        "artifacts": ["trajectory.csv"],
    }
    if task == "simulate":
        _require_keys(cfg, {"task", "scenario", "x0", "u", "T", "dt"},
                      "simulate task")
        base.update({"verdicts": {"completed": True}, "margins": {},
                     "exit_code": EXIT_PASS})
        return base
    if task == "dissipation":
        _require_keys(cfg, {"task", "scenario", "x0", "u", "T", "dt",
                            "functional", "law", "eps", "a_gain", "rtol"},
                      "dissipation task")
        fspec = dict(cfg.get("functional", {"kind": "l2"}))
        fkind = fspec.pop("kind")
        func = pdelab.lyap_functional(model, fkind, **fspec)
        rep = pdelab.dissipation_check(
            model, func, traj, cfg["law"],
            eps=cfg.get("eps"), a_gain=cfg.get("a_gain"),
            rtol=float(cfg.get("rtol", 0.02)),
        )
        base.update({
            "verdicts": {"law_holds": rep.passed},
            "margins": {"worst_margin": rep.worst_margin,
                        "violations": len(rep.violations)},
            "exit_code": EXIT_PASS if rep.passed else EXIT_FAIL,
        })
        return base
    if task == "envelope":
        _require_keys(cfg, {"task", "scenario", "x0", "u", "T", "dt", "beta",
                            "gamma", "u_norm", "rtol"}, "envelope task")
        bspec = cfg["beta"]
        beta = compfun.exp_klfun(compfun.kfun_from_dict(bspec["q"]),
                                 float(bspec["rate"]))
        gamma = _opt_kfun(cfg, "gamma")
        verdict = pdelab.iss_envelope_check(
            model, traj, beta, gamma, float(cfg.get("u_norm", 0.0)),
            rtol=float(cfg.get("rtol", 0.01)),
        )
        base.update({
            "verdicts": {"envelope_holds": verdict.passed},
            "margins": {"worst_excess": verdict.worst_excess,
                        "violations": len(verdict.violations)},
            "exit_code": EXIT_PASS if verdict.passed else EXIT_FAIL,
        })
        return base
    raise ConfigError(f"unknown sim task {task!r}")


def _run_sweep(cfg: dict, seed: int, out_dir: Path, workers: int) -> dict:
    _require_keys(cfg, {"task", "scenario", "x0", "u", "T", "dt", "sweep",
                        "decay_ratio", "grow_ratio"}, "threshold-sweep task")
    sweep = cfg.get("sweep")
    if not (isinstance(sweep, dict) and "param" in sweep and "values" in sweep):
        raise ConfigError("sweep needs {'param': name, 'values': [...]}")
    values = list(sweep["values"])
    if not values:
        raise ConfigError("sweep grid is empty")
    param = sweep["param"]
    decay_ratio = float(cfg.get("decay_ratio", 0.5))
    grow_ratio = float(cfg.get("grow_ratio", 2.0))

    def run_point(val):
        scen = json.loads(json.dumps(cfg["scenario"]))
        scen.setdefault("params", {})[param] = val
        model = pdelab.build_model(scen)
        x0 = cfg.get("x0", "zero")
        if isinstance(x0, list):
            x0 = np.asarray(x0, dtype=float)
        traj = pdelab.simulate(model, x0, cfg.get("u"), float(cfg.get("T", 1.0)),
                               cfg.get("dt"))
        n0 = model.state_norm(traj.states[0])
        n1 = model.state_norm(traj.states[-1])
        ratio = math.inf if traj.blowup else (n1 / n0 if n0 > 0 else 0.0)
        if traj.blowup or ratio >= grow_ratio:
            verdict = "supercritical"
        elif ratio <= decay_ratio:
            verdict = "subcritical"
        else:
            verdict = "marginal"
        return val, verdict, ratio

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_point, values))
    else:
        rows = [run_point(v) for v in values]
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"{param},verdict,norm_ratio"]
    lines += [f"{repr(float(v))},{verdict},{repr(float(r))}"
              for v, verdict, r in rows]
    _write_atomic(out_dir / "sweep.csv", "\n".join(lines) + "\n")
    try:
        info = pdelab.stability_threshold(cfg["scenario"].get("kind"),
                                          cfg["scenario"].get("params", {}))
        threshold = {"parameter": info.parameter, "critical": info.critical,
                     "stable_when": info.stable_when}
    except ConfigError:
        threshold = None
    return {
        "task": "threshold-sweep",
        "verdicts": {str(v): verdict for v, verdict, _ in rows},
        "margins": {str(v): r for v, _, r in rows},
        "threshold": threshold,
        "artifacts": ["sweep.csv"],
        "exit_code": EXIT_PASS,
    }


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _common_flags(sub):
    sub.add_argument("--config", required=True, help="JSON task config")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--seed", type=int, default=None, help="RNG seed")
    sub.add_argument("--tol", type=float, default=None,
                     help="override the task's relative tolerance")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="isscert",
                                 description="stability-certificate toolbox")
    subs = ap.add_subparsers(dest="command", required=True)
    for name, tasks in (("gain", GAIN_TASKS), ("net", NET_TASKS),
                        ("sim", SIM_TASKS)):
        sub = subs.add_parser(name, help=f"run one of: {', '.join(tasks)}")
        _common_flags(sub)
    sweep = subs.add_parser("sweep", help="parameter sweeps")
    _common_flags(sweep)
    sweep.add_argument("--workers", type=int, default=1)
    rep = subs.add_parser("report", help="re-validate and print a report")
    rep.add_argument("--out", required=True, help="directory with report.json")
    return ap


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    env = os.environ.get("ISSCERT_OUT_DIR")
    return Path(env) if env else Path("out")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report":
        path = Path(args.out) / "report.json"
        if not path.is_file():
            print(f"[isscert] no report at {path}", file=sys.stderr)
            return EXIT_CONFIG
        report = json.loads(path.read_text())
        print(json.dumps(report, sort_keys=True, indent=2))
        return int(report.get("exit_code", EXIT_CONFIG))
    try:
        cfg, digest = _load_config(args.config)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        if args.tol is not None:
            cfg["rtol"] = args.tol
        task = cfg.get("task")
        out_dir = _out_dir(args)
        if args.command == "gain":
            if task not in GAIN_TASKS:
                raise ConfigError(f"gain subcommand cannot run task {task!r}")
            report = _run_gain(cfg, seed)
        elif args.command == "net":
            if task not in NET_TASKS:
                raise ConfigError(f"net subcommand cannot run task {task!r}")
            report = _run_net(cfg, seed, out_dir)
        elif args.command == "sim":
            if task not in SIM_TASKS:
                raise ConfigError(f"sim subcommand cannot run task {task!r}")
            report = _run_sim(cfg, seed, out_dir)
        elif args.command == "sweep":
            if task not in SWEEP_TASKS:
                raise ConfigError(f"sweep subcommand cannot run task {task!r}")
            report = _run_sweep(cfg, seed, out_dir, args.workers)
        else:  # pragma: no cover
            raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"[isscert] config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"[isscert] numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (IsscertError, KeyError, TypeError) as exc:
        print(f"[isscert] config error: {exc!r}", file=sys.stderr)
        return EXIT_CONFIG
    report["inputs_digest"] = digest
    report["seed"] = seed
    report["tool_version"] = __version__
    return _emit(out_dir, report)


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
