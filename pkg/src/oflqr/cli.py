"""Experiment runner: config file -> pipeline -> report, logs and plot.

A config is a TOML or JSON document describing plant, cost, observer,
exploration signal, collection window and algorithm. `run` executes
simulate -> excitation stacks -> rank gate -> solver -> oracle
comparison and writes a JSON report, iterate and trajectory CSV logs,
and an SVG convergence plot. `verify` runs the model-side identity
checks. `sweep` runs every config in a directory, optionally in
parallel. The parsed config is echoed verbatim into the report so any
run can be reproduced bit-for-bit from its own artifacts.

Matrices are written as row lists (`A = [[0.0, 1.0], [2.0, 3.0]]`);
vectors as flat lists. The full grammar is documented in the README.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import adp, sim, stacks
from .linalg import spectral_norm
from .observer_param import (
    ObserverPoly,
    Parameterization,
    build_ancillary,
    build_param_matrix,
    companion_from_poly,
    parameterize,
    parameterization_residuals,
    param_matrix_has_full_row_rank,
)
from .randsys import draw_stable_plant
from .riccati import (
    AreProblem,
    harmonic_schedule,
    kleinman_pi,
    model_vi,
    solve_are_sign,
)

OUTPUT_ROOT_ENV = "OFLQR_OUTPUT_ROOT"

ALGORITHMS = (
    "state-pi",
    "state-vi",
    "output-pi",
    "output-vi",
    "improved-pi",
    "improved-vi",
    "model-kleinman",
    "model-vi",
    "oracle-only",
)

_DATA_ALGORITHMS = {
    "state-pi": ("state", "state_pi"),
    "state-vi": ("state", "state_vi"),
    "output-pi": ("output", "output_pi"),
    "output-vi": ("output", "output_vi"),
    "improved-pi": ("output", "improved_pi"),
    "improved-vi": ("output", "improved_vi"),
}


# =====================================================================
# Config loading and normalization
# =====================================================================


def _fail_config(msg: str):
    raise ValueError(f"config: {msg}")


def _as_matrix_field(value, section: str, key: str) -> list:
    """Nested row lists -> canonical list-of-lists of floats."""
    if not isinstance(value, (list, tuple)) or not value:
        _fail_config(f"{section}.{key} must be a non-empty list of rows")
    rows = []
    width = None
    for row in value:
        if not isinstance(row, (list, tuple)) or not row:
            _fail_config(f"{section}.{key} rows must be non-empty lists")
        if width is None:
            width = len(row)
        elif len(row) != width:
            _fail_config(f"{section}.{key} rows must have equal length")
        rows.append([float(v) for v in row])
    return rows


def _as_vector_field(value, section: str, key: str) -> list:
    if not isinstance(value, (list, tuple)) or not value:
        _fail_config(f"{section}.{key} must be a non-empty list of numbers")
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError):
        _fail_config(f"{section}.{key} must contain numbers only")


def _take(section: dict, name: str, spec: dict, out: dict, context: str):
    for key, (kind, required, default) in spec.items():
        if key not in section:
            if required:
                _fail_config(f"missing {context}.{key}")
            if default is not None:
                out[key] = default
            continue
        value = section[key]
        if kind == "matrix":
            out[key] = _as_matrix_field(value, context, key)
        elif kind == "vector":
            out[key] = _as_vector_field(value, context, key)
        elif kind == "float":
            out[key] = float(value)
        elif kind == "int":
            out[key] = int(value)
        elif kind == "bool":
            if not isinstance(value, bool):
                _fail_config(f"{context}.{key} must be a boolean")
            out[key] = value
        elif kind == "str":
            out[key] = str(value)
    unknown = set(section) - set(spec)
    if unknown:
        _fail_config(f"unknown key(s) in {context}: {', '.join(sorted(unknown))}")


def normalize_config(doc: dict, base_dir: Path | None = None) -> dict:
    """Validate a raw config document and return the canonical echo form.

    File references in [plant] are resolved and inlined so the echoed
    config is self-contained. Normalizing is idempotent: feeding an echo
    back through produces the identical document.
    """
    if not isinstance(doc, dict):
        _fail_config("top level must be a table of sections")
    known = {
        "plant", "random", "cost", "observer", "signal",
        "initial", "window", "algorithm", "output",
    }
    unknown = set(doc) - known
    if unknown:
        _fail_config(f"unknown section(s): {', '.join(sorted(unknown))}")

    cfg: dict = {}

    if ("plant" in doc) == ("random" in doc):
        _fail_config("give exactly one of [plant] and [random]")
    if "plant" in doc:
        plant = dict(doc["plant"])
        if "file" in plant:
            ref = Path(plant.pop("file"))
            if plant:
                _fail_config("plant.file excludes inline plant keys")
            if not ref.is_absolute():
                ref = (base_dir or Path.cwd()) / ref
            plant = _read_document(ref)
        out: dict = {}
        _take(plant, "plant", {
            "A": ("matrix", True, None),
            "B": ("matrix", True, None),
            "C": ("matrix", True, None),
        }, out, "plant")
        n = len(out["A"])
        if any(len(r) != n for r in out["A"]):
            _fail_config("plant.A must be square")
        if len(out["B"]) != n:
            _fail_config("plant.B must have as many rows as A")
        if any(len(r) != n for r in out["C"]):
            _fail_config("plant.C must have as many columns as A")
        cfg["plant"] = {"A": out["A"], "B": out["B"], "C": out["C"]}
    else:
        out = {}
        _take(doc["random"], "random", {
            "seed": ("int", True, None),
            "order": ("int", False, 3),
            "inputs": ("int", False, 1),
            "trials": ("int", False, 1),
        }, out, "random")
        if out["order"] < 1 or out["inputs"] < 1 or out["trials"] < 1:
            _fail_config("random.order, random.inputs, random.trials must be positive")
        cfg["random"] = out

    if "cost" not in doc:
        _fail_config("missing [cost]")
    out = {}
    _take(doc["cost"], "cost", {
        "Qy": ("matrix", True, None),
        "R": ("matrix", True, None),
    }, out, "cost")
    cfg["cost"] = out

    if "observer" in doc:
        out = {}
        _take(doc["observer"], "observer", {
            "roots": ("vector", False, None),
            "coefficients": ("vector", False, None),
            "L": ("matrix", False, None),
        }, out, "observer")
        if ("roots" in out) == ("coefficients" in out):
            _fail_config("observer needs exactly one of roots / coefficients")
        cfg["observer"] = out

    if "signal" in doc:
        sig = dict(doc["signal"])
        out = {}
        if "sinusoids" in sig:
            tones = sig.pop("sinusoids")
            if not isinstance(tones, (list, tuple)):
                _fail_config("signal.sinusoids must be a list of [amp, freq, phase]")
            packed = []
            for tone in tones:
                if not isinstance(tone, (list, tuple)) or len(tone) != 3:
                    _fail_config("each sinusoid is [amplitude, frequency, phase]")
                packed.append([float(v) for v in tone])
            out["sinusoids"] = packed
        _take(sig, "signal", {
            "feedback_gain": ("matrix", False, None),
        }, out, "signal")
        cfg["signal"] = out

    if "initial" in doc:
        ini = dict(doc["initial"])
        out = {}
        if "zeta0" in ini:
            z = ini.pop("zeta0")
            if isinstance(z, str):
                if z != "matched":
                    _fail_config("initial.zeta0 must be a vector or the string 'matched'")
                out["zeta0"] = "matched"
            else:
                out["zeta0"] = _as_vector_field(z, "initial", "zeta0")
        _take(ini, "initial", {
            "x0": ("vector", True, None),
        }, out, "initial")
        cfg["initial"] = out

    if "window" in doc:
        out = {}
        _take(doc["window"], "window", {
            "t0": ("float", True, None),
            "spacing": ("float", True, None),
            "count": ("int", True, None),
            "dt": ("float", True, None),
            "t_end": ("float", False, None),
        }, out, "window")
        if out["spacing"] <= 0 or out["dt"] <= 0 or out["count"] < 1 or out["t0"] < 0:
            _fail_config("window values must be positive (t0 may be zero)")
        ratio = out["spacing"] / out["dt"]
        if abs(ratio - round(ratio)) > 1e-6 * max(1.0, ratio):
            _fail_config("window.dt must divide window.spacing")
        if "t_end" not in out:
            out["t_end"] = out["t0"] + out["spacing"] * out["count"]
        if out["t_end"] + 1e-12 < out["t0"] + out["spacing"] * out["count"]:
            _fail_config("window.t_end must reach the last knot")
        cfg["window"] = out

    if "algorithm" not in doc:
        _fail_config("missing [algorithm]")
    out = {}
    _take(doc["algorithm"], "algorithm", {
        "name": ("str", True, None),
        "gain0": ("matrix", False, None),
        "P0": ("matrix", False, None),
        "tol": ("float", False, None),
        "max_iters": ("int", False, None),
        "step_scale": ("float", False, 5.0),
        "bound_scale": ("float", False, 1000.0),
        "epsilon": ("float", False, 0.01),
        "rank_rtol": ("float", False, None),
        "record_every": ("int", False, 1),
        "auto_extend": ("bool", False, False),
        "max_extra_knots": ("int", False, 200),
        "expect_rank_failure": ("bool", False, False),
    }, out, "algorithm")
    if out["name"] not in ALGORITHMS:
        _fail_config(f"algorithm.name must be one of {', '.join(ALGORITHMS)}")
    if out["auto_extend"] and out["expect_rank_failure"]:
        _fail_config("algorithm.auto_extend contradicts expect_rank_failure")
    cfg["algorithm"] = out

    out = {}
    _take(doc.get("output", {}), "output", {
        "directory": ("str", False, None),
    }, out, "output")
    cfg["output"] = out

    name = cfg["algorithm"]["name"]
    if name in _DATA_ALGORITHMS:
        for section in ("signal", "initial", "window"):
            if section not in cfg:
                _fail_config(f"algorithm {name} needs a [{section}] section")
        if "observer" not in cfg and "random" not in cfg:
            _fail_config(f"algorithm {name} needs an [observer] section")
    if name == "oracle-only" and "observer" not in cfg and "random" not in cfg:
        _fail_config("oracle-only needs an [observer] section")
    return cfg


def _read_document(path: Path) -> dict:
    suffix = path.suffix.lower()
    if suffix == ".toml":
        import tomli

        with open(path, "rb") as fh:
            return tomli.load(fh)
    if suffix == ".json":
        with open(path) as fh:
            return json.load(fh)
    _fail_config(f"unsupported config format {suffix!r} (use .toml or .json)")


def load_config(path) -> dict:
    """Read and normalize a TOML or JSON config file."""
    path = Path(path)
    return normalize_config(_read_document(path), base_dir=path.parent)


def bundled_configs() -> dict:
    """Name -> filesystem path of the configs shipped with the package."""
    root = resources.files("oflqr").joinpath("configs")
    return {p.stem: Path(str(p)) for p in sorted(root.iterdir()) if p.suffix == ".toml"}


# =====================================================================
# Model assembly shared by run and verify
# =====================================================================


@dataclass
class _Model:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Qy: np.ndarray
    R: np.ndarray
    Q: np.ndarray
    P_star: np.ndarray
    K_star: np.ndarray
    par: Parameterization | None
    P_ref: np.ndarray | None
    K_ref: np.ndarray | None


def _draw_plant(cfg: dict, trial: int = 0):
    rnd = cfg["random"]
    rng = np.random.default_rng(rnd["seed"] + trial)
    return draw_stable_plant(rng, order=rnd["order"], inputs=rnd["inputs"])


def _observer_poly(cfg: dict, draw=None) -> ObserverPoly | None:
    obs = cfg.get("observer")
    if obs is None:
        if draw is not None:
            return ObserverPoly(roots=draw.observer_roots)
        return None
    if "roots" in obs:
        return ObserverPoly(roots=obs["roots"])
    return ObserverPoly(coefficients=obs["coefficients"])


def _build_model(cfg: dict, need_param: bool, trial: int = 0) -> _Model:
    if "plant" in cfg:
        A = np.array(cfg["plant"]["A"], dtype=float)
        B = np.array(cfg["plant"]["B"], dtype=float)
        C = np.array(cfg["plant"]["C"], dtype=float)
        draw = None
    else:
        draw = _draw_plant(cfg, trial)
        A, B, C = draw.A, draw.B, draw.C
    Qy = np.array(cfg["cost"]["Qy"], dtype=float)
    R = np.array(cfg["cost"]["R"], dtype=float)
    if Qy.shape[0] != C.shape[0]:
        _fail_config("cost.Qy size must match the output count")
    if R.shape[0] != B.shape[1]:
        _fail_config("cost.R size must match the input count")
    Q = C.T @ Qy @ C
    P_star, K_star = solve_are_sign(AreProblem(A=A, B=B, Q=Q, R=R))
    par = P_ref = K_ref = None
    if need_param:
        poly = _observer_poly(cfg, draw)
        if poly is not None:
            L = cfg.get("observer", {}).get("L")
            L = None if L is None else np.array(L, dtype=float)
            par = parameterize(A, B, C, Qy, poly, L=L)
            P_ref = par.M.T @ P_star @ par.M
            K_ref = K_star @ par.M
    return _Model(A=A, B=B, C=C, Qy=Qy, R=R, Q=Q, P_star=P_star, K_star=K_star,
                  par=par, P_ref=P_ref, K_ref=K_ref)


def _rank_to_dict(report: dict) -> dict:
    return {
        key: {
            "required": cond.required,
            "achieved": cond.achieved,
            "satisfied": bool(cond.satisfied),
            "singular_values": [float(v) for v in cond.singular_values],
        }
        for key, cond in report.items()
    }


# =====================================================================
# Run
# =====================================================================


@dataclass
class RunReport:
    """Serializable outcome of one `run` or `verify` invocation."""

    status: str  # ok | expected-rank-failure | not-converged | error | checks-failed
    out_dir: Path
    data: dict

    @property
    def ok(self) -> bool:
        return self.status in ("ok", "expected-rank-failure")


def _resolve_out_dir(cfg: dict, output_root, default_name: str) -> Path:
    root = Path(output_root) if output_root else Path(
        os.environ.get(OUTPUT_ROOT_ENV, "runs")
    )
    directory = cfg.get("output", {}).get("directory") or default_name
    out = root / directory
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_report(out_dir: Path, data: dict) -> None:
    if "report.json" not in data["manifest"]:
        data["manifest"].append("report.json")
    with open(out_dir / "report.json", "w") as fh:
        json.dump(data, fh, indent=1)
        fh.write("\n")


def _plot_convergence(history, reference, path: Path, algorithm: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "oflqr"
    import matplotlib.pyplot as plt

    ref_p, ref_k = reference
    ks = [rec.k for rec in history.records]
    scale_p = max(spectral_norm(ref_p), 1e-300)
    scale_k = max(spectral_norm(ref_k), 1e-300)
    err_p = [spectral_norm(rec.P - ref_p) / scale_p for rec in history.records]
    err_k = [spectral_norm(rec.K - ref_k) / scale_k for rec in history.records]
    floor = 1e-300
    err_p = [max(v, floor) for v in err_p]
    err_k = [max(v, floor) for v in err_k]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.semilogy(ks, err_p, marker="o", markersize=3, label="value error")
    ax.semilogy(ks, err_k, marker="s", markersize=3, label="gain error")
    ax.set_xlabel("iteration")
    ax.set_ylabel("normalized error vs reference")
    ax.set_title(algorithm)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _base_report(cfg: dict) -> dict:
    return {
        "algorithm": cfg["algorithm"]["name"],
        "status": "ok",
        "error": None,
        "config": cfg,
        "window": None,
        "rank": None,
        "iterations": None,
        "converged": None,
        "normalized_value_error": None,
        "normalized_gain_error": None,
        "phase_seconds": {},
        "manifest": [],
    }


def _finish_error(data, out_dir, phase, exc) -> RunReport:
    data["status"] = "error"
    data["error"] = {
        "phase": phase,
        "type": type(exc).__name__,
        "message": str(exc),
    }
    if isinstance(exc, adp.RankDeficiencyError):
        data["rank"] = _rank_to_dict(exc.report)
    _write_report(out_dir, data)
    return RunReport(status="error", out_dir=out_dir, data=data)


def run_config(cfg: dict, output_root=None, name: str = "run") -> RunReport:
    """Execute one experiment config and write its artifacts."""
    algo = cfg["algorithm"]["name"]
    out_dir = _resolve_out_dir(cfg, output_root, name)
    data = _base_report(cfg)
    params = cfg["algorithm"]

    t0 = time.perf_counter()
    try:
        model = _build_model(cfg, need_param=algo not in ("model-kleinman", "model-vi"))
    except Exception as exc:  # noqa: BLE001 - every model error surfaces with phase context
        data["phase_seconds"]["model"] = time.perf_counter() - t0
        return _finish_error(data, out_dir, "model", exc)
    data["phase_seconds"]["model"] = time.perf_counter() - t0

    if algo == "oracle-only":
        return _run_oracle_only(cfg, model, out_dir, data)
    if algo in ("model-kleinman", "model-vi"):
        return _run_model_algorithm(cfg, model, out_dir, data)
    return _run_data_algorithm(cfg, model, out_dir, data, params)


def _run_oracle_only(cfg, model, out_dir, data) -> RunReport:
    oracle = {
        "P_star": model.P_star.tolist(),
        "K_star": model.K_star.tolist(),
    }
    if model.par is not None:
        oracle["L"] = model.par.L.tolist()
        oracle["M"] = model.par.M.tolist()
        oracle["reference_value"] = model.P_ref.tolist()
        oracle["reference_gain"] = model.K_ref.tolist()
    data["oracle"] = oracle
    data["converged"] = True
    with np.printoptions(precision=4, suppress=True):
        print("P* =\n" + str(model.P_star))
        print("K* =\n" + str(model.K_star))
        if model.par is not None:
            print("L =\n" + str(model.par.L))
            print("M =\n" + str(model.par.M))
    _write_report(out_dir, data)
    return RunReport(status="ok", out_dir=out_dir, data=data)


def _run_model_algorithm(cfg, model, out_dir, data) -> RunReport:
    params = cfg["algorithm"]
    algo = params["name"]
    n, m = model.A.shape[0], model.B.shape[1]
    prob = AreProblem(A=model.A, B=model.B, Q=model.Q, R=model.R)
    t0 = time.perf_counter()
    try:
        if algo == "model-kleinman":
            gain0 = params.get("gain0")
            K0 = np.zeros((m, n)) if gain0 is None else np.array(gain0, dtype=float)
            hist = kleinman_pi(
                prob, K0,
                tol=params.get("tol") or 1e-10,
                max_iters=params.get("max_iters") or 60,
            )
        else:
            P0 = params.get("P0")
            P0 = np.zeros((n, n)) if P0 is None else np.array(P0, dtype=float)
            sched = harmonic_schedule(
                params["step_scale"], params["bound_scale"], params["epsilon"],
                max_iters=params.get("max_iters") or 100_000,
            )
            hist = model_vi(prob, P0, sched, record_every=params["record_every"])
    except Exception as exc:  # noqa: BLE001
        data["phase_seconds"]["solve"] = time.perf_counter() - t0
        return _finish_error(data, out_dir, "solve", exc)
    data["phase_seconds"]["solve"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    final = hist.final
    scale_p = max(spectral_norm(model.P_star), 1e-300)
    scale_k = max(spectral_norm(model.K_star), 1e-300)
    data["iterations"] = final.k + 1
    data["converged"] = bool(hist.converged)
    data["normalized_value_error"] = float(spectral_norm(final.P - model.P_star) / scale_p)
    data["normalized_gain_error"] = float(spectral_norm(final.K - model.K_star) / scale_k)
    hist.to_csv(out_dir / "iterates.csv", reference=(model.P_star, model.K_star))
    data["manifest"].append("iterates.csv")
    _plot_convergence(hist, (model.P_star, model.K_star), out_dir / "convergence.svg", algo)
    data["manifest"].append("convergence.svg")
    data["phase_seconds"]["report"] = time.perf_counter() - t0
    status = "ok" if hist.converged else "not-converged"
    data["status"] = status
    _write_report(out_dir, data)
    return RunReport(status=status, out_dir=out_dir, data=data)


def _simulate(cfg, model):
    plant = sim.LtiPlant(model.A, model.B, model.C)
    sig = cfg["signal"]
    nz = model.par.n_zeta
    m = model.B.shape[1]
    gain = sig.get("feedback_gain")
    gain = np.zeros((m, nz)) if gain is None else np.array(gain, dtype=float)
    tones = tuple(tuple(t) for t in sig.get("sinusoids", []))
    signal = sim.ExplorationSignal(gain_matrix=gain, sinusoids=tones)
    x0 = np.array(cfg["initial"]["x0"], dtype=float)
    z0 = cfg["initial"].get("zeta0")
    if isinstance(z0, str):
        zeta0 = np.linalg.pinv(model.par.M) @ x0
    elif z0 is None:
        zeta0 = np.zeros(nz)
    else:
        zeta0 = np.array(z0, dtype=float)
    win = cfg["window"]

    def run_to(t_end: float):
        return sim.simulate(plant, model.par, signal, x0, zeta0, (0.0, t_end), win["dt"])

    return run_to


def _run_data_algorithm(cfg, model, out_dir, data, params) -> RunReport:
    algo = params["name"]
    which, rank_key = _DATA_ALGORITHMS[algo]
    win = dict(cfg["window"])
    rank_rtol = params.get("rank_rtol") or stacks.RANK_RTOL

    t0 = time.perf_counter()
    try:
        run_to = _simulate(cfg, model)
        t_end = win["t_end"]
        traj = run_to(t_end)
    except Exception as exc:  # noqa: BLE001
        data["phase_seconds"]["simulate"] = time.perf_counter() - t0
        return _finish_error(data, out_dir, "simulate", exc)
    data["phase_seconds"]["simulate"] = time.perf_counter() - t0
    traj.to_csv(out_dir / "trajectory.csv")
    data["manifest"].append("trajectory.csv")

    t0 = time.perf_counter()
    count = win["count"]
    extended = 0
    try:
        while True:
            grid = stacks.SampleGrid.uniform(win["t0"], win["spacing"], count + extended)
            last_knot = win["t0"] + win["spacing"] * (count + extended)
            if last_knot > t_end + 1e-12:
                t_end = last_knot
                sim_t = time.perf_counter()
                traj = run_to(t_end)
                data["phase_seconds"]["simulate"] += time.perf_counter() - sim_t
                traj.to_csv(out_dir / "trajectory.csv")
            st = stacks.build_stacks(traj, grid, model.R, which=which)
            report = stacks.rank_report(st, rtol=rank_rtol)
            cond = report[rank_key]
            if cond.satisfied or not params["auto_extend"]:
                break
            if extended >= params["max_extra_knots"]:
                break
            extended += min(count, params["max_extra_knots"] - extended)
    except Exception as exc:  # noqa: BLE001
        data["phase_seconds"]["stacks"] = time.perf_counter() - t0
        return _finish_error(data, out_dir, "stacks", exc)
    data["phase_seconds"]["stacks"] = time.perf_counter() - t0
    data["rank"] = _rank_to_dict(report)
    data["window"] = {
        "t0": win["t0"], "spacing": win["spacing"], "count": count + extended,
        "extended_by": extended, "t_end": t_end, "dt": win["dt"],
    }

    if params["expect_rank_failure"]:
        if cond.satisfied:
            return _finish_error(
                data, out_dir, "stacks",
                RuntimeError(
                    f"the {rank_key} rank condition unexpectedly holds "
                    f"({cond.achieved}/{cond.required})"
                ),
            )
        data["status"] = "expected-rank-failure"
        data["converged"] = False
        _write_report(out_dir, data)
        return RunReport(status="expected-rank-failure", out_dir=out_dir, data=data)
    if not cond.satisfied:
        return _finish_error(
            data, out_dir, "stacks",
            adp.RankDeficiencyError(
                f"{algo}: data rank {cond.achieved} below the required "
                f"{cond.required}"
                + ("; window extension cap reached" if extended else
                   "; enable auto_extend or enrich the excitation"),
                report,
            ),
        )

    t0 = time.perf_counter()
    try:
        res = _dispatch_solver(algo, st, model, params, rank_rtol)
    except Exception as exc:  # noqa: BLE001
        data["phase_seconds"]["solve"] = time.perf_counter() - t0
        return _finish_error(data, out_dir, "solve", exc)
    data["phase_seconds"]["solve"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    data["iterations"] = int(res.iterations)
    data["converged"] = bool(res.converged)
    data["normalized_value_error"] = adp._maybe_float(res.normalized_value_error)
    data["normalized_gain_error"] = adp._maybe_float(res.normalized_gain_error)
    data["solver"] = res.summary()
    res.history_to_csv(out_dir / "iterates.csv")
    data["manifest"].append("iterates.csv")
    reference = (res.reference_value, res.reference_gain)
    if reference[0] is not None and reference[1] is not None:
        _plot_convergence(res.history, reference, out_dir / "convergence.svg", algo)
        data["manifest"].append("convergence.svg")
    data["phase_seconds"]["report"] = time.perf_counter() - t0
    status = "ok" if res.converged else "not-converged"
    data["status"] = status
    _write_report(out_dir, data)
    return RunReport(status=status, out_dir=out_dir, data=data)


def _dispatch_solver(algo, st, model, params, rank_rtol):
    n, m = model.A.shape[0], model.B.shape[1]
    nz = model.par.n_zeta
    tol = params.get("tol") or 1e-10
    max_iters = params.get("max_iters")
    sched = harmonic_schedule(
        params["step_scale"], params["bound_scale"], params["epsilon"],
        max_iters=max_iters or 100_000,
    )
    gain0 = params.get("gain0")
    P0 = params.get("P0")

    if algo == "state-pi":
        K0 = np.zeros((m, n)) if gain0 is None else np.array(gain0, dtype=float)
        return adp.state_pi(
            st, model.Q, model.R, K0, tol=tol, max_iters=max_iters or 60,
            rank_rtol=rank_rtol,
            reference_value=model.P_star, reference_gain=model.K_star,
        )
    if algo == "state-vi":
        seed = np.zeros((n, n)) if P0 is None else np.array(P0, dtype=float)
        return adp.state_vi(
            st, model.Q, model.R, seed, sched, rank_rtol=rank_rtol,
            reference_value=model.P_star, reference_gain=model.K_star,
            record_every=params["record_every"],
        )
    refs = dict(reference_value=model.P_ref, reference_gain=model.K_ref)
    if algo == "output-pi":
        K0 = np.zeros((m, nz)) if gain0 is None else np.array(gain0, dtype=float)
        return adp.output_pi_original(
            st, model.Qy, model.R, K0, tol=tol, max_iters=max_iters or 60,
            rank_rtol=rank_rtol, **refs,
        )
    if algo == "output-vi":
        seed = np.zeros((nz, nz)) if P0 is None else np.array(P0, dtype=float)
        return adp.output_vi_original(
            st, model.Qy, model.R, seed, sched, rank_rtol=rank_rtol,
            record_every=params["record_every"], **refs,
        )
    if algo == "improved-pi":
        K0 = np.zeros((m, nz)) if gain0 is None else np.array(gain0, dtype=float)
        return adp.output_pi_improved(
            st, model.Qy, model.R, model.par.B_zeta, K0, tol=tol,
            max_iters=max_iters or 60, rank_rtol=rank_rtol, **refs,
        )
    if algo == "improved-vi":
        seed = np.zeros((nz, nz)) if P0 is None else np.array(P0, dtype=float)
        return adp.output_vi_improved(
            st, model.Qy, model.R, model.par.B_zeta, seed, sched,
            rank_rtol=rank_rtol, record_every=params["record_every"], **refs,
        )
    raise ValueError(f"unknown algorithm {algo!r}")


# =====================================================================
# Verify
# =====================================================================

_VERIFY_TOLS = {
    "plant_riccati_residual": 1e-8,
    "structural_shift_residual": 1e-8,
    "structural_input_residual": 1e-8,
    "structural_output_residual": 1e-8,
    "ancillary_riccati_residual": 1e-6,
    "reference_gain_identity": 1e-6,
}


def _verify_one(cfg: dict, trial: int) -> dict:
    """Value of every model-side check for one plant instance."""
    if "plant" in cfg:
        A = np.array(cfg["plant"]["A"], dtype=float)
        B = np.array(cfg["plant"]["B"], dtype=float)
        C = np.array(cfg["plant"]["C"], dtype=float)
        draw = None
    else:
        draw = _draw_plant(cfg, trial)
        A, B, C = draw.A, draw.B, draw.C
    Qy = np.array(cfg["cost"]["Qy"], dtype=float)
    R = np.array(cfg["cost"]["R"], dtype=float)
    Q = C.T @ Qy @ C
    n, m, p = A.shape[0], B.shape[1], C.shape[0]

    P_star, K_star = solve_are_sign(AreProblem(A=A, B=B, Q=Q, R=R))
    G = B @ np.linalg.solve(R, B.T)
    plant_resid = spectral_norm(A.T @ P_star + P_star @ A + Q - P_star @ G @ P_star)
    values = {"plant_riccati_residual": plant_resid / (1.0 + spectral_norm(P_star))}

    poly = _observer_poly(cfg, draw)
    if poly is None:
        return values
    obs = cfg.get("observer", {})
    if obs.get("L") is not None:
        L = np.array(obs["L"], dtype=float).reshape(n, p)
    else:
        from .observer_param import place_observer_gain

        L = place_observer_gain(A, C, poly)
    # built without the strict gate so a corrupted gain shows up as
    # residual magnitudes instead of a refusal to construct
    A_cal, b_vec = companion_from_poly(poly)
    M, _ = build_param_matrix(A, B, C, L, poly, strict=False)
    A_zeta, B_zeta, Q_zeta = build_ancillary(M, A_cal, b_vec, C, Qy, m, p)
    par = Parameterization(
        L=L, A_cal=A_cal, b_vec=b_vec, M=M, A_zeta=A_zeta, B_zeta=B_zeta,
        Q_zeta=Q_zeta, n=n, m=m, p=p,
    )
    res = parameterization_residuals(A, B, C, L, par)
    scale = 1.0 + spectral_norm(M)
    values["structural_shift_residual"] = res["shift"] / scale
    values["structural_input_residual"] = res["input"] / scale
    values["structural_output_residual"] = res["output"] / scale
    values["param_matrix_full_rank"] = bool(param_matrix_has_full_row_rank(M))

    P_ref = M.T @ P_star @ M
    K_ref = K_star @ M
    G_z = B_zeta @ np.linalg.solve(R, B_zeta.T)
    anc_resid = spectral_norm(
        A_zeta.T @ P_ref + P_ref @ A_zeta + Q_zeta - P_ref @ G_z @ P_ref
    )
    values["ancillary_riccati_residual"] = anc_resid / (1.0 + spectral_norm(P_ref))
    gain_resid = spectral_norm(-np.linalg.solve(R, B_zeta.T @ P_ref) - K_ref)
    values["reference_gain_identity"] = gain_resid / (1.0 + spectral_norm(K_ref))
    values["unknowns_original"] = nz_unknowns(par.n_zeta, m)
    values["unknowns_improved"] = par.n_zeta * (par.n_zeta + 1) // 2
    return values


def nz_unknowns(nz: int, m: int) -> int:
    return nz * (nz + 1) // 2 + m * nz


def verify_config(cfg: dict, output_root=None, name: str = "verify") -> RunReport:
    """Run the model-side identity checks described by a config."""
    out_dir = _resolve_out_dir(cfg, output_root, name)
    trials = cfg.get("random", {}).get("trials", 1)
    worst: dict = {}
    t0 = time.perf_counter()
    for trial in range(trials):
        values = _verify_one(cfg, trial)
        for key, val in values.items():
            if isinstance(val, bool):
                worst[key] = min(worst.get(key, True), val)
            elif isinstance(val, int):
                worst[key] = val
            else:
                worst[key] = max(worst.get(key, 0.0), float(val))
    elapsed = time.perf_counter() - t0

    checks = []
    all_pass = True
    for key, val in worst.items():
        if key in _VERIFY_TOLS:
            passed = val <= _VERIFY_TOLS[key]
            checks.append({
                "name": key, "passed": bool(passed),
                "worst_value": float(val), "threshold": _VERIFY_TOLS[key],
            })
        elif isinstance(val, bool):
            passed = val
            checks.append({"name": key, "passed": bool(passed)})
        else:
            continue  # informational integers reported below
        all_pass = all_pass and passed

    data = {
        "mode": "verify",
        "status": "ok" if all_pass else "checks-failed",
        "config": cfg,
        "trials": trials,
        "checks": checks,
        "unknown_counts": {
            "original": worst.get("unknowns_original"),
            "improved": worst.get("unknowns_improved"),
        },
        "seconds": elapsed,
        "manifest": [],
    }
    with open(out_dir / "verify.json", "w") as fh:
        json.dump(data, fh, indent=1)
        fh.write("\n")
    data["manifest"].append("verify.json")
    for check in checks:
        tag = "PASS" if check["passed"] else "FAIL"
        if "worst_value" in check:
            print(f"[oflqr] {tag} {check['name']}: {check['worst_value']:.3e} "
                  f"(threshold {check['threshold']:.1e}, {trials} trial(s))")
        else:
            print(f"[oflqr] {tag} {check['name']} ({trials} trial(s))")
    status = "ok" if all_pass else "checks-failed"
    return RunReport(status=status, out_dir=out_dir, data=data)


# =====================================================================
# Sweep
# =====================================================================


def _sweep_worker(args) -> dict:
    path_str, root_str = args
    path = Path(path_str)
    started = time.perf_counter()
    try:
        report = run_config(load_config(path), output_root=root_str, name=path.stem)
        return {
            "config": path.name,
            "status": report.status,
            "ok": report.ok,
            "iterations": report.data.get("iterations"),
            "normalized_gain_error": report.data.get("normalized_gain_error"),
            "seconds": time.perf_counter() - started,
        }
    except Exception as exc:  # noqa: BLE001 - a sweep never dies on one config
        return {
            "config": path.name,
            "status": f"error: {type(exc).__name__}: {exc}",
            "ok": False,
            "iterations": None,
            "normalized_gain_error": None,
            "seconds": time.perf_counter() - started,
        }


def sweep_directory(directory, jobs: int = 1, output_root=None) -> RunReport:
    """Run every .toml/.json config in a directory, optionally in parallel."""
    directory = Path(directory)
    paths = sorted(
        p for p in directory.iterdir() if p.suffix.lower() in (".toml", ".json")
    )
    if not paths:
        raise ValueError(f"sweep: no .toml or .json configs in {directory}")
    root = Path(output_root) if output_root else Path(
        os.environ.get(OUTPUT_ROOT_ENV, "runs")
    )
    root.mkdir(parents=True, exist_ok=True)
    args = [(str(p), str(root)) for p in paths]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_worker, args))
    else:
        rows = [_sweep_worker(a) for a in args]
    all_ok = all(row["ok"] for row in rows)
    data = {"mode": "sweep", "jobs": jobs, "all_ok": all_ok, "runs": rows}
    with open(root / "sweep.json", "w") as fh:
        json.dump(data, fh, indent=1)
        fh.write("\n")
    for row in rows:
        print(f"[oflqr] {row['config']}: {row['status']} "
              f"({row['seconds']:.2f} s)")
    return RunReport(status="ok" if all_ok else "error", out_dir=root, data=data)


# =====================================================================
# Entry point
# =====================================================================


def _print_run(report: RunReport) -> None:
    data = report.data
    print(f"[oflqr] {data['algorithm']}: {data['status']}")
    if data.get("rank"):
        for key, cond in data["rank"].items():
            print(f"[oflqr] rank {key}: {cond['achieved']}/{cond['required']}"
                  f" ({'holds' if cond['satisfied'] else 'fails'})")
    if data.get("iterations") is not None:
        print(f"[oflqr] iterations {data['iterations']} converged {data['converged']}")
    if data.get("normalized_gain_error") is not None:
        print(f"[oflqr] normalized errors: value {data['normalized_value_error']:.3e}"
              f" gain {data['normalized_gain_error']:.3e}")
    if data.get("error"):
        err = data["error"]
        print(f"[oflqr] {err['phase']} phase failed: {err['type']}: {err['message']}")
    print(f"[oflqr] artifacts in {report.out_dir}: {' '.join(data['manifest'])}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="oflqr",
        description="Run, verify, and sweep output-feedback LQR learning experiments.",
    )
    parser.add_argument(
        "--output-root",
        default=None,
        help=f"artifact root directory (default: ${OUTPUT_ROOT_ENV} or ./runs)",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute one experiment config")
    p_run.add_argument("config", help="path to a .toml or .json config")
    p_ver = sub.add_parser("verify", help="run the model-side identity checks")
    p_ver.add_argument("config", help="path to a .toml or .json config")
    p_sweep = sub.add_parser("sweep", help="run every config in a directory")
    p_sweep.add_argument("directory", help="directory of configs")
    p_sweep.add_argument("--jobs", type=int, default=1, help="parallel processes")
    args = parser.parse_args(argv)

    try:
        if args.command == "run":
            path = Path(args.config)
            report = run_config(
                load_config(path), output_root=args.output_root, name=path.stem
            )
            _print_run(report)
            return 0 if report.ok else 1
        if args.command == "verify":
            report = verify_config(
                load_config(args.config),
                output_root=args.output_root,
                name=Path(args.config).stem,
            )
            return 0 if report.status == "ok" else 1
        report = sweep_directory(
            args.directory, jobs=args.jobs, output_root=args.output_root
        )
        return 0 if report.status == "ok" else 1
    except (ValueError, OSError) as exc:
        print(f"[oflqr] error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
