"""Command-line front end and file formats.

Subcommands: ``simulate`` writes a synthetic dataset plus its ground truth;
``fit`` estimates one model; ``select`` sweeps a (K, v0, u) grid by BIC;
``evaluate`` scores results against truth files.

Formats: the predictor matrix is a headerless CSV of n rows by p columns;
the outcome file is a headerless two-column CSV of log observed time and
event indicator.  Results and truth are JSON documents with sorted keys so
identical fits produce byte-identical files.  Inclusion probabilities are
stored as flat upper-triangle lists per subgroup (row-major pair order);
edge and adjacency indices are 0-based.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .em import EmConfig, fit as fit_map
from .estimator import destandardize_result, standardize_dataset
from .exceptions import DataValidationError
from .metrics import best_label_permutation, clustering_error, precision_matrix_error, support_rates
from .precision import AdmmConfig
from .selection import count_sparse_parameters, select_model
from .simulate import SETTING_SHARED, SimDesign, generate_dataset, generate_networks
from .types import Dataset, FitResult, Hyperparams, ModelParams

RESULT_FORMAT = "survnetmix-result-v1"
TRUTH_FORMAT = "survnetmix-truth-v1"
JOBS_ENV_VAR = "SURVNETMIX_JOBS"

DEFAULT_V0_GRID = (0.001, 0.005, 0.01, 0.05)
DEFAULT_U_GRID = (0.0, 0.1, 1.0, 10.0)


# ---------------------------------------------------------------------------
# serialization helpers


def _dump_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def _params_to_dict(p: ModelParams) -> dict:
    return {
        "beta0": p.beta0.tolist(),
        "beta": p.beta.tolist(),
        "tau": p.tau.tolist(),
        "mu": p.mu.tolist(),
        "omega": p.omega.tolist(),
        "pi": p.pi.tolist(),
    }


def _params_from_dict(d: dict) -> ModelParams:
    return ModelParams.from_arrays(
        d["beta0"], d["beta"], d["tau"], d["mu"], d["omega"], d["pi"]
    )


def _pip_to_upper(pip: np.ndarray) -> list:
    iu = np.triu_indices(pip.shape[1], 1)
    return [pip[k][iu].tolist() for k in range(pip.shape[0])]


def _pip_from_upper(upper: list, p: int) -> np.ndarray:
    K = len(upper)
    pip = np.zeros((K, p, p))
    iu = np.triu_indices(p, 1)
    for k in range(K):
        pip[k][iu] = upper[k]
        pip[k] += np.triu(pip[k], 1).T
    return pip


def save_result(path: str, result: FitResult, meta: dict | None = None) -> None:
    payload = {
        "format": RESULT_FORMAT,
        "version": __version__,
        "k": result.map_estimate.K,
        "p": result.map_estimate.p,
        "map": _params_to_dict(result.map_estimate),
        "thresholded": _params_to_dict(result.thresholded),
        "pip_upper": _pip_to_upper(result.pip),
        "edges": [[list(e) for e in ek] for ek in result.edges],
        "memberships": np.asarray(result.memberships).tolist(),
        "bic": float(result.bic),
        "objective_trace": np.asarray(result.objective_trace).tolist(),
        "converged": bool(result.converged),
        "iterations": int(result.iterations),
        "meta": meta or {},
    }
    _dump_json(path, payload)


def load_result(path: str) -> FitResult:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != RESULT_FORMAT:
        raise DataValidationError(f"{path}: not a {RESULT_FORMAT} file")
    p = payload["p"]
    return FitResult(
        map_estimate=_params_from_dict(payload["map"]),
        thresholded=_params_from_dict(payload["thresholded"]),
        pip=_pip_from_upper(payload["pip_upper"], p),
        edges=tuple(
            tuple(tuple(int(i) for i in e) for e in ek) for ek in payload["edges"]
        ),
        memberships=np.asarray(payload["memberships"], dtype=int),
        bic=float(payload["bic"]),
        objective_trace=np.asarray(payload["objective_trace"], dtype=float),
        converged=bool(payload["converged"]),
        iterations=int(payload["iterations"]),
    )


def save_truth(path: str, labels, adjacency, truth_params: ModelParams, design: SimDesign) -> None:
    iu = np.triu_indices(adjacency.shape[1], 1)
    payload = {
        "format": TRUTH_FORMAT,
        "labels": np.asarray(labels, dtype=int).tolist(),
        "adjacency_upper": [
            np.asarray(adjacency[k][iu], dtype=int).tolist()
            for k in range(adjacency.shape[0])
        ],
        "params": _params_to_dict(truth_params),
        "design": {
            "K": design.K,
            "p": design.p,
            "group_sizes": list(design.group_sizes),
            "topology": design.topology,
            "shared_subnets": design.shared_subnets,
            "n_subnets": design.n_subnets,
            "noise_sd": design.noise_sd,
            "censoring_rate": design.censoring_rate,
            "seed": design.seed,
        },
    }
    _dump_json(path, payload)


def load_truth(path: str) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != TRUTH_FORMAT:
        raise DataValidationError(f"{path}: not a {TRUTH_FORMAT} file")
    params = _params_from_dict(payload["params"])
    p = params.p
    K = params.K
    iu = np.triu_indices(p, 1)
    adjacency = np.zeros((K, p, p), dtype=bool)
    for k in range(K):
        adjacency[k][iu] = np.asarray(payload["adjacency_upper"][k], dtype=bool)
        adjacency[k] |= adjacency[k].T
    return {
        "labels": np.asarray(payload["labels"], dtype=int),
        "adjacency": adjacency,
        "params": params,
        "design": payload["design"],
    }


def read_matrix_csv(path: str, expected_cols: int | None = None) -> np.ndarray:
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as err:  # numpy includes the offending line number
        raise DataValidationError(f"{path}: {err}") from err
    if expected_cols is not None and arr.shape[1] != expected_cols:
        raise DataValidationError(
            f"{path}: expected {expected_cols} columns, found {arr.shape[1]}"
        )
    return arr


def read_dataset(data_path: str, surv_path: str) -> Dataset:
    X = read_matrix_csv(data_path)
    surv = read_matrix_csv(surv_path, expected_cols=2)
    if surv.shape[0] != X.shape[0]:
        raise DataValidationError(
            f"{surv_path}: {surv.shape[0]} rows but {data_path} has {X.shape[0]}"
        )
    return Dataset.from_arrays(surv[:, 0], surv[:, 1], X)


def load_config(path: str | None, n: int, p: int):
    """Config file -> (Hyperparams, EmConfig, standardize flag).

    Missing keys fall back to the package defaults; lambda1/lambda2 default
    to sqrt(n log p).
    """
    raw = {}
    if path is not None:
        with open(path) as fh:
            raw = json.load(fh)
    hp = dict(raw.get("hyperparams", {}))
    h = Hyperparams.defaults_for(n, p, **hp)
    em_raw = dict(raw.get("em", {}))
    admm = AdmmConfig(**em_raw.pop("admm", {}))
    cfg = EmConfig(admm=admm, **em_raw).validate()
    return h, cfg, bool(raw.get("standardize", True))


# ---------------------------------------------------------------------------
# grid and list parsing


def parse_grid(text: str, cast=float):
    """Parse "1..5" ranges (integers, inclusive) or comma lists."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return [cast(v) for v in range(int(lo), int(hi) + 1)]
    return [cast(v) for v in text.split(",") if v]


def _require_files(*paths: str) -> None:
    for path in paths:
        if path is not None and not os.path.exists(path):
            raise FileNotFoundError(path)


# ---------------------------------------------------------------------------
# subcommands


def _fit_standardized(d: Dataset, K, h, cfg, standardize: bool):
    if standardize:
        d_fit, shift, scale = standardize_dataset(d)
        result = fit_map(d_fit, K, h, cfg)
        return destandardize_result(result, shift, scale)
    return fit_map(d, K, h, cfg)


def cmd_simulate(args) -> int:
    shared = SETTING_SHARED[args.setting] if args.shared is None else args.shared
    sizes = tuple(parse_grid(args.sizes, int)) if args.sizes else tuple([150] * args.k)
    design = SimDesign(
        K=args.k,
        p=args.p,
        group_sizes=sizes,
        topology=args.topology,
        shared_subnets=shared,
        n_subnets=args.n_subnets,
        noise_sd=args.noise_sd,
        censoring_rate=args.censoring,
        seed=args.seed,
    ).validate()
    networks, adjacency = generate_networks(design)
    dataset, labels, truth = generate_dataset(design, networks)
    os.makedirs(args.out_dir, exist_ok=True)
    np.savetxt(os.path.join(args.out_dir, "X.csv"), dataset.X, fmt="%.17g", delimiter=",")
    np.savetxt(
        os.path.join(args.out_dir, "surv.csv"),
        np.column_stack([dataset.t, dataset.delta]),
        fmt="%.17g",
        delimiter=",",
    )
    save_truth(os.path.join(args.out_dir, "truth.json"), labels, adjacency, truth, design)
    print(f"wrote X.csv, surv.csv, truth.json to {args.out_dir}")
    return 0


def cmd_fit(args) -> int:
    _require_files(args.data, args.surv, args.config)
    d = read_dataset(args.data, args.surv)
    h, cfg, standardize = load_config(args.config, d.n, d.p)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    result = _fit_standardized(d, args.k, h, cfg, standardize)
    save_result(
        args.out,
        result,
        meta={"seed": cfg.seed, "standardize": standardize, "n": d.n, "p": d.p},
    )
    status = "converged" if result.converged else "did not converge"
    print(f"fit {status} after {result.iterations} iterations; bic={result.bic:.4f}")
    return 0


def cmd_select(args) -> int:
    _require_files(args.data, args.surv, args.config)
    d = read_dataset(args.data, args.surv)
    h_base, cfg, standardize = load_config(args.config, d.n, d.p)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    k_grid = parse_grid(args.kgrid, int)
    v0_grid = parse_grid(args.v0grid) if args.v0grid else list(DEFAULT_V0_GRID)
    u_grid = parse_grid(args.ugrid) if args.ugrid else list(DEFAULT_U_GRID)
    if standardize:
        d_fit, shift, scale = standardize_dataset(d)
    else:
        d_fit, shift, scale = d, None, None
    best, table = select_model(d_fit, k_grid, v0_grid, u_grid, h_base, cfg, n_jobs=args.jobs)
    if standardize:
        best = destandardize_result(best, shift, scale)
    save_result(
        args.out,
        best,
        meta={"seed": cfg.seed, "standardize": standardize, "n": d.n, "p": d.p},
    )
    with open(args.table, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["K", "v0", "u", "bic", "s_hat", "converged", "failed", "error"]
        )
        writer.writeheader()
        writer.writerows(table)
    winner = min(
        (row for row in table if not row["failed"]),
        key=lambda r: (r["bic"], r["s_hat"], r["K"]),
    )
    print(
        f"selected K={winner['K']} v0={winner['v0']} u={winner['u']} "
        f"bic={winner['bic']:.4f} ({len(table)} grid points)"
    )
    return 0


def _evaluate_pair(result: FitResult, truth: dict) -> dict:
    sigma = best_label_permutation(result.memberships, truth["labels"])
    ce = clustering_error(result.memberships, truth["labels"])
    pme = precision_matrix_error(result.thresholded.omega, truth["params"].omega, sigma)
    tpr, fpr = support_rates(result.edges, truth["adjacency"], sigma)
    return {"ce": ce, "pme": pme, "tpr": tpr, "fpr": fpr}


def _write_metrics_csv(path: str, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["replicate", "ce", "pme", "tpr", "fpr"])
        writer.writeheader()
        writer.writerows(rows)


def cmd_evaluate(args) -> int:
    if args.replicate_dir is not None:
        _require_files(args.replicate_dir)
        names = sorted(
            f for f in os.listdir(args.replicate_dir) if f.startswith("result_")
        )
        if not names:
            raise FileNotFoundError(f"{args.replicate_dir}: no result_*.json files")
        rows = []
        for name in names:
            rid = name[len("result_") : -len(".json")]
            result = load_result(os.path.join(args.replicate_dir, name))
            truth = load_truth(os.path.join(args.replicate_dir, f"truth_{rid}.json"))
            row = {"replicate": rid, **_evaluate_pair(result, truth)}
            rows.append(row)
        values = {m: np.array([r[m] for r in rows]) for m in ("ce", "pme", "tpr", "fpr")}
        rows.append({"replicate": "mean", **{m: float(v.mean()) for m, v in values.items()}})
        rows.append(
            {"replicate": "sd", **{m: float(v.std(ddof=1)) if len(values[m]) > 1 else 0.0 for m, v in values.items()}}
        )
        _write_metrics_csv(args.out, rows)
        print(f"aggregated {len(names)} replicates into {args.out}")
        return 0
    _require_files(args.result, args.truth)
    result = load_result(args.result)
    truth = load_truth(args.truth)
    rows = [{"replicate": "0", **_evaluate_pair(result, truth)}]
    _write_metrics_csv(args.out, rows)
    print(
        " ".join(f"{m}={rows[0][m]:.6f}" for m in ("ce", "pme", "tpr", "fpr"))
    )
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="survnetmix",
        description="Subgroup-specific network estimation supervised by survival",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="write a synthetic dataset and its truth")
    sim.add_argument("--out-dir", required=True)
    sim.add_argument("--topology", default="power-law",
                     choices=["power-law", "nearest-neighbor", "erdos-renyi"])
    sim.add_argument("--setting", default="S1", choices=sorted(SETTING_SHARED))
    sim.add_argument("--shared", type=int, default=None,
                     help="override the setting's shared subnetwork count")
    sim.add_argument("--k", type=int, default=2)
    sim.add_argument("--p", type=int, default=100)
    sim.add_argument("--sizes", default=None, help="comma list of subgroup sizes")
    sim.add_argument("--n-subnets", type=int, default=10)
    sim.add_argument("--noise-sd", type=float, default=0.01)
    sim.add_argument("--censoring", type=float, default=0.20)
    sim.add_argument("--seed", type=int, default=0)
    sim.set_defaults(func=cmd_simulate)

    fit_p = sub.add_parser("fit", help="fit one model")
    fit_p.add_argument("--data", required=True)
    fit_p.add_argument("--surv", required=True)
    fit_p.add_argument("--k", type=int, required=True)
    fit_p.add_argument("--config", default=None)
    fit_p.add_argument("--out", required=True)
    fit_p.add_argument("--seed", type=int, default=None)
    fit_p.set_defaults(func=cmd_fit)

    sel = sub.add_parser("select", help="grid search over K, v0, u by BIC")
    sel.add_argument("--data", required=True)
    sel.add_argument("--surv", required=True)
    sel.add_argument("--kgrid", required=True, help='e.g. "1..5" or "2,3"')
    sel.add_argument("--v0grid", default=None)
    sel.add_argument("--ugrid", default=None)
    sel.add_argument("--config", default=None)
    sel.add_argument("--out", required=True)
    sel.add_argument("--table", required=True)
    sel.add_argument("--seed", type=int, default=None)
    sel.add_argument("--jobs", type=int, default=int(os.environ.get(JOBS_ENV_VAR, "1")))
    sel.set_defaults(func=cmd_select)

    ev = sub.add_parser("evaluate", help="score a result against its truth")
    ev.add_argument("--result", default=None)
    ev.add_argument("--truth", default=None)
    ev.add_argument("--replicate-dir", default=None)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "evaluate" and args.replicate_dir is None:
        if args.result is None or args.truth is None:
            parser.error("evaluate needs --result and --truth, or --replicate-dir")
    try:
        return args.func(args)
    except FileNotFoundError as err:
        print(f"error: file not found: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # runtime failures: validation, solver, I/O content
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
