"""Command-line entry point.

Subcommands:
    train    greedy basis construction; writes basis npz + trace CSV
    verify   held-out error indicators for a trained basis
    infsup   full and reduced inf-sup constants over sampled parameters
    bench    run an experiment grid and emit table/trace/summary files

Configuration comes from a JSON file (--config); --seed, --threads and
--out override the corresponding entries. The default output directory
can also be set through the RBCONTROL_OUT environment variable.

Exit codes: 0 success, 2 usage or configuration error, 3 greedy failed
to converge (results are still written), 4 numerical failure.
"""

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .bench import ExperimentGrid, emit_reports, run_grid, software_fingerprint
from .errors import (
    ConfigError,
    EigenSolveError,
    FingerprintError,
    FullSolveError,
    ParameterDomainError,
)
from .full_model import FullOrderModel, inf_sup_full
from .greedy import (
    CONVERGED,
    GreedyConfig,
    greedy_train,
    sample_training_set,
    verify,
)
from .parameters import BasisKind, Formulation, Problem
from .reduced_basis import load_basis, reduced_inf_sup, save_basis

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NOT_CONVERGED = 3
EXIT_NUMERICAL = 4

ENV_OUT = "RBCONTROL_OUT"

RUN_KEYS = {
    "problem": str,
    "nc": int,
    "n_subdomains": int,
    "elements_per_side": int,
    "beta": float,
    "formulation": str,
    "stabilization": str,
    "tol": float,
    "n_train": int,
    "max_basis": int,
    "seed": int,
    "verification_size": int,
    "threads": int,
    "pg_solver": str,
    "out": str,
}

GRID_ONLY_KEYS = {
    "nc_list": list,
    "n_subdomains_list": list,
    "formulations": list,
    "stabilizations": list,
}

INFSUP_KEYS = {"n_samples": int}


def _load_config(path, extra_keys=()) -> dict:
    allowed = dict(RUN_KEYS)
    for keys in extra_keys:
        allowed.update(keys)
    try:
        with open(path) as handle:
            raw = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config {path} is not valid JSON (line {exc.lineno}, col {exc.colno}): "
            f"{exc.msg}"
        ) from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {', '.join(unknown)}")
    for key, value in raw.items():
        want = allowed[key]
        if want is float and isinstance(value, int):
            continue
        if not isinstance(value, want) or isinstance(value, bool):
            raise ConfigError(
                f"config key '{key}' must be {want.__name__}, got {value!r}"
            )
    if "problem" not in raw:
        raise ConfigError(f"config {path} is missing the 'problem' key")
    return raw


def _parse_enum(enum_cls, value, key):
    try:
        return enum_cls(value)
    except ValueError:
        options = ", ".join(e.value for e in enum_cls)
        raise ConfigError(f"config key '{key}' must be one of: {options}") from None


def _build_fom(cfg) -> FullOrderModel:
    problem = _parse_enum(Problem, cfg["problem"], "problem")
    if "nc" not in cfg:
        raise ConfigError("config is missing the 'nc' key")
    return FullOrderModel.build(
        problem,
        cfg["nc"],
        n_subdomains=cfg.get("n_subdomains", 3),
        beta=cfg.get("beta", 1e-2),
        elements_per_side=cfg.get("elements_per_side"),
    )


def _greedy_config(cfg, args) -> GreedyConfig:
    return GreedyConfig(
        formulation=_parse_enum(
            Formulation, cfg.get("formulation", "galerkin"), "formulation"
        ),
        stabilization=_parse_enum(
            BasisKind, cfg.get("stabilization", "aggregation"), "stabilization"
        ),
        tol=cfg.get("tol"),
        n_train=cfg.get("n_train", 2000),
        max_basis=cfg.get("max_basis"),
        seed=args.seed if args.seed is not None else cfg.get("seed", 0),
        verification_size=cfg.get("verification_size", 500),
        threads=args.threads if args.threads is not None else cfg.get("threads", 1),
        pg_solver=cfg.get("pg_solver", "normal"),
    )


def _out_dir(cfg, args) -> Path:
    out = args.out or cfg.get("out") or os.environ.get(ENV_OUT) or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _cell_name(cfg, config: GreedyConfig) -> str:
    form = "g" if config.formulation is Formulation.GALERKIN else "pg"
    return (
        f"{cfg['problem']}_{cfg['nc']}_{cfg.get('n_subdomains', 3)}"
        f"_{form}_{config.stabilization.value}"
    )


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    fom = _build_fom(cfg)
    config = _greedy_config(cfg, args)
    out = _out_dir(cfg, args)
    basis, trace = greedy_train(fom, config)
    name = _cell_name(cfg, config)
    basis_path = out / f"basis_{name}.npz"
    trace_path = out / f"trace_{name}.csv"
    save_basis(basis_path, basis)
    trace.write_csv(trace_path)
    print(
        f"greedy {trace.outcome}: N={basis.n_snapshots} "
        f"columns={basis.total_columns} eta*={trace.final_eta:.3e}"
    )
    print(f"basis: {basis_path}")
    print(f"trace: {trace_path}")
    return EXIT_OK if trace.outcome == CONVERGED else EXIT_NOT_CONVERGED


def cmd_verify(args) -> int:
    cfg = _load_config(args.config)
    fom = _build_fom(cfg)
    config = _greedy_config(cfg, args)
    basis = load_basis(args.basis, expected_fingerprint=fom.fingerprint)
    out = _out_dir(cfg, args)
    seed = config.seed + 1
    training = sample_training_set(fom.box, config.n_train, config.seed)
    report = verify(
        fom,
        basis,
        config.formulation,
        config.verification_size,
        seed=seed,
        training=training,
        threads=config.threads,
    )
    payload = {
        "basis": str(args.basis),
        "n_samples": int(report.etas.size),
        "seed": seed,
        "max_eta": report.max_eta,
        "median_eta": report.median_eta,
    }
    path = out / f"verify_{_cell_name(cfg, config)}.json"
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2)
    print(f"verification over {payload['n_samples']} parameters:")
    print(f"  max eta    = {report.max_eta:.3e}")
    print(f"  median eta = {report.median_eta:.3e}")
    print(f"report: {path}")
    return EXIT_OK


def cmd_infsup(args) -> int:
    cfg = _load_config(args.config, extra_keys=(INFSUP_KEYS,))
    fom = _build_fom(cfg)
    config = _greedy_config(cfg, args)
    out = _out_dir(cfg, args)
    basis = None
    if args.basis:
        basis = load_basis(args.basis, expected_fingerprint=fom.fingerprint)
    n_samples = cfg.get("n_samples", 20)
    params = [("sample", mu) for mu in sample_training_set(fom.box, n_samples, config.seed)]
    if basis is not None:
        # the reduced constant at the basis's own snapshot parameters is
        # the telling diagnostic (it vanishes for unstabilized bases)
        params += [("snapshot", mu) for mu in basis.snapshot_params]
    path = out / "infsup.csv"
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        header = ["kind"] + [f"mu_{i}" for i in range(fom.box.dim)] + ["beta0_full"]
        if basis is not None:
            header.append("beta_reduced")
        writer.writerow(header)
        for kind, mu in params:
            beta0 = inf_sup_full(fom.ops, mu, fom.norms)
            record = [kind] + [repr(float(v)) for v in mu.values] + [repr(beta0)]
            if basis is not None:
                record.append(repr(reduced_inf_sup(basis, fom.kkt(mu), fom.norms)))
            writer.writerow(record)
    print(f"inf-sup constants for {len(params)} parameters: {path}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load_config(args.config, extra_keys=(GRID_ONLY_KEYS,))
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    threads = args.threads if args.threads is not None else cfg.get("threads", 1)
    grid = ExperimentGrid(
        problem=_parse_enum(Problem, cfg["problem"], "problem"),
        nc_list=tuple(cfg.get("nc_list", [3, 4])),
        n_subdomains_list=tuple(cfg.get("n_subdomains_list", [3])),
        formulations=tuple(
            _parse_enum(Formulation, f, "formulations")
            for f in cfg.get("formulations", ["galerkin", "petrov-galerkin"])
        ),
        stabilizations=tuple(
            _parse_enum(BasisKind, s, "stabilizations")
            for s in cfg.get("stabilizations", ["supremizer", "aggregation"])
        ),
        tol=cfg.get("tol"),
        n_train=cfg.get("n_train", 2000),
        max_basis=cfg.get("max_basis"),
        seed=seed,
        verification_size=cfg.get("verification_size", 500),
        threads=threads,
        beta=cfg.get("beta", 1e-2),
    )
    out = _out_dir(cfg, args)
    rows, traces, _ = run_grid(grid)
    paths = emit_reports(rows, traces, out, grid)
    for row in rows:
        print(
            f"{row.problem} nc={row.nc} {row.formulation}/{row.stabilization}: "
            f"{row.outcome}"
            + (f" N={row.n_snapshots}" if row.n_snapshots is not None else "")
        )
    print(f"wrote {len(paths)} files under {out}")
    bad = [row for row in rows if row.outcome == "error"]
    unconverged = [row for row in rows if row.outcome != CONVERGED]
    if bad:
        return EXIT_NUMERICAL
    return EXIT_OK if not unconverged else EXIT_NOT_CONVERGED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rbcontrol",
        description="Stabilized reduced-basis pipeline for parametrized control",
    )
    parser.add_argument("--version", action="version", version=json.dumps(
        software_fingerprint()))
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument(
            "--threads", type=int, default=None,
            help="sweep parallelism (1 = bit-reproducible reference mode)",
        )
        p.add_argument("--out", default=None, help=f"output directory (or ${ENV_OUT})")

    p_train = sub.add_parser("train", help="run the greedy offline stage")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_verify = sub.add_parser("verify", help="evaluate a basis on held-out parameters")
    common(p_verify)
    p_verify.add_argument("--basis", required=True, help="basis npz from train")
    p_verify.set_defaults(func=cmd_verify)

    p_infsup = sub.add_parser("infsup", help="full/reduced inf-sup constants")
    common(p_infsup)
    p_infsup.add_argument("--basis", default=None, help="optional basis npz")
    p_infsup.set_defaults(func=cmd_infsup)

    p_bench = sub.add_parser("bench", help="run an experiment grid")
    common(p_bench)
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParameterDomainError, FingerprintError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FullSolveError, EigenSolveError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
