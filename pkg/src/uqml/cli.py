"""Command-line front end.

Exit codes
----------
0  success
1  unexpected internal error
2  invalid configuration or arguments
3  data error (missing file, malformed CSV, shape mismatch)
4  numeric divergence during training

Failures print one JSON object ``{"error", "message", "exit_code"}`` on
stderr.
"""

from __future__ import annotations

import argparse
import itertools
import json
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import acquisition, data, evaluation
from .nnet import DivergenceError
from .numerics import make_rng
from .pipeline import (
    CONFIG_SCHEMA,
    ConfigError,
    load_bundle,
    load_gp,
    predict_bundle,
    resolve_config,
    train_bundle,
)

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 1, 2, 3, 4
REFINE_STREAM = 30
PRED_COLUMNS = ("mean", "var_total", "var_aleatory", "var_epistemic", "split_available")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _read_json(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise data.DataError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _finite_or_none(v: float):
    return float(v) if np.isfinite(v) else None


def _prediction_columns(pred, dist) -> dict:
    cols = pred.as_columns()
    cols["split_available"] = np.full(len(pred), int(pred.split_available))
    cols["train_distance"] = dist
    return cols


def _grid(D: int, bounds, resolution: int) -> np.ndarray:
    if D == 2:
        return data.grid2d(tuple(bounds), resolution)
    if D == 1:
        lo, hi = bounds[0], bounds[1]
        if not hi > lo:
            raise ConfigError("bounds must be increasing")
        return np.linspace(lo, hi, resolution)[:, None]
    raise data.DataError(f"maps need one or two input features, the model has {D}")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------
def cmd_gen_toy(args) -> None:
    if args.kind == "1d":
        ds = data.gen_toy_1d(args.n, seed=args.seed, noise_std=args.noise_std)
    elif args.ood:
        ds = data.gen_ood_cluster(args.n, seed=args.seed, heteroscedastic=args.heteroscedastic)
    else:
        ds = data.gen_toy_2d_clusters(args.n, seed=args.seed, heteroscedastic=args.heteroscedastic)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    data.save_csv(args.out, ds)


def cmd_train(args) -> None:
    cfg = _read_json(args.config)
    train_bundle(cfg, args.out, Path(args.config).resolve().parent)


def _load_inputs(path, bundle) -> tuple[np.ndarray, data.Dataset]:
    header, _ = data.read_table(path)
    target = bundle.target_name if bundle.target_name in header else None
    ds = data.load_csv(path, target, bundle.feature_names)
    return ds.X, ds


def cmd_predict(args) -> None:
    bundle = load_bundle(args.model)
    X, _ = _load_inputs(args.data, bundle)
    pred, dist = predict_bundle(bundle, X)
    data.write_table(args.out, _prediction_columns(pred, dist))


def cmd_map2d(args) -> None:
    bundle = load_bundle(args.model)
    G = _grid(bundle.train_inputs.shape[1], args.bounds, args.resolution)
    pred, dist = predict_bundle(bundle, G)
    cols = {name: G[:, j] for j, name in enumerate(bundle.feature_names)}
    cols.update(_prediction_columns(pred, dist))
    data.write_table(args.out, cols)


def _read_predictions(path) -> tuple[np.ndarray, np.ndarray]:
    header, arr = data.read_table(path)
    for col in ("mean", "var_total"):
        if col not in header:
            raise data.DataError(f"{path}: column {col!r} is required")
    mean = arr[:, header.index("mean")]
    var = arr[:, header.index("var_total")]
    if np.any(var < 0) or not np.all(np.isfinite(var)):
        raise data.DataError(f"{path}: var_total must be finite and non-negative")
    return mean, var


def _read_targets(path, target: str, n: int) -> np.ndarray:
    header, arr = data.read_table(path)
    if target not in header:
        raise data.DataError(f"{path}: target column {target!r} not found (columns: {header})")
    y = arr[:, header.index(target)]
    if y.size != n:
        raise data.DataError(f"{path}: {y.size} targets for {n} predictions")
    return y


def evaluate_arrays(mean, var, y, seed: int = 0) -> tuple[dict, evaluation.CalibrationCurve, evaluation.SparsificationReport]:
    """All metrics of the ``evaluate`` command for aligned arrays."""
    curve = evaluation.regression_calibration(mean, y, variance=var)
    _, area_u = evaluation.u_pool(mean, y, variance=var)
    spars = evaluation.sparsification(np.sqrt(var), y - mean, seed=seed)
    nll = evaluation.nll(mean, y, include_constant=True, variance=var) if np.all(var > 0) else float("inf")
    report = {
        "n": int(y.size),
        "rmse": evaluation.rmse(mean, y),
        "nll": _finite_or_none(nll),
        "ece": evaluation.ece(curve),
        "ece_count_weighted": evaluation.ece(curve, "count"),
        "miscalibration_area": evaluation.miscalibration_area(curve),
        "max_level_error": float(np.max(np.abs(curve.observed - curve.levels))),
        "u_pool_area": area_u,
        "ause": spars.ause,
        "aurg": spars.aurg,
        "calibration": {"levels": curve.levels.tolist(), "observed": curve.observed.tolist()},
    }
    return report, curve, spars


def cmd_evaluate(args) -> None:
    mean, var = _read_predictions(args.preds)
    y = _read_targets(args.targets, args.target, mean.size)
    if y.size == 0:
        raise data.DataError("no predictions to evaluate")
    report, curve, spars = evaluate_arrays(mean, var, y, args.seed)
    out = Path(args.out)
    _write_json(out, report)
    data.write_table(out.with_name(out.stem + "_calibration.csv"), curve.to_columns())
    data.write_table(out.with_name(out.stem + "_sparsification.csv"), spars.to_columns())


def cmd_recalibrate(args) -> None:
    mean, var = _read_predictions(args.preds)
    y = _read_targets(args.targets, args.target, mean.size)
    try:
        rmap = evaluation.isotonic_recalibrate(mean, y, variance=var)
    except ValueError as exc:
        raise data.DataError(str(exc)) from None
    _write_json(args.out, rmap.to_dict())


def cmd_refine(args) -> None:
    bundle = load_bundle(args.model)
    model = load_gp(bundle)
    rec = bundle.standardization
    header, _ = data.read_table(args.candidates)
    if bundle.target_name not in header:
        raise data.DataError(f"{args.candidates}: column {bundle.target_name!r} with oracle values is required")
    cand = data.load_csv(args.candidates, bundle.target_name, bundle.feature_names)
    if len(cand) == 0:
        raise data.DataError(f"{args.candidates}: no candidates")
    Z = rec.apply_x(cand.X)
    truth = rec.apply_y(cand.y)
    lookup = {tuple(z): t for z, t in zip(map(tuple, Z), truth)}

    def oracle(z):
        return lookup[tuple(z)]

    if args.acquisition != "ei" and args.threshold is None:
        raise ConfigError(f"--threshold is required for the {args.acquisition} acquisition")
    e = 0.0 if args.threshold is None else float(rec.apply_y(args.threshold))
    tau = None if args.tau is None else args.tau / rec.y_std
    spec = acquisition.AcquisitionSpec(args.acquisition, e, tau)
    cfg = bundle.config
    model, trace = acquisition.refine(
        model,
        oracle,
        spec,
        Z,
        args.budget,
        rng=make_rng(cfg["seed"], REFINE_STREAM),
        optimize=cfg["optimize"],
        restarts=cfg["restarts"] if cfg["optimize"] else 0,
    )
    acq_scale = 1.0 if args.acquisition == "u" else rec.y_std
    cols = {"iteration": trace.iteration}
    Xo = rec.invert_x(trace.x) if trace.x.shape[0] else trace.x
    for j, name in enumerate(bundle.feature_names):
        cols[name] = Xo[:, j]
    cols["acquisition"] = trace.acquisition * acq_scale
    cols["oracle"] = rec.invert_y(trace.observed)
    data.write_table(args.out, cols)
    if args.model_out:
        dst = Path(args.model_out)
        if dst.resolve() != bundle.path.resolve():
            shutil.copytree(bundle.path, dst, dirs_exist_ok=True)
        (dst / "model" / "gp.json").write_text(model.to_json(), encoding="utf-8")
        np.save(dst / "train_inputs.npy", model.X_train)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_vary(items) -> list[tuple[str, list]]:
    """``["k=v1,v2", ...]`` -> ``[(k, [v1, v2]), ...]`` with JSON-typed values."""
    out = []
    for item in items or []:
        key, sep, vals = item.partition("=")
        key = key.strip()
        if not sep or not vals:
            raise ConfigError(f"--vary expects key=v1,v2,... got {item!r}")
        if key not in CONFIG_SCHEMA["properties"] or key in ("data", "out"):
            raise ConfigError(f"--vary: unknown config key {key!r}")
        out.append((key, [_parse_value(v.strip()) for v in vals.split(",")]))
    return out


def _sweep_run(job) -> None:
    cfg, run_dir, base_dir, bounds, resolution = job
    run_dir = Path(run_dir)
    _write_json(run_dir / "config.json", cfg)
    bundle = train_bundle(cfg, run_dir / "bundle", base_dir)
    G = _grid(bundle.train_inputs.shape[1], bounds, resolution)
    pred, dist = predict_bundle(bundle, G)
    cols = {name: G[:, j] for j, name in enumerate(bundle.feature_names)}
    cols.update(_prediction_columns(pred, dist))
    data.write_table(run_dir / "grid.csv", cols)


def cmd_sweep(args) -> None:
    base = _read_json(args.config)
    base_dir = Path(args.config).resolve().parent
    axes = parse_vary(args.vary)
    if not axes:
        raise ConfigError("sweep needs at least one --vary")
    keys = [k for k, _ in axes]
    combos = list(itertools.product(*(v for _, v in axes)))
    out = Path(args.out)
    jobs, runs = [], []
    for i, combo in enumerate(combos):
        cfg = dict(base)
        cfg.update(zip(keys, combo))
        resolve_config(cfg)  # fail fast before any training
        run_dir = out / f"run_{i:03d}"
        jobs.append((cfg, str(run_dir), base_dir, tuple(args.bounds), args.resolution))
        runs.append({"run": run_dir.name, "params": dict(zip(keys, combo))})
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            list(pool.map(_sweep_run, jobs))
    else:
        for job in jobs:
            _sweep_run(job)
    stds = []
    for r in runs:
        header, arr = data.read_table(out / r["run"] / "grid.csv")
        sd = np.sqrt(arr[:, header.index("var_total")])
        stds.append(sd)
        r["mean_std"] = float(sd.mean())
        r["max_std"] = float(sd.max())
    rows = {"run_a": [], "run_b": [], "mean_abs_std_diff": [], "max_abs_std_diff": [], "relative_mean_abs_std_diff": []}
    for a, b in itertools.combinations(range(len(runs)), 2):
        d = np.abs(stds[a] - stds[b])
        scale = 0.5 * (stds[a].mean() + stds[b].mean())
        rows["run_a"].append(a)
        rows["run_b"].append(b)
        rows["mean_abs_std_diff"].append(float(d.mean()))
        rows["max_abs_std_diff"].append(float(d.max()))
        rows["relative_mean_abs_std_diff"].append(float(d.mean() / scale) if scale > 0 else 0.0)
    data.write_table(out / "pairwise.csv", {k: np.asarray(v) for k, v in rows.items()})
    _write_json(out / "sweep.json", {"varied": keys, "runs": runs})


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="uqml", description="Uncertainty quantification experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-toy", help="generate a toy dataset as CSV")
    g.add_argument("kind", choices=["1d", "2d"])
    g.add_argument("--n", type=int, required=True, help="samples (per cluster for 2d)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise-std", type=float, default=data.TOY_1D_NOISE, help="1d observation noise")
    g.add_argument("--heteroscedastic", action="store_true", help="2d: add input-dependent noise")
    g.add_argument("--ood", action="store_true", help="2d: sample the out-of-distribution cluster")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_toy)

    t = sub.add_parser("train", help="train a model bundle from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="predict on a feature CSV")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    m = sub.add_parser("map2d", help="predict on a regular grid")
    m.add_argument("--model", required=True)
    m.add_argument("--bounds", type=float, nargs=4, default=[-15.0, 15.0, -15.0, 15.0],
                   metavar=("X1LO", "X1HI", "X2LO", "X2HI"))
    m.add_argument("--resolution", type=int, default=200)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_map2d)

    e = sub.add_parser("evaluate", help="calibration, NLL and sparsification metrics")
    e.add_argument("--preds", required=True)
    e.add_argument("--targets", required=True)
    e.add_argument("--target", default="y", help="target column name")
    e.add_argument("--seed", type=int, default=0, help="seed of the random sparsification baseline")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("recalibrate", help="fit an isotonic recalibration map")
    r.add_argument("--preds", required=True)
    r.add_argument("--targets", required=True)
    r.add_argument("--target", default="y")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_recalibrate)

    f = sub.add_parser("refine", help="active refinement of a GP bundle")
    f.add_argument("--model", required=True)
    f.add_argument("--acquisition", choices=["eff", "u", "ei"], required=True)
    f.add_argument("--candidates", required=True, help="CSV of candidate inputs plus oracle values")
    f.add_argument("--budget", type=int, required=True)
    f.add_argument("--threshold", type=float, help="level-set value for eff and u")
    f.add_argument("--tau", type=float, help="fixed EFF half-width (default 2 std)")
    f.add_argument("--model-out", help="write the refined bundle here")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_refine)

    s = sub.add_parser("sweep", help="train and map a grid of configurations")
    s.add_argument("--config", required=True)
    s.add_argument("--vary", action="append", default=[], metavar="KEY=V1,V2")
    s.add_argument("--bounds", type=float, nargs=4, default=[-15.0, 15.0, -15.0, 15.0])
    s.add_argument("--resolution", type=int, default=50)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)
    return p


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "resolution", 2) < 2:
            raise ConfigError("resolution must be at least 2")
        if getattr(args, "budget", 0) < 0:
            raise ConfigError("budget must be non-negative")
        args.func(args)
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    except (data.DataError, OSError) as exc:
        return _fail("data", str(exc), EXIT_DATA)
    except DivergenceError as exc:
        return _fail("divergence", str(exc), EXIT_DIVERGENCE)
    except (ValueError, np.linalg.LinAlgError) as exc:
        return _fail("invalid", str(exc), EXIT_CONFIG)
    except Exception as exc:  # noqa: BLE001
        return _fail("internal", f"{type(exc).__name__}: {exc}", EXIT_INTERNAL)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
