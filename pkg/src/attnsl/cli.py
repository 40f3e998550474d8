"""Command-line interface: ``attnsl <subcommand> [--config FILE] [--key value ...]``.

Every subcommand reads an optional flat JSON config; command-line flags
override its keys. Exit codes: 0 success, 1 usage or configuration error,
2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import bench, interpret
from .data import DataError, Dataset, derive_seed, impute_train_means, load_csv, make_folds, write_csv
from .linear import NumericError
from .pipeline import PipelineConfig, export_result, result_model_dict, run_pipeline, drift_correct
from .simgen import DriftScenario, SimSetting, gen_drift_full, gen_homogeneous, gen_setting
from .trees import TreeEnsemble, default_threads

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def _floats(s):
    return tuple(float(v) for v in (s.split(",") if isinstance(s, str) else s))


def _strs(s):
    return tuple(v.strip() for v in s.split(",")) if isinstance(s, str) else tuple(s)


def _opt_int(s):
    return None if s in (None, "none", "None", "") else int(s)


def _opt_float(s):
    return None if s in (None, "none", "None", "") else float(s)


# (type, default, help) per key; defaults of None mean "not set"
_PIPELINE_TYPES = {
    "base_learner": (str, "lasso | gbt | forest (forest only with approximate)"),
    "similarity": (str, "forest | ridge"),
    "num_trees": (int, "trees in the similarity forest"),
    "mtry": (_opt_int, "features tried per split (default p/3)"),
    "min_node_size": (int, "smallest forest node that may be split"),
    "temperature": (float, "softmax temperature for attention"),
    "m_grid": (_floats, "comma-separated mixing grid"),
    "cv_folds": (int, "cross-validation folds"),
    "fold_kind": (str, "k-fold | expanding-window"),
    "adaptive": (_bool, "per-test-point mixing"),
    "approximate": (_bool, "leaf-reweighting approximation for tree learners"),
    "mixing": (_opt_float, "fixed mixing value (skips mixing CV)"),
    "gbt_rounds": (int, "boosting rounds (upper bound for CV)"),
    "gbt_learning_rate": (float, "boosting learning rate"),
    "gbt_max_leaves": (int, "leaves per boosted tree"),
    "gbt_patience": (int, "early-stopping patience in rounds"),
    "drift_temperature": (float, "temperature for residual correction"),
}
_PIPELINE_DEFAULTS = {f.name: f.default for f in fields(PipelineConfig)}

_COMMON = {
    "seed": (int, 0, "master random seed"),
    "threads": (int, None, "worker threads (default: ATTNSL_THREADS or 1)"),
    "out": (str, ".", "output directory"),
}

_RUN_KEYS = {
    "fit": {
        "train": (str, None, "training CSV"),
        "test": (str, None, "test CSV (or use --split)"),
        "split": (_opt_float, None, "train fraction for a seeded random split of --train"),
        "response": (str, "y", "response column name"),
    },
    "predict": {
        "model": (str, None, "model.json written by fit"),
        "train": (str, None, "training CSV used by fit"),
        "test": (str, None, "rows to predict"),
        "response": (str, "y", "response column name"),
    },
    "simulate": {
        "kind": (str, "setting", "setting | homogeneous | drift"),
        "setting": (int, 1, "simulation setting 1-4"),
        "n": (int, 300, "rows per train/test set"),
        "p": (_opt_int, None, "features (default 30, or 100 for setting 2)"),
        "snr": (float, 2.5, "signal-to-noise ratio"),
        "sigma": (float, 36.0, "drift noise sd"),
    },
    "benchmark": {
        "source": (str, "setting", "setting | homogeneous | csv | drift"),
        "setting": (int, 1, "simulation setting 1-4"),
        "n": (int, 300, "rows per train/test set"),
        "p": (_opt_int, None, "features"),
        "snr": (float, 2.5, "signal-to-noise ratio"),
        "models": (_strs, ("lasso", "attention"), "comma-separated: " + ",".join(bench.MODELS)),
        "replications": (int, 100, "replications"),
        "csv_path": (str, None, "data file for source=csv"),
        "response": (str, "y", "response column for source=csv"),
        "train_fraction": (float, 0.5, "train share for source=csv"),
        "sigma": (float, 36.0, "drift noise sd (source=drift)"),
    },
    "interpret": {
        "coefficients": (str, None, "coefficients.csv written by fit"),
        "predictions": (str, None, "predictions.csv written by fit (for per-cluster PSE)"),
        "k": (int, interpret.DEFAULT_K, "number of clusters"),
    },
    "drift": {
        "model": (str, None, "tree ensemble JSON (or a fit model.json with a tree baseline)"),
        "train": (str, None, "time-1 CSV to fit the drift model when --model does not exist"),
        "recent": (str, None, "recent labelled CSV"),
        "predict": (str, None, "rows to predict"),
        "temperature": (float, 0.1, "softmax temperature"),
        "response": (str, "y", "response column name"),
    },
}
_USES_PIPELINE = {"fit", "predict", "benchmark"}


def _keys(cmd: str) -> dict:
    """key -> (type, default, help) for a subcommand."""
    out = dict(_COMMON)
    out.update(_RUN_KEYS[cmd])
    if cmd in _USES_PIPELINE:
        for k, (t, h) in _PIPELINE_TYPES.items():
            out.setdefault(k, (t, _PIPELINE_DEFAULTS[k], h))
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="attnsl", description="Attention-weighted supervised learning.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "fit": "fit the attention pipeline and write model/prediction artifacts",
        "predict": "predict new rows with a fitted model.json",
        "simulate": "write simulated train/test/truth CSVs",
        "benchmark": "replicated comparison against the lasso",
        "interpret": "cluster fitted coefficients with prototypes",
        "drift": "residual correction of a stale tree model",
    }
    for cmd in _RUN_KEYS:
        sp = sub.add_parser(cmd, help=helps[cmd], description=helps[cmd])
        sp.add_argument("--config", help="flat JSON file with any of the keys below")
        for key, (typ, default, hlp) in _keys(cmd).items():
            flag = "--" + key.replace("_", "-")
            text = f"{hlp} [{key}; default {default}]" if default is not None else f"{hlp} [{key}]"
            if typ is _bool:
                sp.add_argument(flag, dest=key, type=_bool, nargs="?", const=True, default=None, help=text)
            else:
                sp.add_argument(flag, dest=key, type=typ, default=None, help=text)
    return p


def resolve(cmd: str, ns: argparse.Namespace) -> dict:
    """Defaults, then config-file values, then flags."""
    spec = _keys(cmd)
    conf = {k: d for k, (_, d, _) in spec.items()}
    if ns.config:
        try:
            raw = json.loads(Path(ns.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(raw) - set(spec))
        if unknown:
            raise UsageError(f"unknown config keys for {cmd}: {unknown}")
        for k, v in raw.items():
            try:
                conf[k] = spec[k][0](v) if v is not None else None
            except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"bad value for {k}: {exc}") from None
    for k in spec:
        v = getattr(ns, k)
        if v is not None:
            conf[k] = v
    if conf["threads"] is None:
        conf["threads"] = default_threads()
    return conf


def _pipeline_config(conf: dict) -> PipelineConfig:
    d = {k: conf[k] for k in _PIPELINE_TYPES}
    try:
        return PipelineConfig(**d, seed=conf["seed"], threads=conf["threads"])
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _need(conf, *keys):
    missing = [k for k in keys if not conf.get(k)]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _outdir(conf) -> Path:
    out = Path(conf["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_train_test(conf):
    train = load_csv(conf["train"], conf["response"])
    if conf.get("test"):
        if _has_response(conf["test"], conf["response"]):
            test = load_csv(conf["test"], conf["response"])
        else:
            test = _load_features(conf["test"], train.feature_names)
        if test.feature_names != train.feature_names:
            raise DataError(f"test columns {list(test.feature_names)} differ from train {list(train.feature_names)}")
    elif conf.get("split"):
        plan = make_folds(train.n, "random-split", 2, derive_seed(conf["seed"], 7), conf["split"])
        train, test = train.subset(plan.assignments == 0), train.subset(plan.assignments == 1)
    else:
        raise UsageError("give --test or --split")
    train, (test,) = impute_train_means(train, [test])
    return train, test


def _has_response(path, response) -> bool:
    with open(path, newline="", encoding="utf-8") as fh:
        return response in [h.strip() for h in next(csv.reader(fh), [])]


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_fit(conf: dict) -> int:
    _need(conf, "train")
    config = _pipeline_config(conf)
    train, test = _read_train_test(conf)
    result = run_pipeline(train, test.features, config)
    out = _outdir(conf)
    has_y = conf.get("split") or _has_response(conf["test"], conf["response"])
    y = test.response if has_y else None
    export_result(result, out, list(test.row_ids), list(train.row_ids), y)
    (out / "model.json").write_text(json.dumps(result_model_dict(result)), encoding="utf-8")
    if result.lambda_hat is not None:
        print(f"lambda_hat: {float(result.lambda_hat)!r}")
    if result.n_rounds is not None:
        print(f"rounds: {result.n_rounds}")
    print(f"mixing: {float(result.mixing.value)!r} ({result.mixing.mode})")
    if y is not None:
        print(f"test PSE baseline: {float(bench.pse(y, result.y_base))!r}")
        print(f"test PSE blended: {float(bench.pse(y, result.y_blend))!r}")
    return 0


def cmd_predict(conf: dict) -> int:
    """Rerun the stored pipeline on new rows.

    A global mixing value is reused as fixed; adaptive mixing is re-selected
    because per-point values belong to the original test rows.
    """
    _need(conf, "model", "train", "test")
    stored = json.loads(Path(conf["model"]).read_text(encoding="utf-8"))["pipeline"]
    cfg = dict(stored["config"])
    cfg["m_grid"] = tuple(cfg["m_grid"])
    cfg["threads"] = conf["threads"]
    if not cfg["adaptive"]:
        cfg["mixing"] = stored["mixing"]["value"]
    try:
        config = PipelineConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{conf['model']}: invalid stored config: {exc}") from None
    train = load_csv(conf["train"], conf["response"])
    has_y = _has_response(conf["test"], conf["response"])
    if has_y:
        test = load_csv(conf["test"], conf["response"])
    else:
        test = _load_features(conf["test"], train.feature_names)
    if test.feature_names != train.feature_names:
        raise DataError("test columns differ from train columns")
    train, (test,) = impute_train_means(train, [test])
    result = run_pipeline(train, test.features, config)
    out = _outdir(conf)
    export_result(result, out, list(test.row_ids), list(train.row_ids), test.response if has_y else None)
    print(f"mixing: {float(result.mixing.value)!r} ({result.mixing.mode})")
    return 0


def _load_features(path, names) -> Dataset:
    """Feature-only CSV (no response): a dummy zero response is attached."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in names if c not in header]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    idx = [header.index(c) for c in names]
    ids = [r[header.index("row_id")] for r in rows[1:]] if "row_id" in header else None

    def num(v):
        try:
            return float(v)
        except ValueError:
            return np.nan

    X = np.array([[num(r[j]) for j in idx] for r in rows[1:]], dtype=float).reshape(len(rows) - 1, len(idx))
    return Dataset.from_arrays(X, np.zeros(X.shape[0]), names, ids)


def _write_truth(path, truth, p):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["split", "row_id", "latent", *(f"beta{j + 1}" for j in range(p))]) + "\n")
        for split, B, L in (("train", truth.coef_train, truth.latent_train),
                            ("test", truth.coef_test, truth.latent_test)):
            for i in range(B.shape[0]):
                fh.write(",".join([split, str(i), repr(float(L[i])), *(repr(float(v)) for v in B[i])]) + "\n")


def cmd_simulate(conf: dict) -> int:
    out = _outdir(conf)
    kind, seed = conf["kind"], conf["seed"]
    try:
        if kind == "setting":
            train, test, truth = gen_setting(SimSetting(conf["setting"], conf["n"], conf["p"], conf["snr"], seed))
        elif kind == "homogeneous":
            train, test, truth = gen_homogeneous(conf["n"], conf["p"] or 30, seed, conf["snr"])
        elif kind == "drift":
            sc = DriftScenario(p=conf["p"] or 50, sigma=conf["sigma"], n_train=conf["n"],
                               n_test=max(1, (2 * conf["n"]) // 3))
            d = gen_drift_full(sc, seed)
            for name, ds in (("time1", d.d1), ("time2", d.d2), ("time3", d.d3), ("time1_test", d.d1_test)):
                write_csv(ds, out / f"{name}.csv")
            (out / "truth.csv").write_text("feature,beta\n" + "".join(
                f"x{j + 1},{float(b)!r}\n" for j, b in enumerate(d.beta)), encoding="utf-8")
            print(f"wrote time1/time2/time3/time1_test/truth CSVs to {out}")
            return 0
        else:
            raise UsageError(f"kind must be setting, homogeneous or drift, got {kind!r}")
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise
        raise UsageError(str(exc)) from None
    write_csv(train, out / "train.csv")
    write_csv(test, out / "test.csv")
    _write_truth(out / "truth.csv", truth, train.p)
    print(f"wrote train.csv ({train.n}x{train.p}), test.csv, truth.csv to {out}")
    return 0


def cmd_benchmark(conf: dict) -> int:
    out = _outdir(conf)
    if conf["source"] == "drift":
        sc = DriftScenario(sigma=conf["sigma"])
        rep = bench.run_drift_experiment(sc, conf["replications"], conf["seed"], conf["drift_temperature"],
                                         conf["threads"])
        rep.to_csv(out / "drift_report.csv")
        text = rep.to_text()
        (out / "drift_report.txt").write_text(text, encoding="utf-8")
        print(text, end="")
        return 0
    pipe = {k: conf[k] for k in _PIPELINE_TYPES}
    pipe = {k: v for k, v in pipe.items() if v != _PIPELINE_DEFAULTS[k]}
    if "m_grid" in pipe:
        pipe["m_grid"] = list(pipe["m_grid"])
    try:
        cfg = bench.ExperimentConfig(source=conf["source"], setting=conf["setting"], n=conf["n"], p=conf["p"],
                                     snr=conf["snr"], models=conf["models"], replications=conf["replications"],
                                     seed=conf["seed"], csv_path=conf["csv_path"], response=conf["response"],
                                     train_fraction=conf["train_fraction"], pipeline=pipe,
                                     threads=conf["threads"])
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    try:
        rep = bench.run_experiment(cfg)
    except bench.ExperimentError as exc:
        if isinstance(exc.__cause__, (DataError, NumericError)):
            raise exc.__cause__ from exc
        raise
    rep.to_csv(out / "report.csv")
    text = rep.to_text()
    (out / "report.txt").write_text(text, encoding="utf-8")
    with open(out / "replications.csv", "w", encoding="utf-8") as fh:
        fh.write(",".join(["replication", "seed", *(f"pse_{m}" for m in rep.models)]) + "\n")
        for r, s in enumerate(rep.seeds):
            fh.write(",".join([str(r), str(s), *(repr(float(v)) for v in rep.pse[r])]) + "\n")
    print(text, end="")
    return 0


def _read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    return [h.strip() for h in rows[0]], rows[1:]


def cmd_interpret(conf: dict) -> int:
    _need(conf, "coefficients")
    head, rows = _read_table(conf["coefficients"])
    if head[:2] != ["test_row_id", "intercept"]:
        raise DataError(f"{conf['coefficients']}: expected columns test_row_id,intercept,...")
    ids = [r[0] for r in rows]
    try:
        B = np.array([[float(v) for v in r[1:]] for r in rows], dtype=float)
    except ValueError:
        raise DataError(f"{conf['coefficients']}: non-numeric coefficient") from None
    n = B.shape[0]
    K = conf["k"]
    if not 1 <= K <= n:
        raise UsageError(f"K must lie in [1, {n}], got {K}")
    if n < 2:
        raise DataError("need at least two coefficient rows to cluster")
    yb = yf = np.zeros(n)
    y = None
    if conf.get("predictions"):
        ph, prow = _read_table(conf["predictions"])
        pid = {r[ph.index("row_id")]: r for r in prow}
        if set(pid) != set(ids):
            raise DataError("predictions and coefficients cover different rows")
        col = lambda c: np.array([float(pid[i][ph.index(c)]) for i in ids])
        yb, yf = col("y_base"), col("y_blend")
        y = col("y") if "y" in ph else None
    dend = interpret.protoclust(B)
    assign = interpret.cut_clusters(dend, K)
    summ = interpret.summarize_clusters(assign, B, y, yb, yf, ids)
    out = _outdir(conf)
    columns = head[1:]
    interpret.write_heatmap_csv(out / "heatmap.csv", B, assign, dend, columns, ids)
    interpret.write_dendrogram_json(out / "dendrogram.json", dend, ids)
    interpret.write_summary_csv(out / "summary.csv", summ, columns)
    for s in summ:
        print(f"cluster {s.cluster}: size {s.size}, prototype {s.prototype_row_id}, "
              f"PSE base {s.pse_base:.4g}, blended {s.pse_blend:.4g}")
    if dend.inversions:
        print(f"note: {len(dend.inversions)} merge height inversion(s) recorded")
    return 0


def _load_ensemble(path) -> TreeEnsemble:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if "pipeline" in d:
        d = d.get("baseline") or {}
        if "trees" not in d:
            raise DataError(f"{path}: the fitted baseline is not a tree ensemble")
    try:
        return TreeEnsemble.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: not a tree ensemble: {exc}") from None


def cmd_drift(conf: dict) -> int:
    _need(conf, "model", "recent", "predict")
    out = _outdir(conf)
    if Path(conf["model"]).is_file():
        model = _load_ensemble(conf["model"])
    elif conf.get("train"):
        model = bench.drift_model(load_csv(conf["train"], conf["response"]))
        Path(conf["model"]).write_text(model.to_json(), encoding="utf-8")
        print(f"fitted drift model on {conf['train']} -> {conf['model']}")
    else:
        raise DataError(f"no such model file: {conf['model']} (give --train to fit one)")
    recent = load_csv(conf["recent"], conf["response"])
    has_y = _has_response(conf["predict"], conf["response"])
    target = load_csv(conf["predict"], conf["response"]) if has_y else _load_features(conf["predict"],
                                                                                      recent.feature_names)
    if target.feature_names != recent.feature_names or recent.p != model.n_features:
        raise DataError("recent/predict columns do not match each other or the model")
    pred, corr = drift_correct(model, recent.features, recent.response, target.features,
                               conf["temperature"], return_correction=True)
    with open(out / "predictions.csv", "w", encoding="utf-8") as fh:
        fh.write("row_id,prediction,correction" + (",y" if has_y else "") + "\n")
        for i in range(target.n):
            cells = [target.row_ids[i], repr(float(pred[i])), repr(float(corr[i]))]
            if has_y:
                cells.append(repr(float(target.response[i])))
            fh.write(",".join(cells) + "\n")
    if has_y:
        print(f"PSE uncorrected: {float(bench.pse(target.response, model.predict(target.features)))!r}")
        print(f"PSE corrected: {float(bench.pse(target.response, pred))!r}")
    return 0


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "simulate": cmd_simulate,
            "benchmark": cmd_benchmark, "interpret": cmd_interpret, "drift": cmd_drift}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        conf = resolve(ns.command, ns)
        if conf["threads"] < 1:
            raise UsageError("threads must be >= 1")
        return COMMANDS[ns.command](conf)
    except UsageError as exc:
        print(f"attnsl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"attnsl: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"attnsl: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"attnsl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
