"""Command-line front end: ``coenet fit | predict | simulate | evaluate``.

Exit codes: 0 success, 2 invalid input, 3 numerical or convergence failure.

Default tolerances can be overridden through the environment:

``COENET_VB_TOL``, ``COENET_VB_MAX_ITER``
    variational inner loop (defaults 1e-6 and 500)
``COENET_EM_TOL``, ``COENET_EM_MAX_OUTER``
    empirical-Bayes outer loop (defaults 1e-4 and 100)
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .metrics import auc, brier_skill, cohens_kappa, mse_coefficients
from .model import (
    Coefficients,
    Dataset,
    NumericalError,
    Partition,
    PartitionSet,
    ScaleInfo,
    ValidationError,
)

logger = logging.getLogger("coenet")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

_ENV_TOLERANCES = {
    "vb_tol": ("COENET_VB_TOL", float, 1e-6),
    "vb_max_iter": ("COENET_VB_MAX_ITER", int, 500),
    "tol_outer": ("COENET_EM_TOL", float, 1e-4),
    "max_outer": ("COENET_EM_MAX_OUTER", int, 100),
}


class ConvergenceFailure(Exception):
    """A fit finished without meeting its convergence criterion."""


def em_options(environ=None) -> dict:
    """Outer/inner loop options with environment overrides applied."""
    environ = os.environ if environ is None else environ
    out = {}
    for key, (var, kind, default) in _ENV_TOLERANCES.items():
        raw = environ.get(var)
        if raw is None or raw == "":
            out[key] = default
            continue
        try:
            value = kind(raw)
        except ValueError:
            raise ValidationError(f"{var}={raw!r} is not a valid {kind.__name__}") from None
        if not value > 0:
            raise ValidationError(f"{var} must be positive")
        out[key] = value
    return out


# ---------------------------------------------------------------- tables


@dataclass
class Table:
    """A parsed CSV: header, optional row ids, numeric body."""

    columns: list[str]
    values: np.ndarray
    ids: list[str] | None = None

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.columns.index(name)]
        except ValueError:
            raise ValidationError(f"missing column: {name}") from None

    def take(self, names) -> np.ndarray:
        missing = [c for c in names if c not in self.columns]
        if missing:
            raise ValidationError(f"missing feature column(s): {', '.join(missing[:10])}")
        index = {c: k for k, c in enumerate(self.columns)}
        return self.values[:, [index[c] for c in names]]


def read_table(path, *, id_column: str = "id") -> Table:
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    if len(set(header)) != len(header):
        raise ValidationError(f"{path}: duplicate column names")
    ids = None
    if header and header[0] == id_column:
        ids = [r[0].strip() for r in body]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"{path}: duplicate row ids")
        header = header[1:]
        body = [r[1:] for r in body]
    width = len(header)
    values = np.empty((len(body), width))
    for i, r in enumerate(body):
        if len(r) != width:
            raise ValidationError(f"{path}: row {i + 2} has {len(r)} fields, expected {width}")
        try:
            values[i] = [float(v) for v in r]
        except ValueError:
            raise ValidationError(f"{path}: non-numeric value in row {i + 2}") from None
    return Table(header, values, ids)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_table(path, header, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


def write_matrix(path, ids, names, matrix) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["id", *names]) + "\n")
        for rid, row in zip(ids, matrix):
            fh.write(rid + "," + ",".join(map(_fmt, row)) + "\n")


def align(reference_ids, table: Table, what: str) -> np.ndarray:
    """Row order of ``table`` matching ``reference_ids``."""
    n = table.values.shape[0]
    if table.ids is None or reference_ids is None:
        if reference_ids is not None and n != len(reference_ids):
            raise ValidationError(f"{what}: {n} rows, expected {len(reference_ids)}")
        return np.arange(n)
    index = {rid: k for k, rid in enumerate(table.ids)}
    missing = [rid for rid in reference_ids if rid not in index]
    extra = set(table.ids) - set(reference_ids)
    if missing or extra:
        sample = (missing or sorted(extra))[:5]
        raise ValidationError(f"{what}: row ids do not align (e.g. {', '.join(sample)})")
    return np.array([index[rid] for rid in reference_ids], dtype=np.intp)


def read_partitions(path, feature_names) -> PartitionSet:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg})") from None
    entries = doc.get("partitions") if isinstance(doc, dict) else None
    if not isinstance(entries, list) or not entries:
        raise ValidationError(f'{path}: expected {{"partitions": [...]}} with at least one entry')
    known = set(feature_names)
    parts = []
    for k, entry in enumerate(entries):
        name = str(entry.get("name", f"partition{k + 1}"))
        groups = entry.get("groups")
        if not isinstance(groups, dict):
            raise ValidationError(f"partition {name!r}: 'groups' must map feature names to labels")
        unknown = [f for f in groups if f not in known]
        if unknown:
            raise ValidationError(f"partition {name!r}: unknown feature {unknown[0]!r}")
        absent = [f for f in feature_names if f not in groups]
        if absent:
            raise ValidationError(f"partition {name!r}: feature {absent[0]!r} has no group")
        order = entry.get("monotone")
        parts.append(
            Partition.from_labels(name, [str(groups[f]) for f in feature_names], monotone_order=order)
        )
    return PartitionSet(tuple(parts))


def load_dataset(features_path, response_path, unpenalized=()) -> tuple[Dataset, list[str] | None]:
    feats = read_table(features_path)
    resp = read_table(response_path)
    order = align(feats.ids, resp, str(response_path))
    y = resp.column("y")[order]
    m = resp.column("m")[order] if "m" in resp.columns else None
    unpenalized = list(unpenalized)
    for c in unpenalized:
        if c not in feats.columns:
            raise ValidationError(f"unpenalized column {c!r} not in {features_path}")
    names = [c for c in feats.columns if c not in unpenalized]
    if not names:
        raise ValidationError("no penalized features")
    covariates = feats.take(unpenalized) if unpenalized else None
    ds = Dataset.from_raw(
        feats.take(names),
        y,
        m,
        covariates,
        feature_names=names,
        covariate_names=unpenalized or None,
    )
    return ds, feats.ids


# ---------------------------------------------------------------- model file


def _coef_block(coef: Coefficients, ds_names, unpen_names) -> dict:
    return {
        "unpenalized": dict(zip(unpen_names, map(float, coef.unpenalized_part))),
        "penalized": dict(zip(ds_names, map(float, coef.penalized_part))),
    }


@dataclass
class ModelFile:
    """Self-contained fitted model: everything needed to predict."""

    alpha: float
    lambda_global: float
    partitions: list
    feature_names: list
    unpenalized_names: list
    intercept: bool
    coefficients: dict
    scale_info: dict
    unpenalized_scale: dict | None
    selected: dict | None = None
    diagnostics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    _ORDER = (
        "schema_version",
        "alpha",
        "lambda_global",
        "partitions",
        "feature_names",
        "unpenalized_names",
        "intercept",
        "coefficients",
        "scale_info",
        "unpenalized_scale",
        "selected",
        "diagnostics",
        "config",
    )

    @classmethod
    def from_fit(cls, result, dataset: Dataset, partitions: PartitionSet, config: dict) -> "ModelFile":
        names, unames = list(dataset.feature_names), list(dataset.unpenalized_names)
        parts = [
            {
                "name": p.name,
                "labels": list(p.group_labels),
                "sizes": [int(s) for s in p.sizes],
                "monotone": bool(p.monotone),
                "multipliers": [float(v) for v in m],
            }
            for p, m in zip(partitions, result.multipliers)
        ]
        selected = None
        if result.selected is not None:
            lam, coef, info = result.selected
            selected = {
                "k": int(info["target"]),
                "achieved": int(info["achieved"]),
                "lambda": float(lam),
                "coefficients": _coef_block(coef, names, unames),
            }
        us = dataset.unpenalized_scale
        cv = result.diagnostics.get("cv")
        diagnostics = {
            "em_converged": bool(result.converged),
            "vb_converged": bool(result.vb_converged),
            "outer_iterations": int(result.outer_iterations),
            "inner_iterations": [int(v) for v in result.trace.inner_iterations],
            "final_change": float(result.trace.change[-1]) if result.trace.change else 0.0,
            "kkt": float(result.coefficients.diagnostics.get("kkt", 0.0)),
            "lambda_cv": None if cv is None else float(cv.best_lambda),
        }
        return cls(
            alpha=float(result.config.alpha),
            lambda_global=float(result.config.lambda_global),
            partitions=parts,
            feature_names=names,
            unpenalized_names=unames,
            intercept=bool(dataset.intercept),
            coefficients=_coef_block(result.coefficients, names, unames),
            scale_info={
                "mean": [float(v) for v in dataset.scale_info.mean],
                "scale": [float(v) for v in dataset.scale_info.scale],
            },
            unpenalized_scale=None
            if us is None
            else {"mean": [float(v) for v in us.mean], "scale": [float(v) for v in us.scale]},
            selected=selected,
            diagnostics=diagnostics,
            config=config,
        )

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self._ORDER}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"

    def write(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelFile":
        if not isinstance(doc, dict):
            raise ValidationError("model file must hold a JSON object")
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValidationError(f"unsupported model schema version {version!r} (expected {SCHEMA_VERSION})")
        missing = [k for k in cls._ORDER if k not in doc]
        if missing:
            raise ValidationError(f"model file lacks field(s): {', '.join(missing)}")
        return cls(**{k: doc[k] for k in cls._ORDER})

    @classmethod
    def read(cls, path) -> "ModelFile":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc.msg})") from None

    def to_coefficients(self, selected: bool = False) -> Coefficients:
        block = self.coefficients
        if selected:
            if self.selected is None:
                raise ValidationError("model file has no selected fit")
            block = self.selected["coefficients"]
        us = self.unpenalized_scale
        return Coefficients(
            unpenalized_part=[block["unpenalized"][k] for k in self.unpenalized_names],
            penalized_part=[block["penalized"][k] for k in self.feature_names],
            scale_info=ScaleInfo(np.array(self.scale_info["mean"]), np.array(self.scale_info["scale"])),
            unpenalized_scale=None if us is None else ScaleInfo(np.array(us["mean"]), np.array(us["scale"])),
            intercept=bool(self.intercept),
        )

    @property
    def covariate_names(self) -> list:
        return self.unpenalized_names[1:] if self.intercept else list(self.unpenalized_names)


# ---------------------------------------------------------------- commands


def _folds(value: str):
    if value.lower() in ("loo", "loocv"):
        return "loo"
    try:
        k = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError("folds must be an integer or 'loo'") from None
    return k


def cmd_fit(args) -> int:
    from .pipeline import fit_grouped

    unpen = [c for c in (args.unpenalized or "").split(",") if c]
    ds, _ = load_dataset(args.features, args.response, unpen)
    parts = read_partitions(args.partitions, ds.feature_names) if args.partitions else PartitionSet.single(ds.p)
    folds = ds.n if args.folds == "loo" else args.folds
    opts = em_options()
    config = {
        "coenet_version": __version__,
        "seed": args.seed,
        "folds": folds,
        "select": args.select,
        "lambda": args.lambda_global,
        "cv_loss": args.cv_loss,
        **opts,
    }
    out = Path(args.out)
    diag_path = out.with_name(out.name + ".diagnostics.json")
    try:
        result = fit_grouped(
            ds,
            parts,
            args.alpha,
            folds=folds,
            lambda_global=args.lambda_global,
            n_lambda=args.n_lambda,
            seed=args.seed,
            select=args.select,
            cv_loss=args.cv_loss,
            n_jobs=args.jobs,
            em_kw=opts,
        )
    except NumericalError as exc:
        diag_path.parent.mkdir(parents=True, exist_ok=True)
        diag_path.write_text(json.dumps({"error": str(exc), "config": config}, indent=2) + "\n")
        raise NumericalError(f"{exc} (diagnostics: {diag_path})") from exc
    model = ModelFile.from_fit(result, ds, parts, config)
    model.write(out)
    if not result.converged:
        diag_path.write_text(json.dumps(model.diagnostics, indent=2) + "\n")
        raise ConvergenceFailure(
            f"EM stopped after {result.outer_iterations} outer iterations without reaching "
            f"tolerance {opts['tol_outer']:g} (model written to {out}; diagnostics: {diag_path})"
        )
    return EXIT_OK


def cmd_predict(args) -> int:
    from .vb import predict_probability

    model = ModelFile.read(args.model)
    feats = read_table(args.features)
    x = feats.take(model.feature_names)
    cov = feats.take(model.covariate_names) if model.covariate_names else None
    coef = model.to_coefficients(selected=args.selected)
    prob = predict_probability(coef, x, cov)
    ids = feats.ids or [str(i + 1) for i in range(x.shape[0])]
    write_table(args.out, ["id", "probability"], zip(ids, map(float, prob)))
    return EXIT_OK


def _scenario(args):
    from .simulate import SimScenario

    base = {"seed": args.seed}
    if args.scenario_json:
        try:
            with open(args.scenario_json, encoding="utf-8") as fh:
                extra = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot load scenario JSON: {exc}") from None
        if not isinstance(extra, dict):
            raise ValidationError("scenario JSON must hold an object")
        base.update(extra)
    try:
        if args.scenario == "four-group":
            return SimScenario.four_group_default(**base)
        return SimScenario.random_groups_default(**base)
    except TypeError as exc:
        raise ValidationError(f"invalid scenario field: {exc}") from None


def _write_replicate(root: Path, data) -> None:
    names = list(data.train.feature_names)
    n, nt = data.train.n, data.test.n
    train_ids = [f"train{i + 1}" for i in range(n)]
    test_ids = [f"test{i + 1}" for i in range(nt)]
    write_matrix(root / "train_features.csv", train_ids, names, data.raw_train)
    write_matrix(root / "test_features.csv", test_ids, names, data.raw_test)
    write_table(root / "train_response.csv", ["id", "y", "m"], zip(train_ids, data.train.responses.astype(int), [1] * n))
    write_table(root / "test_response.csv", ["id", "y", "m"], zip(test_ids, data.test.responses.astype(int), [1] * nt))
    labels = data.partitions[0].group_labels
    write_table(
        root / "truth.csv",
        ["feature", "beta", "group"],
        zip(names, map(float, data.beta), [labels[g] for g in data.groups]),
    )
    doc = {
        "partitions": [
            {"name": "truth", "groups": {f: labels[g] for f, g in zip(names, data.groups)}, "monotone": None}
        ]
    }
    (root / "partitions.json").write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


_CURVE_METRICS = ("kappa", "mse", "auc", "bss")


def curve_rows(per_repeat_rows) -> list[dict]:
    """Tidy metric rows with LOESS-smoothed companions (per method and alpha,
    across repeats, as a function of model size)."""
    from .pipeline import loess_smooth

    rows = [dict(r) for r in per_repeat_rows]
    keys = sorted({(r["method"], r["alpha"]) for r in rows})
    for key in keys:
        sel = [r for r in rows if (r["method"], r["alpha"]) == key]
        size = np.array([r["model_size"] for r in sel], dtype=float)
        for metric in _CURVE_METRICS:
            smooth = loess_smooth(size, np.array([r[metric] for r in sel], dtype=float))
            for r, s in zip(sel, smooth):
                r[f"{metric}_loess"] = float(s)
    return rows


def cmd_simulate(args) -> int:
    from .pipeline import evaluate_methods
    from .simulate import random_group_experiment, simulate_scenario

    if args.reps < 1:
        raise ValidationError("--reps must be at least 1")
    if args.scenario == "paper-sec5":
        args.scenario = "four-group"
    scenario = _scenario(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    opts = em_options()
    (out / "scenario.json").write_text(
        json.dumps({"scenario": args.scenario, **scenario.to_dict(), "reps": args.reps}, indent=2) + "\n"
    )

    if args.scenario == "random-groups":
        sizes = [int(s) for s in (args.groups or "127,94,1893").split(",") if s]
        if sum(sizes) != scenario.p or min(sizes, default=0) < 1:
            raise ValidationError(f"--groups {sizes} must be positive and sum to p={scenario.p}")
        data = simulate_scenario(scenario, 0)
        _write_replicate(out / "data", data)
        res = random_group_experiment(
            data.train, sizes, args.reps, seed=args.seed, alpha=args.alpha, folds=args.folds, em_kw=opts
        )
        rows = [
            (r, f"g{g + 1}", sizes[g], float(res.estimates[r, g]))
            for r in range(args.reps)
            for g in range(len(sizes))
        ]
        write_table(out / "multipliers.csv", ["repeat", "group", "size", "multiplier"], rows)
        summary = {
            "lambda_global": res.lambda_global,
            "median_multipliers": [float(v) for v in res.medians],
            "errors": list(res.errors),
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        return EXIT_OK

    def one(r):
        data = simulate_scenario(scenario, r)
        _write_replicate(out / f"rep{r:03d}", data)
        if not args.run_methods:
            return None
        return evaluate_methods(data, args.alpha, folds=args.folds, seed=(args.seed, r), em_kw=opts)

    if args.jobs > 1:
        with ThreadPoolExecutor(args.jobs) as pool:
            results = list(pool.map(one, range(args.reps)))
    else:
        results = [one(r) for r in range(args.reps)]
    if args.run_methods:
        raw, mult, summaries = [], [], []
        for r, (rows, summary) in enumerate(results):
            raw.extend({"repeat": r, **row} for row in rows)
            labels = [f"m={m:g}" for m in scenario.true_multipliers]
            mult.extend((r, lab, float(v)) for lab, v in zip(labels, summary["grouped"]["multipliers"][0]))
            summaries.append({"repeat": r, **_jsonable(summary)})
        header = ["repeat", "method", "alpha", "model_size", *_CURVE_METRICS, "lambda"]
        header += [f"{m}_loess" for m in _CURVE_METRICS]
        tidy = curve_rows(raw)
        write_table(out / "curves.csv", header, ([row[h] for h in header] for row in tidy))
        write_table(out / "multipliers.csv", ["repeat", "group", "multiplier"], mult)
        (out / "summary.json").write_text(json.dumps(summaries, indent=2) + "\n")
    return EXIT_OK


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)) and not isinstance(obj, bool):
        return int(obj)
    return obj


def evaluate_files(predictions, outcomes, truth=None, model=None, *, selected=False) -> dict:
    """Metrics from a predictions CSV ``(id, probability)`` and a response CSV
    ``(id, y[, m])``; kappa and MSE when a truth CSV ``(feature, beta)`` and a
    model file are given."""
    pred = read_table(predictions)
    obs = read_table(outcomes)
    if pred.ids is None or obs.ids is None:
        raise ValidationError("predictions and outcomes need an 'id' column")
    order = align(pred.ids, obs, str(outcomes))
    y = obs.column("y")[order]
    if "m" in obs.columns and np.any(obs.column("m") != 1):
        raise ValidationError("evaluation needs binary outcomes (m = 1)")
    prob = pred.column("probability")
    out = {"n": int(prob.size), "auc": auc(prob, y), "bss": brier_skill(prob, y)}
    if truth is not None:
        if model is None:
            raise ValidationError("--truth requires --model for the estimated coefficients")
        mf = ModelFile.read(model)
        beta_true = _truth_vector(truth, mf.feature_names)
        coef = mf.to_coefficients(selected=selected)
        out["kappa"] = float(cohens_kappa(coef.active, beta_true != 0))
        out["mse"] = mse_coefficients(coef.raw_penalized(), beta_true)
    return out


def _truth_vector(path, names) -> np.ndarray:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
    if not rows or "feature" not in rows[0] or "beta" not in rows[0]:
        raise ValidationError(f"{path}: expected columns feature, beta")
    table = {r["feature"]: r["beta"] for r in rows}
    if set(table) != set(names):
        diff = sorted(set(table) ^ set(names))[:5]
        raise ValidationError(f"{path}: features do not align with the model (e.g. {', '.join(diff)})")
    try:
        return np.array([float(table[f]) for f in names])
    except ValueError:
        raise ValidationError(f"{path}: non-numeric beta") from None


def cmd_evaluate(args) -> int:
    metrics = evaluate_files(args.predictions, args.outcomes, args.truth, args.model, selected=args.selected)
    text = json.dumps(metrics, indent=2) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coenet", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a group-regularized elastic net")
    p.add_argument("--features", required=True, help="feature CSV (first column 'id' optional)")
    p.add_argument("--response", required=True, help="response CSV with columns id, y[, m]")
    p.add_argument("--partitions", help="partition JSON; omitted means a single group")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--folds", type=_folds, default=10, help="CV folds or 'loo'")
    p.add_argument("--lambda", dest="lambda_global", type=float, help="skip CV and use this lambda")
    p.add_argument("--n-lambda", type=int, default=100)
    p.add_argument("--cv-loss", choices=("deviance", "auc"), default="deviance")
    p.add_argument("--select", type=int, help="also fit the model with this many features")
    p.add_argument("--unpenalized", help="comma-separated feature columns left unpenalized")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predicted probabilities from a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--selected", action="store_true", help="use the --select fit")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="synthetic replicates and method comparisons")
    # "paper-sec5" is kept as an alias of "four-group" for compatibility
    p.add_argument("--scenario", choices=("four-group", "paper-sec5", "random-groups"), default="four-group")
    p.add_argument("--scenario-json", help="JSON object overriding scenario fields")
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--groups", help="random-partition group sizes, e.g. 127,94,1893")
    p.add_argument("--run-methods", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="AUC, Brier skill, and optionally kappa/MSE")
    p.add_argument("--predictions", required=True, help="CSV with columns id, probability")
    p.add_argument("--outcomes", required=True, help="response CSV with columns id, y[, m]")
    p.add_argument("--truth", help="CSV with columns feature, beta")
    p.add_argument("--model", help="model file supplying the estimated coefficients")
    p.add_argument("--selected", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"coenet: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, ConvergenceFailure) as exc:
        print(f"coenet: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
