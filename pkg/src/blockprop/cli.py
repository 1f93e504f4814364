"""Command-line pipeline: each subcommand reads its inputs from, and writes
its outputs to, the run directory (``out``).

Layout::

    synth/    replay.ndjson ground_truth.json mbfc.tsv quality.tsv
    ingest/   events.ndjson summary.json daily.csv
    features/ matrix.csv
    label/    targets.csv ecdf.csv labels/<key>.csv index.json
    train/    cv.csv cv_runs.csv models/<key>.json index.json
    explain/  shap/<key>.csv importance.csv group_importance.csv beeswarm.csv bump.csv index.json
    ablate/   groups.csv best_worst.csv index.json
    regress/  metrics.csv bins.csv predictions.csv models/ index.json
    report/   table/figure data files and index.json

Every file gets a ``<name>.meta.json`` sidecar with the config hash, seed
and manifest version. No wall-clock values are written, so reruns with the
same configuration reproduce every byte.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import spearmanr

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .events import ACTION_CODE, IngestionError, TimeWindow, read_replay, summarize
from .explain import (
    ABLATION_MODES,
    ablate_best_worst,
    ablate_groups,
    aggregate_importance,
    beeswarm_export,
    bump_table,
    tree_shap,
)
from .features.domains import DomainLookup, DomainLookupError
from .features.engine import FeatureMatrix, UserFilter, build_matrix
from .features.manifest import GROUPS, FeatureManifest, ManifestError, default_manifest
from .features.toxicity import LexiconScorer, MissingToxicityError
from .io import atomic_write_bytes, meta_path, read_csv, read_json, sha256_file, write_csv, write_json
from .labeling import (
    BalanceError,
    DegenerateThresholdError,
    LabeledDataset,
    TargetSpec,
    Targets,
    balanced_rows,
    compute_targets,
    ecdf,
    regression_dataset,
    threshold_labels,
)
from .learn.metrics import MetricError, pearson
from .learn.trees import TrainingError, TreeEnsemble, fit_boosted, fit_boosted_regressor
from .learn.validation import CVResult, cross_validate, evaluate_regression, train_test_split
from .synth import ScenarioError, domain_tables, generate

logger = logging.getLogger("blockprop")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEPENDENCY = 3
EXIT_DATA = 4

# Local accuracy tolerance for exported attributions.
_SHAP_TOL = 1e-6
_CORR_BINS = 20
_CORR_BOOT = 200


class DependencyError(Exception):
    """A required upstream artifact is missing."""

    def __init__(self, artifact: Path, command: str):
        super().__init__(f"missing {artifact}; run `blockprop {command}` first")
        self.artifact = artifact
        self.command = command


class DataError(Exception):
    pass


_DATA_ERRORS = (
    DataError,
    IngestionError,
    ManifestError,
    DomainLookupError,
    MissingToxicityError,
    TrainingError,
    BalanceError,
    MetricError,
)


# ---------------------------------------------------------------------------
# shared context


class Context:
    """Run configuration plus helpers for reading and writing artifacts."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self._manifest: FeatureManifest | None = None

    @property
    def manifest(self) -> FeatureManifest:
        if self._manifest is None:
            self._manifest = FeatureManifest.load(self.cfg.manifest) if self.cfg.manifest else default_manifest()
        return self._manifest

    def path(self, *parts: str) -> Path:
        return self.out.joinpath(*parts)

    def need(self, command: str, *parts: str) -> Path:
        p = self.path(*parts)
        if not p.exists():
            raise DependencyError(p, command)
        return p

    def meta(self, **extra) -> dict:
        return {
            "config_hash": self.cfg.hash(),
            "seed": self.cfg.seed,
            "manifest_version": self.manifest.version,
            "blockprop_version": __version__,
            **extra,
        }

    def sidecar(self, path: Path, **extra) -> None:
        write_json(meta_path(path), self.meta(**extra))

    def csv(self, path: Path, header: Sequence[str], rows, **extra) -> None:
        rows = list(rows)
        write_csv(path, header, rows)
        self.sidecar(path, rows=len(rows), **extra)

    def json(self, path: Path, obj, **extra) -> None:
        write_json(path, obj)
        self.sidecar(path, **extra)

    # upstream readers -------------------------------------------------

    def uses_synth(self) -> bool:
        return self.cfg.replay is None

    def window(self) -> TimeWindow | None:
        c = self.cfg
        if c.window_start is not None:
            return TimeWindow.from_strings(c.window_start, c.window_end)
        if self.uses_synth():
            return c.scenario.window
        return None

    def lookup(self) -> DomainLookup:
        c = self.cfg
        mbfc, quality = c.mbfc, c.quality
        if self.uses_synth():
            mbfc = mbfc or str(self.path("synth", "mbfc.tsv"))
            quality = quality or str(self.path("synth", "quality.tsv"))

        def text(p):
            return Path(p).read_text(encoding="utf-8") if p and Path(p).exists() else ""

        return DomainLookup.from_tsv(text(mbfc), text(quality))

    def events(self):
        p = self.need("ingest", "ingest", "events.ndjson")
        win = read_json(meta_path(p)).get("window")
        window = TimeWindow.from_strings(win["start"], win["end"]) if win else None
        return read_replay(p, window)

    def matrix(self) -> FeatureMatrix:
        return FeatureMatrix.from_csv(self.need("features", "features", "matrix.csv"), self.manifest)

    def targets(self, matrix: FeatureMatrix) -> Targets:
        header, rows = read_csv(self.need("label", "label", "targets.csv"))
        users = tuple(r[0] for r in rows)
        if users != matrix.users:
            raise DataError("label/targets.csv is out of date with features/matrix.csv; rerun `blockprop label`")
        cols = np.array([[float(x) for x in r[1:]] for r in rows], dtype=float).reshape(len(rows), 3)
        return Targets(users, cols[:, 1].copy(), cols[:, 2].copy(), cols[:, 0].copy())

    def label_index(self) -> list[dict]:
        return read_json(self.need("label", "label", "index.json"))["datasets"]

    def dataset(self, entry: dict, matrix: FeatureMatrix, targets: Targets) -> LabeledDataset:
        data = threshold_labels(matrix, targets, TargetSpec(entry["definition"], entry["quantile"]))
        stored = self.path("label", entry["file"])
        _, rows = read_csv(stored)
        if [int(r[2]) for r in rows] != data.label.tolist():
            raise DataError(f"{stored} does not match the current targets; rerun `blockprop label`")
        return data


def dataset_key(definition: str, q: float) -> str:
    return f"{definition}_q{q!r}"


def _selected(entries: list[dict], cfg: RunConfig, quantiles: Sequence[float] = ()) -> list[dict]:
    out = [e for e in entries if e["definition"] in cfg.definitions and e["quantile"] in cfg.quantiles]
    if quantiles:
        out = [e for e in out if e["quantile"] in quantiles]
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_synth(ctx: Context) -> None:
    """Generate a planted-signal replay, its ground truth and lookup tables."""
    cfg = ctx.cfg
    scenario = cfg.scenario
    if "seed" not in cfg.synth:
        scenario = replace(scenario, seed=cfg.seed)
    replay, truth = generate(scenario)
    mbfc, quality = domain_tables(scenario.seed)
    d = ctx.path("synth")
    atomic_write_bytes(d / "replay.ndjson", replay)
    ctx.sidecar(d / "replay.ndjson", scenario=truth.config, window=scenario.window.as_dict())
    ctx.json(d / "ground_truth.json", truth.to_dict())
    for name, text in (("mbfc.tsv", mbfc), ("quality.tsv", quality)):
        atomic_write_bytes(d / name, text.encode("utf-8"))
        ctx.sidecar(d / name)
    logger.info("synth: %d users, %d bytes of replay", scenario.n_users, len(replay))


def cmd_ingest(ctx: Context) -> None:
    """Parse, window, sort and deduplicate the replay."""
    src = Path(ctx.cfg.replay) if ctx.cfg.replay else ctx.need("synth", "synth", "replay.ndjson")
    log = read_replay(src, ctx.window())
    d = ctx.path("ingest")
    st = log.stats
    stats = {"lines": st.lines, "malformed": st.malformed, "out_of_window": st.out_of_window, "duplicates": st.duplicates}
    window = log.window.as_dict() if log.window else None
    log.write(d / "events.ndjson")
    ctx.sidecar(d / "events.ndjson", window=window, stats=stats, events=len(log), source_sha256=sha256_file(src))
    s = summarize(log)
    summary = {
        "events": len(log),
        "totals": s.totals,
        "deletes": s.deletes,
        "unique_users": s.unique_users,
        "window": window,
        "stats": stats,
    }
    ctx.json(d / "summary.json", summary)
    rows = s.daily_rows()
    kinds = list(s.totals)
    ctx.csv(d / "daily.csv", ["day", *kinds], ([r["day"], *(r[k] for k in kinds)] for r in rows))
    logger.info("ingest: %d events, %d malformed lines skipped", len(log), st.malformed)


def cmd_features(ctx: Context) -> None:
    """Compute the per-user feature matrix."""
    cfg = ctx.cfg
    log = ctx.events()
    scorer = LexiconScorer() if cfg.tox_mode == "lexicon" else None
    fm = build_matrix(
        log,
        UserFilter(cfg.min_posts, cfg.majority_lang),
        ctx.lookup(),
        manifest=ctx.manifest,
        tox_mode=cfg.tox_mode,
        scorer=scorer,
        pagerank_params=cfg.pagerank_params,
    )
    if not fm.users:
        raise DataError("no user passes the activity and language filter")
    p = ctx.path("features", "matrix.csv")
    fm.to_csv(p)
    write_json(meta_path(p), {**fm.meta, **ctx.meta(rows=len(fm.users))})
    logger.info("features: %d users x %d features", len(fm.users), len(fm.manifest))


def cmd_label(ctx: Context) -> None:
    """Targets, their ECDFs and one label vector per (definition, quantile)."""
    cfg = ctx.cfg
    fm = ctx.matrix()
    targets = compute_targets(fm, ctx.events())
    d = ctx.path("label")
    ctx.csv(
        d / "targets.csv",
        ["user_id", "posts_created", "target_raw", "target_norm"],
        zip(targets.users, targets.posts.tolist(), targets.raw.tolist(), targets.norm.tolist()),
    )
    ecdf_rows = []
    for definition in ("raw", "norm"):
        xs, fr = ecdf(targets.get(definition))
        ecdf_rows += [(definition, x, f) for x, f in zip(xs.tolist(), fr.tolist())]
    ctx.csv(d / "ecdf.csv", ["definition", "value", "fraction"], ecdf_rows)
    index = []
    for definition in cfg.definitions:
        for q in cfg.quantiles:
            key = dataset_key(definition, q)
            entry = {"key": key, "definition": definition, "quantile": q}
            try:
                data = threshold_labels(fm, targets, TargetSpec(definition, q))
            except DegenerateThresholdError as exc:
                entry["degenerate"] = str(exc)
                index.append(entry)
                logger.warning("label %s: %s", key, exc)
                continue
            n_neg, n_pos = data.class_counts()
            entry.update(file=f"labels/{key}.csv", threshold=data.threshold_value, n_pos=n_pos, n_neg=n_neg)
            ctx.csv(
                d / entry["file"],
                ["user_id", "target", "label"],
                zip(data.users, data.target.tolist(), data.label.tolist()),
                spec=data.spec.as_dict(),
                threshold_value=data.threshold_value,
            )
            index.append(entry)
    ctx.json(d / "index.json", {"datasets": index})


def cmd_train(ctx: Context) -> None:
    """Repeated cross-validation plus one final model per labeled dataset."""
    cfg = ctx.cfg
    entries = _selected(ctx.label_index(), cfg)
    fm = ctx.matrix()
    targets = ctx.targets(fm)
    params = cfg.boost_params
    d = ctx.path("train")
    cv_rows, run_rows, index = [], [], []
    for e in entries:
        if "degenerate" in e:
            index.append({**e, "skipped": e["degenerate"]})
            continue
        data = ctx.dataset(e, fm, targets)
        try:
            res = cross_validate(data, params, cfg.cv_runs, cfg.cv_folds, cfg.seed, jobs=cfg.jobs)
        except TrainingError as exc:
            logger.warning("train %s skipped: %s", e["key"], exc)
            index.append({**e, "skipped": str(exc)})
            continue
        cv_rows.append((e["definition"], e["quantile"], "all", res.mean_auc, res.std_auc, res.n_samples, data.X.shape[1]))
        run_rows += [(e["definition"], e["quantile"], r, a) for r, a in enumerate(res.run_aucs)]
        rows = balanced_rows(data.label, cfg.seed)
        model = fit_boosted(data.X[rows], data.label[rows].astype(float), params, cfg.seed, data.feature_names)
        mpath = d / "models" / f"{e['key']}.json"
        model.save(mpath)
        ctx.sidecar(mpath, dataset=e["key"], training_rows=int(len(rows)), protocol=res.protocol)
        index.append({**e, "model": f"models/{e['key']}.json", "mean_auc": res.mean_auc})
        logger.info("train %s: AUC %.4f +- %.4f", e["key"], res.mean_auc, res.std_auc)
    header = ["definition", "quantile", "subset", "mean_auc", "std_auc", "n_samples", "n_features"]
    ctx.csv(d / "cv.csv", header, cv_rows, runs=cfg.cv_runs, folds=cfg.cv_folds)
    ctx.csv(d / "cv_runs.csv", ["definition", "quantile", "run", "auc"], run_rows)
    ctx.json(d / "index.json", {"models": index})


def _trained(ctx: Context) -> list[dict]:
    entries = read_json(ctx.need("train", "train", "index.json"))["models"]
    return [e for e in _selected(entries, ctx.cfg) if "model" in e]


def cmd_explain(ctx: Context) -> None:
    """TreeSHAP attributions, importance rankings, beeswarm and bump tables."""
    cfg = ctx.cfg
    entries = _trained(ctx)
    fm = ctx.matrix()
    targets = ctx.targets(fm)
    d = ctx.path("explain")
    imp_rows, group_rows, swarm_rows, bump_rows, index = [], [], [], [], []
    reports: dict[str, dict] = {}
    for e in entries:
        data = ctx.dataset(e, fm, targets)
        model = TreeEnsemble.load(ctx.path("train", e["model"]))
        rows = balanced_rows(data.label, cfg.seed)
        X = data.X[rows]
        users = [data.users[i] for i in rows.tolist()]
        attr = tree_shap(model, X, users, background=X)
        err = attr.local_accuracy_error(model.margin(X))
        if not err <= _SHAP_TOL:
            raise DataError(f"attributions for {e['key']} miss local accuracy by {err:.3g}")
        spath = d / "shap" / f"{e['key']}.csv"
        attr.to_csv(spath)
        ctx.sidecar(spath, base_value=attr.base_value, local_accuracy_error=err, **attr.meta)
        rep = aggregate_importance(attr, data.feature_groups, GROUPS)
        reports.setdefault(e["definition"], {})[e["quantile"]] = rep
        imp_rows += [(e["definition"], e["quantile"], *r) for r in rep.rank_rows()]
        group_rows += [(e["definition"], e["quantile"], g, s, int(rep.degenerate)) for g, s in rep.group_rows()]
        if e["quantile"] in cfg.beeswarm_quantiles:
            swarm_rows += [(e["definition"], e["quantile"], *r) for r in beeswarm_export(attr, X, cfg.beeswarm_top)]
        index.append({"key": e["key"], "shap": f"shap/{e['key']}.csv", "local_accuracy_error": err})
    for definition, reps in reports.items():
        bump_rows += [(definition, *r) for r in bump_table(reps, cfg.bump_top)]
    ctx.csv(d / "importance.csv", ["definition", "quantile", "rank", "feature", "group", "mean_abs_phi"], imp_rows)
    ctx.csv(d / "group_importance.csv", ["definition", "quantile", "group", "share", "degenerate"], group_rows)
    ctx.csv(
        d / "beeswarm.csv",
        ["definition", "quantile", "feature", "user_id", "phi", "value", "value_percentile"],
        swarm_rows,
        top=cfg.beeswarm_top,
    )
    ctx.csv(d / "bump.csv", ["definition", "quantile", "feature", "rank", "mean_abs_phi"], bump_rows, top=cfg.bump_top)
    ctx.json(d / "index.json", {"attributions": index})


def cmd_ablate(ctx: Context) -> None:
    """Feature-group ablations and best/worst-n curves."""
    cfg = ctx.cfg
    entries = _selected(_trained(ctx), cfg, cfg.ablation_quantiles)
    fm = ctx.matrix()
    targets = ctx.targets(fm)
    _, cv = read_csv(ctx.need("train", "train", "cv.csv"))
    _, imp = read_csv(ctx.need("explain", "explain", "importance.csv"))
    params = cfg.boost_params
    d = ctx.path("ablate")
    group_rows, bw_rows = [], []
    for e in entries:
        data = ctx.dataset(e, fm, targets)
        key = (e["definition"], repr(e["quantile"]))
        if cfg.ablation:
            base = next(r for r in cv if (r[0], r[1]) == key and r[2] == "all")
            baseline = {e["key"]: CVResult(float(base[3]), float(base[4]), (), int(base[5]), int(base[6]))}
            for mode in ABLATION_MODES:
                for r in ablate_groups(
                    {e["key"]: data}, mode, GROUPS, params, cfg.cv_runs, cfg.cv_folds, cfg.seed, cfg.jobs, baseline
                ):
                    if r["subset"] != "all":
                        group_rows.append((*_key_cols(e), mode, r["subset"], r["mean_auc"], r["std_auc"]))
        if cfg.best_worst_grid:
            ranked = sorted((int(r[2]), r[3]) for r in imp if (r[0], r[1]) == key)
            points = ablate_best_worst(
                data, [name for _, name in ranked], cfg.best_worst_grid, params, cfg.best_worst_runs, cfg.seed, cfg.jobs
            )
            bw_rows += [
                (*_key_cols(e), p.n, p.top.mean_auc, p.top.std_auc, p.bottom.mean_auc, p.bottom.std_auc) for p in points
            ]
        logger.info("ablate %s done", e["key"])
    ctx.csv(d / "groups.csv", ["definition", "quantile", "mode", "subset", "mean_auc", "std_auc"], group_rows)
    ctx.csv(
        d / "best_worst.csv",
        ["definition", "quantile", "n", "top_auc", "top_std", "bottom_auc", "bottom_std"],
        bw_rows,
        runs=cfg.best_worst_runs,
        protocol="holdout_per_run",
    )
    ctx.json(d / "index.json", {"datasets": [e["key"] for e in entries], "ablation": cfg.ablation})


def _key_cols(e: dict) -> tuple:
    return e["definition"], e["quantile"]


def _second_predictions(ctx: Context, data: LabeledDataset, test: np.ndarray):
    cfg = ctx.cfg
    if cfg.second_predictions:
        _, rows = read_csv(cfg.second_predictions)
        given = {r[0]: float(r[1]) for r in rows}
        missing = [data.users[i] for i in test.tolist() if data.users[i] not in given]
        if missing:
            raise DataError(f"second_predictions lacks {len(missing)} test users, e.g. {missing[0]}")
        return np.array([given[data.users[i]] for i in test.tolist()]), "external"
    if cfg.second_regressor == "boosted":
        train, _ = train_test_split(len(data), cfg.split_ratio, cfg.seed)
        model = fit_boosted_regressor(data.X[train], data.target[train], cfg.boost_params, cfg.seed, data.feature_names)
        return model.predict(data.X[test]), "boosted_trees"
    return None, None


def cmd_regress(ctx: Context) -> None:
    """Random-forest regression of the block count on an 80:20 split."""
    cfg = ctx.cfg
    fm = ctx.matrix()
    targets = ctx.targets(fm)
    d = ctx.path("regress")
    metric_rows, bin_rows, pred_rows = [], [], []
    for definition in cfg.definitions:
        data = regression_dataset(fm, targets, definition)
        _, test = train_test_split(len(data), cfg.split_ratio, cfg.seed)
        second, second_name = _second_predictions(ctx, data, test)
        report, model, test, pred = evaluate_regression(
            data, cfg.forest_params, cfg.split_ratio, cfg.regression_bins, cfg.seed, second
        )
        mpath = d / "models" / f"{definition}.json"
        model.save(mpath)
        ctx.sidecar(mpath, definition=definition, n_train=report.n_train)
        metric_rows.append((definition, "random_forest", report.r2, report.mae, report.median_true, report.n_train, report.n_test))
        if second is not None:
            metric_rows.append(
                (definition, second_name, report.second_r2, report.second_mae, report.median_true, report.n_train, report.n_test)
            )
        for b in report.bins:
            bin_rows.append(
                (definition, b["bin"], b["n"], b["true_min"], b["true_max"], b["mean_true"], b["mean_pred"],
                 b.get("mean_pred_second", ""))
            )
        for j, i in enumerate(test.tolist()):
            pred_rows.append((definition, data.users[i], data.target[i], pred[j], "" if second is None else second[j]))
        logger.info("regress %s: R2 %.4f MAE %.4f", definition, report.r2, report.mae)
    ctx.csv(d / "metrics.csv", ["definition", "model", "r2", "mae", "median_true", "n_train", "n_test"], metric_rows)
    ctx.csv(
        d / "bins.csv",
        ["definition", "bin", "n", "true_min", "true_max", "mean_true", "mean_pred", "mean_pred_second"],
        bin_rows,
        binning="equal_count_on_true",
    )
    ctx.csv(d / "predictions.csv", ["definition", "user_id", "true", "pred", "pred_second"], pred_rows)
    ctx.json(d / "index.json", {"definitions": list(cfg.definitions), "split_ratio": cfg.split_ratio})


# ---------------------------------------------------------------------------
# report


def _moving_average(x: np.ndarray, window: int = 7) -> np.ndarray:
    """Trailing mean over up to ``window`` days (shorter at the start)."""
    c = np.concatenate([[0.0], np.cumsum(x, dtype=float)])
    i = np.arange(1, len(x) + 1)
    lo = np.maximum(i - window, 0)
    return (c[i] - c[lo]) / (i - lo)


def _user_action_rows(log) -> list[tuple]:
    rows = []
    for kind in ("post", "reply", "repost", "like", "follow", "block"):
        counts = np.bincount(log.actor_idx[log.mask(kind, "create")], minlength=len(log.users))
        counts = counts[counts > 0]
        if counts.size == 0:
            rows.append((kind, 0, "", "", "", "", "", ""))
            continue
        q = np.quantile(counts, [0.25, 0.5, 0.75])
        rows.append((kind, int(counts.size), int(counts.min()), *q.tolist(), int(counts.max()), float(counts.mean())))
    return rows


def _binned_correlation(x: np.ndarray, y: np.ndarray, seed: int) -> list[tuple]:
    """Mean of ``y`` within equal-count bins of ``x`` with bootstrap 95% intervals."""
    order = np.argsort(x, kind="stable")
    rng = np.random.default_rng(seed)
    rows = []
    for b, members in enumerate(np.array_split(order, min(_CORR_BINS, max(len(order), 1)))):
        if len(members) == 0:
            continue
        yb = y[members]
        boot = yb[rng.integers(0, len(yb), size=(_CORR_BOOT, len(yb)))].mean(axis=1)
        lo, hi = np.quantile(boot, [0.025, 0.975])
        rows.append((b, int(len(members)), float(x[members].mean()), float(yb.mean()), float(lo), float(hi)))
    return rows


def cmd_report(ctx: Context) -> None:
    """Collect every table family into ``report/`` with a checksummed index."""
    cfg = ctx.cfg
    for command, parts in (
        ("ingest", ("ingest", "summary.json")),
        ("label", ("label", "index.json")),
        ("train", ("train", "index.json")),
        ("explain", ("explain", "index.json")),
        ("ablate", ("ablate", "index.json")),
        ("regress", ("regress", "index.json")),
    ):
        ctx.need(command, *parts)
    d = ctx.path("report")
    files: dict[str, Path] = {}

    def emit(family, name, header, rows, **extra):
        p = d / name
        ctx.csv(p, header, rows, family=family, **extra)
        files[family] = p

    def copy(family, name, src: Path, **extra):
        header, rows = read_csv(src)
        emit(family, name, header, rows, source=str(src.relative_to(ctx.out)), **extra)

    summary = read_json(ctx.path("ingest", "summary.json"))
    emit(
        "dataset_summary",
        "dataset_summary.csv",
        ["kind", "creates", "deletes"],
        [(k, summary["totals"][k], summary["deletes"][k]) for k in summary["totals"]]
        + [("unique_users", summary["unique_users"], 0)],
    )
    header, daily = read_csv(ctx.path("ingest", "daily.csv"))
    rows = []
    for j, kind in enumerate(header[1:], 1):
        counts = np.array([int(r[j]) for r in daily], dtype=float)
        ma = _moving_average(counts)
        rows += [(r[0], kind, int(c), m) for r, c, m in zip(daily, counts.tolist(), ma.tolist())]
    emit("daily_activity", "daily_activity.csv", ["day", "kind", "count", "moving_avg_7d"], rows)
    log = ctx.events()
    emit(
        "user_actions",
        "user_actions.csv",
        ["kind", "n_users", "min", "q25", "median", "q75", "max", "mean"],
        _user_action_rows(log),
    )

    copy("block_ecdf", "block_ecdf.csv", ctx.path("label", "ecdf.csv"))
    fm = ctx.matrix()
    targets = ctx.targets(fm)
    y = np.log10(1.0 + targets.raw)
    totals = np.bincount(log.actor_idx[log.action_code == ACTION_CODE["create"]], minlength=len(log.users))
    variables = {
        "total_actions": totals[[log.user_index[u] for u in fm.users]].astype(float),
        "toxicity": fm.column("tox_toxicity_mean"),
        "domain_quality": fm.column("domain_quality"),
    }
    corr_rows, corr_summary = [], []
    for name, x in variables.items():
        corr_rows += [(name, *r) for r in _binned_correlation(x, y, cfg.seed)]
        rho = spearmanr(x, y).statistic if len(x) > 2 and np.ptp(x) > 0 else float("nan")
        r = pearson(x, y) if len(x) > 1 and np.ptp(x) > 0 and np.ptp(y) > 0 else float("nan")
        corr_summary.append((name, int(len(x)), float(r), float(rho)))
    emit(
        "block_correlation",
        "block_correlation.csv",
        ["variable", "bin", "n", "x_mean", "y_mean", "y_ci_low", "y_ci_high"],
        corr_rows,
        y="log10(1 + blocks received)",
        bootstrap=_CORR_BOOT,
    )
    emit("block_correlation_summary", "block_correlation_summary.csv", ["variable", "n", "pearson", "spearman"], corr_summary)

    _, cv = read_csv(ctx.path("train", "cv.csv"))
    _, groups = read_csv(ctx.path("ablate", "groups.csv"))
    auc_rows = [(r[0], r[1], "all", "all", r[3], r[4]) for r in cv] + [tuple(r) for r in groups]
    emit("auc_sweep", "auc_sweep.csv", ["definition", "quantile", "mode", "subset", "mean_auc", "std_auc"], auc_rows)
    copy("shap_beeswarm", "shap_beeswarm.csv", ctx.path("explain", "beeswarm.csv"))
    copy("importance_bump", "importance_bump.csv", ctx.path("explain", "bump.csv"))
    copy("feature_importance", "feature_importance.csv", ctx.path("explain", "importance.csv"))
    copy("group_importance", "group_importance.csv", ctx.path("explain", "group_importance.csv"))
    copy("best_worst", "best_worst.csv", ctx.path("ablate", "best_worst.csv"))
    copy("regression_bins", "regression_bins.csv", ctx.path("regress", "bins.csv"))
    copy("regression_metrics", "regression_metrics.csv", ctx.path("regress", "metrics.csv"))

    index = {
        family: {"file": p.name, "sha256": sha256_file(p), "rows": len(read_csv(p)[1])}
        for family, p in sorted(files.items())
    }
    ctx.json(d / "index.json", {"families": index, "config_hash": cfg.hash()})


def cmd_run_all(ctx: Context) -> None:
    """Every stage in order, handing off through the run directory."""
    if ctx.uses_synth():
        cmd_synth(ctx)
    for _, fn in PIPELINE:
        fn(ctx)


PIPELINE: list[tuple[str, Callable[[Context], None]]] = [
    ("ingest", cmd_ingest),
    ("features", cmd_features),
    ("label", cmd_label),
    ("train", cmd_train),
    ("explain", cmd_explain),
    ("ablate", cmd_ablate),
    ("regress", cmd_regress),
    ("report", cmd_report),
]
COMMANDS: dict[str, Callable[[Context], None]] = {"synth": cmd_synth, **dict(PIPELINE), "run-all": cmd_run_all}


# ---------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value configuration file")
    common.add_argument("--out", help="run directory (default from config, else ./out)")
    common.add_argument("--quantiles", help="comma-separated quantile grid")
    common.add_argument("--seed", type=int)
    common.add_argument("--definition", choices=("raw", "norm"), help="restrict to one target definition")
    common.add_argument("--tox-mode", choices=("sidecar", "lexicon"))
    common.add_argument("--jobs", type=int)
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="blockprop", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"blockprop {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or "").strip().split("\n")[0])
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    updates = {}
    if args.out:
        updates["out"] = args.out
    if args.quantiles:
        try:
            updates["quantiles"] = tuple(float(x) for x in args.quantiles.split(",") if x.strip())
        except ValueError as exc:
            raise ConfigError(f"--quantiles: {exc}") from exc
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.definition:
        updates["definitions"] = (args.definition,)
    if args.tox_mode:
        updates["tox_mode"] = args.tox_mode
    if args.jobs is not None:
        updates["jobs"] = args.jobs
    cfg = replace(cfg, **updates)
    cfg.validate()
    cfg.check_paths()
    return cfg


def run(command: str, cfg: RunConfig) -> int:
    """Run one command in-process and map failures to exit codes."""
    try:
        COMMANDS[command](Context(cfg))
    except DependencyError as exc:
        logger.error("%s", exc)
        return EXIT_DEPENDENCY
    except (ConfigError, ScenarioError) as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except _DATA_ERRORS as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    return run(args.command, cfg)


if __name__ == "__main__":
    sys.exit(main())
