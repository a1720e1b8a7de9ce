"""Batch command-line surface: train, eval, detect, verify-gcn, synth.

Configuration comes from an optional plain-text file of ``key = value``
lines plus command-line flags, with flags winning. All randomness in a run
derives from the single root seed via the documented fan-out in
:mod:`neighboragg.seeding`; trial i of a multi-seed run uses the path
prefix (TRIAL, i). Outputs are byte-stable across identical runs unless
--timestamp is given.

Exit codes: 0 success, 2 configuration, 3 data, 4 numeric, 5 verification
failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import seeding
from .aggregator import (TrainConfig, forward_batch, save_params, train)
from .baselines import (build_onehop_gcn, fit_temperature,
                        temperature_scaled_probs, trust_score_batch)
from .classifiers import (load_external_probs, predict_proba_batch, softmax,
                          train_logreg, train_mlp)
from .conformal import ConformalConfig, detect_mislabels, reliability_scores
from .dataset import (SplitSpec, apply_standardizer, fit_standardizer,
                      inject_label_noise, load_csv, make_gaussian_blobs,
                      make_two_moons, ring_centers, save_csv, split)
from .errors import (EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK,
                     EXIT_VERIFY, ConfigError, DataError, NumericError)
from .metrics import aggregate_reports, evaluate, write_scores_csv
from .neighbors import KernelConfig, build_index, neighborhood_matrix

ALL_SCORERS = ("neighboragg", "neigh_only", "prob_only", "confidence",
               "temperature", "trustscore", "gcn1hop")
HIDDEN_SCORERS = ("oracle",)  # testing aid: 1 when the prediction is correct

GCN_EQUIVALENCE_TOL = 1e-9


@dataclass
class RunConfig:
    data: str = ""
    label_col: str = "label"
    split: tuple = (0.4, 0.1, 0.5)
    clf: str = "logreg"
    probs: str = ""
    k: int = 5
    alpha: float = 0.1
    noise_rate: float = 0.0
    seed: int = 0
    seeds: int = 1
    out: str = "out"
    threads: int = -1
    standardize: bool = True
    variant: str = "full"
    scorers: tuple = ALL_SCORERS
    clf_iters: int = 5000
    clf_lr: float = 0.5
    mlp_hidden: tuple = (200, 70)
    mlp_epochs: int = 100
    mlp_lr: float = 0.1
    mlp_batch: int = 64
    agg_epochs: int = 300
    agg_lr: float = 0.05
    agg_batch: int = 64
    agg_init: str = "gcn_warm_start"
    kind: str = "two_moons"
    n: int = 2000
    noise: float = 0.1
    classes: int = 3
    timestamp: bool = False


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_tuple(caster):
    return lambda text: tuple(caster(part) for part in text.split(",") if part.strip())


_FIELD_PARSERS = {
    "split": _parse_tuple(float),
    "scorers": _parse_tuple(str.strip),
    "mlp_hidden": _parse_tuple(int),
    "standardize": _parse_bool,
    "timestamp": _parse_bool,
}


def load_config_file(path) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment."""
    known = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        parser = _FIELD_PARSERS.get(key)
        if parser is None:
            default = getattr(RunConfig(), key)
            parser = type(default)
        try:
            values[key] = parser(value)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """File values first, then any flag the user actually passed."""
    base = RunConfig()
    if getattr(args, "config", None):
        base = replace(base, **load_config_file(args.config))
    overrides = {}
    for f in fields(RunConfig):
        flag_value = getattr(args, f.name, None)
        if flag_value is not None:
            overrides[f.name] = flag_value
    if getattr(args, "no_standardize", False):
        overrides["standardize"] = False
    if getattr(args, "with_timestamp", False):
        overrides["timestamp"] = True
    return replace(base, **overrides)


# ---------------------------------------------------------------------------
# Pipeline assembly


@dataclass
class PipelineBundle:
    full: object
    train: object
    val: object
    test: object
    clf: object
    index: object
    kernel: KernelConfig


def _prepare_pipeline(cfg: RunConfig, trial: int) -> PipelineBundle:
    if not cfg.data:
        raise ConfigError("no dataset path given (--data or config key 'data')")
    if not Path(cfg.data).exists():
        raise ConfigError(f"dataset path {cfg.data!r} does not exist")
    ds = load_csv(cfg.data, cfg.label_col)
    if len(cfg.split) != 3:
        raise ConfigError(f"--split needs three fractions, got {cfg.split}")
    spec = SplitSpec(*cfg.split,
                     seed=seeding.child_seed(cfg.seed, seeding.TRIAL, trial,
                                             seeding.SPLIT))
    train_ds, val_ds, test_ds = split(ds, spec)
    if cfg.standardize:
        std = fit_standardizer(train_ds)
        train_ds = apply_standardizer(std, train_ds)
        val_ds = apply_standardizer(std, val_ds)
        test_ds = apply_standardizer(std, test_ds)
        ds = apply_standardizer(std, ds)

    clf_seed = seeding.child_seed(cfg.seed, seeding.TRIAL, trial, seeding.CLASSIFIER)
    if cfg.clf == "logreg":
        clf = train_logreg(train_ds, max_iter=cfg.clf_iters, lr=cfg.clf_lr,
                           seed=clf_seed)
    elif cfg.clf == "mlp":
        clf = train_mlp(train_ds, hidden=cfg.mlp_hidden, epochs=cfg.mlp_epochs,
                        lr=cfg.mlp_lr, batch_size=cfg.mlp_batch, seed=clf_seed)
    elif cfg.clf == "external":
        if not cfg.probs:
            raise ConfigError("external classifier needs --probs <file>")
        if not Path(cfg.probs).exists():
            raise ConfigError(f"probability file {cfg.probs!r} does not exist")
        clf = load_external_probs(cfg.probs, ds.num_classes)
    else:
        raise ConfigError(f"unknown classifier kind {cfg.clf!r}")

    kernel = KernelConfig()
    index = build_index(train_ds, kernel, cfg.k)
    return PipelineBundle(full=ds, train=train_ds, val=val_ds, test=test_ds,
                          clf=clf, index=index, kernel=kernel)


def _train_aggregator(bundle: PipelineBundle, cfg: RunConfig, trial: int,
                      variant: str):
    tc = TrainConfig(
        epochs=cfg.agg_epochs, lr=cfg.agg_lr, batch_size=cfg.agg_batch,
        seed=seeding.child_seed(cfg.seed, seeding.TRIAL, trial, seeding.AGGREGATOR),
        init=cfg.agg_init, variant=variant,
    )
    return train(bundle.index, bundle.clf, bundle.val, tc, workers=cfg.threads)


def _ensure_out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _maybe_timestamp(cfg: RunConfig) -> list:
    if not cfg.timestamp:
        return []
    import datetime

    return [f"# generated {datetime.datetime.now(datetime.timezone.utc).isoformat()}"]


# ---------------------------------------------------------------------------
# Subcommands


def cmd_train(cfg: RunConfig) -> int:
    bundle = _prepare_pipeline(cfg, trial=0)
    params, trace = _train_aggregator(bundle, cfg, trial=0, variant=cfg.variant)
    out = _ensure_out(cfg)
    model_path = out / "model.txt"
    save_params(params, model_path)
    trace_path = out / "loss_trace.csv"
    with open(trace_path, "w", encoding="utf-8", newline="") as fh:
        for line in _maybe_timestamp(cfg):
            fh.write(line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss"])
        for epoch, value in enumerate(trace):
            writer.writerow([epoch, "%.17g" % value])
    print(f"model written to {model_path}")
    print(f"loss trace written to {trace_path}")
    return EXIT_OK


def _make_scorer(name: str, bundle: PipelineBundle, cfg: RunConfig, trial: int):
    if name in ("neighboragg", "neigh_only", "prob_only"):
        variant = {"neighboragg": "full"}.get(name, name)
        params, _ = _train_aggregator(bundle, cfg, trial, variant)

        def agg_scorer(x, probs, yhat, ids):
            h = neighborhood_matrix(bundle.index, x, workers=cfg.threads)
            t = forward_batch(params, h, probs, variant)
            return t[np.arange(len(yhat)), yhat]

        return agg_scorer
    if name == "confidence":
        return lambda x, probs, yhat, ids: probs.max(axis=1)
    if name == "temperature":
        val_probs = predict_proba_batch(bundle.clf, bundle.val.features,
                                        bundle.val.sample_ids)
        model = fit_temperature(val_probs, bundle.val.labels)
        return lambda x, probs, yhat, ids: temperature_scaled_probs(model, probs).max(axis=1)
    if name == "trustscore":
        return lambda x, probs, yhat, ids: trust_score_batch(
            bundle.index, x, yhat, workers=cfg.threads)
    if name == "gcn1hop":
        def gcn_scorer(x, probs, yhat, ids):
            gcn = build_onehop_gcn(bundle.train, x, probs, bundle.kernel, cfg.k)
            t = softmax(gcn.eval_outputs())
            return t[np.arange(len(yhat)), yhat]

        return gcn_scorer
    if name == "oracle":
        truth = {int(i): int(y) for i, y in
                 zip(bundle.full.sample_ids, bundle.full.labels)}

        def oracle_scorer(x, probs, yhat, ids):
            return np.array([1.0 if truth[int(i)] == int(h) else 0.0
                             for i, h in zip(ids, yhat)])

        return oracle_scorer
    raise ConfigError(f"unknown scorer {name!r}; known: "
                      f"{', '.join(ALL_SCORERS)}")


def cmd_eval(cfg: RunConfig) -> int:
    if not cfg.scorers:
        raise ConfigError("scorer list is empty")
    for name in cfg.scorers:
        if name not in ALL_SCORERS + HIDDEN_SCORERS:
            raise ConfigError(f"unknown scorer {name!r}; known: "
                              f"{', '.join(ALL_SCORERS)}")
    if cfg.seeds < 1:
        raise ConfigError(f"need --seeds >= 1, got {cfg.seeds}")
    out = _ensure_out(cfg)
    per_scorer = {name: [] for name in cfg.scorers}
    rows = []
    for trial in range(cfg.seeds):
        bundle = _prepare_pipeline(cfg, trial)
        probs = predict_proba_batch(bundle.clf, bundle.test.features,
                                    bundle.test.sample_ids)
        yhat = probs.argmax(axis=1)
        for name in cfg.scorers:
            scorer = _make_scorer(name, bundle, cfg, trial)
            scores = np.asarray(scorer(bundle.test.features, probs, yhat,
                                       bundle.test.sample_ids), dtype=np.float64)
            report = evaluate(lambda *_: scores, bundle.test, bundle.clf)
            per_scorer[name].append(report)
            rows.append([name, str(trial), "%.12g" % report.auc,
                         "%.12g" % report.apc, "%.12g" % report.apm,
                         "%.12g" % report.accuracy, "", "", "", ""])
            write_scores_csv(out / f"scores_{name}_seed{trial}.csv",
                             bundle.test.sample_ids, yhat, bundle.test.labels,
                             scores, yhat == bundle.test.labels)
    for name in cfg.scorers:
        means, stds = aggregate_reports(per_scorer[name])
        rows.append([name, "mean",
                     "%.12g" % means["auc"], "%.12g" % means["apc"],
                     "%.12g" % means["apm"], "%.12g" % means["accuracy"],
                     "%.12g" % stds["auc"], "%.12g" % stds["apc"],
                     "%.12g" % stds["apm"], "%.12g" % stds["accuracy"]])
    metrics_path = out / "metrics.csv"
    with open(metrics_path, "w", encoding="utf-8", newline="") as fh:
        for line in _maybe_timestamp(cfg):
            fh.write(line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scorer", "seed", "auc", "apc", "apm", "accuracy",
                         "auc_std", "apc_std", "apm_std", "accuracy_std"])
        writer.writerows(rows)
    print(f"metrics written to {metrics_path}")
    return EXIT_OK


def cmd_detect(cfg: RunConfig) -> int:
    bundle = _prepare_pipeline(cfg, trial=0)
    params, _ = _train_aggregator(bundle, cfg, trial=0, variant=cfg.variant)
    scores = reliability_scores(params, bundle.index, bundle.clf, bundle.full,
                                variant=cfg.variant, workers=cfg.threads)
    conf = ConformalConfig(alpha=cfg.alpha, p=cfg.noise_rate)
    result = detect_mislabels(scores, conf)
    flagged_ids = {s.sample_id for s in result.flagged}
    out = _ensure_out(cfg)
    path = out / "detection.csv"
    mode = "standard-conformal (p=0)" if cfg.noise_rate == 0 else "noise-adjusted"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in _maybe_timestamp(cfg):
            fh.write(line + "\n")
        fh.write(f"# tau_alpha={result.threshold:.17g} B_alpha={result.rank} "
                 f"alpha={cfg.alpha:.12g} p={cfg.noise_rate:.12g} mode={mode}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "label", "predicted", "reliability", "flagged"])
        for s in scores:
            writer.writerow([s.sample_id, s.label, s.predicted,
                             "%.17g" % s.r,
                             "true" if s.sample_id in flagged_ids else "false"])
    print(f"detection written to {path} "
          f"({len(result.flagged)} of {len(scores)} flagged, mode: {mode})")
    return EXIT_OK


def cmd_verify_gcn(cfg: RunConfig, num_seeds: int, perturb: float) -> int:
    from .baselines import verify_gcn_equivalence

    if num_seeds < 1:
        raise ConfigError(f"need at least one verification seed, got {num_seeds}")
    worst_seed, worst = -1, -1.0
    for s in range(num_seeds):
        diff = verify_gcn_equivalence(s, perturb=perturb)
        if diff > worst:
            worst_seed, worst = s, diff
    print(f"verify-gcn: {num_seeds} instances, max |aggregator - gcn| = {worst:.3e} "
          f"(tolerance {GCN_EQUIVALENCE_TOL:.0e})")
    if worst >= GCN_EQUIVALENCE_TOL:
        print(f"verification FAILED at seed {worst_seed} with difference {worst:.3e}")
        return EXIT_VERIFY
    return EXIT_OK


def cmd_synth(cfg: RunConfig) -> int:
    synth_seed = seeding.child_seed(cfg.seed, seeding.SYNTH)
    if cfg.kind == "two_moons":
        ds = make_two_moons(cfg.n, cfg.noise, synth_seed)
    elif cfg.kind == "blobs":
        centers = ring_centers(cfg.classes)
        ds = make_gaussian_blobs(cfg.n, centers, cfg.noise, synth_seed)
    else:
        raise ConfigError(f"unknown synthetic kind {cfg.kind!r}")
    clean_labels = ds.labels.copy()
    mask = None
    if cfg.noise_rate > 0:
        ds, mask = inject_label_noise(ds, cfg.noise_rate,
                                      seed=seeding.child_seed(cfg.seed, seeding.NOISE))
    out = _ensure_out(cfg)
    data_path = out / "data.csv"
    save_csv(ds, data_path)
    print(f"dataset written to {data_path}")
    if mask is not None:
        mask_path = out / "noise_mask.csv"
        with open(mask_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["id", "true_label", "given_label", "flipped"])
            for i in range(ds.n):
                writer.writerow([int(ds.sample_ids[i]), int(clean_labels[i]),
                                 int(ds.labels[i]),
                                 "true" if mask[i] else "false"])
        print(f"noise mask written to {mask_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--data", help="dataset CSV path")
    parser.add_argument("--label-col", dest="label_col")
    parser.add_argument("--split", type=_parse_tuple(float),
                        help="train,val,test fractions, e.g. 0.4,0.1,0.5")
    parser.add_argument("--clf", choices=("logreg", "mlp", "external"))
    parser.add_argument("--probs", help="external probability CSV")
    parser.add_argument("--k", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out")
    parser.add_argument("--threads", type=int)
    parser.add_argument("--no-standardize", action="store_true")
    parser.add_argument("--variant", choices=("full", "neigh_only", "prob_only"))
    parser.add_argument("--timestamp", dest="with_timestamp", action="store_true",
                        help="prepend a timestamp header to text outputs")
    parser.add_argument("--clf-iters", dest="clf_iters", type=int)
    parser.add_argument("--clf-lr", dest="clf_lr", type=float)
    parser.add_argument("--mlp-epochs", dest="mlp_epochs", type=int)
    parser.add_argument("--agg-epochs", dest="agg_epochs", type=int)
    parser.add_argument("--agg-lr", dest="agg_lr", type=float)
    parser.add_argument("--agg-batch", dest="agg_batch", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neighboragg",
        description="Trustworthiness scoring and conformal mislabel detection "
                    "for tabular classifiers.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="fit the scoring model end to end")
    _add_common(p_train)

    p_eval = sub.add_parser("eval", help="compare scorers on the test split")
    _add_common(p_eval)
    p_eval.add_argument("--scorers", type=_parse_tuple(str.strip),
                        help=f"comma list from: {', '.join(ALL_SCORERS)}")
    p_eval.add_argument("--seeds", type=int, help="number of trials")

    p_detect = sub.add_parser("detect", help="flag suspect labels")
    _add_common(p_detect)
    p_detect.add_argument("--alpha", type=float)
    p_detect.add_argument("--noise-rate", dest="noise_rate", type=float,
                          help="mislabeling-rate estimate p")

    p_verify = sub.add_parser("verify-gcn", help="check the one-hop GCN equivalence")
    p_verify.add_argument("--seeds", type=int, default=100)
    p_verify.add_argument("--perturb", type=float, default=0.0,
                          help="inject a weight perturbation (negative control)")

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--config", help="key = value config file")
    p_synth.add_argument("--kind", choices=("two_moons", "blobs"))
    p_synth.add_argument("--n", type=int)
    p_synth.add_argument("--noise", type=float, help="geometric noise scale")
    p_synth.add_argument("--noise-rate", dest="noise_rate", type=float,
                         help="fraction of labels to flip")
    p_synth.add_argument("--classes", type=int)
    p_synth.add_argument("--seed", type=int)
    p_synth.add_argument("--out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        if args.command == "verify-gcn":
            return cmd_verify_gcn(RunConfig(), args.seeds, args.perturb)
        cfg = build_run_config(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "detect":
            return cmd_detect(cfg)
        if args.command == "synth":
            return cmd_synth(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
