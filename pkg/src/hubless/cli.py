"""Command-line entry point.

Subcommands: synth, train, eval, diagnose, cv. Exit codes: 0 success,
1 validation/usage error, 2 I/O or file-format error.

Only stdlib is imported at module level: --threads (or the
HUBLESS_THREADS env var) must cap the BLAS thread pools, which works
only if the cap is exported before numpy is first imported.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

THREAD_ENV_VARS = (
    "OPENBLAS_NUM_THREADS",
    "OMP_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


class _Parser(argparse.ArgumentParser):
    # Usage problems are validation errors: exit 1, not argparse's 2.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_io_flags(p: _Parser, features_required: bool = True):
    p.add_argument("--features", required=features_required,
                   help="feature bank (FBNK binary)")
    p.add_argument("--labels", help="labels sidecar (default: <features>.labels)")
    p.add_argument("--embeddings", help="embedding table text file")
    p.add_argument("--manifest", help="seen/unseen split manifest JSON")


def _add_train_flags(p: _Parser):
    p.add_argument("--alpha", type=float, help="skewness loss weight")
    p.add_argument("--lambda", dest="lambda_", type=float,
                   help="L2 weight regularization")
    p.add_argument("--tau", type=float, help="soft-histogram temperature")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--final-relu", choices=("on", "off"),
                   help="apply ReLU after the last layer")
    p.add_argument("--hidden-dims", default=None,
                   help="comma-separated hidden layer sizes (default 512,768)")
    p.add_argument("--direction", choices=("sem2feat", "feat2sem"),
                   help="projection direction (feat2sem is experimental)")
    p.add_argument("--skew-mode", choices=("instance", "class"),
                   help="skewness loss summation convention")


def build_parser() -> _Parser:
    parser = _Parser(prog="hubless", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None,
                        help="cap worker/BLAS threads (env HUBLESS_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parser_class=_Parser,
                       help="generate a synthetic cluster dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes-seen", type=int, default=30)
    p.add_argument("--classes-unseen", type=int, default=10)
    p.add_argument("--feature-dim", type=int, default=64)
    p.add_argument("--semantic-dim", type=int, default=128)
    p.add_argument("--instances-per-class", type=int, default=50)
    p.add_argument("--cluster-spread", type=float, default=0.5)
    p.add_argument("--semantic-noise", type=float, default=0.05)

    p = sub.add_parser("train", parser_class=_Parser,
                       help="train the projection network")
    _add_io_flags(p)
    p.add_argument("--out", required=True, help="run directory to create")
    p.add_argument("--seed", type=int)
    p.add_argument("--normalize", choices=("none", "features", "embeddings", "both"),
                   default="none", help="l2-normalize inputs before training")
    _add_train_flags(p)

    p = sub.add_parser("eval", parser_class=_Parser,
                       help="evaluate a trained run (ZSL, or GZSL with --gzsl)")
    _add_io_flags(p)
    p.add_argument("--out", required=True, help="run directory to evaluate")
    p.add_argument("--gzsl", action="store_true",
                   help="score seen and unseen jointly with the beta rule")
    p.add_argument("--beta", type=float,
                   help="seen-score calibration constant (default: run config)")
    p.add_argument("--seen-features", help="seen bank for GZSL")
    p.add_argument("--seen-labels", help="labels sidecar for --seen-features")

    p = sub.add_parser("diagnose", parser_class=_Parser,
                       help="hubness report for queries vs prototypes")
    _add_io_flags(p)
    p.add_argument("--out", help="run directory supplying projected prototypes")
    p.add_argument("--j", type=int, default=1, help="neighborhood size")
    p.add_argument("--metric", choices=("cosine", "l2"), default="cosine")
    p.add_argument("--split", choices=("seen", "unseen", "all"), default="unseen",
                   help="which manifest classes provide prototypes")
    p.add_argument("--direction", choices=("sem2feat", "feat2sem"),
                   help="must match the run; default: the run's direction")
    p.add_argument("--proto-features",
                   help="use this bank's rows as prototypes instead of a run")
    p.add_argument("--proto-labels", help="labels sidecar for --proto-features")

    p = sub.add_parser("cv", parser_class=_Parser,
                       help="Monte Carlo cross-validation of alpha/lambda/beta")
    _add_io_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--holdout-fraction", type=float, default=0.2)
    p.add_argument("--proxy-unseen", type=int, default=None,
                   help="classes held out as proxy-unseen (default ceil(p/5))")
    p.add_argument("--grid-alpha", default="0,0.35,0.7,1.0",
                   help="comma-separated alpha candidates")
    p.add_argument("--grid-lambda", default="0.0001",
                   help="comma-separated lambda candidates")
    p.add_argument("--grid-beta", default="0,0.3,0.6,0.9",
                   help="comma-separated beta candidates")
    p.add_argument("--select-by", choices=("mean-winner", "argmax-mean-score"),
                   default="mean-winner")
    p.add_argument("--normalize", choices=("none", "features", "embeddings", "both"),
                   default="none")
    _add_train_flags(p)
    return parser


def _setup_threads(threads: int | None) -> None:
    if threads is None:
        env = os.environ.get("HUBLESS_THREADS")
        threads = int(env) if env else None
    if threads is not None:
        if threads < 1:
            raise SystemExit("thread cap must be >= 1")
        for var in THREAD_ENV_VARS:
            os.environ.setdefault(var, str(threads))


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip() != "")
    except ValueError as exc:
        from .errors import ConfigError

        raise ConfigError(f"bad numeric list {text!r}: {exc}") from exc


def _build_config(args, base=None):
    from .losses import TrainConfig

    cfg = base or TrainConfig()
    updates = {}
    for attr in ("alpha", "lambda_", "tau", "batch_size", "lr", "epochs", "seed"):
        value = getattr(args, attr, None)
        if value is not None:
            updates[attr] = value
    if getattr(args, "final_relu", None) is not None:
        updates["final_relu"] = args.final_relu == "on"
    if getattr(args, "hidden_dims", None):
        updates["hidden_dims"] = tuple(int(x) for x in args.hidden_dims.split(","))
    if getattr(args, "direction", None) is not None:
        updates["direction"] = args.direction
    if getattr(args, "skew_mode", None) is not None:
        updates["skew_mode"] = args.skew_mode
    normalize = getattr(args, "normalize", "none")
    updates["normalize_features"] = normalize in ("features", "both")
    updates["normalize_embeddings"] = normalize in ("embeddings", "both")
    from dataclasses import replace

    return replace(cfg, **updates)


def cmd_synth(args) -> int:
    from .dataio import (
        SYNTH_FILES,
        SynthSpec,
        generate_synthetic,
        save_embedding_table,
        save_feature_bank,
        save_split_manifest,
    )

    spec = SynthSpec(
        p_seen=args.classes_seen,
        q_unseen=args.classes_unseen,
        m=args.feature_dim,
        instances_per_class=args.instances_per_class,
        cluster_spread=args.cluster_spread,
        semantic_dim=args.semantic_dim,
        semantic_noise=args.semantic_noise,
        seed=args.seed,
    )
    seen, unseen, table, manifest = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_feature_bank(seen, out / SYNTH_FILES["seen"])
    save_feature_bank(unseen, out / SYNTH_FILES["unseen"])
    save_embedding_table(table, out / SYNTH_FILES["embeddings"])
    save_split_manifest(manifest, out / SYNTH_FILES["manifest"])
    print(json.dumps({
        "out": str(out),
        "files": sorted(SYNTH_FILES.values()),
        "seen_instances": seen.n,
        "unseen_instances": unseen.n,
    }))
    return 0


def _load_inputs(args, cfg):
    from .dataio import load_embedding_table, load_feature_bank, load_split_manifest
    from .errors import ConfigError

    if not args.embeddings or not args.manifest:
        raise ConfigError("--embeddings and --manifest are required here")
    bank = load_feature_bank(args.features, args.labels)
    table = load_embedding_table(args.embeddings, normalize=cfg.normalize_embeddings)
    manifest = load_split_manifest(args.manifest)
    return bank, table, manifest


def cmd_train(args) -> int:
    from .trainer import LOG_COLUMNS, save_run, train

    cfg = _build_config(args)
    bank, table, manifest = _load_inputs(args, cfg)
    run = train(bank, table, manifest, cfg)
    save_run(run, args.out)
    if run.log:
        last = run.log[-1]
        print(" ".join(f"{k}={v}" for k, v in zip(LOG_COLUMNS, last.row())))
    else:
        print("epoch=- (0 epochs requested)")
    return 0


def _load_run_and_table(args):
    from .dataio import load_embedding_table, load_split_manifest
    from .errors import ConfigError
    from .trainer import load_run

    if not args.out:
        raise ConfigError("--out must point at a trained run directory")
    run = load_run(args.out)
    if not args.embeddings or not args.manifest:
        raise ConfigError("--embeddings and --manifest are required here")
    table = load_embedding_table(
        args.embeddings, normalize=run.config.normalize_embeddings
    )
    manifest = load_split_manifest(args.manifest)
    return run, table, manifest


def cmd_eval(args) -> int:
    from .dataio import FeatureBank, load_feature_bank
    from .errors import ConfigError
    from .inference import evaluate_gzsl, evaluate_zsl
    from .trainer import project_prototypes, project_queries

    run, table, manifest = _load_run_and_table(args)
    bank = load_feature_bank(args.features, args.labels)
    eval_bank = FeatureBank(
        project_queries(run, bank.features), bank.labels, bank.class_names
    )
    echo = {"run": str(args.out), "train_config": run.config.to_dict()}
    if args.gzsl:
        if not args.seen_features:
            raise ConfigError("--gzsl needs --seen-features")
        beta = run.config.beta if args.beta is None else args.beta
        seen_bank = load_feature_bank(args.seen_features, args.seen_labels)
        seen_eval = FeatureBank(
            project_queries(run, seen_bank.features),
            seen_bank.labels, seen_bank.class_names,
        )
        union = list(seen_bank.class_names) + list(bank.class_names)
        protos = project_prototypes(run, table, union)
        report = evaluate_gzsl(seen_eval, eval_bank, protos, beta=beta)
    else:
        protos = project_prototypes(run, table, list(bank.class_names))
        report = evaluate_zsl(eval_bank, protos)
    print(report.to_json(config_echo=echo))
    return 0


def cmd_diagnose(args) -> int:
    from .dataio import load_feature_bank
    from .errors import ConfigError
    from .hubness import hubness_report

    bank = load_feature_bank(args.features, args.labels)
    if args.proto_features:
        prototypes = load_feature_bank(args.proto_features, args.proto_labels).features
        queries = bank.features
        extra = {"prototype_source": str(args.proto_features)}
    else:
        from .trainer import project_prototypes, project_queries

        run, table, manifest = _load_run_and_table(args)
        if args.direction and args.direction != run.config.direction:
            raise ConfigError(
                f"run was trained with direction {run.config.direction!r}, "
                f"not {args.direction!r}"
            )
        names = {
            "seen": manifest.seen,
            "unseen": manifest.unseen,
            "all": manifest.seen + manifest.unseen,
        }[args.split]
        prototypes = project_prototypes(run, table, names)
        queries = project_queries(run, bank.features)
        extra = {
            "prototype_source": str(args.out),
            "split": args.split,
            "direction": run.config.direction,
            "classes": names,
        }
    report = hubness_report(queries, prototypes, j=args.j, metric=args.metric)
    obj = report.to_json_dict()
    obj.update(extra)
    print(json.dumps(obj, indent=2))
    return 0


def cmd_cv(args) -> int:
    from .calibration import CvSpec, mc_cross_validate

    cfg = _build_config(args)
    bank, table, manifest = _load_inputs(args, cfg)
    spec = CvSpec(
        repeats=args.repeats,
        holdout_fraction=args.holdout_fraction,
        proxy_unseen_count=args.proxy_unseen,
        alpha_grid=_float_list(args.grid_alpha),
        lambda_grid=_float_list(args.grid_lambda),
        beta_grid=_float_list(args.grid_beta),
        seed=args.seed if args.seed is not None else 0,
        base=cfg,
        select_by=args.select_by,
    )
    report = mc_cross_validate(bank, table, manifest, spec)
    print(report.to_json())
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "diagnose": cmd_diagnose,
    "cv": cmd_cv,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_threads(args.threads)
    from .errors import StorageError, ValidationError

    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"hubless {args.command}: {exc}", file=sys.stderr)
        return 1
    except StorageError as exc:
        print(f"hubless {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
