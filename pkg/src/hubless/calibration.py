"""Monte Carlo cross-validation for alpha, lambda and beta.

Each repeat holds out a random subset of seen classes as proxy-unseen
and a fraction of the remaining classes' instances as a seen test
split. One model is trained per (alpha, lambda) candidate; the pair
with the best proxy-unseen top-1 wins the repeat, and beta is then
swept at inference time on the winning model, scored by harmonic mean
over (seen test split, proxy-unseen). Final values average the
per-repeat winners; an argmax-of-mean-scores alternative is available
behind a flag.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from .dataio import EmbeddingTable, FeatureBank, SplitManifest
from .errors import ConfigError
from .inference import evaluate_gzsl, evaluate_zsl
from .losses import TrainConfig
from .trainer import TrainRun, project_prototypes, project_queries, train


@dataclass
class CvSpec:
    """Knobs of the Monte Carlo cross-validation loop."""

    repeats: int = 10
    holdout_fraction: float = 0.2
    proxy_unseen_count: int | None = None  # default: ceil(p/5)
    alpha_grid: tuple[float, ...] = (0.0, 0.35, 0.7, 1.0)
    lambda_grid: tuple[float, ...] = (0.0001,)
    beta_grid: tuple[float, ...] = (0.0, 0.3, 0.6, 0.9)
    seed: int = 0
    base: TrainConfig = field(default_factory=TrainConfig)
    select_by: str = "mean-winner"  # or "argmax-mean-score"

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if not (0.0 < self.holdout_fraction < 1.0):
            raise ConfigError("holdout_fraction must be in (0, 1)")
        if not (self.alpha_grid and self.lambda_grid and self.beta_grid):
            raise ConfigError("hyperparameter grids must be nonempty")
        if self.select_by not in ("mean-winner", "argmax-mean-score"):
            raise ConfigError(f"unknown select_by {self.select_by!r}")


@dataclass
class CvReport:
    selected: TrainConfig
    per_repeat: list[dict]
    mean_scores: dict

    def to_json_dict(self) -> dict:
        return {
            "selected": {
                "alpha": self.selected.alpha,
                "lambda": self.selected.lambda_,
                "beta": self.selected.beta,
            },
            "per_repeat": self.per_repeat,
            "mean_scores": self.mean_scores,
            "config_echo": self.selected.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)


def _split_bank(bank: FeatureBank, keep_classes: list[str]) -> FeatureBank:
    """Sub-bank containing all instances of the given classes."""
    index = {c: i for i, c in enumerate(keep_classes)}
    rows = [i for i, l in enumerate(bank.labels) if bank.class_names[l] in index]
    labels = np.array([index[bank.class_names[bank.labels[i]]] for i in rows])
    return FeatureBank(bank.features[rows], labels, list(keep_classes))


def _holdout_split(bank: FeatureBank, fraction: float, rng: np.random.Generator):
    """Per-class stratified split into (train bank, heldout bank)."""
    train_rows, test_rows = [], []
    for c in range(len(bank.class_names)):
        rows = np.flatnonzero(bank.labels == c)
        rows = rows[rng.permutation(len(rows))]
        n_test = max(1, int(round(fraction * len(rows))))
        if n_test >= len(rows):
            raise ConfigError(f"class {bank.class_names[c]} too small to split")
        test_rows.extend(rows[:n_test])
        train_rows.extend(rows[n_test:])
    train_rows.sort()
    test_rows.sort()
    mk = lambda rows: FeatureBank(
        bank.features[rows], bank.labels[rows], list(bank.class_names)
    )
    return mk(train_rows), mk(test_rows)


def mc_cross_validate(
    seen_bank: FeatureBank,
    table: EmbeddingTable,
    manifest: SplitManifest,
    spec: CvSpec,
) -> CvReport:
    """Run the repeated random-split selection loop. Deterministic per seed."""
    p = len(manifest.seen)
    proxy_count = spec.proxy_unseen_count
    if proxy_count is None:
        proxy_count = int(np.ceil(p / 5))
    if proxy_count < 1 or p - proxy_count < 2:
        raise ConfigError(
            f"cannot hold out {proxy_count} proxy-unseen of {p} seen classes"
        )
    repeat_streams = np.random.SeedSequence(spec.seed).spawn(spec.repeats)
    per_repeat: list[dict] = []
    pair_grid = list(product(spec.alpha_grid, spec.lambda_grid))
    pair_scores = np.zeros((spec.repeats, len(pair_grid)))
    beta_scores = np.zeros((spec.repeats, len(spec.beta_grid)))

    for r in range(spec.repeats):
        ss = repeat_streams[r]
        rng = np.random.default_rng(ss)
        order = rng.permutation(p)
        proxy_classes = [manifest.seen[i] for i in sorted(order[:proxy_count])]
        train_classes = [manifest.seen[i] for i in sorted(order[proxy_count:])]
        proxy_bank = _split_bank(seen_bank, proxy_classes)
        inner_bank = _split_bank(seen_bank, train_classes)
        inner_train, seen_test = _holdout_split(inner_bank, spec.holdout_fraction, rng)
        inner_manifest = SplitManifest(train_classes, proxy_classes)
        inner_seed = int(ss.generate_state(1, np.uint64)[0] >> 1)

        best_pair, best_run, best_score = None, None, -np.inf
        for gi, (alpha, lam) in enumerate(pair_grid):
            cfg = replace(spec.base, alpha=alpha, lambda_=lam, seed=inner_seed)
            run = train(inner_train, table, inner_manifest, cfg)
            proxy_protos = project_prototypes(run, table, proxy_classes)
            proxy_eval_bank = FeatureBank(
                project_queries(run, proxy_bank.features),
                proxy_bank.labels,
                proxy_bank.class_names,
            )
            score = evaluate_zsl(proxy_eval_bank, proxy_protos).top1_unseen
            pair_scores[r, gi] = score
            if score > best_score:
                best_pair, best_run, best_score = (alpha, lam), run, score

        union = train_classes + proxy_classes
        union_protos = project_prototypes(best_run, table, union)
        seen_eval = FeatureBank(
            project_queries(best_run, seen_test.features),
            seen_test.labels, seen_test.class_names,
        )
        proxy_eval = FeatureBank(
            project_queries(best_run, proxy_bank.features),
            proxy_bank.labels, proxy_bank.class_names,
        )
        best_beta, best_hm = None, -np.inf
        for bi, beta in enumerate(spec.beta_grid):
            hm = evaluate_gzsl(
                seen_eval, proxy_eval, union_protos, beta=beta
            ).harmonic_mean
            beta_scores[r, bi] = hm
            if hm > best_hm:
                best_beta, best_hm = beta, hm

        per_repeat.append(
            {
                "repeat": r,
                "proxy_unseen": proxy_classes,
                "alpha": best_pair[0],
                "lambda": best_pair[1],
                "zsl_top1": best_score,
                "beta": best_beta,
                "harmonic_mean": best_hm,
            }
        )

    if spec.select_by == "mean-winner":
        alpha = float(np.mean([row["alpha"] for row in per_repeat]))
        lam = float(np.mean([row["lambda"] for row in per_repeat]))
        beta = float(np.mean([row["beta"] for row in per_repeat]))
    else:
        mean_pair = pair_scores.mean(axis=0)
        alpha, lam = pair_grid[int(np.argmax(mean_pair))]
        beta = spec.beta_grid[int(np.argmax(beta_scores.mean(axis=0)))]

    selected = replace(spec.base, alpha=alpha, lambda_=lam, beta=beta)
    mean_scores = {
        "zsl_top1_by_alpha_lambda": {
            f"{a}/{l}": float(s) for (a, l), s in zip(pair_grid, pair_scores.mean(axis=0))
        },
        "harmonic_mean_by_beta": {
            str(b): float(s) for b, s in zip(spec.beta_grid, beta_scores.mean(axis=0))
        },
    }
    return CvReport(selected, per_repeat, mean_scores)
