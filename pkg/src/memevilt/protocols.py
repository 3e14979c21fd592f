"""Evaluation protocols: repeated train/val/test splits and k-fold with a holdout."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

from .data.batching import FeatureStore
from .data.manifest import Corpus
from .evaluation import FoldPlan, MetricsReport, aggregate_reports, split_train_val_test
from .model import ViltConfig
from .rng import RngStream
from .training import TrainConfig, TrainHistory, TrainResult, evaluate, train_model

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    name: str
    seed: int
    history: TrainHistory
    test_report: MetricsReport
    split_sizes: dict = field(default_factory=dict)
    training: TrainResult | None = None


@dataclass
class ProtocolResult:
    protocol: str
    runs: list
    aggregate: MetricsReport
    aggregation: str = "median"
    plan: FoldPlan | None = None

    @property
    def reports(self) -> list:
        return [r.test_report for r in self.runs]


def fit_and_score(train_cfg: TrainConfig, model_cfg: ViltConfig, train: Corpus, val: Corpus,
                  test: Corpus, seed: int, name: str) -> RunResult:
    cfg = replace(train_cfg, seed=seed)
    result = train_model(cfg, model_cfg, train, val, RngStream(seed))
    store = FeatureStore(test, result.vocab, result.model_config)
    report = evaluate(result.params, result.model_config, store, test.records, cfg.eval_batch, cfg.threshold)
    log.info("%s: test loss=%.4f f1_weighted=%.4f", name, report.loss, report.f1_weighted)
    sizes = {"train": len(train), "val": len(val), "test": len(test)}
    return RunResult(name, seed, result.history, report, sizes, result)


def run_split_protocol(train_cfg: TrainConfig, model_cfg: ViltConfig, corpus: Corpus, runs: int = 5,
                       base_seed: int = 0, ratios=(0.8, 0.1, 0.1), stratified: bool = True,
                       aggregation: str = "median") -> ProtocolResult:
    """``runs`` independent runs; run i uses seed base_seed + i for its split and its training."""
    results = []
    for i in range(runs):
        seed = base_seed + i
        train, val, test = split_train_val_test(corpus, ratios, seed, stratified)
        results.append(fit_and_score(train_cfg, model_cfg, train, val, test, seed, f"run{i + 1}"))
    agg = aggregate_reports([r.test_report for r in results], aggregation)
    return ProtocolResult("split", results, agg, aggregation)


def run_kfold(train_cfg: TrainConfig, model_cfg: ViltConfig, corpus: Corpus, plan: FoldPlan,
              aggregation: str = "median") -> ProtocolResult:
    """Train one model per fold (validating on that fold) and score each on the shared holdout."""
    holdout = corpus.subset(plan.holdout_ids)
    results = []
    for i in range(plan.k):
        train_ids, val_ids = plan.split(i)
        seed = plan.seed + i
        results.append(fit_and_score(train_cfg, model_cfg, corpus.subset(train_ids), corpus.subset(val_ids),
                                     holdout, seed, f"fold{i + 1}"))
    agg = aggregate_reports([r.test_report for r in results], aggregation)
    return ProtocolResult("kfold", results, agg, aggregation, plan)


def augmentation_comparison(train_cfg: TrainConfig, model_cfg: ViltConfig, corpus: Corpus, runs: int = 5,
                            base_seed: int = 0, ratios=(0.8, 0.1, 0.1), mode: str = "online") -> dict:
    """The split protocol with augmentation off and on, sharing every seed."""
    out = {}
    for technique, aug in (("non-augmentation", "off"), ("augmentation", mode)):
        out[technique] = run_split_protocol(replace(train_cfg, augmentation=aug), model_cfg, corpus, runs,
                                            base_seed, ratios)
    return out
