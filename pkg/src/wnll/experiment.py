"""End-to-end offline comparison of unweighted and value-weighted training.

Protocol: campaign CPAs come from the reference window; every test day gets
a model trained on the preceding ``train_days`` days; test-day predictions
are pooled and both models are scored on the identical pooled set.  Deltas
are relative, ``(candidate - baseline) / |baseline|``, with paired
bootstrap intervals (one set of resample indices per replicate, shared by
both models).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import data as dp
from .errors import ConfigError, WnllError
from .linear import load_model, predict_batch
from .metrics import MetricReport, bootstrap, gamma_utility_term
from .postclick import postclick_weight
from .synthetic import SyntheticConfig, generate_events
from .theory import ToyScenario, toy_sweep
from .trainer import TrainerConfig, train
from .weighting import WeightingScheme, dampen, lambda_heuristic, rescale_lambda

log = logging.getLogger(__name__)

DEFAULT_OFFSETS = (-0.4, -0.2, -0.1, 0.0, 0.1, 0.2)


# ---------------------------------------------------------------- config


@dataclass
class DatasetConfig:
    path: str | None = None
    numeric_arity: int = 0
    categorical_arity: int = 0
    hash_bits: int = 24
    delimiter: str = "\t"
    campaign_feature: bool = True
    synthetic: SyntheticConfig | None = None

    def schema(self) -> dp.DatasetSchema:
        return dp.DatasetSchema(self.numeric_arity, self.categorical_arity, self.hash_bits, self.delimiter.encode(), self.campaign_feature)


@dataclass
class WindowConfig:
    reference: tuple[float, float] = (0.0, 14.0 * dp.DAY)
    test: tuple[float, float] = (14.0 * dp.DAY, 28.0 * dp.DAY)
    train_days: int = 21
    day_seconds: int = dp.DAY


@dataclass
class WeightingConfig:
    enabled: bool = True
    cap: float | None = 20.0
    power: float = 0.5
    mode: str = "display"
    click_model: str | None = None

    def scheme(self) -> WeightingScheme:
        return WeightingScheme(self.cap, self.power, self.enabled)


@dataclass
class BootstrapConfig:
    replicates: int = 200
    level: float = 0.95
    unit: str = "display"


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    windows: WindowConfig = field(default_factory=WindowConfig)
    weighting: WeightingConfig = field(default_factory=WeightingConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    betas: tuple[float, ...] = (10.0, 1000.0)
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    high_cpa: float = 10.0
    low_sales: int = 30
    global_avg_cr: float | None = None
    lambda_offsets: tuple[float, ...] = DEFAULT_OFFSETS
    toy_beta: float = 30.0
    output: str = "out"
    seed: int = 0

    def validate(self) -> "RunConfig":
        ds = self.dataset
        if (ds.path is None) == (ds.synthetic is None):
            raise ConfigError("dataset needs exactly one of 'path' or 'synthetic'")
        if ds.path is not None and not Path(ds.path).exists():
            raise ConfigError(f"dataset path {ds.path} does not exist")
        if not 16 <= ds.hash_bits <= 30:
            raise ConfigError("dataset.hash_bits must be in [16, 30]")
        if any(b <= 0 for b in self.betas):
            raise ConfigError("beta values must be positive")
        if not 0 < self.weighting.power <= 1:
            raise ConfigError("weighting.power must be in (0, 1]")
        if self.weighting.mode not in ("display", "postclick"):
            raise ConfigError("weighting.mode must be 'display' or 'postclick'")
        if self.weighting.mode == "postclick":
            if not self.weighting.click_model or not Path(self.weighting.click_model).exists():
                raise ConfigError("postclick weighting needs an existing weighting.click_model file")
        if self.bootstrap.unit not in ("display", "campaign"):
            raise ConfigError("bootstrap.unit must be 'display' or 'campaign'")
        if self.bootstrap.replicates < 2 or not 0 < self.bootstrap.level < 1:
            raise ConfigError("bootstrap needs replicates >= 2 and 0 < level < 1")
        w = self.windows
        if not (w.reference[0] < w.reference[1] <= w.test[0] < w.test[1]):
            raise ConfigError("windows must satisfy reference.start < reference.end <= test.start < test.end")
        return self


_TRAINER_KEYS = {
    "sgd_epochs": "sgd_epochs",
    "lr": "sgd_learning_rate",
    "memory": "lbfgs_memory",
    "tol": "gradient_tolerance",
    "max_iter": "max_iterations",
    "seed": "seed",
}


def _only(section: str, doc: dict, allowed) -> None:
    extra = set(doc) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in {section}: {sorted(extra)}")


def config_from_dict(doc: dict[str, Any]) -> RunConfig:
    """Build a :class:`RunConfig` from the JSON layout documented in the README."""
    try:
        _only("config", doc, {"dataset", "windows", "weighting", "trainer", "metrics", "bootstrap", "segments",
                              "global_avg_cr", "lambda_offsets", "toy", "output", "seed"})
        seed = int(doc.get("seed", 0))
        ds_doc = dict(doc.get("dataset", {}))
        synth = ds_doc.pop("synthetic", None)
        _only("dataset", ds_doc, {f.name for f in fields(DatasetConfig)})
        if synth is not None:
            synth = SyntheticConfig(**synth)
        ds = DatasetConfig(**ds_doc, synthetic=synth)

        win_doc = doc.get("windows", {})
        _only("windows", win_doc, {f.name for f in fields(WindowConfig)})
        win = WindowConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in win_doc.items()})

        wt_doc = doc.get("weighting", {})
        _only("weighting", wt_doc, {f.name for f in fields(WeightingConfig)})
        weighting = WeightingConfig(**wt_doc)

        tr_doc = doc.get("trainer", {})
        _only("trainer", tr_doc, _TRAINER_KEYS)
        tr_kwargs = {_TRAINER_KEYS[k]: v for k, v in tr_doc.items()}
        tr_kwargs.setdefault("seed", seed)
        trainer = TrainerConfig(**tr_kwargs)

        metrics = doc.get("metrics", {})
        _only("metrics", metrics, {"betas"})
        bs_doc = doc.get("bootstrap", {})
        _only("bootstrap", bs_doc, {f.name for f in fields(BootstrapConfig)})
        segs = doc.get("segments", {})
        _only("segments", segs, {"high_cpa", "low_sales"})
        toy = doc.get("toy", {})
        _only("toy", toy, {"beta"})

        cfg = RunConfig(
            dataset=ds,
            windows=win,
            weighting=weighting,
            trainer=trainer,
            betas=tuple(float(b) for b in metrics.get("betas", (10.0, 1000.0))),
            bootstrap=BootstrapConfig(**bs_doc),
            high_cpa=float(segs.get("high_cpa", 10.0)),
            low_sales=int(segs.get("low_sales", 30)),
            global_avg_cr=doc.get("global_avg_cr"),
            lambda_offsets=tuple(doc.get("lambda_offsets", DEFAULT_OFFSETS)),
            toy_beta=float(toy.get("beta", 30.0)),
            output=str(doc.get("output", "out")),
            seed=seed,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(doc)


def synthetic_config(synth: SyntheticConfig | None = None, **overrides) -> RunConfig:
    """Run config for the synthetic log: weeks 1-2 reference, weeks 3-4 test."""
    synth = synth or SyntheticConfig()
    num, cat = synth.schema_arity
    ds = DatasetConfig(numeric_arity=num, categorical_arity=cat, hash_bits=20, synthetic=synth)
    return replace(RunConfig(dataset=ds), **overrides)


# ---------------------------------------------------------------- data preparation


@dataclass
class Prepared:
    records: dp.RecordSet
    reference: dp.RecordSet
    splits: list[dp.DaySplit]
    table: dp.CampaignTable


def load_events(cfg: RunConfig) -> list[dp.RawEvent]:
    if cfg.dataset.synthetic is not None:
        return generate_events(cfg.dataset.synthetic)
    return list(dp.read_events(cfg.dataset.path, cfg.dataset.schema()))


def prepare(cfg: RunConfig, events: list[dp.RawEvent] | None = None) -> Prepared:
    events = load_events(cfg) if events is None else events
    records = dp.RecordSet.from_events(events, cfg.dataset.schema())
    w = cfg.windows
    reference, _ = dp.split_by_time(records, w.reference, (w.test[0], w.test[0]), day=w.day_seconds)
    avg = cfg.global_avg_cr if cfg.global_avg_cr is not None else dp.global_conversion_rate(reference)
    table = dp.estimate_campaign_stats(reference, avg)
    records = dp.assign_economics_batch(records, table)
    reference, splits = dp.split_by_time(records, w.reference, w.test, train_days=w.train_days, day=w.day_seconds)
    log.info("prepared %d records, %d campaigns, AvgCR %.4f, %d test days", len(records), len(table), avg, len(splits))
    return Prepared(records, reference, splits, table)


# ---------------------------------------------------------------- reports


@dataclass
class DeltaReport:
    metric: str
    better: str  # "negative" or "positive"
    baseline: float
    candidate: float
    delta: MetricReport

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "better": self.better,
            "baseline": self.baseline,
            "candidate": self.candidate,
            "delta": self.delta.point,
            "ci_low": self.delta.ci_low,
            "ci_high": self.delta.ci_high,
            "level": self.delta.level,
            "replicates": self.delta.replicates,
        }


@dataclass
class ComparisonReport:
    segments: dict[str, dict[str, DeltaReport]]
    sizes: dict[str, int]
    n_days: int

    def to_dict(self) -> dict:
        return {
            "n_days": self.n_days,
            "segments": {
                name: {"n": self.sizes[name], "metrics": {k: r.to_dict() for k, r in ms.items()}}
                for name, ms in self.segments.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def utility_key(beta: float) -> str:
    return f"utility_beta_{beta:g}"


def paired_delta(base_terms, cand_terms, boot: BootstrapConfig, seed: int, groups=None) -> MetricReport:
    """Relative change of summed per-record terms, with paired bootstrap CI."""
    base_terms = np.asarray(base_terms)
    cand_terms = np.asarray(cand_terms)

    def delta(idx):
        b = base_terms[idx].sum()
        return (cand_terms[idx].sum() - b) / abs(b) if b != 0 else 0.0

    return bootstrap(delta, np.arange(len(base_terms)), boot.replicates, boot.level, seed, groups=groups)


# ---------------------------------------------------------------- experiment


class Experiment:
    """Prepared data plus cached pooled test predictions, shared by compare and sweeps."""

    def __init__(self, cfg: RunConfig, prepared: Prepared | None = None):
        self.cfg = cfg.validate()
        self.prep = prepared or prepare(cfg)
        self.test = dp.RecordSet.concat([s.test for s in self.prep.splits])
        self._preds: dict[tuple, np.ndarray] = {}
        self._click_model = load_model(cfg.weighting.click_model) if cfg.weighting.mode == "postclick" else None

    # -- training

    def candidate_weights(self, records: dp.RecordSet) -> np.ndarray:
        w = np.asarray(dampen(records.value, self.cfg.weighting.scheme()), dtype=np.float64).reshape(len(records))
        if self._click_model is not None:
            p_click = predict_batch(self._click_model, records.X)
            w = postclick_weight(records.y, w, p_click)
        return w

    def _fit_day(self, split: dp.DaySplit, weighted: bool, lam_scale: float):
        train_set = split.train
        lam_h = lambda_heuristic(train_set)
        if weighted:
            weights = self.candidate_weights(train_set)
            lam = rescale_lambda(lam_h, weights) * lam_scale
        else:
            weights = np.ones(len(train_set))
            lam = lam_h * lam_scale
        return train(train_set, self.cfg.trainer, weights=weights, lam=lam)

    def predictions(self, weighted: bool, lam_scale: float = 1.0) -> np.ndarray:
        key = (weighted, float(lam_scale))
        if key not in self._preds:
            parts = []
            for split in self.prep.splits:
                if len(split.test) == 0:
                    continue
                model = self._fit_day(split, weighted, lam_scale)
                parts.append(predict_batch(model, split.test.X))
            self._preds[key] = np.concatenate(parts) if parts else np.empty(0)
        return self._preds[key]

    # -- evaluation

    def segment_indices(self) -> dict[str, np.ndarray]:
        test = self.test
        high = test.value > self.cfg.high_cpa
        sales = np.array([self.prep.table[c].sales for c in test.campaign])
        low = sales < self.cfg.low_sales
        return {
            "global": np.arange(len(test)),
            "high_cpa": np.flatnonzero(high),
            "high_cpa_low_sales": np.flatnonzero(high & low),
        }

    def metric_terms(self, p: np.ndarray) -> dict[str, np.ndarray]:
        t = self.test
        y = t.y.astype(np.float64)
        out = {"msew": ((y - p) * t.value) ** 2}
        for beta in self.cfg.betas:
            out[utility_key(beta)] = np.asarray(gamma_utility_term(p, t.value, y, t.cost, beta))
        return out

    def _deltas(self, base_p, cand_p, idx) -> dict[str, DeltaReport]:
        base_terms = self.metric_terms(base_p)
        cand_terms = self.metric_terms(cand_p)
        groups = self.test.campaign[idx] if self.cfg.bootstrap.unit == "campaign" else None
        out = {}
        for name in base_terms:
            bt, ct = base_terms[name][idx], cand_terms[name][idx]
            n = max(len(idx), 1)
            scale = 1.0 / n if name == "msew" else 1.0
            out[name] = DeltaReport(
                name,
                "negative" if name == "msew" else "positive",
                float(bt.sum() * scale),
                float(ct.sum() * scale),
                paired_delta(bt, ct, self.cfg.bootstrap, self.cfg.seed, groups),
            )
        return out

    def compare(self) -> ComparisonReport:
        base_p = self.predictions(False)
        cand_p = self.predictions(True)
        segs = self.segment_indices()
        return ComparisonReport(
            {name: self._deltas(base_p, cand_p, idx) for name, idx in segs.items()},
            {name: int(len(idx)) for name, idx in segs.items()},
            len(self.prep.splits),
        )

    def lambda_sweep(self, offsets=None) -> list[dict]:
        offsets = self.cfg.lambda_offsets if offsets is None else offsets
        base_p = self.predictions(False)
        idx = np.arange(len(self.test))
        rows = []
        for off in offsets:
            cand_p = self.predictions(True, 1.0 + off)
            deltas = self._deltas(base_p, cand_p, idx)
            rows.append({
                "offset": float(off),
                "lambda_scale": 1.0 + off,
                "metrics": {k: d.to_dict() for k, d in deltas.items()},
            })
        return rows


def _flush_failure(cfg: RunConfig, name: str, exc: Exception, partial: dict) -> None:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.FAILED").write_text(f"{type(exc).__name__}: {exc}\n")
    (out / f"{name}.partial.json").write_text(json.dumps(partial, indent=2, sort_keys=True) + "\n")


def run_compare(cfg: RunConfig, experiment: Experiment | None = None) -> ComparisonReport:
    exp = experiment
    try:
        exp = exp or Experiment(cfg)
        return exp.compare()
    except WnllError as exc:
        partial = {"completed_prediction_sets": [list(k) for k in exp._preds]} if exp else {}
        _flush_failure(cfg, "compare", exc, partial)
        raise


def run_lambda_sweep(cfg: RunConfig, offsets=None, experiment: Experiment | None = None) -> list[dict]:
    exp = experiment
    try:
        exp = exp or Experiment(cfg)
        return exp.lambda_sweep(offsets)
    except WnllError as exc:
        partial = {"completed_prediction_sets": [list(k) for k in exp._preds]} if exp else {}
        _flush_failure(cfg, "lambda_sweep", exc, partial)
        raise


def run_toy(cfg: RunConfig | None = None, scenario: ToyScenario | None = None, grid=None):
    beta = cfg.toy_beta if cfg is not None else 30.0
    return toy_sweep(scenario, beta, grid)
