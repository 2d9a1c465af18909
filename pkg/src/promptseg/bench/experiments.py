"""Experiment runner for the three strategy studies.

point_number: prompt-count arms {1, 2-4, 5+} at a fixed Union location.
point_location: {center, surface, union} arms at a fixed prompt count.
agent_vs_baselines: a trained agent against BALD/entropy/uniform/random.

Every arm of a study consumes the identical case list and per-case seed
material, so the pairwise t-tests are paired by construction.
"""
from __future__ import annotations

import concurrent.futures
import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..agent import evaluate_policy
from ..core.caseio import load_case
from ..core.sampling import sample_prompts
from ..core.synth import generate_synthetic_case
from ..core.types import LabeledCase, SubRegionKind, SyntheticSpec
from ..errors import DegenerateSample, EmptyMask, InvalidConfig, MissingModel
from ..metrics import MetricReport, dice, hd95, paired_t_test
from ..nn import load_checkpoint
from ..segmenter.core import EnsembleConfig, SegmenterConfig, binarize, predict

SCHEMA_VERSION = 1
STUDIES = ("point_number", "point_location", "agent_vs_baselines", "protocol_conformance")

POINT_NUMBER_ARMS = ("1", "2-4", "5+")
LOCATION_ARMS = ("center", "surface", "union")
AGENT_ARMS = ("agent", "bald", "entropy", "uniform", "random")


@dataclass(frozen=True)
class ExperimentConfig:
    study: str
    seed: int = 0
    repetitions: int = 1
    synthetic: SyntheticSpec | None = None
    synthetic_count: int = 0
    cases_dir: str | None = None
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    location_n: int = 3
    budget: int = 7
    grid: tuple[int, int] = (8, 8)
    kl_mode: str = "max"
    checkpoint: str | None = None
    bridge: str | None = None
    no_timing: bool = False
    raw: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.study not in STUDIES:
            raise InvalidConfig(f"unknown study {self.study!r}")
        if self.repetitions < 1:
            raise InvalidConfig("repetitions must be >= 1")
        if self.study != "protocol_conformance":
            has_synth = self.synthetic is not None and self.synthetic_count >= 1
            if not has_synth and not self.cases_dir:
                raise InvalidConfig("dataset must name a synthetic spec or a case directory")
        elif not self.bridge:
            raise InvalidConfig("protocol_conformance needs a bridge command")

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise InvalidConfig("config must be a JSON object")
        if doc.get("schema") != SCHEMA_VERSION:
            raise InvalidConfig(f"unsupported config schema {doc.get('schema')!r}")
        known = {
            "schema", "study", "seed", "repetitions", "dataset", "segmenter",
            "ensemble", "location_n", "budget", "grid", "kl_mode", "checkpoint",
            "bridge", "no_timing",
        }
        unknown = set(doc) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        try:
            dataset = doc.get("dataset", {})
            synthetic = None
            count = 0
            cases_dir = dataset.get("cases_dir")
            if "synthetic" in dataset:
                synth = dict(dataset["synthetic"])
                count = int(synth.pop("count", 1))
                for tup in ("diameter_mm", "blob_count", "contrast", "spacing_mm"):
                    if tup in synth:
                        synth[tup] = tuple(synth[tup])
                synthetic = SyntheticSpec(**synth)
            seg = SegmenterConfig(**doc.get("segmenter", {}))
            ens = EnsembleConfig(**doc.get("ensemble", {}))
            return ExperimentConfig(
                study=doc["study"],
                seed=int(doc.get("seed", 0)),
                repetitions=int(doc.get("repetitions", 1)),
                synthetic=synthetic,
                synthetic_count=count,
                cases_dir=cases_dir,
                segmenter=seg,
                ensemble=ens,
                location_n=int(doc.get("location_n", 3)),
                budget=int(doc.get("budget", 7)),
                grid=tuple(doc.get("grid", (8, 8))),
                kl_mode=doc.get("kl_mode", "max"),
                checkpoint=doc.get("checkpoint"),
                bridge=doc.get("bridge"),
                no_timing=bool(doc.get("no_timing", False)),
                raw=doc,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidConfig(f"bad config: {exc}") from exc


@dataclass(frozen=True)
class ArmRow:
    arm: str
    metric: str
    mean: float | None
    sd: float | None
    n: int


@dataclass(frozen=True)
class TestRow:
    arm_a: str
    arm_b: str
    metric: str
    method: str
    statistic: float | None
    p_value: float | None


@dataclass(frozen=True)
class StudyReport:
    study: str
    rows: tuple[ArmRow, ...]
    tests: tuple[TestRow, ...]
    seed: int
    seed_hash: str
    config_hash: str
    version: str = "1"


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def config_hash(cfg: ExperimentConfig) -> str:
    return _hash(cfg.raw if cfg.raw else dataclasses.asdict(cfg))


def build_cases(cfg: ExperimentConfig) -> list[LabeledCase]:
    if cfg.synthetic is not None and cfg.synthetic_count:
        cases = []
        for i in range(cfg.synthetic_count):
            case_seed = int(np.random.SeedSequence([cfg.seed, i]).generate_state(1)[0])
            spec = dataclasses.replace(cfg.synthetic, seed=case_seed)
            case = generate_synthetic_case(spec)
            cases.append(dataclasses.replace(case, id=f"case{i:04d}"))
        return cases
    root = Path(cfg.cases_dir)
    if not root.is_dir():
        raise InvalidConfig(f"case directory {root} does not exist")
    dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not dirs:
        raise InvalidConfig(f"case directory {root} is empty")
    return [load_case(d) for d in dirs]


def _mean_sd(values: list[float]) -> tuple[float | None, float | None, int]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None, 0
    arr = np.asarray(vals, dtype=np.float64)
    sd = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return float(arr.mean()), sd, len(arr)


def _paired_rows(study: str, arms: dict[str, dict[str, list]], metric: str) -> list[TestRow]:
    """Pairwise paired t-tests on a per-unit metric, dropping units where
    either arm recorded a sentinel."""
    out: list[TestRow] = []
    names = list(arms)
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            xs, ys = [], []
            for va, vb in zip(arms[a][metric], arms[b][metric]):
                if va is not None and vb is not None:
                    xs.append(va)
                    ys.append(vb)
            if len(xs) < 2:
                out.append(TestRow(a, b, metric, "paired_t", None, None))
                continue
            try:
                res = paired_t_test(xs, ys)
                out.append(TestRow(a, b, metric, "paired_t", res.statistic, res.p_value))
            except DegenerateSample:
                out.append(TestRow(a, b, metric, "paired_t", None, None))
    return out


def _point_unit(case: LabeledCase, arm_counts: dict[str, int], location: SubRegionKind,
                seed_material: list, seg_cfg: SegmenterConfig) -> dict[str, MetricReport]:
    """Evaluate every arm of a point study on one (case, repetition) unit."""
    results = {}
    for arm_idx, (arm, n) in enumerate(sorted(arm_counts.items())):
        loc = location if isinstance(location, SubRegionKind) else SubRegionKind(arm)
        t0 = time.perf_counter()
        prompts = sample_prompts(case, loc, n, rng_seed=seed_material + [arm_idx])
        pred = binarize(predict(case.image, prompts, seg_cfg))
        d = dice(pred, case.truth)
        try:
            h = hd95(pred, case.truth, case.image.spacing)
        except EmptyMask:
            h = None  # undefined metric: record a sentinel row
        results[arm] = MetricReport(d, h, time.perf_counter() - t0)
    return results


def _point_worker(payload) -> dict:
    case, arm_counts, location, seed_material, seg_cfg = payload
    return _point_unit(case, arm_counts, location, seed_material, seg_cfg)


def _run_point_study(cfg: ExperimentConfig, cases: list[LabeledCase], jobs: int) -> tuple[dict, list[str]]:
    """Shared machinery for the two prompt-sampling studies; returns per-arm
    per-unit metric lists."""
    units = []
    for rep in range(cfg.repetitions):
        for ci, case in enumerate(cases):
            unit_rng = np.random.default_rng([cfg.seed, ci, rep])
            if cfg.study == "point_number":
                counts = {
                    "1": 1,
                    "2-4": int(unit_rng.integers(2, 5)),
                    "5+": int(unit_rng.integers(5, 9)),
                }
                location = SubRegionKind.UNION
                arm_names = list(POINT_NUMBER_ARMS)
            else:
                counts = {arm: cfg.location_n for arm in LOCATION_ARMS}
                location = None  # each arm samples its own band
                arm_names = list(LOCATION_ARMS)
            units.append((case, counts, location, [cfg.seed, ci, rep], cfg.segmenter))

    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_point_worker, units))
    else:
        outcomes = [_point_worker(u) for u in units]

    arms: dict[str, dict[str, list]] = {
        arm: {"dice": [], "hd95": [], "wall_time": []} for arm in arm_names
    }
    for unit in outcomes:
        for arm, report in unit.items():
            for key in ("dice", "hd95", "wall_time"):
                arms[arm][key].append(getattr(report, key))
    return arms, arm_names


def _run_agent_study(cfg: ExperimentConfig, cases: list[LabeledCase]) -> tuple[dict, list[str]]:
    if not cfg.checkpoint:
        raise MissingModel("agent study needs a trained checkpoint")
    ckpt = Path(cfg.checkpoint)
    if not ckpt.exists():
        raise MissingModel(f"checkpoint {ckpt} does not exist")
    net = load_checkpoint(ckpt)

    arms: dict[str, dict[str, list]] = {}
    curves: dict[str, np.ndarray] = {}
    for arm in AGENT_ARMS:
        policy = net if arm == "agent" else arm
        ev = evaluate_policy(policy, cases, cfg.budget, cfg.seed, cfg.segmenter,
                             cfg.grid, cfg.ensemble, cfg.kl_mode)
        arms[arm] = {
            "dice": list(ev.per_case_dice[:, -1]),
            "hd95": ev.per_case_hd95,
            "wall_time": ev.per_case_seconds,
        }
        curves[arm] = ev.per_case_dice
    return arms, list(AGENT_ARMS), curves


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> StudyReport:
    """Run one study and aggregate it into a report. Deterministic for a
    fixed config and seed apart from wall-time fields (see `no_timing`)."""
    if cfg.study == "protocol_conformance":
        from .conformance import run_conformance

        checks = run_conformance(cfg.bridge)
        rows = tuple(
            ArmRow(c.name, "pass", 1.0 if c.passed else 0.0, 0.0, 1) for c in checks
        )
        return StudyReport(cfg.study, rows, (), cfg.seed, _hash([cfg.seed]), config_hash(cfg))

    cases = build_cases(cfg)
    curves = None
    if cfg.study == "agent_vs_baselines":
        arms, arm_names, curves = _run_agent_study(cfg, cases)
    else:
        arms, arm_names = _run_point_study(cfg, cases, jobs)

    seed_hash = _hash({
        "seed": cfg.seed,
        "cases": [c.id for c in cases],
        "repetitions": cfg.repetitions,
    })

    rows: list[ArmRow] = []
    for arm in arm_names:
        for metric in ("dice", "hd95", "wall_time"):
            values = arms[arm][metric]
            if metric == "wall_time" and cfg.no_timing:
                values = [0.0] * len(values)
            mean, sd, n = _mean_sd(values)
            rows.append(ArmRow(arm, metric, mean, sd, n))
        if curves is not None:
            per_case = curves[arm]
            for t in range(per_case.shape[1]):
                mean, sd, n = _mean_sd(list(per_case[:, t]))
                rows.append(ArmRow(arm, f"dice_t{t}", mean, sd, n))

    tests = _paired_rows(cfg.study, arms, "dice") + _paired_rows(cfg.study, arms, "hd95")
    return StudyReport(cfg.study, tuple(rows), tuple(tests), cfg.seed, seed_hash,
                       config_hash(cfg))
