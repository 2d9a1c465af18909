"""Command-line entry point.

bench run          — run a configured study and write CSV/JSON/SVG reports
bench synth        — generate a directory of synthetic cases
bench train        — train the prompting agent and save a checkpoint
bench conformance  — run the bridge protocol suite against an adapter
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from ..agent import AgentConfig, train_agent
from ..core.caseio import save_case
from ..core.synth import generate_synthetic_case
from ..core.types import SyntheticSpec
from ..errors import InvalidConfig, PromptSegError
from ..nn import GatedQNetwork, SgdConfig, save_checkpoint
from .experiments import ExperimentConfig, build_cases, run_experiment
from .reports import emit_report


def _load_json(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise InvalidConfig(f"config file {p} does not exist")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{p}: not valid JSON ({exc})") from exc


def _synthetic_spec_from(doc: dict) -> tuple[SyntheticSpec, int]:
    doc = dict(doc)
    count = int(doc.pop("count", 1))
    for tup in ("diameter_mm", "blob_count", "contrast", "spacing_mm"):
        if tup in doc:
            doc[tup] = tuple(doc[tup])
    try:
        return SyntheticSpec(**doc), count
    except TypeError as exc:
        raise InvalidConfig(f"bad synthetic spec: {exc}") from exc


def _agent_config_from(doc: dict, seg_doc: dict, seed: int) -> AgentConfig:
    doc = dict(doc)
    sgd = SgdConfig(**doc.pop("sgd", {}))
    from ..segmenter.core import SegmenterConfig

    seg = SegmenterConfig(**seg_doc)
    if "grid" in doc:
        doc["grid"] = tuple(doc["grid"])
    try:
        return AgentConfig(seed=seed, sgd=sgd, segmenter=seg, **doc)
    except TypeError as exc:
        raise InvalidConfig(f"bad agent config: {exc}") from exc


def cmd_run(args) -> int:
    doc = _load_json(args.config)
    if args.no_timing:
        doc["no_timing"] = True
    cfg = ExperimentConfig.from_dict(doc)
    report = run_experiment(cfg, jobs=args.jobs)
    paths = emit_report(report, args.out)
    for row in report.rows:
        if row.metric in ("dice", "pass"):
            mean = "n/a" if row.mean is None else f"{row.mean:.4f}"
            sd = "" if not row.sd else f" +- {row.sd:.4f}"
            print(f"{report.study} {row.arm:>10} {row.metric}: {mean}{sd} (n={row.n})")
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    if report.study == "protocol_conformance":
        failed = [r.arm for r in report.rows if r.mean != 1.0]
        if failed:
            print(f"FAILED checks: {', '.join(failed)}")
            return 1
    return 0


def cmd_synth(args) -> int:
    spec, count = _synthetic_spec_from(_load_json(args.spec))
    if args.count is not None:
        count = args.count
    out = Path(args.out)
    for i in range(count):
        case_seed = int(np.random.SeedSequence([spec.seed, i]).generate_state(1)[0])
        case = generate_synthetic_case(dataclasses.replace(spec, seed=case_seed))
        case = dataclasses.replace(case, id=f"case{i:04d}")
        save_case(case, out / case.id)
    print(f"wrote {count} cases under {out}")
    return 0


def cmd_train(args) -> int:
    doc = _load_json(args.config)
    if doc.get("schema") != 1:
        raise InvalidConfig(f"unsupported config schema {doc.get('schema')!r}")
    seed = int(doc.get("seed", 0))
    agent_cfg = _agent_config_from(doc.get("agent", {}), doc.get("segmenter", {}), seed)

    dataset = doc.get("dataset", {})
    if "synthetic" in dataset:
        spec, count = _synthetic_spec_from(dataset["synthetic"])
        exp = ExperimentConfig(study="point_number", seed=seed, synthetic=spec,
                               synthetic_count=count)
        cases = build_cases(exp)
    elif "cases_dir" in dataset:
        exp = ExperimentConfig(study="point_number", seed=seed,
                               cases_dir=dataset["cases_dir"])
        cases = build_cases(exp)
    else:
        raise InvalidConfig("train config needs a dataset")

    gx, gy = agent_cfg.grid
    net = GatedQNetwork(state_dim=3 * gx * gy, seed=seed)
    net, log = train_agent(cases, agent_cfg, net)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(net, out)
    log_path = out.with_suffix(out.suffix + ".log.csv")
    log_path.write_text(log.to_csv())
    last = log.episodes[-1]
    print(f"trained {agent_cfg.episodes} episodes; final dice {last.final_dice:.4f}")
    print(f"wrote {out} and {log_path}")
    return 0


def cmd_conformance(args) -> int:
    from .conformance import run_conformance

    results = run_conformance(args.bridge)
    failed = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        detail = f"  ({res.detail})" if res.detail and not res.passed else ""
        print(f"{status} {res.name}{detail}")
        failed += 0 if res.passed else 1
    print(f"{len(results) - failed}/{len(results)} conformance checks passed")
    return 0 if failed == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench",
                                     description="prompt-strategy experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a study from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--no-timing", action="store_true",
                       help="zero wall-time fields for byte-stable outputs")
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.set_defaults(func=cmd_run)

    p_synth = sub.add_parser("synth", help="generate synthetic cases")
    p_synth.add_argument("--spec", required=True)
    p_synth.add_argument("--count", type=int, default=None)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="train the prompting agent")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True)
    p_train.set_defaults(func=cmd_train)

    p_conf = sub.add_parser("conformance", help="check a bridge adapter")
    p_conf.add_argument("--bridge", required=True)
    p_conf.set_defaults(func=cmd_conformance)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PromptSegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
