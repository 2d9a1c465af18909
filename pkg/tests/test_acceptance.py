"""Acceptance gate: one test per criterion, each printing a PASS line.

Every suite here is pinned (sizes, contrast, noise, seeds) and runs
bit-reproducibly. The agent criteria share one trained network via a
session fixture; training takes a few minutes on a desktop CPU.
"""
import json
import time

import numpy as np
import pytest

from promptseg.agent import AgentConfig, evaluate_policy, train_agent
from promptseg.bench.cli import main as bench_main
from promptseg.bench.experiments import ExperimentConfig, run_experiment
from promptseg.core import (
    SyntheticSpec,
    decompose_subregions,
    generate_synthetic_case,
    lesion_anchor,
)
from promptseg.features import bald_map, build_region_pool, entropy_map, kl_divergence
from promptseg.metrics import dice, hd95
from promptseg.nn import GatedQNetwork, finite_diff_check
from promptseg.segmenter import ProbabilityMap, SegmenterConfig

from conftest import (
    LARGE_IRREGULAR,
    LARGE_MULTI,
    SMALL_COMPACT,
    SMALL_SINGLE,
    make_suite,
    oracle_dice,
    oracle_hd95,
    random_mask,
)

LN2 = float(np.log(2.0))

# the agent suite: two well-separated plateaus over zoned backgrounds with
# collimation-dark corners, so every policy's forced first poke stays cheap
AGENT_ACCEPT = dict(
    width=64, height=64, diameter_mm=(40.0, 48.0), blob_count=(2, 2),
    contrast=(0.16, 0.32), noise=0.012, background=(0.18, 0.50),
    background_zones=3, corner_shade=0.02,
)
AGENT_TRAIN_BASE = 500
AGENT_HELD_BASE = 901
AGENT_BUDGET = 7


def _report(study, synth, count, seed, **over):
    doc = {
        "schema": 1,
        "study": study,
        "seed": seed,
        "no_timing": True,
        "dataset": {"synthetic": {**{k: list(v) if isinstance(v, tuple) else v
                                     for k, v in synth.items()}, "count": count}},
    }
    doc.update(over)
    return run_experiment(ExperimentConfig.from_dict(doc))


def _arm_means(report, metric="dice"):
    return {r.arm: r.mean for r in report.rows if r.metric == metric}


def _pvalue(report, a, b, metric="dice"):
    for t in report.tests:
        if t.metric == metric and {t.arm_a, t.arm_b} == {a, b}:
            return t.p_value
    raise AssertionError(f"no {metric} test row for {a} vs {b}")


def test_criterion_01_metric_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(20240801)
    for _ in range(200):
        w, h = int(rng.integers(4, 17)), int(rng.integers(4, 17))
        a = random_mask(rng, w, h, p=0.45, nonempty=True)
        b = random_mask(rng, w, h, p=0.45, nonempty=True)
        spacing = (float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.5, 2.0)))
        assert abs(dice(a, b) - oracle_dice(a, b)) <= 1e-9
        assert abs(hd95(a, b, spacing) - oracle_hd95(a, b, spacing)) <= 1e-9
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    print(f"\nPASS criterion 1: dice/hd95 match brute-force oracles on 200 pairs "
          f"({elapsed:.1f}s)")


def test_criterion_02_subregion_partition():
    start = time.perf_counter()
    checked = 0
    for i in range(100):
        spec = SyntheticSpec(seed=3000 + i, diameter_mm=(14.0, 30.0), blob_count=(1, 4))
        case = generate_synthetic_case(spec)
        part = decompose_subregions(case.truth, delta=5.0)
        merged = part.center.bits | part.surface.bits | part.union_region.bits
        assert np.array_equal(merged, case.truth.bits)
        assert not (part.center.bits & part.surface.bits).any()
        assert not (part.surface.bits & part.union_region.bits).any()
        assert not (part.center.bits & part.union_region.bits).any()
        # band geometry against the exact distance maps
        from promptseg.core import distance_transform

        dist_edge = distance_transform(case.truth)
        ax, ay = lesion_anchor(case.truth)
        yy, xx = np.mgrid[0 : case.truth.height, 0 : case.truth.width]
        dist_anchor = np.hypot(xx - ax, yy - ay)
        assert np.all(dist_anchor[part.center.bits] <= 5.0)
        assert np.all(dist_edge[part.surface.bits] <= 5.0)
        checked += 1
    elapsed = time.perf_counter() - start
    assert checked == 100 and elapsed < 30.0
    print(f"\nPASS criterion 2: sub-region partition exact on 100 lesions ({elapsed:.1f}s)")


def test_criterion_03_point_number_trend():
    start = time.perf_counter()
    report = _report("point_number", LARGE_MULTI, 50, seed=11)
    means = _arm_means(report)
    p12 = _pvalue(report, "1", "2-4")
    assert means["1"] < means["2-4"] < means["5+"]
    assert p12 < 0.05
    elapsed = time.perf_counter() - start
    assert elapsed < 300.0
    print(f"\nPASS criterion 3: dice {means['1']:.3f} < {means['2-4']:.3f} < "
          f"{means['5+']:.3f}, p(1 vs 2-4) = {p12:.2e} ({elapsed:.0f}s)")


def test_criterion_04_plateau_behavior():
    start = time.perf_counter()
    report = _report("point_number", SMALL_SINGLE, 50, seed=7)
    means = _arm_means(report)
    p12 = _pvalue(report, "1", "2-4")
    p25 = _pvalue(report, "2-4", "5+")
    assert p12 < 0.05
    assert p25 is None or p25 > 0.05
    elapsed = time.perf_counter() - start
    assert elapsed < 300.0
    print(f"\nPASS criterion 4: plateau (1: {means['1']:.3f}, 2-4: {means['2-4']:.3f}, "
          f"5+: {means['5+']:.3f}); p12 = {p12:.4f}, p25 = {p25:.3f} ({elapsed:.0f}s)")


def test_criterion_05_location_direction():
    start = time.perf_counter()
    large = _report("point_location", LARGE_IRREGULAR, 100, seed=11)
    m_large = _arm_means(large)
    assert m_large["union"] >= m_large["center"]

    small = _report("point_location", SMALL_COMPACT, 100, seed=11)
    small_ps = [t.p_value for t in small.tests if t.metric == "dice"]
    assert len(small_ps) == 3
    assert all(p is None or p > 0.05 for p in small_ps)
    elapsed = time.perf_counter() - start
    assert elapsed < 600.0
    shown = ", ".join("n/a" if p is None else f"{p:.2f}" for p in small_ps)
    print(f"\nPASS criterion 5: union {m_large['union']:.3f} >= center "
          f"{m_large['center']:.3f}; compact-case location p-values [{shown}] ({elapsed:.0f}s)")


@pytest.fixture(scope="session")
def trained_agent():
    """2000-episode DQN training on the 200-case suite (criteria 6 and 7)."""
    start = time.perf_counter()
    train_cases = make_suite(AGENT_ACCEPT, base=AGENT_TRAIN_BASE, count=200)
    cfg = AgentConfig(episodes=2000, budget=10, seed=3, gamma=0.2)
    net = GatedQNetwork(state_dim=3 * 64, seed=3)
    net, log = train_agent(train_cases, cfg, net)
    return net, log, time.perf_counter() - start


@pytest.fixture(scope="session")
def heldout_evaluations(trained_agent):
    net, _, train_seconds = trained_agent
    held = make_suite(AGENT_ACCEPT, base=AGENT_HELD_BASE, count=50)
    evals = {"agent": evaluate_policy(net, held, AGENT_BUDGET, 777, SegmenterConfig())}
    for mode in ("bald", "entropy", "uniform", "random"):
        evals[mode] = evaluate_policy(mode, held, AGENT_BUDGET, 777, SegmenterConfig())
    return evals, train_seconds


def test_criterion_06_agent_vs_chance(heldout_evaluations):
    evals, train_seconds = heldout_evaluations
    agent = evals["agent"].mean_curve
    random_final = evals["random"].mean_curve[-1]
    margin = agent[-1] - random_final
    assert margin >= 0.10, f"agent {agent[-1]:.3f} vs random {random_final:.3f}"
    steps = np.diff(agent)
    assert steps.min() >= -0.02, f"curve not nondecreasing within 0.02: {np.round(agent, 3)}"
    assert train_seconds < 1800.0
    print(f"\nPASS criterion 6: agent {agent[-1]:.3f} vs random {random_final:.3f} "
          f"(margin {margin:+.3f}); curve {np.round(agent, 3)}; "
          f"training {train_seconds:.0f}s")


def test_criterion_07_agent_vs_acquisition_baselines(heldout_evaluations):
    evals, _ = heldout_evaluations
    agent_final = evals["agent"].mean_curve[-1]
    finals = {}
    for mode in ("bald", "entropy", "uniform"):
        finals[mode] = evals[mode].mean_curve[-1]
        assert agent_final >= finals[mode], (
            f"agent {agent_final:.3f} < {mode} {finals[mode]:.3f}"
        )
    assert evals["bald"].label == "bald"
    shown = ", ".join(f"{k} {v:.3f}" for k, v in finals.items())
    print(f"\nPASS criterion 7: agent {agent_final:.3f} >= each of [{shown}] "
          f"(30-member ensembles)")


def test_criterion_08_gradient_correctness():
    start = time.perf_counter()
    net = GatedQNetwork(state_dim=3 * 64, seed=42)
    err = finite_diff_check(net, probes=500, h=1e-4, seed=42, batch_size=4)
    elapsed = time.perf_counter() - start
    assert err < 1e-4
    assert elapsed < 30.0
    print(f"\nPASS criterion 8: max finite-difference relative error {err:.2e} "
          f"over 500 probes ({elapsed:.1f}s)")


def test_criterion_09_telescoping_reward():
    from promptseg.agent import env_reset, env_step

    rng = np.random.default_rng(606)
    cases = make_suite(
        dict(width=48, height=48, diameter_mm=(16.0, 26.0), blob_count=(1, 3),
             contrast=(0.3, 0.6), noise=0.02),
        base=77, count=20,
    )
    episodes = 0
    for rep in range(5):
        for case in cases:
            pool = build_region_pool(48, 48, (6, 6))
            budget = int(rng.integers(3, 9))
            env, _ = env_reset(case, pool, SegmenterConfig(), budget)
            total = 0.0
            for _ in range(budget):
                _, r, _ = env_step(env, int(rng.choice(env.legal_actions())))
                total += r
            assert abs(total - env.dice) <= 1e-9
            episodes += 1
    assert episodes == 100
    print(f"\nPASS criterion 9: rewards telescope to final dice on {episodes} episodes")


def test_criterion_10_feature_properties():
    rng = np.random.default_rng(515)
    # entropy bounds and its equality structure
    q = rng.random(1200)
    ent = entropy_map(ProbabilityMap(q.reshape(30, 40)))
    assert ent.min() >= 0.0 and ent.max() <= LN2 + 1e-15
    edge = entropy_map(ProbabilityMap(np.array([[0.0, 0.5, 1.0]] * 8)))
    assert edge[0, 0] == 0.0 and edge[0, 2] == 0.0
    assert edge[0, 1] == pytest.approx(LN2)

    # bald nonnegative, zero for constant ensembles
    for _ in range(40):
        members = [ProbabilityMap(rng.random((5, 5))) for _ in range(5)]
        assert bald_map(members).min() >= -1e-15
    const = ProbabilityMap(rng.random((5, 5)))
    assert bald_map([const, const]).max() == 0.0

    # kl nonnegative; zero iff equal after smoothing
    zeros = 0
    for _ in range(1000):
        p, q2 = rng.random(), rng.random()
        val = kl_divergence((p, 1 - p), (q2, 1 - q2))
        assert val >= 0.0
        if val == 0.0:
            zeros += 1
            assert p == pytest.approx(q2, abs=1e-12)
    same = rng.random()
    assert kl_divergence((same, 1 - same), (same, 1 - same)) == 0.0
    print("\nPASS criterion 10: entropy/bald/kl properties hold on 1000+ random inputs")


def test_criterion_11_bench_determinism(tmp_path):
    doc = {
        "schema": 1,
        "study": "point_number",
        "seed": 13,
        "dataset": {"synthetic": {
            "width": 48, "height": 48, "diameter_mm": [18, 26], "blob_count": [2, 3],
            "contrast": [0.3, 0.6], "noise": 0.015, "count": 8,
        }},
    }
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(doc))
    blobs = []
    for name in ("one", "two"):
        out = tmp_path / name
        assert bench_main(["run", "--config", str(cfg), "--out", str(out),
                           "--no-timing"]) == 0
        blobs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert blobs[0] == blobs[1]
    assert set(blobs[0]) == {"report.csv", "tests.csv", "report.json", "plots.svg"}
    print("\nPASS criterion 11: repeated bench runs are byte-identical")


BRIDGE_MAIN = "bridge/dist/main.js"


@pytest.mark.skipif(
    not __import__("pathlib").Path(BRIDGE_MAIN).exists(),
    reason="secondary bridge adapter not built (run `npm install && npm run build` in bridge/)",
)
def test_criterion_12_bridge_conformance():
    from promptseg.bench.conformance import run_conformance

    results = run_conformance(f"node {BRIDGE_MAIN}")
    failed = [(r.name, r.detail) for r in results if not r.passed]
    assert not failed, f"conformance failures: {failed}"
    parity = next(r for r in results if r.name == "dice_parity")
    assert parity.passed
    print(f"\nPASS criterion 12: {len(results)} bridge conformance checks green "
          f"(echo adapter, dice parity within 1e-6)")
