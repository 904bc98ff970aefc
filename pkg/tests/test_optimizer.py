import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import SMALL_BATCHES, random_solver_instance
from oracles import brute_force
from pipeadapt.accuracy import heaviest_variant, lightest_variant, pipeline_accuracy
from pipeadapt.catalog import Configuration, LatencyModel, ModelVariant, Pipeline, QualityScore, Stage, StageConfig
from pipeadapt.optimizer import (
    ObjectiveWeights,
    SolveInput,
    feasible,
    min_replicas,
    objective_value,
    queue_delay,
    solve,
    solve_fixed_replicas,
    solve_fixed_variants,
    stage_latency,
)
from pipeadapt.profiler import throughput

ACCURACY_FIRST = ObjectiveWeights(1.0, 0.01, 0.001)
COST_FIRST = ObjectiveWeights(1.0, 2.0, 0.001)


def _single(latency, quality=1.0):
    v = ModelVariant("m", QualityScore(quality), latency)
    return Pipeline("p", (Stage("s", (v,), 1.0),), 1.0)


def test_queue_delay_examples():
    assert queue_delay(1, 7.0) == 0.0
    assert queue_delay(8, 20) == pytest.approx(0.35)
    assert queue_delay(64, 4) == 15.75


def test_stage_latency_examples():
    assert stage_latency(ModelVariant("a", QualityScore(1), LatencyModel(0, 0, 0.08)), 1, 20) == 0.08
    v = ModelVariant("b", QualityScore(1), LatencyModel(0, 0.05, 0))
    assert stage_latency(v, 8, 20) == pytest.approx(0.75)
    assert stage_latency(ModelVariant("c", QualityScore(1), LatencyModel(0, 0, 0.05)), 1, 3) == 0.05


def test_min_replicas_examples():
    fast = ModelVariant("f", QualityScore(1), LatencyModel(0, 0, 0.05))
    mid = ModelVariant("m", QualityScore(1), LatencyModel(0, 0, 0.08))
    a2 = ModelVariant("a2", QualityScore(1), LatencyModel(0, 0, 0.347))
    assert min_replicas(fast, 1, 10) == 1
    assert min_replicas(mid, 1, 20) == 2
    assert min_replicas(a2, 1, 20) == 7


@settings(max_examples=300, deadline=None)
@given(st.floats(1e-3, 2.0), st.sampled_from([1, 2, 4, 8, 16]), st.floats(0.1, 500.0))
def test_min_replicas_is_minimal(c, b, rate):
    v = ModelVariant("m", QualityScore(1), LatencyModel(0, 0, c))
    n = min_replicas(v, b, rate)
    h = throughput(v.latency, b)
    assert n * h >= rate * (1 - 1e-9)
    assert n == 1 or (n - 1) * h < rate * (1 - 1e-9)


def test_objective_value_example():
    p = Pipeline(
        "p",
        tuple(
            Stage(sid, tuple(ModelVariant(f"m{i}", QualityScore(i), LatencyModel(0, 0, 0.1)) for i in range(3)), 1.0)
            for sid in "ab"
        ),
        1.0,
    )
    c = Configuration((StageConfig("a", "m1", 1, 2), StageConfig("b", "m1", 1, 2)))
    assert objective_value(p, c, ObjectiveWeights(1, 0.5, 0.1)) == pytest.approx(-1.2)
    assert objective_value(p, c, ObjectiveWeights(0, 0.5, 0.1)) == pytest.approx(-2.2)
    assert objective_value(p, c, ObjectiveWeights(3, 0, 0)) == 3 * pipeline_accuracy(p, c)


def test_feasible_table_sums(two_stage):
    c11 = Configuration((StageConfig("detect", "yolov5n", 1, 2), StageConfig("classify", "resnet18", 1, 2)))
    c22 = Configuration((StageConfig("detect", "yolov5m", 1, 7), StageConfig("classify", "resnet50", 1, 3)))
    assert feasible(two_stage, c11, 20, 0.6) == (True, [])
    assert feasible(two_stage, c22, 20, 0.6) == (True, [])
    short = Configuration((StageConfig("detect", "yolov5m", 1, 6), StageConfig("classify", "resnet50", 1, 3)))
    ok, problems = feasible(two_stage, short, 20, 0.6)
    assert not ok and problems[0].startswith("throughput: stage detect")
    ok, problems = feasible(two_stage, c22, 20, 0.4)
    assert not ok and problems[0].startswith("latency:")


def test_single_constant_stage():
    p = _single(LatencyModel(0, 0, 0.05))
    out = solve(SolveInput(p, ObjectiveWeights(1, 0.1, 0.01), 10, 0.2, SMALL_BATCHES))
    assert out.configuration == Configuration((StageConfig("s", "m", 1, 1),))


def test_table_fixture_picks(two_stage):
    acc = solve(SolveInput(two_stage, ACCURACY_FIRST, 20, 0.6, SMALL_BATCHES, 32))
    cost = solve(SolveInput(two_stage, COST_FIRST, 20, 0.6, SMALL_BATCHES, 32))
    assert acc.configuration.describe() == "detect:yolov5m:1:7 classify:resnet50:1:3"
    assert cost.configuration.describe() == "detect:yolov5n:1:2 classify:resnet18:1:2"
    for w, out in ((ACCURACY_FIRST, acc), (COST_FIRST, cost)):
        obj, cfg = brute_force(two_stage, w, 20, 0.6, SMALL_BATCHES, 32)
        assert out.objective == obj and out.configuration == cfg


def test_infeasible_rate(two_stage):
    out = solve(SolveInput(two_stage, replica_cap=4, arrival_rate=500))
    assert not out.feasible
    assert out.violation.startswith("throughput:")


def test_infeasible_sla(two_stage):
    out = solve(SolveInput(two_stage, arrival_rate=1, sla=0.1))
    assert not out.feasible and out.violation.startswith("latency:")


def test_fixed_variants(two_stage):
    inp = SolveInput(two_stage, ObjectiveWeights(), 10, None, SMALL_BATCHES, 32)
    full = solve(inp)
    light = solve_fixed_variants(inp, {s.id: lightest_variant(s) for s in two_stage.stages})
    assert light.objective <= full.objective
    own = solve_fixed_variants(inp, {sc.stage_id: sc.variant_id for sc in full.configuration})
    assert own.configuration == full.configuration
    tight = SolveInput(two_stage, ObjectiveWeights(), 10, 0.45, SMALL_BATCHES, 32)
    heavy = solve_fixed_variants(tight, {s.id: heaviest_variant(s) for s in two_stage.stages})
    assert not heavy.feasible


def test_fixed_replicas(two_stage):
    inp = SolveInput(two_stage, ACCURACY_FIRST, 20, 0.6, SMALL_BATCHES, 32)
    big = solve_fixed_replicas(inp, {"detect": 8, "classify": 8})
    assert [sc.variant_id for sc in big.configuration] == ["yolov5m", "resnet50"]
    one = solve_fixed_replicas(inp, {"detect": 1, "classify": 1})
    assert not one.feasible or pipeline_accuracy(two_stage, one.configuration) < 2
    full = solve(inp)
    same_n = solve_fixed_replicas(inp, {sc.stage_id: sc.replicas for sc in full.configuration})
    assert same_n.objective <= full.objective
    with pytest.raises(ValueError):
        solve_fixed_replicas(inp, {"detect": 0})


def test_unknown_fixed_stage(two_stage):
    with pytest.raises(KeyError):
        solve_fixed_variants(SolveInput(two_stage), {"nope": "x"})


def test_input_validation(two_stage):
    with pytest.raises(ValueError):
        SolveInput(two_stage, arrival_rate=0)
    with pytest.raises(ValueError):
        SolveInput(two_stage, batch_set=(4, 2))
    with pytest.raises(ValueError):
        SolveInput(two_stage, replica_cap=0)
    with pytest.raises(ValueError):
        ObjectiveWeights(0, 0, 0)
    with pytest.raises(ValueError):
        ObjectiveWeights(1, -1, 0)


@pytest.mark.parametrize("seed", range(60))
def test_matches_brute_force(seed):
    p, w, rate, sla = random_solver_instance(seed)
    out = solve(SolveInput(p, w, rate, sla, SMALL_BATCHES, 8))
    obj, cfg = brute_force(p, w, rate, sla, SMALL_BATCHES, 8)
    assert out.configuration == cfg
    if cfg is not None:
        assert out.objective == obj


@pytest.mark.parametrize("seed", range(20))
def test_restricted_solves_match_brute_force(seed):
    p, w, rate, sla = random_solver_instance(1000 + seed)
    inp = SolveInput(p, w, rate, sla, SMALL_BATCHES, 8)
    fixed = {s.id: heaviest_variant(s) for s in p.stages}
    assert solve_fixed_variants(inp, fixed).configuration == brute_force(
        p, w, rate, sla, SMALL_BATCHES, 8, fixed_variants=fixed
    )[1]
    n = {s.id: 3 for s in p.stages}
    assert solve_fixed_replicas(inp, n).configuration == brute_force(p, w, rate, sla, SMALL_BATCHES, 8, fixed_n=n)[1]


@pytest.mark.parametrize("seed", range(30))
def test_returned_replicas_are_minimal_and_feasible(seed):
    p, w, rate, sla = random_solver_instance(2000 + seed)
    out = solve(SolveInput(p, w, rate, sla, SMALL_BATCHES, 8))
    if not out.feasible:
        return
    assert feasible(p, out.configuration, rate, sla)[0]
    for stage, sc in zip(p.stages, out.configuration):
        assert sc.replicas == min_replicas(stage.variant(sc.variant_id), sc.batch, rate)


def test_deterministic(video):
    inp = SolveInput(video, ObjectiveWeights(), 17.0)
    a, b = solve(inp), solve(inp)
    assert (a.configuration, a.objective, a.nodes_explored) == (b.configuration, b.objective, b.nodes_explored)


@pytest.mark.parametrize("rate", [4.0, 10.0, 20.0])
def test_accuracy_monotone_in_alpha(two_stage, rate):
    prev = -1.0
    for alpha in (0.01, 0.03, 0.1, 0.3, 1.0, 3.0):
        w = ObjectiveWeights(alpha, 0.02, 0.001)
        out = solve(SolveInput(two_stage, w, rate))
        assert out.configuration == brute_force(two_stage, w, rate, two_stage.pipeline_sla, (1, 2, 4, 8), 32)[1]
        acc = pipeline_accuracy(two_stage, out.configuration)
        assert acc >= prev
        prev = acc
