"""
Tests for the adaptive representation recommender.
Run with: pytest tests/test_acfloop.py -v
"""

import math

import pytest

from acflab.acfloop import (
    ArmSpec,
    ArmStats,
    Environment,
    Policy,
    environment_from_calibration,
    fit_predictor,
    loop_batch,
    new_state,
    observe,
    recommend,
    replay,
    run_loop,
)
from acflab.domain import ConditionCode, FacetLevel, RepKind, condition_of
from acflab.errors import InvalidInputError, InvalidParameterError
from acflab.stats import describe
from acflab.synthlab import STREAM_LOOP, TABLE5_1D, RngStream, make_rng

HIGH, LOW = FacetLevel.HIGH, FacetLevel.LOW
DET, PROB = RepKind.DETERMINISTIC, RepKind.PROBABILISTIC


def make_env(means, sd=0.0, name="fixed"):
    return Environment(
        name=name,
        arms={ConditionCode(f"C{i + 1}"): ArmSpec(mean=m, sd=sd) for i, m in enumerate(means)},
    )


@pytest.fixture(scope="module")
def long_run():
    return run_loop(environment_from_calibration(TABLE5_1D), Policy.OPTIMISM, T=10_000, seed=2024)


class TestArmStats:
    """Test streaming arm statistics."""

    def test_welford(self):
        arm = ArmStats(facet=HIGH, rep=DET)
        for x in (1.0, 2.0, 3.0):
            arm.update(x)
        assert (arm.n, arm.mean, arm.m2) == (3, 2.0, 2.0)
        assert arm.sd == pytest.approx(1.0)

    def test_sd_needs_two(self):
        arm = ArmStats(facet=HIGH, rep=DET)
        arm.update(4.0)
        assert arm.sd is None


class TestRecommend:
    """Test cold start and policy choices."""

    def test_cold_start_order(self):
        state = new_state()
        assert recommend(state, HIGH) is DET
        observe(state, HIGH, DET, 1.0)
        assert recommend(state, HIGH) is PROB
        # the other facet is still cold
        assert recommend(state, LOW) is DET

    def test_greedy_follows_the_mean(self):
        state = new_state(Policy.GREEDY_MEAN)
        observe(state, HIGH, DET, 5.0)
        observe(state, HIGH, PROB, 3.0)
        assert recommend(state, HIGH) is DET
        observe(state, HIGH, PROB, 10.0)
        assert recommend(state, HIGH) is PROB

    def test_ties_go_to_deterministic(self):
        state = new_state(Policy.GREEDY_MEAN)
        observe(state, LOW, DET, 4.0)
        observe(state, LOW, PROB, 4.0)
        assert recommend(state, LOW) is DET

    def test_optimism_explores_the_less_played_arm(self):
        state = new_state(Policy.OPTIMISM, exploration_c=2.0)
        for x in (5.0, 6.0, 4.0, 5.5, 4.5, 5.0):
            observe(state, HIGH, DET, x)
        observe(state, HIGH, PROB, 4.9)
        assert recommend(state, HIGH) is PROB
        assert recommend(new_state(Policy.GREEDY_MEAN), HIGH) is DET

    def test_wide_arm_keeps_its_own_bonus(self):
        """A rarely played arm with a wide spread is not judged by the narrow arm beside it."""
        state = new_state(Policy.OPTIMISM, exploration_c=2.0)
        for x in (0.0, 10.0):
            observe(state, LOW, DET, x)
        for i in range(50):
            observe(state, LOW, PROB, 7.9 if i % 2 == 0 else 8.1)
        # the pooled sd alone (about 1.16) would leave Det at 8.25 against Prob at 8.65
        assert recommend(state, LOW) is DET

    def test_non_finite_performance(self):
        with pytest.raises(InvalidInputError):
            observe(new_state(), HIGH, DET, math.nan)


class TestReplay:
    """Test that arm state is a function of the history."""

    def test_replay_rebuilds_arms(self):
        state = new_state()
        for t, (facet, rep, x) in enumerate(
            [(HIGH, DET, 1.0), (LOW, PROB, 2.5), (HIGH, PROB, -3.0), (HIGH, DET, 4.0), (LOW, DET, 0.5)]
        ):
            observe(state, facet, rep, x)
            assert state.history[-1].t == t + 1
        rebuilt = replay(state.history)
        assert rebuilt.arms == state.arms
        assert rebuilt.history == state.history

    def test_fit_predictor_matches_describe(self):
        state = new_state()
        for facet, rep, x in [(HIGH, DET, 1.0), (HIGH, DET, 3.0), (LOW, PROB, 2.0), (LOW, DET, 7.0), (LOW, DET, 8.0)]:
            observe(state, facet, rep, x)
        predicted = fit_predictor(state.history)
        expected = describe(
            state.history,
            lambda o: condition_of(o.facet, o.rep).label,
            value=lambda o: o.performance,
            order=["HiEqv-Det", "LoEqv-Prob", "LoEqv-Det"],
        )
        assert predicted == expected
        assert predicted[0].mean == 2.0

    def test_fit_predictor_empty(self):
        with pytest.raises(InvalidInputError):
            fit_predictor([])


class TestRunLoop:
    """Test the simulated recommendation loop."""

    def test_deterministic_rewards_stop_regret(self):
        """Once each facet has tried both arms, greedy play never regrets again."""
        env = make_env([1.0, 3.0, 2.0, 5.0])
        trace = run_loop(env, Policy.GREEDY_MEAN, T=200, seed=1)
        seen = {HIGH: 0, LOW: 0}
        settled_at = None
        for s in trace.steps:
            seen[s.facet] += 1
            if settled_at is None and min(seen.values()) >= 2:
                settled_at = s.step
        assert trace.total_regret == trace.steps[settled_at - 1].cum_regret
        # one Det play under High (gap 2), one Prob play under Low (gap 3)
        assert trace.total_regret == 5.0

    def test_identical_arms_have_no_regret(self):
        trace = run_loop(make_env([3.0] * 4, sd=1.0), Policy.OPTIMISM, T=100, seed=3)
        assert trace.total_regret == 0.0

    def test_every_arm_keeps_being_tried(self, long_run):
        assert all(arm.n >= 25 for arm in long_run.arms)
        assert sum(arm.n for arm in long_run.arms) == 10_000

    def test_modal_choice_is_the_better_arm(self, long_run):
        assert long_run.modal_choices() == {HIGH.value: PROB.value, LOW.value: DET.value}
        assert long_run.frequency(HIGH).probabilistic > 0.9

    def test_modal_choice_across_seeds(self):
        env = environment_from_calibration(TABLE5_1D)
        traces = loop_batch(env, Policy.OPTIMISM, 4000, seeds=range(100))
        correct = sum(t.modal_choices() == {HIGH.value: PROB.value, LOW.value: DET.value} for t in traces)
        assert correct >= 95

    def test_regret_grows_sublinearly(self, long_run):
        half = long_run.steps[4_999].cum_regret
        assert long_run.total_regret < 1.6 * half

    def test_regret_doubling_ratio_across_seeds(self):
        env = environment_from_calibration(TABLE5_1D)
        traces = loop_batch(env, Policy.OPTIMISM, 8000, seeds=range(20))
        ratios = [t.total_regret / t.steps[3_999].cum_regret for t in traces]
        assert sum(ratios) / len(ratios) < 1.8

    def test_trace_frame(self):
        trace = run_loop(TABLE5_1D, Policy.OPTIMISM, T=8, seed=0)
        frame = trace.to_frame()
        assert len(frame) == 8
        assert list(frame.columns) == ["step", "facet", "choice", "reward", "cum_regret"]
        assert trace.environment == "table5_1d"

    def test_reproducible(self):
        env = environment_from_calibration(TABLE5_1D)
        assert run_loop(env, Policy.OPTIMISM, 50, seed=7) == run_loop(env, Policy.OPTIMISM, 50, seed=7)

    def test_batch_threads_match_serial(self):
        env = environment_from_calibration(TABLE5_1D)
        serial = loop_batch(env, Policy.GREEDY_MEAN, 40, seeds=[3, 1, 2])
        threaded = loop_batch(env, Policy.GREEDY_MEAN, 40, seeds=[1, 2, 3], workers=3)
        assert [t.seed for t in serial] == [1, 2, 3]
        assert serial == threaded

    def test_horizon_too_short(self):
        with pytest.raises(InvalidParameterError):
            run_loop(make_env([0.0] * 4), Policy.OPTIMISM, T=7, seed=0)


class TestLoopStream:
    """Test that a simulated run owns its random stream."""

    def test_state_holds_the_stream(self):
        stream = make_rng(11, STREAM_LOOP)
        state = new_state(rng=stream)
        assert state.rng is stream
        assert isinstance(state.rng, RngStream)
        assert "rng" not in state.model_dump()

    def test_external_state_has_no_stream(self):
        state = new_state()
        observe(state, HIGH, DET, 1.0)
        assert state.rng is None
        assert replay(state.history).rng is None

    def test_first_facet_comes_from_the_loop_stream(self):
        for seed in range(6):
            trace = run_loop(TABLE5_1D, Policy.OPTIMISM, T=8, seed=seed)
            u = make_rng(seed, STREAM_LOOP).uniform()
            assert trace.steps[0].facet is (HIGH if u < 0.5 else LOW)
