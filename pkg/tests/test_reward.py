"""Reward component tests against the documented shaping rules."""

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tandem import (
    RewardConfig,
    accuracy_reward,
    coverage_reward,
    format_reward,
    offload_coverage,
    tag_count_reward,
    total_reward,
)

# A completion whose offload coverage is exactly 0.4: four of ten words inside.
PERFECT = (
    "<think>one two three <bigmodel>alpha beta gamma delta</bigmodel>"
    " four five six</think><answer>42</answer>"
)


def closed_form_coverage(c: float, peak: float = 0.4) -> float:
    if c <= peak:
        return c / peak
    return 1.0 - 2.0 * (c - peak) / (1.0 - peak)


class TestAccuracy:
    def test_exact_match(self):
        assert accuracy_reward("<answer>42</answer>", "42") == 1.0

    def test_whitespace_normalized(self):
        assert accuracy_reward("<answer> 42 </answer>", "42") == 1.0
        assert accuracy_reward("<answer>1  2</answer>", "1 2") == 1.0

    def test_missing_answer_block_is_zero(self):
        assert accuracy_reward("no scaffolding at all", "42") == 0.0

    def test_mismatch_is_zero(self):
        assert accuracy_reward("<answer>41</answer>", "42") == 0.0

    def test_boxed_fallback(self):
        assert accuracy_reward("reasoning... \\boxed{42}", "42") == 1.0
        assert accuracy_reward("<answer>\\boxed{42}</answer>", "42") == 1.0


class TestFormat:
    def test_full_scaffold_balanced_tags(self):
        assert format_reward("<think>a<bigmodel>b</bigmodel>c</think><answer>x</answer>") == 2.0

    def test_scaffold_with_unclosed_offload(self):
        assert format_reward("<think>a<bigmodel>b</think><answer>x</answer>") == 1.0

    def test_missing_think_close_tags_judged_independently(self):
        # Broken scaffold, well-formed offload tags: only the nesting point.
        assert format_reward("<think>a<bigmodel>b</bigmodel>") == 1.0

    def test_scaffold_only_gets_vacuous_balance_point(self):
        assert format_reward("<think>a</think><answer>x</answer>") == 2.0

    def test_empty_completion_is_zero(self):
        assert format_reward("") == 0.0

    def test_bare_text_is_zero(self):
        assert format_reward("just words, no structure") == 0.0

    def test_nested_tags_lose_the_point(self):
        text = "<think><bigmodel>a<bigmodel>b</bigmodel></bigmodel></think><answer>x</answer>"
        assert format_reward(text) == 1.0


class TestCoverageReward:
    def test_endpoints(self):
        assert coverage_reward(0.0) == 0.0
        assert coverage_reward(0.4) == 1.0
        assert coverage_reward(1.0) == -1.0

    def test_interpolation_points(self):
        assert coverage_reward(0.2) == pytest.approx(0.5, abs=1e-12)
        assert coverage_reward(0.7) == pytest.approx(0.0, abs=1e-12)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="coverage"):
            coverage_reward(1.5)
        with pytest.raises(ValueError, match="coverage"):
            coverage_reward(-0.1)

    def test_continuous_and_peaked(self):
        eps = 1e-9
        assert coverage_reward(0.4 - eps) == pytest.approx(1.0, abs=1e-6)
        assert coverage_reward(0.4 + eps) == pytest.approx(1.0, abs=1e-6)
        for c in [i / 50 for i in range(51)]:
            assert coverage_reward(c) <= 1.0

    def test_nonnegative_below_peak_decreasing_above(self):
        grid = [i / 100 for i in range(101)]
        for c in grid:
            if c <= 0.4:
                assert coverage_reward(c) >= 0.0
        above = [coverage_reward(c) for c in grid if c >= 0.4]
        assert all(a > b for a, b in zip(above, above[1:]))


class TestOffloadCoverage:
    def test_matches_span_coverage_when_well_formed(self):
        assert offload_coverage(PERFECT) == pytest.approx(0.4)

    def test_empty_text(self):
        assert offload_coverage("") == 0.0

    def test_malformed_pairs_greedily(self):
        # Unclosed trailing open is ignored; the first pair still counts.
        text = "<bigmodel>a b</bigmodel> c d <bigmodel>e"
        assert offload_coverage(text) == pytest.approx(2 / 5)


class TestTagCount:
    def test_all_tags_present_peak_coverage(self):
        assert tag_count_reward(PERFECT) == pytest.approx(2.0)

    def test_think_only_half_credit(self):
        assert tag_count_reward("<think>a b</think>") == pytest.approx(0.5)

    def test_mismatch_penalty_applied_once(self):
        text = "<bigmodel>a<bigmodel>b</bigmodel>"  # two opens, one close
        config = RewardConfig()
        base = tag_count_reward(text, config)
        cov = coverage_reward(offload_coverage(text), config.coverage_peak)
        assert base == pytest.approx(0.0 + cov - 1.0)

    def test_monotone_mismatch_property(self):
        rng = random.Random(7)
        words = ["alpha", "beta", "<think>", "</think>", "gamma"]
        for _ in range(50):
            text = " ".join(rng.choice(words) for _ in range(rng.randint(0, 12)))
            with_extra = text + " <bigmodel>"
            assert tag_count_reward(with_extra) <= tag_count_reward(text) + 1e-12


class TestTotal:
    def test_perfect_completion_scores_five(self):
        breakdown = total_reward(PERFECT, "42")
        assert breakdown.accuracy == 1.0
        assert breakdown.format == 2.0
        assert breakdown.tag_count == pytest.approx(2.0)
        assert breakdown.coverage_term == pytest.approx(1.0)
        assert breakdown.total == pytest.approx(5.0)

    def test_empty_completion_scores_zero(self):
        breakdown = total_reward("", "42")
        assert breakdown.total == 0.0
        assert breakdown.accuracy == breakdown.format == breakdown.tag_count == 0.0

    def test_correct_answer_no_structure(self):
        breakdown = total_reward("the answer is \\boxed{42}", "42")
        assert breakdown.accuracy == 1.0
        assert breakdown.format == 0.0

    def test_scaffold_without_offload_tags(self):
        breakdown = total_reward("<think>easy</think><answer>42</answer>", "42")
        assert breakdown.accuracy == 1.0
        assert breakdown.format == 2.0  # vacuous balance with scaffold present
        assert breakdown.coverage_term == 0.0

    def test_weights_applied(self):
        config = RewardConfig(weights=(2.0, 0.5, 1.0))
        breakdown = total_reward(PERFECT, "42", config)
        assert breakdown.total == pytest.approx(2.0 * 1 + 0.5 * 2 + 1.0 * breakdown.tag_count)

    def test_purity(self):
        a = total_reward(PERFECT, "42")
        b = total_reward(PERFECT, "42")
        assert a == b


class TestConfigValidation:
    def test_peak_bounds(self):
        with pytest.raises(ValueError):
            RewardConfig(coverage_peak=0.0)
        with pytest.raises(ValueError):
            RewardConfig(coverage_peak=1.0)

    def test_weights_not_all_zero(self):
        with pytest.raises(ValueError):
            RewardConfig(weights=(0.0, 0.0, 0.0))

    def test_default_essential_tags(self):
        config = RewardConfig()
        assert set(config.essential_tags) == {"<think>", "</think>", "<answer>", "</answer>"}


@settings(max_examples=150, deadline=None)
@given(st.text(alphabet="ab <think></think><answer></answer><bigmodel></bigmodel>", max_size=120))
def test_total_bounds_property(completion):
    """With unit weights, total lies in [-(1 + mismatch_penalty), 5]."""
    breakdown = total_reward(completion, "42")
    assert -(1.0 + 1.0) - 1e-9 <= breakdown.total <= 5.0 + 1e-9
    assert breakdown.accuracy in (0.0, 1.0)
    assert 0.0 <= breakdown.format <= 2.0
    assert -1.0 - 1e-9 <= breakdown.coverage_term <= 1.0 + 1e-9
    assert math.isfinite(breakdown.total)
