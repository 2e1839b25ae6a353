import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agentloop.grammar import Kind, Segment, Termination, Trajectory, parse_turn, render_turn
from agentloop.rewards import (
    AnswerKey,
    TokenFrequencyEmbedding,
    accuracy_reward,
    exact_match,
    f1_score,
    format_reward,
    normalize_text,
    search_similarity,
    total_reward,
)

EMB = TokenFrequencyEmbedding()


def turn(*pairs):
    return parse_turn(render_turn([Segment(k, b) for k, b in pairs]))


def answer_traj(answer: str) -> Trajectory:
    return Trajectory([turn((Kind.THINK, "t"), (Kind.ANSWER, answer))], Termination.ANSWER)


class TestNormalize:
    def test_article_and_punctuation(self):
        assert normalize_text("The Eiffel Tower!") == ["eiffel", "tower"]

    def test_empty(self):
        assert normalize_text("") == []

    def test_articles_collapse_whitespace(self):
        assert normalize_text("A  dog,  a cat") == ["dog", "cat"]

    def test_an_removed(self):
        assert normalize_text("an answer") == ["answer"]


class TestF1:
    def test_identity(self):
        assert f1_score("Paris", ["Paris"]) == 1.0

    def test_partial_overlap_exact_two_thirds(self):
        assert f1_score("Paris, France", ["Paris"]) == 2 / 3

    def test_disjoint(self):
        assert f1_score("London", ["Paris"]) == 0.0

    def test_best_gold_wins(self):
        assert f1_score("Paris", ["London", "Paris"]) == 1.0

    def test_both_empty_after_normalization(self):
        assert f1_score("the", ["a"]) == 1.0

    def test_one_empty(self):
        assert f1_score("", ["x"]) == 0.0
        assert f1_score("x", ["the"]) == 0.0

    def test_requires_golds(self):
        with pytest.raises(ValueError):
            f1_score("x", [])

    @settings(max_examples=200)
    @given(st.text(max_size=30))
    def test_self_match_is_one(self, text):
        assert f1_score(text, [text]) == 1.0

    @settings(max_examples=200)
    @given(st.text(max_size=30), st.text(max_size=30))
    def test_bounded_and_symmetric(self, a, b):
        ab = f1_score(a, [b])
        assert 0.0 <= ab <= 1.0
        assert ab == pytest.approx(f1_score(b, [a]))

    @settings(max_examples=100)
    @given(st.lists(st.sampled_from(["dog", "cat", "sun", "sky"]), max_size=5))
    def test_normalization_invariance(self, words):
        plain = " ".join(words)
        noisy = " the ".join([""] + words) + "!!"
        assert f1_score(noisy, ["dog cat"]) == f1_score(plain, ["dog cat"])
        assert exact_match(noisy, ["dog cat"]) == exact_match(plain, ["dog cat"])


class TestExactMatch:
    def test_article_insensitive(self):
        assert exact_match("the Eiffel Tower", ["Eiffel Tower"]) == 1

    def test_subset_is_not_match(self):
        assert exact_match("Eiffel", ["Eiffel Tower"]) == 0

    def test_empty_pred(self):
        assert exact_match("", ["x"]) == 0

    @settings(max_examples=200)
    @given(st.text(max_size=30), st.text(max_size=30))
    def test_em_implies_perfect_f1(self, a, b):
        if exact_match(a, [b]):
            assert f1_score(a, [b]) == 1.0


class TestFormatReward:
    def test_valid_search_trajectory(self):
        traj = Trajectory(
            [turn((Kind.THINK, "a"), (Kind.SEARCH, "q")), turn((Kind.THINK, "b"), (Kind.ANSWER, "x"))],
            Termination.ANSWER,
        )
        assert format_reward(traj) == 1

    def test_stray_text_scores_zero(self):
        traj = Trajectory(
            [parse_turn("oops <think>a</think><answer>x</answer>")], Termination.ANSWER
        )
        assert format_reward(traj) == 0

    def test_budget_terminated_scores_zero(self):
        traj = Trajectory([turn((Kind.THINK, "a"), (Kind.SEARCH, "q"))], Termination.BUDGET)
        assert format_reward(traj) == 0

    def test_empty_trajectory_scores_zero(self):
        assert format_reward(Trajectory([], Termination.ANSWER)) == 0


class TestSearchSimilarity:
    def test_identical_lists(self):
        assert search_similarity(["capital of France"], ["capital of France"], EMB) == 1.0

    def test_hand_tf_cosine(self):
        # {capital, france} vs {capital, of, germany}: one shared token,
        # norms sqrt(2) and sqrt(3).
        value = search_similarity(["capital France"], ["capital of Germany"], EMB)
        assert value == pytest.approx(1 / math.sqrt(6))

    def test_two_token_vectors(self):
        value = search_similarity(["capital france"], ["capital germany"], EMB)
        assert value == pytest.approx(0.5)

    def test_orthogonal(self):
        assert search_similarity(["red sun"], ["blue moon"], EMB) == 0.0

    def test_empty_is_zero_and_flagged(self):
        flags = []
        assert search_similarity([], ["x"], EMB, flags) == 0.0
        assert flags == ["search_similarity:empty_input"]

    def test_permutation_invariance(self):
        qs = ["alpha beta", "gamma delta", "epsilon"]
        rs = ["beta alpha", "delta", "zeta epsilon"]
        base = search_similarity(qs, rs, EMB)
        assert search_similarity(list(reversed(qs)), rs, EMB) == pytest.approx(base)
        assert search_similarity(qs, list(reversed(rs)), EMB) == pytest.approx(base)

    def test_fallback_on_transport_failure(self):
        class Broken:
            def embed(self, texts):
                raise OSError("connection refused")

        flags = []
        value = search_similarity(["x y"], ["x y"], Broken(), flags)
        assert value == 1.0
        assert flags == ["search_similarity:embedding_fallback"]


class TestAccuracyReward:
    def test_code_plus_correct_answer(self):
        traj = Trajectory(
            [turn((Kind.THINK, "a"), (Kind.CODE, "rotate 90\nsave out")),
             turn((Kind.THINK, "b"), (Kind.ANSWER, "gold"))],
            Termination.ANSWER,
        )
        per_segment = []
        value = accuracy_reward(traj, AnswerKey(["gold"]), EMB, per_segment=per_segment)
        assert value == 2.0
        assert (1, 1.0) in per_segment  # code segment
        assert (3, 1.0) in per_segment  # answer segment

    def test_wrong_answer_only(self):
        assert accuracy_reward(answer_traj("london"), AnswerKey(["paris"]), EMB) == 0.0

    def test_two_exact_search_matches(self):
        traj = Trajectory(
            [turn((Kind.THINK, "a"), (Kind.SEARCH, "first query")),
             turn((Kind.THINK, "b"), (Kind.SEARCH, "second query")),
             turn((Kind.THINK, "c"), (Kind.ANSWER, "gold"))],
            Termination.ANSWER,
        )
        key = AnswerKey(["gold"], ["first query", "second query"])
        assert accuracy_reward(traj, key, EMB) == pytest.approx(2.0)

    def test_searches_without_refs_flagged_zero(self):
        traj = Trajectory([turn((Kind.THINK, "a"), (Kind.SEARCH, "q"))], Termination.BUDGET)
        flags = []
        assert accuracy_reward(traj, AnswerKey(["gold"]), EMB, flags=flags) == 0.0
        assert flags == ["search_similarity:no_reference_queries"]


class TestTotalReward:
    def test_perfect_search_trajectory_totals_three(self):
        traj = Trajectory(
            [turn((Kind.THINK, "a"), (Kind.SEARCH, "who built x")),
             turn((Kind.THINK, "b"), (Kind.ANSWER, "alice"))],
            Termination.ANSWER,
        )
        breakdown = total_reward(traj, AnswerKey(["alice"], ["who built x"]), EMB)
        assert breakdown.format == 1
        assert breakdown.accuracy == pytest.approx(2.0)
        assert breakdown.total == breakdown.format + breakdown.accuracy
        assert breakdown.total == pytest.approx(3.0)

    def test_malformed_with_parsed_answer_still_scores_accuracy(self):
        traj = Trajectory(
            [parse_turn("stray <think>a</think><answer>gold</answer>")],
            Termination.ANSWER,
        )
        breakdown = total_reward(traj, AnswerKey(["gold"]), EMB)
        assert breakdown.format == 0
        assert breakdown.accuracy == 1.0
        assert breakdown.total == 1.0

    def test_empty_trajectory_total_zero(self):
        breakdown = total_reward(Trajectory([], Termination.BUDGET), AnswerKey(["x"]), EMB)
        assert breakdown.total == 0.0

    def test_additivity_exact(self):
        traj = Trajectory(
            [turn((Kind.THINK, "a"), (Kind.SEARCH, "partial words here")),
             turn((Kind.THINK, "b"), (Kind.ANSWER, "some answer words"))],
            Termination.ANSWER,
        )
        key = AnswerKey(["answer words exactly"], ["partial overlap query"])
        breakdown = total_reward(traj, key, EMB)
        assert breakdown.total == breakdown.format + breakdown.accuracy
