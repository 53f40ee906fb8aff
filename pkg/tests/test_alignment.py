import doctest
import math

import numpy as np
import pytest
import sklearn.base

import wordalign.alignment
from wordalign.alignment import (
    POSTERIOR_SPARSIFY_THRESHOLD,
    StateSpace,
    TranscriptAligner,
    align_page,
    build_state_space,
    emission_from_cosine,
    emission_likelihood,
    forward_backward,
    harvest_weak_labels,
    log_emission_from_cosine,
    sequence_log_likelihood,
    transition_likelihood,
    transition_log_matrices,
    transition_penalty,
    transition_rule,
    viterbi,
)
from wordalign.embedding import dctow
from wordalign.errors import (
    EmptyStateSpaceError,
    InputValidationError,
)
from wordalign.geometry import BBox
from wordalign.pages import Transcript
from wordalign.params import AlignmentParams
from wordalign.synth import (
    SynthConfig,
    brute_force_posteriors,
    brute_force_viterbi,
    generate_page,
)

from helpers import random_boxes, random_instance


def test_module_worked_examples_are_doctests():
    results = doctest.testmod(wordalign.alignment)
    assert results.attempted >= 6
    assert results.failed == 0


# -- emission ---------------------------------------------------------------

def test_emission_hand_values():
    assert emission_from_cosine(1.0) == 1.0
    assert abs(emission_from_cosine(0.8) - math.exp(-2.16)) <= 1e-12
    assert emission_from_cosine(0.0) == pytest.approx(math.exp(-54.0), rel=1e-12)


def test_emission_monotone_in_squared_deviation():
    grid = np.linspace(-1.0, 1.0, 1_000)
    dev2 = (1.0 - grid) ** 2
    theta = np.exp(log_emission_from_cosine(grid))
    order = np.argsort(dev2, kind="stable")
    sorted_theta = theta[order]
    sorted_dev2 = dev2[order]
    assert np.all(np.diff(sorted_theta) <= 0.0)
    strict = np.diff(sorted_dev2) > 0.0
    assert np.all(np.diff(sorted_theta)[strict] < 0.0)
    assert np.all(theta > 0.0) and np.all(theta <= 1.0)


def test_emission_sign_flag():
    assert emission_from_cosine(0.8, "pos") == pytest.approx(math.exp(2.16), rel=1e-12)
    assert emission_from_cosine(1.0, "pos") == 1.0
    with pytest.raises(InputValidationError):
        emission_from_cosine(0.5, "sideways")


def test_emission_likelihood_from_embeddings():
    x = dctow("river")
    assert emission_likelihood(x, x) == 1.0
    y = dctow("bread")
    assert 0.0 < emission_likelihood(x, y) < 1.0


# -- transitions -------------------------------------------------------------

def test_transition_rule_hand_cases():
    i = BBox(10, 100, 50, 120)
    assert transition_rule(i, BBox(55, 102, 90, 122), False, 0.01) == 1.0
    assert transition_rule(i, BBox(0, 102, 8, 122), False, 0.01) == 0.01
    assert transition_rule(i, BBox(12, 125, 40, 145), True, 0.01) == 1.0


def test_transition_rule_window_is_strict():
    i = BBox(0, 100, 50, 120)  # height 20
    at_edge = BBox(60, 120, 100, 140)  # t_j = t_i + h exactly
    assert transition_rule(i, at_edge, False, 0.01) == 0.01
    inside = BBox(60, 119, 100, 139)
    assert transition_rule(i, inside, False, 0.01) == 1.0
    # line break only needs the follower's bottom below the leader's top
    assert transition_rule(i, BBox(60, 90, 100, 99), True, 0.01) == 0.01
    assert transition_rule(i, BBox(60, 90, 100, 101), True, 0.01) == 1.0


def test_transition_penalty_hand_cases():
    i = BBox(0, 0, 10, 5)
    assert transition_penalty(i, i, False, 0.01) == 0.01
    assert transition_penalty(i, BBox(10, 0, 20, 5), False, 0.01) == 1.0
    assert transition_penalty(i, BBox(30, 0, 40, 5), False, 0.01) == 0.505
    # line break skips the jump factor entirely
    assert transition_penalty(i, BBox(30, 0, 40, 5), True, 0.01) == 1.0
    assert transition_penalty(i, i, True, 0.01) == 0.01


def test_transition_likelihood_products():
    i = BBox(0, 0, 10, 5)
    touching = BBox(10, 0, 20, 5)
    assert transition_likelihood(i, touching, False, 0.01) == 1.0
    # self transition passes the rule but pays the full-overlap penalty
    assert transition_likelihood(i, i, False, 0.01) == 0.01
    # a fully overlapping pair always satisfies both rule variants, so
    # the likelihood decomposes as rule * penalty with rule = 1
    assert transition_rule(i, i, False, 0.01) == 1.0
    assert transition_rule(i, i, True, 0.01) == 1.0
    rng = np.random.default_rng(23)
    for row_i, row_j in zip(random_boxes(rng, 25), random_boxes(rng, 25)):
        a, b = BBox.from_list(row_i), BBox.from_list(row_j)
        for flag in (False, True):
            assert transition_likelihood(a, b, flag, 0.01) == transition_rule(
                a, b, flag, 0.01
            ) * transition_penalty(a, b, flag, 0.01)


def test_transition_matrices_match_scalar():
    rng = np.random.default_rng(31)
    boxes = random_boxes(rng, 12)
    log_same, log_break = transition_log_matrices(boxes, 0.01)
    for i in range(12):
        for j in range(12):
            a, b = BBox.from_list(boxes[i]), BBox.from_list(boxes[j])
            assert np.isclose(
                log_same[i, j],
                math.log(transition_likelihood(a, b, False, 0.01)),
                rtol=1e-12, atol=1e-12,
            )
            assert np.isclose(
                log_break[i, j],
                math.log(transition_likelihood(a, b, True, 0.01)),
                rtol=1e-12, atol=1e-12,
            )
    with pytest.raises(InputValidationError):
        transition_log_matrices(boxes, 0.0)


# -- forward-backward and viterbi vs brute force --------------------------------

def test_forward_backward_matches_brute_force():
    rng = np.random.default_rng(101)
    for _ in range(25):
        states, transcript = random_instance(rng)
        expected = brute_force_posteriors(states, transcript)
        actual = forward_backward(states, transcript)
        np.testing.assert_allclose(actual, expected, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(actual.sum(axis=1), 1.0, rtol=0, atol=1e-12)


def test_brute_force_rows_sum_to_one():
    rng = np.random.default_rng(59)
    for _ in range(5):
        states, transcript = random_instance(rng)
        post = brute_force_posteriors(states, transcript)
        np.testing.assert_allclose(post.sum(axis=1), 1.0, rtol=0, atol=1e-12)


def test_viterbi_matches_brute_force_paths_and_likelihood():
    rng = np.random.default_rng(202)
    for _ in range(25):
        states, transcript = random_instance(rng)
        fast = viterbi(states, transcript)
        slow = brute_force_viterbi(states, transcript)
        assert np.array_equal(fast, slow)
        lv = sequence_log_likelihood(states, transcript, None, fast)
        lb = sequence_log_likelihood(states, transcript, None, slow)
        assert abs(math.expm1(lv - lb)) <= 1e-9


def test_viterbi_beats_random_paths():
    rng = np.random.default_rng(303)
    states, transcript = random_instance(rng, n_states=5, n_words=4)
    best = sequence_log_likelihood(
        states, transcript, None, viterbi(states, transcript)
    )
    k = len(transcript)
    for _ in range(1_000):
        path = rng.integers(0, len(states), size=k)
        assert sequence_log_likelihood(states, transcript, None, path) <= best + 1e-12


def test_viterbi_all_equal_ties_to_lowest_indices():
    # identical boxes and flat emissions: every path has the same joint
    states = StateSpace(
        proposal_indices=np.arange(3),
        boxes=np.array([[0.0, 0.0, 10.0, 5.0]] * 3),
        words=["aa"],
        log_emission=np.zeros((1, 3)),
    )
    transcript = Transcript(page_id="rand", lines=[["aa", "aa", "aa"]])
    path = viterbi(states, transcript)
    assert np.array_equal(path, brute_force_viterbi(states, transcript))
    assert np.array_equal(path, np.zeros(3, dtype=np.intp))


def test_single_position_posterior_is_normalized_emission():
    rng = np.random.default_rng(404)
    states = StateSpace(
        proposal_indices=np.arange(4),
        boxes=random_boxes(rng, 4),
        words=["aa", "bb"],
        log_emission=rng.uniform(-6.0, 0.0, size=(2, 4)),
    )
    transcript = Transcript(page_id="rand", lines=[["aa"]])
    post = forward_backward(states, transcript)
    row = np.exp(states.log_emission[states.word_index["aa"]])
    np.testing.assert_allclose(post[0], row / row.sum(), rtol=1e-12, atol=1e-15)
    path = viterbi(states, transcript)
    assert path[0] == int(np.argmax(states.log_emission[states.word_index["aa"]]))


def test_uniform_chain_gives_uniform_posteriors():
    n = 4
    states = StateSpace(
        proposal_indices=np.arange(n),
        boxes=np.array([[0.0, 0.0, 10.0, 5.0]] * n),
        words=["aa", "bb"],
        log_emission=np.full((2, n), -1.5),
    )
    transcript = Transcript(page_id="rand", lines=[["aa", "bb"], ["aa"]])
    post = forward_backward(states, transcript)
    np.testing.assert_allclose(post, 1.0 / n, rtol=0, atol=1e-12)


def test_one_hot_emissions_recover_planted_path():
    rng = np.random.default_rng(505)
    n, k = 6, 4
    boxes = random_boxes(rng, n)
    planted = rng.integers(0, n, size=k)
    words = [f"w{idx}" for idx in range(k)]
    log_emission = np.full((k, n), -60.0)
    for position, state in enumerate(planted):
        log_emission[position, state] = 0.0
    states = StateSpace(
        proposal_indices=np.arange(n),
        boxes=boxes,
        words=[w.replace("w", "word") for w in words],
        log_emission=log_emission,
    )
    transcript = Transcript(
        page_id="rand", lines=[[w.replace("w", "word") for w in words]]
    )
    assert np.array_equal(viterbi(states, transcript), planted)


def test_per_position_scaling_leaves_results_unchanged():
    rng = np.random.default_rng(606)
    n = 5
    words = ["aa", "bb", "cc"]
    states = StateSpace(
        proposal_indices=np.arange(n),
        boxes=random_boxes(rng, n),
        words=words,
        log_emission=rng.uniform(-6.0, 0.0, size=(3, n)),
    )
    transcript = Transcript(page_id="rand", lines=[["aa", "bb"], ["cc"]])
    base_post = forward_backward(states, transcript)
    base_path = viterbi(states, transcript)
    scaled = StateSpace(
        proposal_indices=states.proposal_indices,
        boxes=states.boxes,
        words=words,
        log_emission=states.log_emission + np.array([[0.0], [-3.25], [1.5]]),
    )
    np.testing.assert_allclose(
        forward_backward(scaled, transcript), base_post, rtol=1e-12, atol=1e-15
    )
    assert np.array_equal(viterbi(scaled, transcript), base_path)


def test_transcript_longer_than_distinct_boxes():
    states = StateSpace(
        proposal_indices=np.array([0]),
        boxes=np.array([[0.0, 0.0, 10.0, 5.0]]),
        words=["aa", "bb", "cc"],
        log_emission=np.array([[-0.5], [-1.0], [-2.0]]),
    )
    transcript = Transcript(page_id="rand", lines=[["aa", "bb", "cc"]])
    post = forward_backward(states, transcript)
    np.testing.assert_allclose(post, 1.0, rtol=0, atol=0)
    assert np.array_equal(viterbi(states, transcript), np.zeros(3, dtype=np.intp))


def test_emission_scale_invariance_of_posteriors():
    # scaling one word's emission row is scaling every position it
    # occupies; posteriors and the decoded path must not move
    rng = np.random.default_rng(707)
    states, transcript = random_instance(rng, n_states=5, n_words=4)
    scaled = StateSpace(
        proposal_indices=states.proposal_indices,
        boxes=states.boxes,
        words=states.words,
        log_emission=states.log_emission + 2.5,
    )
    np.testing.assert_allclose(
        forward_backward(scaled, transcript),
        forward_backward(states, transcript),
        rtol=1e-12, atol=1e-15,
    )
    assert np.array_equal(viterbi(scaled, transcript), viterbi(states, transcript))


# -- state space ----------------------------------------------------------------

def test_state_space_validation():
    with pytest.raises(EmptyStateSpaceError):
        StateSpace(
            proposal_indices=np.zeros(0, dtype=np.intp),
            boxes=np.zeros((0, 4)),
            words=["aa"],
            log_emission=np.zeros((1, 0)),
        )
    with pytest.raises(InputValidationError):
        StateSpace(
            proposal_indices=np.arange(2),
            boxes=np.zeros((3, 4)),
            words=["aa"],
            log_emission=np.zeros((1, 2)),
        )


def test_build_state_space_without_truncation_keeps_all_survivors():
    page = generate_page(SynthConfig(seed=5, page_id="s", lines=2,
                                     words_per_line=(3, 4), decoy_ratio=1.0))
    params = AlignmentParams(top_k=10_000, nms_overlap=1.0, score_threshold=0.0)
    states = build_state_space(page.proposals, page.transcript, params)
    assert len(states) == len(page.proposals)
    assert np.array_equal(states.proposal_indices, np.arange(len(page.proposals)))


def test_build_state_space_deduplicates_and_orders():
    page = generate_page(SynthConfig(seed=6, page_id="s", lines=2,
                                     words_per_line=(4, 5)))
    states = build_state_space(page.proposals, page.transcript, AlignmentParams(top_k=3))
    idx = states.proposal_indices
    assert len(np.unique(idx)) == len(idx)
    assert np.all(np.diff(idx) > 0)
    tokens = [t.lower() for t in page.transcript.tokens]
    assert states.words == list(dict.fromkeys(tokens))
    assert states.log_emission.shape == (len(states.words), len(states))


def test_build_state_space_covers_planted_boxes():
    # ten distinct words, ten planted boxes, ten-fold decoys: the top-5
    # per word must still include every planted box at default noise
    page = None
    for seed in range(50):
        config = SynthConfig(seed=seed, page_id="s", lines=2,
                             words_per_line=(5, 5), decoy_ratio=10.0)
        candidate = generate_page(config)
        if len(set(candidate.transcript.tokens)) == 10:
            page = candidate
            break
    assert page is not None, "no seed below 50 draws ten distinct words"
    states = build_state_space(page.proposals, page.transcript, AlignmentParams(top_k=5))
    assert len(states) <= 50
    assert set(page.true_proposal_indices).issubset(set(states.proposal_indices))


def test_build_state_space_empty_after_filtering():
    page = generate_page(SynthConfig(seed=7, page_id="s", lines=1,
                                     words_per_line=(3, 3), decoy_ratio=0.0))
    with pytest.raises(EmptyStateSpaceError):
        build_state_space(
            page.proposals, page.transcript, AlignmentParams(score_threshold=2.0)
        )


def test_repeated_words_share_emission_rows():
    transcript = Transcript(page_id="s", lines=[["the", "cat", "the"]])
    page = generate_page(SynthConfig(seed=8, page_id="s", lines=1,
                                     words_per_line=(3, 3)))
    states = build_state_space(page.proposals, transcript, AlignmentParams())
    assert states.words == ["the", "cat"]
    assert states.log_emission.shape[0] == 2


# -- harvest ----------------------------------------------------------------------

def _two_state_space():
    return StateSpace(
        proposal_indices=np.array([3, 7]),
        boxes=np.array([[0.0, 0.0, 10.0, 5.0], [20.0, 0.0, 30.0, 5.0]]),
        words=["aa", "bb"],
        log_emission=np.zeros((2, 2)),
    )


def test_harvest_hard_mode():
    states = _two_state_space()
    transcript = Transcript(page_id="rand", lines=[["aa", "bb"]])
    posteriors = np.array([[0.9, 0.1], [0.4, 0.6]])
    got = harvest_weak_labels(posteriors, states, transcript, tau=0.5, mode="hard")
    assert len(got) == 2
    assert got[0].box == states.box(0) and got[0].label == "aa" and got[0].confidence == 0.9
    assert got[1].box == states.box(1) and got[1].confidence == 0.6
    none_pass = harvest_weak_labels(
        np.array([[0.45, 0.55]]), states,
        Transcript(page_id="rand", lines=[["aa"]]), tau=0.6, mode="hard",
    )
    assert none_pass == []


def test_harvest_soft_mode_and_boundaries():
    states = _two_state_space()
    transcript = Transcript(page_id="rand", lines=[["aa"]])
    got = harvest_weak_labels(
        np.array([[0.45, 0.35]]), states, transcript, tau=0.3, mode="soft"
    )
    assert len(got) == 2
    assert {a.confidence for a in got} == {0.45, 0.35}
    # the threshold is inclusive
    at_tau = harvest_weak_labels(
        np.array([[0.5, 0.5]]), states, transcript, tau=0.5, mode="hard"
    )
    assert len(at_tau) == 1 and at_tau[0].box == states.box(0)
    with pytest.raises(InputValidationError):
        harvest_weak_labels(np.zeros((1, 2)), states, transcript, tau=0.0)
    with pytest.raises(InputValidationError):
        harvest_weak_labels(np.zeros((1, 2)), states, transcript, tau=0.5, mode="maybe")
    with pytest.raises(InputValidationError):
        harvest_weak_labels(np.zeros((2, 2)), states, transcript, tau=0.5)


def test_harvest_hard_mode_emits_at_most_one_per_position():
    rng = np.random.default_rng(808)
    states, transcript = random_instance(rng, n_states=5, n_words=5)
    posteriors = forward_backward(states, transcript)
    got = harvest_weak_labels(posteriors, states, transcript, tau=0.5, mode="hard")
    assert len(got) <= len(transcript)


# -- align_page and estimator ------------------------------------------------------

def test_align_page_rejects_page_mismatch():
    page = generate_page(SynthConfig(seed=9, page_id="a", lines=1, words_per_line=(3, 3)))
    other = Transcript(page_id="b", lines=[["the"]])
    with pytest.raises(InputValidationError):
        align_page(page.proposals, other)


def test_align_page_output_structure():
    page = generate_page(SynthConfig(seed=10, page_id="s", lines=3, words_per_line=(4, 6)))
    result = align_page(page.proposals, page.transcript)
    k = len(page.transcript)
    assert len(result.positions) == k
    assert len(result.viterbi_pairs) == k
    for pos in result.positions:
        indices = [e.index for e in pos.posterior]
        assert indices == sorted(indices)
        assert all(e.p >= POSTERIOR_SPARSIFY_THRESHOLD for e in pos.posterior)
        assert sum(e.p for e in pos.posterior) <= 1.0 + 1e-9
        assert pos.viterbi_index in set(result.state_space.proposal_indices)
    for ann in result.weak_annotations:
        assert 0.0 < ann.confidence <= 1.0


def test_zero_noise_viterbi_recovers_planted_assignment():
    page = generate_page(SynthConfig(seed=11, page_id="s", noise_sigma=0.0,
                                     decoy_ratio=0.0, lines=3, words_per_line=(4, 6)))
    result = align_page(page.proposals, page.transcript)
    for k, pos in enumerate(result.positions):
        assert pos.viterbi_index == page.true_proposal_indices[k]


def test_transcript_aligner_estimator():
    aligner = TranscriptAligner(epsilon=0.02, top_k=7)
    params = aligner.get_params()
    assert params["epsilon"] == 0.02 and params["top_k"] == 7
    clone = sklearn.base.clone(aligner)
    assert clone.get_params() == params

    page = generate_page(SynthConfig(seed=12, page_id="s", lines=2, words_per_line=(3, 4)))
    fitted = aligner.fit([(page.proposals, page.transcript)])
    assert fitted is aligner
    result = aligner.align(page.proposals, page.transcript)
    direct = align_page(
        page.proposals, page.transcript,
        AlignmentParams(epsilon=0.02, top_k=7),
    )
    assert [p.viterbi_index for p in result.positions] == [
        p.viterbi_index for p in direct.positions
    ]
    predicted = aligner.predict([(page.proposals, page.transcript)])
    assert len(predicted) == 1 and len(predicted[0].positions) == len(page.transcript)

    bad = TranscriptAligner(epsilon=2.0)
    with pytest.raises(InputValidationError):
        bad.fit([])
