"""Cosine and interaction-score tests against an independent
double-loop oracle, plus the invariances the score must satisfy."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hciret.errors import UsageError
from hciret.hierarchy import MultiGranularityAudio, MultiGranularityText
from hciret.similarity import ScoreConfig, ci, cosine, eval_score, pairwise_ci_matrix
from hciret.tensor import Tensor


def ci_brute(a, b):
    """Independent double-loop evaluation of the symmetric max-mean
    score."""

    def cos(u, v):
        nu = max(np.linalg.norm(u), 1e-12)
        nv = max(np.linalg.norm(v), 1e-12)
        return float(u @ v) / (nu * nv)

    s = [[cos(a[m], b[n]) for n in range(b.shape[0])] for m in range(a.shape[0])]
    best_over_a = [max(s[m][n] for m in range(a.shape[0])) for n in range(b.shape[0])]
    best_over_b = [max(s[m][n] for n in range(b.shape[0])) for m in range(a.shape[0])]
    return (sum(best_over_a) / len(best_over_a) + sum(best_over_b) / len(best_over_b)) / 2.0


# -- cosine ------------------------------------------------------------------


def test_cosine_trivial_values():
    assert cosine(np.array([3.0, 4.0]), np.array([3.0, 4.0])).item() == pytest.approx(1.0)
    assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])).item() == 0.0
    assert cosine(np.array([1.0, 0.0]), np.array([1.0, 1.0])).item() == pytest.approx(1.0 / np.sqrt(2.0))


def test_cosine_zero_vector_yields_zero():
    assert cosine(np.zeros(3), np.array([1.0, 2.0, 3.0])).item() == 0.0
    assert cosine(np.zeros(3), np.zeros(3)).item() == 0.0


def test_cosine_size_mismatch():
    with pytest.raises(UsageError):
        cosine(np.zeros(3), np.zeros(4))


# -- ci ------------------------------------------------------------------------


def test_ci_single_rows_collapse_to_cosine():
    a = np.array([[1.0, 2.0, 0.5]])
    b = np.array([[-0.3, 1.0, 2.0]])
    assert ci(a, b).item() == pytest.approx(cosine(a[0], b[0]).item(), abs=1e-12)


def test_ci_hand_computed_case():
    # B -> A direction: max(1, 0) = 1, mean = 1
    # A -> B direction: maxes are 1 and 0, mean = 0.5; ci = 0.75
    a = np.array([[1.0, 0.0], [0.0, 1.0]])
    b = np.array([[1.0, 0.0]])
    assert ci(a, b).item() == pytest.approx(0.75, abs=1e-12)


def test_ci_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.uniform(-2, 2, size=(rng.integers(1, 9), 3))
        b = rng.uniform(-2, 2, size=(rng.integers(1, 9), 3))
        assert abs(ci(a, b).item() - ci_brute(a, b)) <= 1e-12


def test_ci_symmetry_is_exact():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a = rng.uniform(-2, 2, size=(4, 5))
        b = rng.uniform(-2, 2, size=(6, 5))
        assert ci(a, b).item() == ci(b, a).item()


def test_ci_permutation_invariance_is_exact():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a = rng.uniform(-2, 2, size=(5, 4))
        b = rng.uniform(-2, 2, size=(7, 4))
        pa = rng.permutation(a.shape[0])
        pb = rng.permutation(b.shape[0])
        assert ci(a, b).item() == ci(a[pa], b[pb]).item()


def test_ci_power_of_two_row_scaling_is_exact():
    rng = np.random.default_rng(3)
    a = rng.uniform(-2, 2, size=(4, 6))
    b = rng.uniform(-2, 2, size=(5, 6))
    scales_a = np.exp2(rng.integers(-3, 4, size=(4, 1)).astype(float))
    scales_b = np.exp2(rng.integers(-3, 4, size=(5, 1)).astype(float))
    assert ci(a, b).item() == ci(scales_a * a, scales_b * b).item()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.001, 1000.0))
def test_ci_arbitrary_positive_scaling_close(seed, factor):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-2, 2, size=(3, 4))
    b = rng.uniform(-2, 2, size=(4, 4))
    assert ci(a, b).item() == pytest.approx(ci(factor * a, b).item(), abs=1e-12)


def test_ci_bounds_and_self_similarity():
    rng = np.random.default_rng(4)
    for _ in range(20):
        a = rng.uniform(-2, 2, size=(4, 3))
        b = rng.uniform(-2, 2, size=(5, 3))
        val = ci(a, b).item()
        assert -1.0 - 1e-12 <= val <= 1.0 + 1e-12
        assert abs(ci(a, a).item() - 1.0) <= 1e-12


def test_ci_exactly_one_for_exactly_unit_rows():
    # Signed, power-of-two-scaled basis rows normalise exactly, so the
    # self-score is exactly 1.0.
    rng = np.random.default_rng(5)
    for _ in range(10):
        dim = 6
        rows = rng.integers(2, 7)
        x = np.zeros((rows, dim))
        for r in range(rows):
            x[r, rng.integers(0, dim)] = float(rng.choice([-1, 1])) * 2.0 ** float(rng.integers(-2, 3))
        assert ci(x, x).item() == 1.0


def test_ci_usage_errors():
    with pytest.raises(UsageError):
        ci(np.zeros((2, 3)), np.zeros((2, 4)))
    with pytest.raises(UsageError):
        ci(np.zeros((0, 3)), np.zeros((2, 3)))


# -- pairwise matrix -------------------------------------------------------------


def test_pairwise_matrix_of_one():
    a = [np.array([[1.0, 0.5], [0.3, 2.0]])]
    b = [np.array([[0.2, -1.0]])]
    matrix = pairwise_ci_matrix(a, b)
    assert matrix.shape == (1, 1)
    assert matrix.data[0, 0] == ci(a[0], b[0]).item()


def test_pairwise_matrix_diagonal_is_one_for_identical_unit_sets():
    sets = []
    for k in range(3):
        x = np.zeros((2, 4))
        x[0, k] = 1.0
        x[1, k + 1] = 1.0
        sets.append(x)
    matrix = pairwise_ci_matrix(sets, sets)
    np.testing.assert_array_equal(np.diag(matrix.data), np.ones(3))


def test_pairwise_matrix_equals_scalar_path():
    rng = np.random.default_rng(6)
    a = [rng.uniform(-2, 2, size=(rng.integers(2, 6), 4)) for _ in range(3)]
    b = [rng.uniform(-2, 2, size=(rng.integers(2, 6), 4)) for _ in range(3)]
    matrix = pairwise_ci_matrix(a, b)
    for i in range(3):
        for j in range(3):
            assert matrix.data[i, j] == ci(a[i], b[j]).item()
            assert abs(matrix.data[i, j] - ci_brute(a[i], b[j])) <= 1e-12


def test_pairwise_matrix_size_mismatch():
    with pytest.raises(UsageError):
        pairwise_ci_matrix([np.zeros((1, 2))], [])


# -- eval_score --------------------------------------------------------------------


def _hierarchies(rng, dim=4):
    audio = MultiGranularityAudio(
        frames=Tensor(rng.uniform(-1, 1, size=(6, dim))),
        segments=Tensor(rng.uniform(-1, 1, size=(3, dim))),
        clip=Tensor(rng.uniform(-1, 1, size=(1, dim))),
    )
    text = MultiGranularityText(
        words=Tensor(rng.uniform(-1, 1, size=(5, dim))),
        phrases=Tensor(rng.uniform(-1, 1, size=(3, dim))),
        sentence=Tensor(rng.uniform(-1, 1, size=(1, dim))),
        cls=None,
    )
    return audio, text


def test_eval_score_composes_verified_terms():
    rng = np.random.default_rng(7)
    audio, text = _hierarchies(rng)
    cfg = ScoreConfig(eval_mode="hci_combined", alpha=0.5, beta=0.1)
    combined = eval_score(audio, text, cfg).item()
    parts = (
        cosine(audio.clip.data[0], text.sentence.data[0]).item()
        + 0.5 * ci(audio.frames.data, text.words.data).item()
        + 0.1 * ci(audio.segments.data, text.phrases.data).item()
    )
    assert combined == pytest.approx(parts, abs=1e-12)


def test_eval_score_zero_weights_match_clip_mode():
    rng = np.random.default_rng(8)
    audio, text = _hierarchies(rng)
    both = eval_score(audio, text, ScoreConfig(eval_mode="hci_combined", alpha=0.0, beta=0.0)).item()
    clip = eval_score(audio, text, ScoreConfig(eval_mode="clip_sentence_only")).item()
    assert both == pytest.approx(clip, abs=1e-12)


def test_eval_score_identical_clip_sentence_is_one():
    rng = np.random.default_rng(9)
    audio, text = _hierarchies(rng)
    text.sentence = Tensor(audio.clip.data.copy())
    clip = eval_score(audio, text, ScoreConfig(eval_mode="clip_sentence_only")).item()
    assert clip == pytest.approx(1.0, abs=1e-12)


def test_score_config_validation():
    with pytest.raises(UsageError):
        ScoreConfig(tau=0.0)
    with pytest.raises(UsageError):
        ScoreConfig(eval_mode="bogus")
