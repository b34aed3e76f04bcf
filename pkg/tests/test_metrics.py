import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualnlg.corpus import Utterance, parse_da, placeholder
from dualnlg.metrics import MetricsReport, bleu, slot_error_counts, slot_error_rate

EPS = 1e-9


# BLEU -----------------------------------------------------------------------------------


def test_self_match_is_one():
    sents = [["a", "b", "c", "d", "e"], ["x", "y", "z", "w"]]
    assert bleu(sents, [[s] for s in sents]) == 1.0


def test_no_overlap_is_zero_up_to_smoothing():
    assert bleu([["a", "b", "c", "d"]], [[["e", "f", "g", "h"]]]) < 1e-8


def test_repeated_word_against_two_word_reference():
    # clipped unigram 1/3; bigram 0/2 and trigram 0/1 fall back to eps/total; there are no
    # 4-grams, so that order is vacuous; the candidate is longer than the reference, so no
    # brevity penalty
    expected = (1 / 3 * (EPS / 2) * (EPS / 1) * 1.0) ** 0.25
    got = bleu([["the", "the", "the"]], [[["the", "cat"]]])
    assert abs(got - expected) <= 1e-9 * expected


def test_six_word_hand_case():
    cand = "the cat sat on the mat".split()
    ref = "the cat is on the mat".split()
    # unigrams 5/6, bigrams 3/5, trigrams 1/4, 4-grams 0/3; equal lengths
    expected = math.exp((math.log(5 / 6) + math.log(3 / 5) + math.log(1 / 4) + math.log(EPS / 3)) / 4)
    assert abs(bleu([cand], [[ref]]) - expected) <= 1e-9 * expected


def test_brevity_penalty_uses_closest_reference():
    cand = ["the", "cat"]
    refs = [["the", "cat", "sat"], ["a", "cat", "on", "the", "mat"]]
    # closest reference has length 3; orders 3 and 4 have no candidate n-grams, so only the
    # brevity penalty remains
    expected = math.exp(1 - 3 / 2)
    assert abs(bleu([cand], [refs]) - expected) <= 1e-9 * expected


def test_closest_length_tie_prefers_shorter_reference():
    cand = ["a", "b", "c", "d"]
    # lengths 3 and 5 are equally close; the shorter one means no penalty
    filler = ["x"] * 5
    alone = bleu([cand], [[["a", "b", "c"]]])
    assert bleu([cand], [[["a", "b", "c"], filler]]) == alone
    assert bleu([cand], [[filler, ["a", "b", "c"]]]) == alone


def test_bleu_errors():
    with pytest.raises(ValueError):
        bleu([], [])
    with pytest.raises(ValueError):
        bleu([["a"]], [[["a"]], [["b"]]])
    with pytest.raises(ValueError):
        bleu([["a"]], [[]])


_words = st.lists(st.sampled_from("abcde"), min_size=1, max_size=7)


@given(st.lists(st.tuples(_words, st.lists(_words, min_size=1, max_size=3)), min_size=1, max_size=6), st.randoms())
@settings(max_examples=150)
def test_bleu_is_permutation_invariant_and_bounded(items, rnd):
    cands = [c for c, _ in items]
    refs = [r for _, r in items]
    base = bleu(cands, refs)
    order = list(range(len(items)))
    rnd.shuffle(order)
    assert bleu([cands[i] for i in order], [refs[i] for i in order]) == base
    assert 0.0 <= base <= 1.0


@given(_words)
def test_bleu_of_sentence_against_itself(words):
    assert bleu([words], [[words]]) == 1.0


# slot error rate ---------------------------------------------------------------------------

NAME, AREA, HDMI = placeholder("name"), placeholder("area"), placeholder("hdmiport")


def test_all_slots_realised_is_zero():
    da = parse_da("inform(name='x'; area='north')")
    assert slot_error_rate([[NAME, "is", "in", "the", AREA]], [da]) == 0.0


def test_one_of_two_missing_is_fifty():
    da = parse_da("inform(name='x'; area='north')")
    assert slot_error_counts([NAME, "is", "nice"], da) == (1, 0, 2)
    assert slot_error_rate([[NAME, "is", "nice"]], [da]) == 50.0


def test_duplicated_slot_is_redundant():
    da = parse_da("inform(name='x'; hdmiport='2')")
    tokens = [NAME, "has", HDMI, HDMI, "ports"]
    assert slot_error_counts(tokens, da) == (0, 1, 2)
    assert slot_error_rate([tokens], [da]) == 50.0


def test_unrequested_slot_is_redundant_and_multiplicity_counts():
    da = parse_da("inform(name='x'; name='y')")
    assert slot_error_counts([NAME, AREA], da) == (1, 1, 2)


def test_binary_slots_are_not_counted():
    da = parse_da("inform(name='x'; kidsallowed='yes')")
    assert slot_error_counts([NAME, "allows", "kids"], da) == (0, 0, 1)


def test_accepts_utterances_and_checks_lengths():
    da = parse_da("inform(name='x')")
    assert slot_error_rate([Utterance([NAME], [])], [da]) == 0.0
    with pytest.raises(ValueError):
        slot_error_rate([[NAME]], [da, da])


_SLOTS = ("name", "area", "food", "price")
_da = st.lists(st.sampled_from(_SLOTS), min_size=1, max_size=4).map(
    lambda names: parse_da("inform(" + "; ".join(f"{n}='v{i}'" for i, n in enumerate(names)) + ")")
)
_out = st.lists(st.sampled_from([placeholder(s) for s in _SLOTS] + ["w"]), max_size=6)


@given(st.lists(st.tuples(_out, _da), min_size=2, max_size=8), st.integers(1, 7))
def test_err_pools_counts_over_partitions(items, cut):
    cut = min(cut, len(items) - 1)
    counts = [slot_error_counts(t, d) for t, d in items]
    p, q, n = (sum(c[i] for c in counts) for i in range(3))
    assert slot_error_rate([t for t, _ in items], [d for _, d in items]) == 100.0 * (p + q) / n
    # combining two halves pools their counts rather than averaging their rates
    left, right = counts[:cut], counts[cut:]
    pooled = 100.0 * sum(a + b for a, b, _ in left + right) / sum(c for *_, c in left + right)
    assert slot_error_rate([t for t, _ in items], [d for _, d in items]) == pooled


@given(_da)
def test_err_is_zero_iff_placeholders_match(da):
    exact = [placeholder(n) for n, _ in da.valued_slots()]
    assert slot_error_rate([exact], [da]) == 0.0
    assert slot_error_rate([exact[1:]], [da]) > 0.0
    assert slot_error_rate([exact + [exact[0]]], [da]) > 0.0


# report ------------------------------------------------------------------------------------


def test_report_rows_and_markdown():
    r = MetricsReport()
    for b, e in [(0.5, 10.0), (0.7, 20.0)]:
        r.add("tv", "scr10", "crossvae", b, e)
    r.add("tv", "scr10", "ralstm", 0.4, 30.0)
    row = r.row("tv", "scr10", "crossvae")
    assert row.bleu_mean == pytest.approx(0.6) and row.err_mean == 15.0
    assert row.bleu_std == pytest.approx(0.1) and row.err_std == 5.0
    md = r.to_markdown().splitlines()
    assert md[0] == "| model | tv scr10 BLEU | tv scr10 ERR |" and len(md) == 4
    assert [x["model"] for x in r.to_rows()] == ["crossvae", "ralstm"]
