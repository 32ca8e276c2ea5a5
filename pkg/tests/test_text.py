import pytest

from mcp_fidelity.text import (ADJ, DET, NOUN, NUM, OTHER, VERB, chunk, count_occurrences, noun_phrases,
                               segments, tag_token, tokenize)


def test_tokenize_lowercases_and_strips_number_separators():
    assert tokenize("The speed is 299,792,458 m/s.") == ["the", "speed", "is", "299792458", "m/s"]


def test_tokenize_keeps_currency_percent_and_decimals():
    assert tokenize("Up 3.5% to $1,200 today") == ["up", "3.5%", "to", "$1200", "today"]


def test_trailing_comma_after_number_is_punctuation():
    assert segments("In 1815, the war ended") == [["in", "1815"], ["the", "war", "ended"]]


def test_underscore_digit_groups():
    assert tokenize("1_000_000 units") == ["1000000", "units"]


def test_unicode_case_folding():
    assert tokenize("STRASSE Straße") == ["strasse", "strasse"]


@pytest.mark.parametrize("token, expected", [
    ("the", DET), ("is", VERB), ("approximately", OTHER), ("42", NUM), ("$5", NUM),
    ("quickly", OTHER), ("reconciliation", NOUN), ("dangerous", ADJ), ("zorblax", NOUN),
])
def test_tagger(token, expected):
    assert tag_token(token) == expected


def test_chunk_grammar():
    tagged = [("the", DET), ("big", ADJ), ("red", ADJ), ("dog", NOUN), ("house", NOUN), ("is", VERB),
              ("a", DET), ("cat", NOUN)]
    assert chunk(tagged) == [["the", "big", "red", "dog", "house"], ["a", "cat"]]


def test_chunk_needs_a_noun():
    assert chunk([("the", DET), ("big", ADJ), ("is", VERB)]) == []


def test_number_fills_modifier_slot():
    assert "299792458 m/s" in noun_phrases("It is approximately 299,792,458 m/s.")


def test_chunks_do_not_cross_punctuation():
    assert noun_phrases("The tower. Paris museum") == ["the tower", "paris museum"]


def test_count_occurrences_is_non_overlapping():
    assert count_occurrences(["a", "a", "a"], ["a", "a"]) == 1
    assert count_occurrences(["a", "b", "a", "b"], ["a", "b"]) == 2
    assert count_occurrences(["a"], []) == 0
