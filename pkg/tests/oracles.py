"""Independent reference implementations used by the test suite.

These deliberately avoid the library's own decoding/matching code paths so
they can serve as oracles.
"""

from groupdecay.scoring import Phrase


def brute_force_phrases(tags, sentence_id=0):
    """Phrase decoding by maximal same-type runs, split before every B tag."""
    phrases = []
    i = 0
    n = len(tags)
    while i < n:
        if tags[i] == "O":
            i += 1
            continue
        etype = tags[i].split("-", 1)[1]
        j = i + 1
        while j < n and tags[j] == f"I-{etype}":
            j += 1
        phrases.append(Phrase(sentence_id, i, j - 1, etype))
        i = j
    return phrases


def brute_force_match_counts(gold_tags_by_sentence, pred_tags_by_sentence):
    """Exact phrase-match counting via set intersection of tuples."""
    gold = {
        (i, p.start, p.end, p.type)
        for i, tags in gold_tags_by_sentence.items()
        for p in brute_force_phrases(tags, i)
    }
    pred = {
        (i, p.start, p.end, p.type)
        for i, tags in pred_tags_by_sentence.items()
        for p in brute_force_phrases(tags, i)
    }
    return len(gold), len(pred), len(gold & pred)
