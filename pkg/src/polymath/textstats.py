"""Outcome features computed over generated answer text.

These feed the causal analysis as outcome columns: type-token ratio, a
lexicon-based noun ratio, Flesch-Kincaid grade, SMOG index, and raw size
counts. Readability formulas follow their standard published forms; the
noun tagger is a deliberately simple function-word lexicon plus suffix
rules, good enough for a relative outcome feature.
"""

from __future__ import annotations

import math
import re

_WORD = re.compile(r"[A-Za-z]+(?:'[A-Za-z]+)?")
_SENTENCE_END = re.compile(r"[.!?]+")

# Closed-class words that are never nouns for our purposes.
FUNCTION_WORDS = frozenset("""
a an the this that these those some any each every no such
i you he she it we they me him her us them my your his its our their
mine yours hers ours theirs myself yourself himself herself itself
ourselves themselves who whom whose which what
and or but nor so yet for if while although though because since unless
until when whenever where wherever whether as than
in on at by with from into onto of off over under above below between
among through during before after about against along around behind
beside besides beyond despite down up out near toward towards upon within
without via per
is are was were be been being am do does did done doing have has had
having will would shall should can could may might must ought
not never also very too quite rather just only even still already often
sometimes usually always again once twice here there now then thus hence
therefore however moreover furthermore nevertheless meanwhile instead
indeed perhaps maybe almost nearly about
yes no both either neither all most many much few little more less least
own same other another next last first second third
""".split())

NOUN_SUFFIXES = (
    "tion", "sion", "ment", "ness", "ity", "ism", "ology", "graphy",
    "ance", "ence", "ship", "hood", "dom", "ware", "ist", "er", "or",
    "ing", "age", "ics", "ide", "ase", "ome", "gene", "cell", "data",
)

NON_NOUN_SUFFIXES = ("ly", "ive", "ous", "ful", "able", "ible", "al", "ic")


def words(text: str) -> list[str]:
    return [w.lower() for w in _WORD.findall(text)]


def sentence_count(text: str) -> int:
    parts = [p for p in _SENTENCE_END.split(text) if p.strip()]
    return max(len(parts), 1)


def syllable_count(word: str) -> int:
    """Vowel-group heuristic with a silent-e adjustment."""
    w = word.lower()
    groups = re.findall(r"[aeiouy]+", w)
    count = len(groups)
    if count > 1 and w.endswith("e") and not w.endswith(("le", "ee", "ye")):
        count -= 1
    return max(count, 1)


def type_token_ratio(text: str) -> float:
    ws = words(text)
    if not ws:
        return 0.0
    return len(set(ws)) / len(ws)


def is_nounish(word: str) -> bool:
    if word in FUNCTION_WORDS or len(word) < 3:
        return False
    if word.endswith(NON_NOUN_SUFFIXES):
        return False
    if word.endswith(NOUN_SUFFIXES):
        return True
    # residual content words: treat plural-looking forms as nouns
    return word.endswith("s") and not word.endswith(("ss", "is", "us"))


def noun_ratio(text: str) -> float:
    ws = words(text)
    if not ws:
        return 0.0
    return sum(1 for w in ws if is_nounish(w)) / len(ws)


def flesch_kincaid_grade(text: str) -> float:
    ws = words(text)
    if not ws:
        return 0.0
    sentences = sentence_count(text)
    syllables = sum(syllable_count(w) for w in ws)
    return 0.39 * (len(ws) / sentences) + 11.8 * (syllables / len(ws)) - 15.59


def smog_index(text: str) -> float:
    ws = words(text)
    if not ws:
        return 0.0
    sentences = sentence_count(text)
    polysyllables = sum(1 for w in ws if syllable_count(w) >= 3)
    return 1.0430 * math.sqrt(polysyllables * (30.0 / sentences)) + 3.1291


def text_metrics(text: str) -> dict[str, float]:
    """All outcome features for one generated text."""
    ws = words(text)
    return {
        "ttr": type_token_ratio(text),
        "noun_ratio": noun_ratio(text),
        "flesch_kincaid": flesch_kincaid_grade(text),
        "smog": smog_index(text),
        "char_count": float(len(text)),
        "word_count": float(len(ws)),
        "token_count": float(len(text.split())),
    }
