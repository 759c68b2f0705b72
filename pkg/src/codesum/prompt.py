"""Summarization prompts, first-sentence extraction and stop-word removal."""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass, replace
from importlib import resources
from typing import Iterable

from .dataset import CodeFragment

PLACEHOLDER = "{code}"

ENGLISH_TEMPLATE = (
    "Now that you are a programmer, read the following code in detail and "
    "succinctly summarize the function of this code in one sentence without "
    "explaining the process:\n" + PLACEHOLDER
)
CHINESE_TEMPLATE = "现在你是一名程序员，请仔细阅读以下代码，并用一句话简洁地概括这段代码的功能，不要解释过程：\n" + PLACEHOLDER

TERMINATORS = {
    "english": ".!?",
    "chinese": "。！？",
}
# Languages without their own entry accept every known terminator.
_ALL_TERMINATORS = "".join(TERMINATORS.values())

# A line that only introduces the answer ("Sure, here is the summary:").
DEFAULT_PREAMBLE = re.compile(r"[:：]\s*$")


_DOTTED_ABBREV = re.compile(r"(?:^|\W)(?:[A-Za-z]\.){2}$")


class TemplateError(ValueError):
    pass


class ExtractionFailed(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    language: str
    body: str

    def __post_init__(self) -> None:
        count = self.body.count(PLACEHOLDER)
        if count != 1:
            raise TemplateError(f"template must contain exactly one {PLACEHOLDER} placeholder, found {count}")

    @property
    def sha256(self) -> str:
        return hashlib.sha256(f"{self.language}\0{self.body}".encode()).hexdigest()

    @classmethod
    def default(cls, language: str = "english") -> "PromptTemplate":
        if language == "english":
            return cls("english", ENGLISH_TEMPLATE)
        if language == "chinese":
            return cls("chinese", CHINESE_TEMPLATE)
        raise TemplateError(f"no built-in template for {language!r}; supply a template file")

    @classmethod
    def from_file(cls, path: str | os.PathLike, language: str) -> "PromptTemplate":
        with open(path, encoding="utf-8") as fh:
            return cls(language, fh.read())


@dataclass(frozen=True)
class Summary:
    text: str
    fragment_id: str
    prompt_language: str
    stopwords_removed: bool = False

    def __post_init__(self) -> None:
        if not self.text:
            raise ExtractionFailed(f"empty summary for {self.fragment_id!r}")


def render_prompt(template: PromptTemplate, code: str | CodeFragment) -> str:
    if isinstance(code, CodeFragment):
        code = code.text
    # single pass: a literal {code} inside the source is left alone
    head, tail = template.body.split(PLACEHOLDER)
    return head + code + tail


def _first_terminator(line: str, delimiters: str) -> int:
    for i, ch in enumerate(line):
        if ch not in delimiters:
            continue
        # "e.g", "3.14", "foo.bar": a dot glued to a following word is not a sentence end
        if ch == "." and i + 1 < len(line) and line[i + 1].isalnum():
            continue
        # closing dot of a dotted abbreviation such as "e.g." or "i.e."
        if ch == "." and _DOTTED_ABBREV.search(line, 0, i + 1):
            continue
        return i
    return -1


def extract_first_sentence(
    response: str,
    language: str = "english",
    preamble: re.Pattern[str] | None = DEFAULT_PREAMBLE,
) -> str:
    """Return the first sentence of an LLM response.

    Leading lines matched by ``preamble`` are skipped as long as some
    non-empty line follows them. The sentence never spans a line break; a
    first line without a terminator is returned whole.
    """
    lines = [ln.strip() for ln in response.strip().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ExtractionFailed("empty response")
    if preamble is not None:
        while len(lines) > 1 and preamble.search(lines[0]):
            lines.pop(0)
    line = lines[0]
    end = _first_terminator(line, TERMINATORS.get(language, _ALL_TERMINATORS))
    sentence = line if end < 0 else line[: end + 1]
    return sentence.strip()


def load_stoplist(path: str | os.PathLike) -> frozenset[str]:
    with open(path, encoding="utf-8") as fh:
        return frozenset(w.strip() for w in fh if w.strip())


def builtin_stoplist(language: str) -> frozenset[str]:
    name = {"english": "stopwords_en.txt", "chinese": "stopwords_zh.txt"}.get(language)
    if name is None:
        raise KeyError(f"no built-in stop-word list for {language!r}")
    text = resources.files("codesum").joinpath("data", name).read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


_EDGE_PUNCT = ".,;:!?\"'()[]{}`。，；：！？、"


def _strip_word_tokens(text: str, stoplist: frozenset[str]) -> str:
    lowered = {w.lower() for w in stoplist}
    kept = [tok for tok in text.split() if tok.strip(_EDGE_PUNCT).lower() not in lowered]
    return " ".join(kept)


def _strip_longest_match(text: str, stoplist: frozenset[str]) -> str:
    words = [w for w in stoplist if w]
    if not words:
        return text
    longest = max(map(len, words))
    vocab = set(words)
    while True:
        out = []
        i = 0
        while i < len(text):
            for size in range(min(longest, len(text) - i), 0, -1):
                if text[i : i + size] in vocab:
                    i += size
                    break
            else:
                out.append(text[i])
                i += 1
        stripped = "".join(out)
        # deleting a word can glue its neighbours into a new stop word
        if stripped == text:
            return stripped
        text = stripped


def remove_stop_words(summary: Summary, stoplist: Iterable[str]) -> Summary:
    """Delete stop words from a summary.

    Chinese text is matched greedily (longest stop word first) over the
    character stream; other languages are matched per whitespace token,
    ignoring case and surrounding punctuation.
    """
    stops = frozenset(stoplist)
    if not stops:
        text = summary.text
    elif summary.prompt_language == "chinese":
        text = _strip_longest_match(summary.text, stops)
    else:
        text = _strip_word_tokens(summary.text, stops)
    text = text.strip()
    if not text or all(ch in _EDGE_PUNCT or ch.isspace() for ch in text):
        raise ExtractionFailed(f"summary of {summary.fragment_id!r} consists only of stop words")
    return replace(summary, text=text, stopwords_removed=True)
