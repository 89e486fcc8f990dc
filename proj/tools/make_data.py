#!/usr/bin/env python3
# Copyright (C) 2026 The dbs Authors
# SPDX-License-Identifier: Apache-2.0
"""Regenerates the pinned data files under data/.

  corpus.txt        ~1 MB of public-domain Shakespeare (Project Gutenberg texts
                    shipped in the `shakespeare` 0.6 sdist), case kept, one
                    verse line per line, punctuation split into separate tokens.
  wordlist_1000.txt 1000 most common alphabetic English words (wordfreq 3.1.1).
  stopwords_en.txt  English stop-word list.

Usage: make_data.py <path/to/shksprdata/texts> <out_dir>
"""
import pathlib
import re
import sys

STOPWORDS = """i me my myself we our ours ourselves you you're you've you'll you'd
your yours yourself yourselves he him his himself she she's her hers herself it
it's its itself they them their theirs themselves what which who whom this that
that'll these those am is are was were be been being have has had having do does
did doing a an the and but if or because as until while of at by for with about
against between into through during before after above below to from up down in
out on off over under again further then once here there when where why how all
any both each few more most other some such no nor not only own same so than too
very s t can will just don don't should should've now d ll m o re ve y ain aren
aren't couldn couldn't didn didn't doesn doesn't hadn hadn't hasn hasn't haven
haven't isn isn't ma mightn mightn't mustn mustn't needn needn't shan shan't
shouldn shouldn't wasn wasn't weren weren't won won't wouldn wouldn't""".split()

TOKEN = re.compile(r"[A-Za-z]+(?:'[A-Za-z]+)*|[.,;:!?]")
SPEAKER = re.compile(r"^[A-Z][A-Za-z ]{0,24}\.$")
TARGET_BYTES = 1_000_000


def corpus(texts_dir: pathlib.Path) -> str:
    out, size = [], 0
    for path in sorted(texts_dir.glob("*_gut.txt")):
        for raw in path.read_text(encoding="latin-1").splitlines():
            line = raw.strip()
            if not line or SPEAKER.match(line) or line.startswith("["):
                continue
            line = re.sub(r"\[[^\]]*\]", " ", line)
            toks = TOKEN.findall(line)
            if not toks:
                continue
            text = " ".join(toks)
            out.append(text)
            size += len(text) + 1
            if size >= TARGET_BYTES:
                return "\n".join(out) + "\n"
    return "\n".join(out) + "\n"


def wordlist() -> list[str]:
    import wordfreq
    words = [w for w in wordfreq.top_n_list("en", 2000) if w.isalpha() and w.isascii()]
    return words[:1000]


def main() -> None:
    texts, out = pathlib.Path(sys.argv[1]), pathlib.Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    (out / "corpus.txt").write_text(corpus(texts), encoding="utf-8")
    (out / "wordlist_1000.txt").write_text("\n".join(wordlist()) + "\n", encoding="utf-8")
    (out / "stopwords_en.txt").write_text("\n".join(STOPWORDS) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
