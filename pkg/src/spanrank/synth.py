"""Synthetic open-domain QA corpus with close false positives.

Every question asks who led a two-word topic when it underwent some event::

    who led <adj> <noun> when it <event> ?

A passage is two sentences in random order, wrapped in filler words::

    <topic> <event> under <person> .      it also <other event> .

The gold passage pairs the question's event with the answer. Each distractor
shares the topic but puts a different person under a different event, and
mentions the question's event only in the "it also" sentence. Gold and
distractors therefore hold the same topic and event words and differ only in
which event sits next to the person. The remaining retrieved passages are
about other topics and use none of the question's event words. Reading the
candidate span in context separates gold from distractors; word overlap with
the question does not.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import Passage, Question, write_jsonl

log = logging.getLogger(__name__)

EVENTS = (
    "collapsed", "expanded", "reformed", "split", "united", "declined",
    "prospered", "rebelled", "modernized", "stagnated", "flourished", "fractured",
)
_ONSETS = "b c d f g h k l m n p r s t v z br dr gr kr pl st tr".split()
_VOWELS = "a e i o u".split()
_CODAS = ["", "", "n", "r", "l", "s", "k"]


@dataclass(frozen=True)
class SynthSpec:
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 500
    n_passages_per_question: int = 6
    n_distractors: int = 3
    vocab_pool_size: int = 60
    n_events: int = 6
    answer_len: tuple[int, int] = (1, 2)
    filler_len: tuple[int, int] = (0, 3)
    seed: int = 0

    @property
    def n_questions(self) -> int:
        return self.n_train + self.n_dev + self.n_test

    def validate(self) -> None:
        if self.n_distractors < 0:
            raise ValueError("n_distractors must be >= 0")
        if self.n_passages_per_question < 1 + self.n_distractors:
            raise ValueError("n_passages_per_question must cover the gold passage and all distractors")
        if not 2 <= self.n_events <= len(EVENTS):
            raise ValueError(f"n_events must be in [2, {len(EVENTS)}]")
        lo, hi = self.answer_len
        if not 1 <= lo <= hi <= 2:
            raise ValueError("answer_len must lie within [1, 2] tokens")
        if self.vocab_pool_size ** 2 < self.n_questions:
            raise ValueError("vocab_pool_size**2 must be at least the number of questions (unique topics)")
        if self.vocab_pool_size < 2 * (self.n_distractors + 2):
            raise ValueError("vocab_pool_size too small to give every passage a distinct person")


@dataclass
class SynthData:
    questions: dict[str, list[Question]]
    corpus: list[Passage]
    retrieval: dict[str, dict[str, list[str]]]


def _pseudo_words(rng, n: int, taken: set, syllables=(2, 3)) -> list[str]:
    out = []
    while len(out) < n:
        k = rng.integers(syllables[0], syllables[1] + 1)
        w = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(k)) + rng.choice(_CODAS)
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def generate(spec: SynthSpec) -> SynthData:
    spec.validate()
    if spec.n_distractors == 0:
        log.warning("n_distractors=0: no close false positives, re-ranking has no headroom")
    rng = np.random.default_rng(spec.seed)
    taken = set(EVENTS) | {"who", "led", "when", "it", "under", "also", "a", "an", "the"}
    pool = spec.vocab_pool_size
    adjectives = _pseudo_words(rng, pool, taken)
    nouns = _pseudo_words(rng, pool, taken)
    firsts = _pseudo_words(rng, pool, taken)
    lasts = _pseudo_words(rng, 2 * pool, taken)
    fillers = _pseudo_words(rng, 40, taken, syllables=(1, 2))
    events = EVENTS[: spec.n_events]

    topic_idx = rng.choice(pool * pool, size=spec.n_questions, replace=False)

    def filler(lo_hi):
        n = rng.integers(lo_hi[0], lo_hi[1] + 1)
        return [str(rng.choice(fillers)) for _ in range(n)]

    def people(n):
        lo, hi = spec.answer_len
        fi = rng.choice(len(firsts), size=n, replace=False)
        la = rng.choice(len(lasts), size=n, replace=False)
        out = []
        for f, l in zip(fi, la):
            if rng.integers(lo, hi + 1) == 2:
                out.append(f"{firsts[f].capitalize()} {lasts[l].capitalize()}")
            else:
                out.append(lasts[l].capitalize())
        return out

    def passage(topic, event, person, other_event):
        main = [topic, event, "under", person, "."]
        aside = ["it", "also", other_event, "."]
        body = main + aside if rng.integers(2) else aside + main
        text = " ".join(filler((0, 2)) + body + filler(spec.filler_len))
        return text[0].upper() + text[1:]

    questions = {"train": [], "dev": [], "test": []}
    retrieval = {"train": {}, "dev": {}, "test": {}}
    corpus = []
    splits = ["train"] * spec.n_train + ["dev"] * spec.n_dev + ["test"] * spec.n_test
    for n, split in enumerate(splits):
        qid = f"{split}-{n:05d}"
        topic = f"{adjectives[topic_idx[n] // pool]} {nouns[topic_idx[n] % pool]}"
        ev = rng.permutation(len(events))
        event = events[ev[0]]
        others = [events[i] for i in ev[1:]]
        n_unrelated = spec.n_passages_per_question - 1 - spec.n_distractors
        persons = people(1 + spec.n_distractors + n_unrelated)
        answer = persons[0]
        texts = [passage(topic, event, answer, others[rng.integers(len(others))])]
        for j in range(spec.n_distractors):
            texts.append(passage(topic, others[rng.integers(len(others))], persons[1 + j], event))
        for j in range(n_unrelated):
            t = rng.integers(pool * pool)
            other_topic = f"{adjectives[t // pool]} {nouns[t % pool]}"
            e1, e2 = rng.choice(len(others), size=2, replace=False)
            texts.append(passage(other_topic, others[e1], persons[1 + spec.n_distractors + j], others[e2]))
        pids = [f"{qid}-p{j}" for j in range(len(texts))]
        corpus.extend(Passage(pid, text) for pid, text in zip(pids, texts))
        order = rng.permutation(len(pids))
        retrieval[split][qid] = [pids[i] for i in order]
        questions[split].append(Question(qid, f"who led {topic} when it {event} ?", (answer,)))
    return SynthData(questions, corpus, retrieval)


def write(data: SynthData, out_dir, spec: SynthSpec | None = None) -> dict[str, Path]:
    """Write ``{split}.questions.jsonl``, ``{split}.retrieval.jsonl`` and ``corpus.jsonl``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"corpus": out / "corpus.jsonl"}
    write_jsonl(paths["corpus"], data.corpus)
    for split, qs in data.questions.items():
        paths[f"{split}.questions"] = out / f"{split}.questions.jsonl"
        paths[f"{split}.retrieval"] = out / f"{split}.retrieval.jsonl"
        write_jsonl(paths[f"{split}.questions"], qs)
        write_jsonl(
            paths[f"{split}.retrieval"],
            ({"question_id": q, "passage_ids": p} for q, p in data.retrieval[split].items()),
        )
    if spec is not None:
        import json

        (out / "synth_spec.json").write_text(json.dumps(asdict(spec), indent=2) + "\n")
    return paths
