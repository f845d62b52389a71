import json

import pytest

from spanrank.data import (
    DataError,
    Passage,
    PredictionSet,
    RerankResult,
    SpanCandidate,
    Question,
    load_corpus,
    load_predictions,
    load_questions,
    load_retrieval,
    validate_dataset,
    write_jsonl,
)


def _write(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


def _cand(text, start, end, span, score, pid="p1"):
    return {"passage_id": pid, "passage_text": text, "span_start": start, "span_end": end, "span_text": span, "score": score}


PASSAGE = "Gorbachev led the Soviet Union until it collapsed ."


def test_load_question_record(tmp_path):
    rec = {"id": "q1", "text": "who was the head of the soviet union when it collapsed", "gold_answers": ["Mikhail Gorbachev"]}
    qs = load_questions(_write(tmp_path / "q.jsonl", [rec]))
    assert qs == [Question("q1", rec["text"], ("Mikhail Gorbachev",))]


def test_empty_file_gives_no_questions(tmp_path):
    (tmp_path / "q.jsonl").write_text("")
    assert load_questions(tmp_path / "q.jsonl") == []


def test_duplicate_question_id(tmp_path):
    rec = {"id": "q1", "text": "x", "gold_answers": ["y"]}
    with pytest.raises(DataError, match="q1"):
        load_questions(_write(tmp_path / "q.jsonl", [rec, rec]))


def test_empty_gold_rejected(tmp_path):
    with pytest.raises(DataError):
        load_questions(_write(tmp_path / "q.jsonl", [{"id": "q1", "text": "x", "gold_answers": []}]))


def test_malformed_line_names_line_number(tmp_path):
    (tmp_path / "q.jsonl").write_text('{"id": "q1", "text": "x", "gold_answers": ["y"]}\n{oops\n')
    with pytest.raises(DataError, match=":2:"):
        load_questions(tmp_path / "q.jsonl")


def test_corpus_and_retrieval(tmp_path):
    corpus = load_corpus(_write(tmp_path / "c.jsonl", [{"id": "p1", "text": "a b", "title": "T"}, {"id": "p2", "text": "c"}]))
    assert corpus["p1"] == Passage("p1", "a b", "T")
    assert corpus["p2"].title is None
    ret = load_retrieval(_write(tmp_path / "r.jsonl", [{"question_id": "q1", "passage_ids": ["p2", "p1"]}]))
    assert ret == {"q1": ["p2", "p1"]}
    with pytest.raises(DataError):
        load_corpus(_write(tmp_path / "d.jsonl", [{"id": "p1", "text": "a"}, {"id": "p1", "text": "b"}]))


def test_sorted_predictions_keep_order(tmp_path):
    rec = {"question_id": "q1", "candidates": [
        _cand(PASSAGE, 0, 1, "Gorbachev", 2.0),
        _cand(PASSAGE, 3, 5, "Soviet Union", 1.5),
        _cand(PASSAGE, 7, 8, "collapsed", 0.1),
    ]}
    (ps,) = load_predictions(_write(tmp_path / "p.jsonl", [rec]))
    assert [c.model_score for c in ps.candidates] == [2.0, 1.5, 0.1]


def test_unsorted_predictions_reordered(tmp_path):
    rec = {"question_id": "q1", "candidates": [_cand(PASSAGE, 7, 8, "collapsed", 0.1), _cand(PASSAGE, 0, 1, "Gorbachev", 2.0)]}
    (ps,) = load_predictions(_write(tmp_path / "p.jsonl", [rec]))
    assert [c.span_text for c in ps.candidates] == ["Gorbachev", "collapsed"]


def test_out_of_bounds_span(tmp_path):
    rec = {"question_id": "q7", "candidates": [_cand(PASSAGE, 0, 1, "Gorbachev", 1.0), _cand(PASSAGE, 8, 10, "x", 0.5)]}
    with pytest.raises(DataError, match=r"q7.*candidate 1"):
        load_predictions(_write(tmp_path / "p.jsonl", [rec]))


def test_span_text_mismatch_only_warns(tmp_path, caplog):
    rec = {"question_id": "q1", "candidates": [_cand(PASSAGE, 0, 1, "Yeltsin", 1.0)]}
    (ps,) = load_predictions(_write(tmp_path / "p.jsonl", [rec]))
    assert ps.candidates[0].span_text == "Yeltsin"
    assert "does not match" in caplog.text


def test_round_trip(tmp_path):
    p = Passage("p1", PASSAGE)
    sets = [
        PredictionSet("q1", (SpanCandidate(p, 0, 1, "Gorbachev", 1.25), SpanCandidate(p, 3, 5, "Soviet Union", -0.5, 2))),
        PredictionSet("q2", (SpanCandidate(p, 7, 8, "collapsed", 0.0),)),
    ]
    write_jsonl(tmp_path / "p.jsonl", sets)
    assert load_predictions(tmp_path / "p.jsonl") == sets
    write_jsonl(tmp_path / "p2.jsonl", load_predictions(tmp_path / "p.jsonl"))
    assert (tmp_path / "p.jsonl").read_bytes() == (tmp_path / "p2.jsonl").read_bytes()


def test_rerank_result_to_prediction_set():
    p = Passage("p1", PASSAGE)
    a, b, c = (SpanCandidate(p, i, i + 1, w, 0.0, i + 1) for i, w in enumerate(["Gorbachev", "led", "the"]))
    ps = RerankResult("q1", ((b, 0.75), (a, 0.25)), (c,)).to_prediction_set()
    assert [x.span_text for x in ps.candidates] == ["led", "Gorbachev", "the"]
    assert [x.model_score for x in ps.candidates] == [0.75, 0.25, 0.0]
    assert [x.original_rank for x in ps.candidates] == [2, 1, 3]


class TestValidate:
    def setup_method(self):
        p = Passage("p1", PASSAGE)
        self.questions = [Question("q1", "x", ("a",)), Question("q2", "y", ("b",))]
        self.cand = SpanCandidate(p, 0, 1, "Gorbachev", 0.0)

    def test_matched(self):
        preds = [PredictionSet("q1", (self.cand,)), PredictionSet("q2", (self.cand, self.cand))]
        report = validate_dataset(self.questions, preds)
        assert report.issues == []
        assert report.candidate_counts == {"q1": 1, "q2": 2}

    def test_orphan_and_missing(self):
        report = validate_dataset(self.questions, [PredictionSet("q9", (self.cand,)), PredictionSet("q1", (self.cand,))])
        assert report.orphan_predictions == ["q9"]
        assert report.questions_without_predictions == ["q2"]

    def test_empty_candidates_flagged(self):
        preds = [PredictionSet("q1", ()), PredictionSet("q2", (self.cand,))]
        assert validate_dataset(self.questions, preds).empty_predictions == ["q1"]

    def test_pure(self):
        preds = [PredictionSet("q9", (self.cand,))]
        assert validate_dataset(self.questions, preds) == validate_dataset(self.questions, preds)
