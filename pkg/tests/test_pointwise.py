"""Tests for pair judging, coverage math, and matched-pair performance."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coverage_oracle import oracle_coverage
from limforge.corpus import LimitationSet, LimitationStatement
from limforge.pointwise import (
    CoverageResult,
    EvaluationError,
    MatchSet,
    PairVerdict,
    SidecarError,
    aggregate,
    compare_judges,
    coverage,
    derive_heading,
    evaluate_sets,
    evaluation_to_dict,
    extract_keywords,
    heading_eval,
    judge_pair,
    keyword_eval,
    match_all,
    performance,
)
from limforge.gateway import LLMGateway
from llm_stubs import VectorBackend, scripted_gateway

G_TEXT = "The dataset is small and covers only English sources."
H_TEXT = "Evaluation relies on a single English benchmark."


def stmt(text, provenance="merged", heading=None):
    return LimitationStatement(text=text, heading=heading, provenance=provenance)


def limset(texts, provenance, paper_id="p1", headings=None):
    headings = headings or [None] * len(texts)
    return LimitationSet(
        paper_id=paper_id,
        provenance=provenance,
        statements=tuple(
            stmt(t, provenance=provenance, heading=h) for t, h in zip(texts, headings)
        ),
    )


def judge_gateway(script):
    """Script keys: 'gh', 'hg' for the similarity orders, 'containment'."""

    def responder(request):
        prompt = request.messages[0][1]
        if "subsume" in prompt:
            return script.get("containment", "No")
        order = "gh" if prompt.find(G_TEXT) < prompt.find(H_TEXT) else "hg"
        return script[order]

    return scripted_gateway(responder)


class TestJudgePair:
    def pair(self):
        return stmt(G_TEXT), stmt(H_TEXT, provenance="generated")

    def test_agreement_two_calls(self):
        gateway, backend = judge_gateway({"gh": "Yes", "hg": "Yes"})
        g, h = self.pair()
        verdict = judge_pair(g, h, gateway, "judge")
        assert verdict.final is True
        assert verdict.verdicts == (True, True)
        assert backend.chat_calls == 2

    def test_agreement_no(self):
        gateway, backend = judge_gateway({"gh": "No", "hg": "no, these differ."})
        g, h = self.pair()
        verdict = judge_pair(g, h, gateway, "judge")
        assert verdict.final is False
        assert backend.chat_calls == 2

    def test_disagreement_tiebreak_no(self):
        gateway, backend = judge_gateway({"gh": "Yes", "hg": "No", "containment": "No"})
        g, h = self.pair()
        verdict = judge_pair(g, h, gateway, "judge")
        assert verdict.final is False
        assert verdict.verdicts == (True, False, False)
        assert backend.chat_calls == 3

    def test_disagreement_tiebreak_yes(self):
        gateway, _ = judge_gateway({"gh": "No", "hg": "Yes", "containment": "Yes"})
        g, h = self.pair()
        assert judge_pair(g, h, gateway, "judge").final is True

    def test_argument_order_invariance(self):
        g, h = self.pair()
        script = {"gh": "Yes", "hg": "No", "containment": "Yes"}
        gateway_a, _ = judge_gateway(script)
        gateway_b, _ = judge_gateway(script)
        forward = judge_pair(g, h, gateway_a, "judge")
        backward = judge_pair(h, g, gateway_b, "judge")
        assert forward.final == backward.final

    def test_annotated_complexity_pair_matches(self):
        g = stmt(
            "Model Complexity Concerns: There is a question regarding whether the "
            "performance gains are due to increased model complexity rather than "
            "the proposed recursive mixing approach."
        )
        h = stmt(
            "Potential for Increased Complexity: Although the method is described "
            "as simple, the recursive nature of the approach may introduce "
            "complexity in implementation and understanding.",
            provenance="generated",
        )
        gateway, _ = scripted_gateway(lambda req: "Yes")
        assert judge_pair(g, h, gateway, "judge").final is True

    def test_unparseable_both_tries_nonmatch(self):
        gateway, backend = scripted_gateway(lambda req: "Perhaps, hard to say.")
        g, h = self.pair()
        verdict = judge_pair(g, h, gateway, "judge")
        assert verdict.final is False
        assert verdict.verdicts == ()
        assert backend.chat_calls == 2

    def test_nudged_retry_recovers(self):
        def responder(request):
            if len(request.messages) == 1:
                return "hmm"
            return "Yes"

        gateway, backend = scripted_gateway(responder)
        g, h = self.pair()
        verdict = judge_pair(g, h, gateway, "judge")
        assert verdict.final is True
        assert backend.chat_calls == 4

    def test_empty_statement_unconstructible(self):
        # the statement type already rejects empty text, so the judge can
        # never receive one
        with pytest.raises(ValueError):
            stmt("   ")

    def test_verdict_cap(self):
        with pytest.raises(ValueError):
            PairVerdict(gt_index=0, gen_index=0, verdicts=(True,) * 4, final=True)


def set_judge(allowed):
    def responder(request):
        prompt = request.messages[0][1]
        for a, b in allowed:
            if a in prompt and b in prompt:
                return "Yes"
        return "No"

    return responder


GT_TEXTS = ["Ground alpha statement.", "Ground beta statement."]
GEN_TEXTS = ["Candidate one text.", "Candidate two text.", "Candidate three text."]


class TestMatchAll:
    def sets(self):
        return limset(GT_TEXTS, "merged"), limset(GEN_TEXTS, "generated")

    def test_all_yes(self):
        gateway, backend = scripted_gateway(lambda req: "Yes")
        gt, gen = self.sets()
        match_set = match_all(gt, gen, gateway, "judge")
        assert match_set.x == 2 and match_set.y == 3
        assert len(match_set.matched_pairs) == 6
        assert len(match_set.verdicts) == 6
        assert backend.chat_calls == 12

    def test_all_no(self):
        gateway, _ = scripted_gateway(lambda req: "No")
        gt, gen = self.sets()
        assert match_all(gt, gen, gateway, "judge").matched_pairs == ()

    def test_exact_fixture_pairs(self):
        allowed = {(GT_TEXTS[0], GEN_TEXTS[0]), (GT_TEXTS[0], GEN_TEXTS[1])}
        gateway, _ = scripted_gateway(set_judge(allowed))
        gt, gen = self.sets()
        match_set = match_all(gt, gen, gateway, "judge")
        assert set(match_set.matched_pairs) == {(0, 0), (0, 1)}

    def test_empty_set_rejected(self):
        gateway, _ = scripted_gateway()
        gt = limset(GT_TEXTS, "merged")
        empty = LimitationSet(paper_id="p1", provenance="generated", statements=())
        with pytest.raises(EvaluationError):
            match_all(gt, empty, gateway, "judge")


class TestCoverage:
    def test_worked_example(self):
        # x=2, y=3, M={(g1,h1),(g1,h2)} in 1-based indexing.
        match_set = MatchSet(paper_id="p", x=2, y=3, matched_pairs=((0, 0), (0, 1)))
        result = coverage(match_set, "dedup_matching")
        assert result.a_gi == pytest.approx(0.5, abs=1e-9)
        assert result.a_hi == pytest.approx(2 / 3, abs=1e-9)
        assert (result.tp, result.fp, result.fn) == (1, 1, 1)
        assert result.precision == pytest.approx(0.5)
        assert result.recall == pytest.approx(0.5)
        assert result.f1 == pytest.approx(0.5)

    def test_all_matched_both_modes(self):
        pairs = tuple((k, l) for k in range(2) for l in range(3))
        match_set = MatchSet(paper_id="p", x=2, y=3, matched_pairs=pairs)
        for mode in ("raw_pairs", "dedup_matching"):
            result = coverage(match_set, mode)
            assert result.a_gi == 1.0 and result.a_hi == 1.0
            assert result.fp == 0 and result.fn == 0
            assert result.precision == result.recall == result.f1 == 1.0

    def test_empty_match_set(self):
        match_set = MatchSet(paper_id="p", x=4, y=5, matched_pairs=())
        result = coverage(match_set)
        assert result.a_gi == 0.0 and result.a_hi == 0.0
        assert (result.tp, result.fp, result.fn) == (0, 4, 5)
        assert result.precision == result.recall == result.f1 == 0.0

    def test_modes_differ_on_multi_claim(self):
        # x=3, y=2, M={(0,0),(0,1)}: dedup tp=1 vs raw tp=2; fp=2, fn=0.
        match_set = MatchSet(paper_id="p", x=3, y=2, matched_pairs=((0, 0), (0, 1)))
        dedup = coverage(match_set, "dedup_matching")
        raw = coverage(match_set, "raw_pairs")
        assert dedup.tp == 1 and raw.tp == 2
        assert dedup.precision == pytest.approx(1 / 3)
        assert raw.precision == pytest.approx(0.5)
        assert dedup.recall == 1.0 and raw.recall == 1.0

    def test_unknown_mode(self):
        match_set = MatchSet(paper_id="p", x=1, y=1, matched_pairs=())
        with pytest.raises(ValueError):
            coverage(match_set, "bogus")

    @given(
        x=st.integers(1, 6),
        y=st.integers(1, 6),
        seed=st.integers(0, 10_000),
        mode=st.sampled_from(["raw_pairs", "dedup_matching"]),
    )
    @settings(max_examples=200, deadline=None)
    def test_matches_oracle(self, x, y, seed, mode):
        rng = random.Random(seed)
        universe = [(k, l) for k in range(x) for l in range(y)]
        pairs = tuple(sorted(rng.sample(universe, rng.randint(0, len(universe)))))
        result = coverage(MatchSet(paper_id="p", x=x, y=y, matched_pairs=pairs), mode)
        expected = oracle_coverage(x, y, pairs, mode)
        assert result.a_gi == expected["a_gi"]
        assert result.a_hi == expected["a_hi"]
        assert result.tp == expected["tp"]
        assert result.fp == expected["fp"]
        assert result.fn == expected["fn"]
        assert result.precision == expected["precision"]
        assert result.recall == expected["recall"]
        assert result.f1 == expected["f1"]

    @given(x=st.integers(1, 5), y=st.integers(1, 5), seed=st.integers(0, 5000))
    @settings(max_examples=100, deadline=None)
    def test_adding_pair_monotone(self, x, y, seed):
        rng = random.Random(seed)
        universe = [(k, l) for k in range(x) for l in range(y)]
        size = rng.randint(0, len(universe) - 1)
        pairs = set(rng.sample(universe, size))
        extra = rng.choice([p for p in universe if p not in pairs])
        before = coverage(MatchSet(paper_id="p", x=x, y=y, matched_pairs=tuple(pairs)))
        after = coverage(
            MatchSet(paper_id="p", x=x, y=y, matched_pairs=tuple(pairs | {extra}))
        )
        assert after.a_gi >= before.a_gi
        assert after.a_hi >= before.a_hi
        assert after.tp >= before.tp
        assert after.tp <= min(x, y)


class TestAggregate:
    def cov(self, a_gi, a_hi=0.5, p=0.5, r=0.5, f1=0.5):
        return CoverageResult(
            a_gi=a_gi, a_hi=a_hi, tp=1, fp=1, fn=1,
            precision=p, recall=r, f1=f1, tp_mode="dedup_matching",
        )

    def test_two_paper_mean(self):
        report = aggregate([self.cov(0.5), self.cov(1.0)])
        assert report.a_g_percent == pytest.approx(75.0)

    def test_single_paper_identity(self):
        report = aggregate([self.cov(0.25, a_hi=0.75, f1=0.6)])
        assert report.a_g_percent == pytest.approx(25.0)
        assert report.a_h_percent == pytest.approx(75.0)
        assert report.f1 == pytest.approx(0.6)

    def test_empty_rejected(self):
        with pytest.raises(EvaluationError):
            aggregate([])


class FakeSidecar:
    def __init__(self, f1_value=0.9, fail=False):
        self.f1_value = f1_value
        self.fail = fail
        self.calls = []

    def score(self, candidates, references):
        if self.fail:
            raise SidecarError("down")
        self.calls.append((list(candidates), list(references)))
        n = len(candidates)
        return {"precision": [1.0] * n, "recall": [1.0] * n, "f1": [self.f1_value] * n}


class TestPerformance:
    def run(self, gt_texts, gen_texts, pairs, sidecar=None):
        gateway, _ = scripted_gateway()
        gt = limset(gt_texts, "merged")
        gen = limset(gen_texts, "generated")
        match_set = MatchSet(
            paper_id="p1", x=len(gt_texts), y=len(gen_texts), matched_pairs=tuple(pairs)
        )
        return performance(match_set, gt, gen, gateway, sidecar)

    def test_identity_pair(self):
        text = "The study only covers one language."
        result = self.run([text], [text], [(0, 0)])
        assert result.rouge1 == result.rougeL == result.bleu == result.jaccard == 1.0
        assert result.cosine == pytest.approx(1.0)
        assert result.pair_count == 1

    def test_hand_rougeL(self):
        result = self.run(["the cat sat"], ["the cat ran"], [(0, 0)])
        assert result.rougeL == pytest.approx(2 / 3, abs=1e-9)

    def test_hand_jaccard(self):
        result = self.run(["alpha beta"], ["beta gamma"], [(0, 0)])
        assert result.jaccard == pytest.approx(1 / 3, abs=1e-9)

    def test_empty_match_flagged(self):
        result = self.run(["a text."], ["b text."], [])
        assert result.pair_count == 0
        assert result.rouge1 is None and result.cosine is None
        assert result.contextual_f is None

    def test_sidecar_mean(self):
        sidecar = FakeSidecar(f1_value=0.8)
        result = self.run(["one text."], ["one text."], [(0, 0)], sidecar=sidecar)
        assert result.contextual_f == pytest.approx(0.8)
        assert sidecar.calls == [(["one text."], ["one text."])]

    def test_sidecar_failure_graceful(self):
        result = self.run(
            ["one text."], ["one text."], [(0, 0)], sidecar=FakeSidecar(fail=True)
        )
        assert result.contextual_f is None
        assert result.rouge1 == 1.0

    def test_pair_order_invariance(self):
        gt = ["gt one text.", "gt two text."]
        gen = ["gen one text.", "gen two text."]
        forward = self.run(gt, gen, [(0, 0), (1, 1)])
        backward = self.run(gt, gen, [(1, 1), (0, 0)])
        assert forward == backward


class TestKeywords:
    def test_identical_sets(self):
        gateway, _ = scripted_gateway()
        texts = ["The corpus is small.", "Only one domain is covered."]
        result = keyword_eval(
            limset(texts, "merged"), limset(texts, "generated"), gateway
        )
        assert result["jaccard"] == 1.0
        assert result["cosine"] == pytest.approx(1.0)

    def test_disjoint_vocabulary(self):
        gateway, _ = scripted_gateway()
        result = keyword_eval(
            limset(["alpha bravo charlie delta."], "merged"),
            limset(["echo foxtrot golf hotel."], "generated"),
            gateway,
        )
        assert result["jaccard"] == 0.0

    def test_hand_mmr_selection(self):
        # Relevance to doc [1,1]: "alpha beta"=.894, "beta gamma"=.894,
        # alpha=.707, beta=.707, gamma=0. Pick "alpha beta" (lexicographic
        # tie-break). MMR step 2 favors gamma (negative redundancy), step 3
        # "beta gamma". Derivation in vector arithmetic by hand.
        vectors = {
            "alpha beta gamma": [1.0, 1.0],
            "alpha": [1.0, 0.0],
            "beta": [0.0, 1.0],
            "gamma": [-1.0, 1.0],
            "alpha beta": [3.0, 1.0],
            "beta gamma": [1.0, 3.0],
        }
        gateway = LLMGateway(VectorBackend(vectors))
        assert extract_keywords("alpha beta gamma", gateway, k=3) == [
            "alpha beta",
            "gamma",
            "beta gamma",
        ]

    def test_fewer_candidates_than_k(self):
        gateway, _ = scripted_gateway()
        keywords = extract_keywords("tiny text", gateway, k=10)
        assert set(keywords) == {"tiny", "text", "tiny text"}

    def test_empty_set_rejected(self):
        gateway, _ = scripted_gateway()
        empty = LimitationSet(paper_id="p1", provenance="generated", statements=())
        with pytest.raises(EvaluationError):
            keyword_eval(limset(["x y."], "merged"), empty, gateway)


class TestHeadings:
    def test_explicit_heading_wins(self):
        s = stmt("Long explanation here.", heading="Dataset Complexity")
        assert derive_heading(s) == "Dataset Complexity"

    def test_colon_rule(self):
        s = stmt("Results only cover English: broader data needed.")
        assert derive_heading(s) == "Results only cover English"

    def test_first_eight_tokens_fallback(self):
        s = stmt("The model requires large amounts of labeled training data to work.")
        assert derive_heading(s) == "The model requires large amounts of labeled training"

    def test_identical_headings_cosine_one(self):
        gateway, _ = scripted_gateway()
        sets = (
            limset(["a."], "merged", headings=["Scope"]),
            limset(["b."], "generated", headings=["Scope"]),
        )
        assert heading_eval(*sets, gateway) == pytest.approx(1.0)

    def test_sidecar_score_used(self):
        gateway, _ = scripted_gateway()
        sets = (
            limset(["a."], "merged", headings=["Scope"]),
            limset(["b."], "generated", headings=["Breadth"]),
        )
        assert heading_eval(*sets, gateway, sidecar=FakeSidecar(f1_value=0.77)) == 0.77

    def test_sidecar_failure_falls_back(self):
        gateway, _ = scripted_gateway()
        sets = (
            limset(["a."], "merged", headings=["Scope"]),
            limset(["b."], "generated", headings=["Scope"]),
        )
        score = heading_eval(*sets, gateway, sidecar=FakeSidecar(fail=True))
        assert score == pytest.approx(1.0)


class TestCompareJudges:
    def test_identical_vectors(self):
        table = compare_judges({"a": [1, 0, 1], "b": [1, 0, 1]})
        assert table[("a", "b")] == 1.0

    def test_independent_vectors_zero(self):
        # po = 4/8, both marginals 0.5 -> pe = 0.5 -> kappa = 0
        a = [1, 1, 0, 0, 1, 0, 1, 0]
        b = [1, 0, 1, 0, 1, 0, 0, 1]
        table = compare_judges({"a": a, "b": b})
        assert table[("a", "b")] == pytest.approx(0.0, abs=1e-12)

    def test_point_nine_agreement_shape(self):
        # 20 labels, one disagreement: po=0.95, pe=0.5, kappa=0.9
        model = [1] * 10 + [0] * 10
        he1 = [1] * 9 + [0] * 11
        table = compare_judges({"he1": he1, "model": model})
        assert table[("he1", "model")] == pytest.approx(0.9, abs=1e-9)

    def test_three_raters_pairwise(self):
        labels = {"a": [1, 0], "b": [1, 0], "c": [0, 1]}
        table = compare_judges(labels)
        assert set(table) == {("a", "b"), ("a", "c"), ("b", "c")}

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            compare_judges({"a": [1, 0], "b": [1]})


class TestEvaluateSets:
    def test_record_round(self):
        gateway, _ = scripted_gateway(lambda req: "Yes")
        text = "Identical limitation statement."
        evaluation = evaluate_sets(
            limset([text], "merged"), limset([text], "generated"), gateway, "judge"
        )
        assert evaluation.coverage_dedup.f1 == 1.0
        assert evaluation.coverage_raw.tp == 1
        assert evaluation.performance.rouge1 == 1.0
        record = evaluation_to_dict(evaluation)
        assert record["x"] == 1 and record["y"] == 1
        assert record["coverage"]["dedup_matching"]["f1"] == 1.0
        assert record["verdicts"][0]["final"] is True
