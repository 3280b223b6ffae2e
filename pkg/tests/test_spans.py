"""Tests for limitation span extraction and extraction scoring."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from limforge.corpus import GoldAnnotation, PaperRecord, Section
from limforge.gateway import LLMGateway, MockBackend
from limforge.spans import (
    ExtractionError,
    extract_explicit,
    extract_implicit,
    extract_spans,
    score_extraction,
)


def paper_from_sections(*pairs: tuple[str, str]) -> PaperRecord:
    sections = tuple(
        Section(heading=h, body=b, index=i) for i, (h, b) in enumerate(pairs)
    )
    return PaperRecord(paper_id="p1", title="T", venue="V", year=2024, sections=sections)


def hashed_gateway() -> LLMGateway:
    return LLMGateway(MockBackend(embedding_mode="hashed", embed_dim=32))


class TestExplicit:
    def test_dedicated_section_returned_in_full(self):
        paper = paper_from_sections(
            ("Introduction", "Intro text."),
            ("Limitations", "First limitation. Second limitation."),
        )
        span = extract_explicit(paper)
        assert span is not None
        assert span.section_index == 1
        assert span.text == "First limitation. Second limitation."
        assert span.char_start == 0
        assert span.char_end == len("First limitation. Second limitation.")

    def test_heading_normalization(self):
        paper = paper_from_sections(("7 LIMITATIONS AND FUTURE WORK:", "Body here."))
        assert extract_explicit(paper) is not None

    def test_study_limitations_variant(self):
        paper = paper_from_sections(("Study Limitations", "Body."))
        assert extract_explicit(paper) is not None

    def test_absent(self):
        paper = paper_from_sections(("Methods", "No such section."))
        assert extract_explicit(paper) is None

    def test_first_match_wins(self):
        paper = paper_from_sections(
            ("Limitations", "First."), ("Limitations", "Second.")
        )
        span = extract_explicit(paper)
        assert span.section_index == 0


class TestImplicit:
    def test_span_from_keyword_to_stop_cue(self):
        body = (
            "The approach is robust. A limitation is X. It also fails on Y. "
            "Acknowledgements: we thank reviewers."
        )
        paper = paper_from_sections(("Methods", body))
        spans = extract_implicit(paper)
        assert [s.text for s in spans] == ["A limitation is X. It also fails on Y."]
        span = spans[0]
        assert body[span.char_start : span.char_end] == span.text

    def test_keyword_in_abstract_ignored(self):
        paper = paper_from_sections(
            ("Abstract", "A key limitation is discussed."),
            ("Methods", "Nothing here."),
        )
        assert extract_implicit(paper) == []

    def test_keyword_in_introduction_and_related_work_ignored(self):
        paper = paper_from_sections(
            ("1 Introduction", "One limitation motivates this work."),
            ("2 Related Work", "Shortcomings of prior work abound."),
        )
        assert extract_implicit(paper) == []

    def test_two_keyword_sites_hand_boundaries(self):
        body = (
            "The method works well. One limitation is coverage. "
            "Errors persist in rare cases. Future work will address this. "
            "A second shortcoming is speed. We close with remarks."
        )
        paper = paper_from_sections(("Analysis", body))
        spans = extract_implicit(paper)
        # Hand-derived boundaries: first span runs from the first keyword
        # sentence until the "Future work" cue; second runs to section end.
        first_start = body.index("One limitation")
        first_end = body.index("rare cases.") + len("rare cases.")
        second_start = body.index("A second shortcoming")
        assert [(s.char_start, s.char_end) for s in spans] == [
            (first_start, first_end),
            (second_start, len(body)),
        ]
        assert spans[0].text == (
            "One limitation is coverage. Errors persist in rare cases."
        )
        assert spans[1].text == "A second shortcoming is speed. We close with remarks."

    def test_span_extends_to_section_end_without_stop(self):
        body = "Setup was fixed. The main shortcoming is latency. It grows with depth."
        paper = paper_from_sections(("Results", body))
        spans = extract_implicit(paper)
        assert spans[0].text == "The main shortcoming is latency. It grows with depth."

    def test_start_sentence_with_leading_stop_cue_still_included(self):
        body = "Future work must fix this limitation. More detail follows."
        paper = paper_from_sections(("Analysis", body))
        spans = extract_implicit(paper)
        assert spans[0].text == body

    def test_plural_keywords(self):
        body = "Several limitations remain. Shortcomings too."
        paper = paper_from_sections(("Analysis", body))
        spans = extract_implicit(paper)
        assert len(spans) == 1
        assert spans[0].text == body

    def test_keyword_word_bounded(self):
        paper = paper_from_sections(("Analysis", "We study delimitations of regions."))
        assert extract_implicit(paper) == []

    def test_discussion_cue_stops_span(self):
        body = "One limitation is scale. Discussion of this follows elsewhere."
        paper = paper_from_sections(("Analysis", body))
        spans = extract_implicit(paper)
        assert spans[0].text == "One limitation is scale."

    def test_spans_never_cross_sections(self):
        paper = paper_from_sections(
            ("Analysis", "A limitation is X."),
            ("More", "Continued text here."),
        )
        spans = extract_implicit(paper)
        assert len(spans) == 1
        assert spans[0].section_index == 0
        assert spans[0].text == "A limitation is X."

    @given(
        st.lists(
            st.sampled_from(
                [
                    "The model performs well.",
                    "A limitation is coverage.",
                    "Shortcomings appear at scale.",
                    "Future work will expand this.",
                    "Conclusion follows from the data.",
                    "Results were strong overall.",
                ]
            ),
            min_size=1,
            max_size=8,
        )
    )
    @settings(max_examples=100)
    def test_spans_are_exact_slices_and_disjoint(self, sentences):
        body = " ".join(sentences)
        paper = paper_from_sections(("Analysis", body))
        spans = extract_implicit(paper)
        previous_end = -1
        for span in spans:
            assert body[span.char_start : span.char_end] == span.text
            assert span.char_start > previous_end
            previous_end = span.char_end


class TestExtractSpans:
    def test_explicit_precedence(self):
        paper = paper_from_sections(
            ("Limitations", "Dedicated body."),
            ("Analysis", "Another limitation elsewhere."),
        )
        extraction = extract_spans(paper)
        assert extraction.mode == "explicit"
        assert len(extraction.spans) == 1
        assert extraction.spans[0].text == "Dedicated body."

    def test_implicit_fallback(self):
        paper = paper_from_sections(("Analysis", "One limitation is X."))
        extraction = extract_spans(paper)
        assert extraction.mode == "implicit"

    def test_none_mode(self):
        paper = paper_from_sections(("Analysis", "Nothing relevant here."))
        extraction = extract_spans(paper)
        assert extraction.mode == "none"
        assert extraction.spans == ()
        assert extraction.full_text() == ""


class TestScoreExtraction:
    def test_identity(self):
        quality = score_extraction(
            "The tagger fails on long input.",
            GoldAnnotation(paper_id="p", gold_text="The tagger fails on long input."),
            hashed_gateway(),
        )
        assert quality.precision == pytest.approx(100.0)
        assert quality.recall == pytest.approx(100.0)
        assert quality.f1 == pytest.approx(100.0)
        assert quality.fuzzy == pytest.approx(100.0)
        assert quality.cosine == pytest.approx(100.0)

    def test_hand_token_bags(self):
        quality = score_extraction("a b c", "b c d", hashed_gateway())
        assert quality.precision == pytest.approx(200 / 3)
        assert quality.recall == pytest.approx(200 / 3)
        assert quality.f1 == pytest.approx(200 / 3)

    def test_multiplicities_counted(self):
        # bags: {a:2, b:1} vs {a:1, b:2}; intersection = {a:1, b:1}
        quality = score_extraction("a a b", "a b b", hashed_gateway())
        assert quality.precision == pytest.approx(200 / 3)
        assert quality.recall == pytest.approx(200 / 3)

    def test_swap_exchanges_precision_and_recall(self):
        gateway = hashed_gateway()
        forward = score_extraction("a b c d", "c d", gateway)
        backward = score_extraction("c d", "a b c d", gateway)
        assert forward.precision == pytest.approx(backward.recall)
        assert forward.recall == pytest.approx(backward.precision)
        assert forward.f1 == pytest.approx(backward.f1)

    def test_disjoint_tokens(self):
        quality = score_extraction("a b", "c d", hashed_gateway())
        assert quality.precision == 0.0
        assert quality.recall == 0.0
        assert quality.f1 == 0.0

    def test_empty_inputs_rejected(self):
        with pytest.raises(ExtractionError):
            score_extraction("", "gold", hashed_gateway())
        with pytest.raises(ExtractionError):
            score_extraction("text", "  ", hashed_gateway())

    @given(
        st.lists(st.sampled_from("abcde"), min_size=1, max_size=8),
        st.lists(st.sampled_from("abcde"), min_size=1, max_size=8),
    )
    @settings(max_examples=100)
    def test_f1_between_precision_and_recall(self, xs, ys):
        quality = score_extraction(" ".join(xs), " ".join(ys), hashed_gateway())
        if quality.precision > 0 or quality.recall > 0:
            low = min(quality.precision, quality.recall)
            high = max(quality.precision, quality.recall)
            assert low - 1e-9 <= quality.f1 <= high + 1e-9
