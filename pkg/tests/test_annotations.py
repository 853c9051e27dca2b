import math

import pytest
from hypothesis import given, strategies as st

from fewshot_sed.annotations import (AnnotationTable, Event, build_task,
                                     merged_intervals, parse_annotation_csv,
                                     serialize_annotation_csv, validate_table)
from fewshot_sed.errors import AnnotationError, TaskUnbuildableError

HEADER = "Audiofilename,Starttime,Endtime,Q\n"


def table_with(events, class_name="Q", filename="a.wav"):
    return AnnotationTable(audio_filename=filename, class_names=[class_name],
                           events={class_name: list(events)})


class TestEvent:
    def test_fields(self):
        e = Event(1.0, 2.5, "POS")
        assert e.duration == 1.5
        assert e.interval == (1.0, 2.5)

    def test_inverted_interval_rejected(self):
        with pytest.raises(AnnotationError):
            Event(2.5, 1.0, "POS")

    def test_negative_onset_rejected(self):
        with pytest.raises(AnnotationError):
            Event(-0.1, 1.0, "POS")

    def test_unknown_label_rejected(self):
        with pytest.raises(AnnotationError):
            Event(0.0, 1.0, "pos")


class TestParse:
    def test_single_pos_row(self):
        tables = parse_annotation_csv(HEADER + "a.wav,1.0,2.5,POS\n")
        assert len(tables) == 1
        assert tables[0].audio_filename == "a.wav"
        assert tables[0].pos_events("Q") == [Event(1.0, 2.5, "POS")]

    def test_unk_not_support_eligible(self):
        text = HEADER + "a.wav,1.0,2.0,POS\na.wav,3.0,3.2,UNK\n"
        table = parse_annotation_csv(text)[0]
        assert table.unk_events("Q") == [Event(3.0, 3.2, "UNK")]
        assert table.pos_events("Q") == [Event(1.0, 2.0, "POS")]

    def test_inverted_interval_names_row(self):
        with pytest.raises(AnnotationError, match="row 2"):
            parse_annotation_csv(HEADER + "a.wav,2.5,1.0,POS\n")

    def test_malformed_header(self):
        with pytest.raises(AnnotationError, match="header"):
            parse_annotation_csv("Filename,Start,End,Q\na.wav,1,2,POS\n")

    def test_header_requires_class_column(self):
        with pytest.raises(AnnotationError, match="header"):
            parse_annotation_csv("Audiofilename,Starttime,Endtime\na.wav,1,2\n")

    def test_non_numeric_time(self):
        with pytest.raises(AnnotationError, match="row 2.*non-numeric"):
            parse_annotation_csv(HEADER + "a.wav,one,2.0,POS\n")

    def test_unknown_label_token(self):
        with pytest.raises(AnnotationError, match="row 2.*MAYBE"):
            parse_annotation_csv(HEADER + "a.wav,1.0,2.0,MAYBE\n")

    def test_one_table_per_audio_file(self):
        text = HEADER + "a.wav,1.0,2.0,POS\nb.wav,0.5,0.9,POS\na.wav,3.0,4.0,NEG\n"
        tables = parse_annotation_csv(text)
        assert [t.audio_filename for t in tables] == ["a.wav", "b.wav"]
        assert len(tables[0].events["Q"]) == 2

    def test_multiclass_columns_independent(self):
        text = ("Audiofilename,Starttime,Endtime,A,B\n"
                "a.wav,1.0,2.0,POS,\n"
                "a.wav,3.0,4.0,NEG,POS\n")
        table = parse_annotation_csv(text)[0]
        assert table.pos_events("A") == [Event(1.0, 2.0, "POS")]
        # empty cell is no annotation, not NEG
        assert table.events["B"] == [Event(3.0, 4.0, "POS")]
        assert table.labelled("A", "NEG") == [Event(3.0, 4.0, "NEG")]

    def test_unsorted_rows_are_canonicalized(self):
        text = HEADER + "a.wav,5.0,6.0,POS\na.wav,1.0,2.0,POS\n"
        table = parse_annotation_csv(text)[0]
        assert [e.onset for e in table.events["Q"]] == [1.0, 5.0]
        assert validate_table(table, audio_duration=10.0) == []


class TestRoundTrip:
    def test_serialize_parse_round_trip(self):
        text = ("Audiofilename,Starttime,Endtime,A,B\n"
                "a.wav,3.0,4.0,NEG,POS\n"
                "a.wav,1.0,2.0,POS,\n"
                "b.wav,0.25,0.75,UNK,UNK\n")
        tables = parse_annotation_csv(text)
        again = parse_annotation_csv(serialize_annotation_csv(tables))
        assert len(again) == len(tables)
        for t1, t2 in zip(tables, again):
            assert t1.audio_filename == t2.audio_filename
            for name in t1.class_names:
                assert sorted((e.onset, e.offset, e.label) for e in t1.events[name]) \
                    == sorted((e.onset, e.offset, e.label) for e in t2.events[name])

    @given(st.lists(
        st.tuples(
            st.floats(min_value=0, max_value=1e4, allow_nan=False,
                      allow_infinity=False),
            st.floats(min_value=1e-3, max_value=1e3, allow_nan=False,
                      allow_infinity=False),
            st.sampled_from(["POS", "NEG", "UNK"]),
        ), min_size=0, max_size=30))
    def test_round_trip_property(self, raw):
        events = [Event(on, on + dur, label) for on, dur, label in raw]
        tables = [table_with(events)]
        again = parse_annotation_csv(serialize_annotation_csv(tables))
        if not events:
            assert again == [] or again[0].events["Q"] == []
            return
        assert sorted((e.onset, e.offset, e.label) for e in again[0].events["Q"]) \
            == sorted((e.onset, e.offset, e.label) for e in events)


class TestBuildTask:
    def events(self, n):
        return [Event(float(i), float(i) + 0.5, "POS") for i in range(1, n + 1)]

    def test_first_five_of_seven(self):
        table = table_with(self.events(7))
        task = build_task(table, "Q", 5)
        assert [e.onset for e in task.support] == [1.0, 2.0, 3.0, 4.0, 5.0]
        assert task.support_end == 5.5
        assert task.query_region == (5.5, math.inf)

    def test_exactly_five(self):
        task = build_task(table_with(self.events(5)), "Q", 5)
        assert len(task.support) == 5

    def test_four_is_an_error_naming_shortfall(self):
        with pytest.raises(TaskUnbuildableError, match="4 POS events, 5 shots"):
            build_task(table_with(self.events(4)), "Q", 5)

    def test_support_end_is_max_offset_with_overlapping_shots(self):
        events = [Event(0.0, 10.0, "POS")] + self.events(6)
        task = build_task(table_with(events), "Q", 5)
        # first-by-onset shot spans [0, 10]; later shots end earlier
        assert task.support_end == 10.0

    def test_unk_events_pass_through(self):
        events = self.events(5) + [Event(0.2, 0.3, "UNK")]
        task = build_task(table_with(events), "Q", 5)
        assert task.unk_events == (Event(0.2, 0.3, "UNK"),)

    def test_duration_bounds_query_region(self):
        task = build_task(table_with(self.events(5)), "Q", 5, audio_duration=30.0)
        assert task.query_region == (5.5, 30.0)
        with pytest.raises(TaskUnbuildableError, match="query region empty"):
            build_task(table_with(self.events(5)), "Q", 5, audio_duration=5.5)

    def test_deterministic(self):
        table = table_with(self.events(9))
        assert build_task(table, "Q", 5) == build_task(table, "Q", 5)

    def test_support_never_in_query_region(self):
        events = [Event(0.0, 4.0, "POS")] + self.events(8)
        task = build_task(table_with(events), "Q", 5)
        for shot in task.support:
            assert shot.offset <= task.support_end

    def test_onset_ties_broken_by_row_order(self):
        events = [Event(1.0, 2.0, "POS"), Event(1.0, 1.5, "POS"),
                  Event(3.0, 4.0, "POS"), Event(5.0, 6.0, "POS"),
                  Event(7.0, 8.0, "POS"), Event(9.0, 10.0, "POS")]
        task = build_task(table_with(events), "Q", 5)
        assert task.support[0].offset == 2.0  # first source row wins the tie


class TestValidate:
    def test_in_bounds_clean(self):
        table = table_with([Event(1.0, 2.0, "POS")])
        assert validate_table(table, audio_duration=100.0) == []

    def test_out_of_bounds_flagged(self):
        table = table_with([Event(99.0, 101.0, "POS")])
        violations = validate_table(table, audio_duration=100.0)
        assert len(violations) == 1
        assert violations[0].rule == "event_beyond_audio_end"

    def test_unknown_duration_skips_bounds(self):
        table = table_with([Event(99.0, 101.0, "POS")])
        assert validate_table(table, audio_duration=None) == []


def test_merged_intervals_overlaps():
    events = [Event(0.0, 2.0, "POS"), Event(1.0, 3.0, "POS"),
              Event(5.0, 6.0, "POS")]
    assert merged_intervals(events) == [(0.0, 3.0), (5.0, 6.0)]
