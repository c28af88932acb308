import pytest

from app.errors import FormatError
from app.parser import RawEvent, load_frame, parse_events, write_events_csv


def test_parses_rows_in_file_order():
    events = parse_events(b"s1,100,a\ns1,105,b")
    assert events == [RawEvent("s1", 100, "a"), RawEvent("s1", 105, "b")]


def test_header_row_is_skipped():
    events = parse_events(b"session_id,timestamp,item_id\ns1,100,a\n")
    assert events == [RawEvent("s1", 100, "a")]


def test_non_numeric_sole_row_is_rejected():
    with pytest.raises(FormatError):
        parse_events(b"s1,notanumber,a")


def test_empty_input():
    with pytest.raises(FormatError, match="no events parsed"):
        parse_events(b"")


def test_comments_and_blank_lines_are_ignored():
    df, malformed = load_frame(b"# seed=1\n\nsession_id,timestamp,item_id\ns1,1,a\n# x\ns1,2,b\n")
    assert malformed == 0
    assert df["item_id"].tolist() == ["a", "b"]


def test_few_malformed_rows_are_skipped_and_counted():
    good = "".join(f"s{k},{k},item{k}\n" for k in range(20))
    df, malformed = load_frame((good + "broken-line\n").encode())
    assert malformed == 1
    assert len(df) == 20


def test_too_many_malformed_rows_names_first_bad_line():
    data = b"s1,1,a\ns1,x,b\ns1,-5,c\ns1,3\n"
    with pytest.raises(FormatError, match="line 2"):
        load_frame(data)


@pytest.mark.parametrize("row", ["s1,1.5,a", "s1,-1,a", ",1,a", "s1,1,"])
def test_invalid_field_values_count_as_malformed(row):
    good = "".join(f"s{k},{k},item{k}\n" for k in range(30))
    _, malformed = load_frame((good + row + "\n").encode())
    assert malformed == 1


def test_raw_event_validates_itself():
    with pytest.raises(FormatError):
        RawEvent("s1", -1, "a")
    with pytest.raises(FormatError):
        RawEvent("", 1, "a")


def test_written_csv_parses_back(tmp_path):
    events = [RawEvent("s1", 10, "a"), RawEvent("s1", 20, "b"), RawEvent("s2", 5, "a")]
    path = tmp_path / "events.csv"
    data = write_events_csv(events, path, header_comment={"seed": 3})
    assert data.startswith(b"# seed=3\nsession_id,timestamp,item_id\n")
    assert parse_events(path) == events
