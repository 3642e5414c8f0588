import json

from barpatch.abcnotation import count_bars, parse_tune, serialize
from barpatch.curation import (
    CurationReport,
    curate_directory,
    curate_texts,
    dedup_key,
    deduplicate,
    ensure_final_barline,
    filter_copyright,
    filter_short,
    has_copyright,
    read_corpus,
    strip_nonmusical,
    transliterate,
    trim_rest_bars,
    write_corpus,
)

HEAD = "X:1\nT:Tune\nM:4/4\nL:1/8\nK:C\n"
EIGHT = "CDEF GABc|cBAG FEDC|CDEF GABc|c8|\nCDEF GABc|cBAG FEDC|EDCB, CDEF|C8|]\n"


def tune(body=EIGHT, head=HEAD):
    return parse_tune(head + body)


def test_copyright_filter():
    assert not filter_copyright(tune(head="X:1\nN:Copyright 1999\nK:C\n"))
    assert not filter_copyright(tune(head="X:1\nT:The Copyright Reel\nK:C\n"))
    assert has_copyright("X:1\nN:\u00a9 someone\nK:C\n")
    assert filter_copyright(tune(body='"C"z8|"G"z8|]\n'))
    assert has_copyright("COPYRIGHT")


def test_short_filter_boundary():
    bars = "CDEF|" * 7
    assert not filter_short(tune(body=bars + "\n"))
    assert filter_short(tune(body=bars + "G4|\n"))
    assert not filter_short(parse_tune("X:1\nK:C\n"))


def test_strip_nonmusical():
    t = parse_tune("X:1\nT:a\nZ:john@example.com\nN:see www.x.org\nK:C\nCDEF|\nw:fa la la\nW:x\nCDEF|\n")
    assert serialize(strip_nonmusical(t)) == "X:1\nT:a\nK:C\nCDEF|\nCDEF|\n"
    plain = tune()
    assert strip_nonmusical(plain) == plain


def test_musical_fields_kept_even_with_url():
    t = parse_tune("X:1\nT:http://tune.example\nK:C\nCDEF|\n")
    assert strip_nonmusical(t) == t


def test_trim_rest_bars():
    t = parse_tune("X:1\nL:1/8\nK:C\nz8|CDEF GABc|z8|]\n")
    assert trim_rest_bars(t).body_text == "CDEF GABc|]\n"
    inner = parse_tune("X:1\nL:1/8\nK:C\nCDEF|z8|GABc|]\n")
    assert trim_rest_bars(inner) == inner
    assert trim_rest_bars(parse_tune("X:1\nL:1/8\nK:C\nz8|z8|]\n")).body_text == ""


def test_final_barline():
    def fix(body):
        return ensure_final_barline(parse_tune("X:1\nK:C\n" + body)).body_text

    assert fix("CDEF G4") == "CDEF G4 |]"
    assert fix("CDEF G4 |]") == "CDEF G4 |]"
    assert fix("CDEF G4 |") == "CDEF G4 |]"
    assert fix("CDEF G4 ||\n") == "CDEF G4 |]\n"
    assert fix("CDEF G4 % end\n") == "CDEF G4 |] % end\n"


def test_dedup():
    a = tune()
    b = tune(head="X:2\nT:Other Title\nM:4/4\nL:1/8\nK:C\n")
    c = tune(head="X:3\nT:Tune\nM:4/4\nL:1/8\nK:G\n")
    spaced = tune(body=EIGHT.replace(" ", ""))
    assert deduplicate([a, a]) == [a]
    assert deduplicate([a, b]) == [a]
    assert deduplicate([a, c]) == [a, c]
    assert deduplicate([a, spaced]) == [a]
    assert dedup_key(a) == dedup_key(spaced)


def test_transliterate():
    assert transliterate("T:Caf\u00e9\n") == "T:Cafe\n"
    assert transliterate("T:\u65e5\u672c\n") is None
    assert transliterate("plain") == "plain"


def test_curate_texts_report_invariant():
    texts = [
        HEAD + EIGHT,
        HEAD.replace("X:1", "X:2") + EIGHT,                       # duplicate
        "X:3\nN:copyright\nK:C\n" + EIGHT,                       # copyright
        "X:4\nK:C\nCDEF|GABc|]\n",                               # short
        "X:5\nT:Ni\u00f1a\nL:1/8\nK:D\n" + EIGHT.replace("C8|]", "D8|"),  # transliterated, barline fixed
        "X:6\nT:\u266b\nK:C\n" + EIGHT,                          # no ASCII form
        'X:7\nK:C\n"C' + EIGHT,                                  # unterminated chord
    ]
    report = CurationReport()
    out = curate_texts(texts, report)
    assert report.output_count == len(out) == 2
    assert report.rejected_copyright == 1
    assert report.rejected_short == 1
    assert report.rejected_nonascii == 1
    assert report.rejected_unparseable == 1
    assert report.deduplicated == 1
    assert report.output_count == report.input_count - report.rejected - report.deduplicated
    for t in out:
        assert count_bars(t) >= 8
        assert t.body_text.rstrip().endswith("|]")
        assert t.field("w") is None
    assert out[1].field("T").value == "Nina"


def test_curate_directory_deterministic(tmp_path):
    src = tmp_path / "src"
    (src / "sub").mkdir(parents=True)
    (src / "b.abc").write_text(HEAD + EIGHT + "\n" + HEAD.replace("K:C", "K:D") + EIGHT)
    (src / "sub" / "a.abc").write_text("X:9\nN:copyright\nK:C\n" + EIGHT)
    (src / "notes.txt").write_text("not abc")
    (src / "score.xml").write_text("<score/>")
    runs = []
    for k in range(2):
        tunes, report = curate_directory(src)
        path = tmp_path / f"corpus{k}.abc"
        write_corpus(tunes, path)
        runs.append((path.read_bytes(), report.to_json()))
    assert runs[0] == runs[1]
    report = json.loads(runs[0][1])
    assert report["input_count"] == 3 and report["output_count"] == 2
    assert sorted(report["skipped_files"]) == ["notes.txt", "score.xml"]
    back = read_corpus(tmp_path / "corpus0.abc")
    assert [serialize(t) for t in back] == [serialize(t) for t in tunes]
