import json

import pytest

from attackgkb.cli import run
from conftest import LISTING_QUERY, DATA_DIR


@pytest.fixture()
def kb(fixture_path, records_path, tmp_path):
    """Path of an enhanced bundle written by the enrich command."""
    out = tmp_path / "enhanced.json"
    code, _, err = run(
        [
            "enrich",
            "--kb", str(fixture_path),
            "--records", str(records_path),
            "--out", str(out),
        ]
    )
    assert code == 0, err
    return str(out)


def test_query_listing_to_table(kb):
    code, out, err = run(["query", "--kb", kb, LISTING_QUERY])
    assert code == 0
    names = [line.split(maxsplit=1)[1] for line in out.strip().splitlines()]
    assert names == ["APT28", "APT29", "Dragonfly 2.0"]


def test_query_formats(kb):
    code, ids_out, _ = run(["query", "--kb", kb, LISTING_QUERY, "--format", "ids"])
    assert code == 0
    assert ids_out.split() == ["G0007", "G0016", "G0074"]

    code, json_out, _ = run(["query", "--kb", kb, LISTING_QUERY, "--format", "json"])
    assert code == 0
    payload = json.loads(json_out)
    assert set(payload) == {"ids", "names", "attack_ids", "warnings"}
    assert payload["attack_ids"] == ["G0007", "G0016", "G0074"]
    assert payload["names"] == ["APT28", "APT29", "Dragonfly 2.0"]


def test_query_from_file_and_env(kb, tmp_path, monkeypatch):
    qfile = tmp_path / "q.sql"
    qfile.write_text(LISTING_QUERY, encoding="utf-8")
    monkeypatch.setenv("ATTCK_KB", kb)
    code, out, _ = run(["query", "--query-file", str(qfile), "--format", "ids"])
    assert code == 0
    assert out.split() == ["G0007", "G0016", "G0074"]


def test_query_syntax_error_reports_offset(kb):
    code, out, err = run(["query", "--kb", kb, 'OriginatesFrom == '])
    assert code == 1
    assert out == ""
    assert "offset" in err


def test_query_unknown_value_warns_on_stderr(kb):
    code, out, err = run(
        ["query", "--kb", kb, 'TargetCountry == "Atlantis"', "--format", "ids"]
    )
    assert code == 0
    assert out == ""
    assert "Atlantis" in err


def test_validate_malformed_bundle(tmp_path):
    bad = tmp_path / "malformed.json"
    obj = {
        "type": "intrusion-set",
        "spec_version": "2.1",
        "id": "intrusion-set--00000000-0000-4000-8000-000000000001",
        "created": "2021-01-01T00:00:00.000Z",
        "modified": "2021-01-01T00:00:00.000Z",
        "name": "Twin",
    }
    bad.write_text(
        json.dumps(
            {
                "type": "bundle",
                "id": "bundle--11111111-1111-4111-8111-111111111111",
                "objects": [obj, dict(obj)],
            }
        ),
        encoding="utf-8",
    )
    code, out, err = run(["validate", "--kb", str(bad)])
    assert code == 1
    assert "duplicate-id" in err


def test_validate_clean_bundle(kb):
    code, _, err = run(["validate", "--kb", kb])
    assert code == 0
    assert "0 violations" in err


def test_validate_unreadable_file():
    code, _, err = run(["validate", "--kb", "/nonexistent/kb.json"])
    assert code == 1
    assert "error" in err


def test_ingest_counts(fixture_path):
    code, out, err = run(["ingest", "--kb", str(fixture_path)])
    assert code == 0
    counts = dict(line.split("\t") for line in out.strip().splitlines())
    assert counts["intrusion-set"] == "7"
    assert counts["relationship"] == "19"


def test_enrich_is_idempotent_at_the_cli(fixture_path, records_path, tmp_path):
    first = tmp_path / "first.json"
    second = tmp_path / "second.json"
    code1, _, err1 = run(
        ["enrich", "--kb", str(fixture_path), "--records", str(records_path),
         "--out", str(first)]
    )
    code2, _, err2 = run(
        ["enrich", "--kb", str(first), "--records", str(records_path),
         "--out", str(second)]
    )
    assert code1 == code2 == 0
    assert "created 0 locations, 0 identities, 0 relationships" in err2
    assert first.read_bytes() == second.read_bytes()


def test_suggest_outputs_draft_json(fixture_path):
    code, out, _ = run(["suggest", "NOBELIUM", "--kb", str(fixture_path)])
    assert code == 0
    draft = json.loads(out)
    assert draft["draft"] is True
    assert draft["origin_country"] == "RU"
    assert "government" in draft["target_sectors"]
    assert all({"kind", "token", "surface", "start", "end"} <= set(w)
               for w in draft["witnesses"])


def test_techniques_one_shot_equals_pipeline(kb):
    code, ids_out, _ = run(["query", "--kb", kb, LISTING_QUERY, "--format", "ids"])
    assert code == 0
    piped_code, piped, _ = run(["techniques", "--kb", kb, "--stdin"], stdin=ids_out)
    direct_code, direct, _ = run(["techniques", "--kb", kb, "--query", LISTING_QUERY])
    assert piped_code == direct_code == 0
    assert piped == direct
    top = direct.strip().splitlines()[0].split("\t")
    assert top[0] == "T1566"
    assert top[1] == "3"
    assert top[3] == "G0007,G0016,G0074"


def test_techniques_by_group_names(kb):
    code, out, _ = run(["techniques", "--kb", kb, "--groups", "APT29,Fancy Bear"])
    assert code == 0
    rows = {line.split("\t")[0]: line.split("\t")[1] for line in out.strip().splitlines()}
    assert rows["T1566"] == "2"


def test_techniques_unknown_group(kb):
    code, _, err = run(["techniques", "--kb", kb, "--groups", "No Such Group"])
    assert code == 1
    assert "unknown group" in err


def test_techniques_renders_figure(kb, tmp_path):
    figure = tmp_path / "overlap.png"
    code, _, err = run(
        ["techniques", "--kb", kb, "--query", LISTING_QUERY,
         "--figure", str(figure)]
    )
    assert code == 0, err
    assert figure.exists()
    assert figure.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_layer_matches_golden(kb, tmp_path):
    out_path = tmp_path / "layer.json"
    code, _, err = run(
        [
            "layer",
            "--kb", kb,
            "--query", LISTING_QUERY,
            "--out", str(out_path),
            "--layer-name", "Technique overlap: APT28, APT29, Dragonfly 2.0",
            "--layer-description",
            "Techniques used by activity groups originating from the Russian "
            "Federation that target the government sector in the United States.",
        ]
    )
    assert code == 0, err
    golden = (DATA_DIR / "golden_layer.json").read_bytes()
    assert out_path.read_bytes() == golden


def test_layer_to_stdout_with_custom_palette(kb, tmp_path):
    palette = tmp_path / "palette.json"
    palette.write_text(
        json.dumps({"1": "#EEEEEE", "2": "#999999", "3": "#111111"}),
        encoding="utf-8",
    )
    code, out, _ = run(
        ["layer", "--kb", kb, "--groups", "APT28,APT29,Dragonfly 2.0",
         "--palette", str(palette)]
    )
    assert code == 0
    layer = json.loads(out)
    assert {t["color"] for t in layer["techniques"]} == {
        "#EEEEEE", "#999999", "#111111"
    }


def test_missing_kb_is_a_user_error(monkeypatch):
    monkeypatch.delenv("ATTCK_KB", raising=False)
    code, _, err = run(["ingest"])
    assert code == 1
    assert "ATTCK_KB" in err


def test_usage_error_exit_code():
    code, _, err = run(["no-such-command"])
    assert code == 1
