"""End-to-end CLI behavior: schemas, exit codes, manifests, replay."""

import csv
import json
import math
import subprocess

import pytest

from anchorlap.cli import main

ANNOTATIONS = """\
img/a.jpg
3
0 0 16 16
8 8 16 16
40 40 100 100
"""

SPEC16 = {"scales": [16], "base_stride": 16}


@pytest.fixture
def files(tmp_path):
    ann = tmp_path / "faces.txt"
    ann.write_text(ANNOTATIONS)
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(SPEC16))
    space = tmp_path / "space.json"
    space.write_text(json.dumps({
        "stride_divisors": [1, 2], "shift_choices": [0, 3],
        "scale_sets": [[16]], "budget": 9,
    }))
    return {"ann": str(ann), "spec": str(spec), "space": str(space), "dir": tmp_path}


def rows_of(text):
    return list(csv.DictReader(text.splitlines()))


def run_stdout(capsys, argv):
    code = main(argv)
    return code, capsys.readouterr().out


class TestEmo:
    def test_closed_form_table(self, capsys):
        code, out = run_stdout(capsys, ["emo", "--scales", "32,16", "--strides", "16,8"])
        assert code == 0
        rows = rows_of(out)
        assert [r["scale"] for r in rows] == ["16", "16", "32", "32"]
        assert [r["stride"] for r in rows] == ["8", "16", "8", "16"]
        assert all(r["method"] == "closed_form" for r in rows)
        assert all(r["std_error"] == "0" for r in rows)
        assert float(rows[1]["emo"]) == pytest.approx(0.40860086612464824, abs=1e-5)
        # same ratio, same value: EMO(16, 8) == EMO(32, 16)
        assert rows[0]["emo"] == rows[3]["emo"]

    def test_json_mirrors_csv(self, capsys):
        code, as_csv = run_stdout(capsys, ["emo", "--scale", "16", "--stride", "16"])
        assert code == 0
        code, as_json = run_stdout(
            capsys, ["emo", "--scale", "16", "--stride", "16", "--format", "json"]
        )
        assert code == 0
        data = json.loads(as_json)
        assert len(data) == 1
        assert data[0]["emo"] == float(rows_of(as_csv)[0]["emo"])
        assert data[0]["method"] == "closed_form"

    def test_invalid_pair_exits_2(self, capsys):
        code = main(["emo", "--scale", "16", "--stride", "32"])
        assert code == 2
        assert "closed-form invalid" in capsys.readouterr().err

    def test_mc_identical_across_workers(self, files):
        base = ["emo", "--scale", "16", "--stride", "16", "--mc",
                "--samples", "30000", "--seed", "7"]
        a = files["dir"] / "a.csv"
        b = files["dir"] / "b.csv"
        assert main(base + ["--workers", "1", "--out", str(a)]) == 0
        assert main(base + ["--workers", "4", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        est = float(rows_of(a.read_text())[0]["emo"])
        assert est == pytest.approx(0.4086, abs=0.01)

    def test_mc_seed_matters(self, files):
        base = ["emo", "--scale", "16", "--stride", "16", "--mc", "--samples", "10000"]
        a = files["dir"] / "s1.csv"
        b = files["dir"] / "s2.csv"
        assert main(base + ["--seed", "1", "--out", str(a)]) == 0
        assert main(base + ["--seed", "2", "--out", str(b)]) == 0
        assert a.read_bytes() != b.read_bytes()


class TestSeedResolution:
    def test_env_seed_equals_flag_seed(self, files, monkeypatch):
        base = ["emo", "--scale", "16", "--stride", "16", "--mc", "--samples", "5000"]
        a = files["dir"] / "env.csv"
        b = files["dir"] / "flag.csv"
        monkeypatch.setenv("ANCHORLAP_SEED", "123")
        assert main(base + ["--out", str(a)]) == 0
        monkeypatch.delenv("ANCHORLAP_SEED")
        assert main(base + ["--seed", "123", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        # the resolved seed is recorded, not the flag spelling
        manifest = json.loads((files["dir"] / "env.csv.manifest.json").read_text())
        assert manifest["seed"] == 123

    def test_flag_beats_env(self, files, monkeypatch):
        monkeypatch.setenv("ANCHORLAP_SEED", "123")
        out = files["dir"] / "c.csv"
        assert main(["emo", "--scale", "16", "--stride", "16", "--mc",
                     "--samples", "5000", "--seed", "9", "--out", str(out)]) == 0
        manifest = json.loads((files["dir"] / "c.csv.manifest.json").read_text())
        assert manifest["seed"] == 9

    def test_garbage_env_seed_exits_2(self, capsys, monkeypatch):
        monkeypatch.setenv("ANCHORLAP_SEED", "pi")
        code = main(["emo", "--scale", "16", "--stride", "16", "--mc"])
        assert code == 2
        assert "ANCHORLAP_SEED" in capsys.readouterr().err


class TestGrid:
    def test_plain_grid(self, capsys, files):
        code, out = run_stdout(
            capsys, ["grid", "--spec", files["spec"], "--plane", "64x64"]
        )
        assert code == 0
        rows = rows_of(out)
        assert len(rows) == 16
        assert [int(r["id"]) for r in rows] == list(range(16))
        assert rows[0] == {"id": "0", "scale": "16", "ratio": "1", "sublattice": "0",
                           "cx": "8", "cy": "8", "w": "16", "h": "16"}

    def test_shifted_spec_quadruples_rows(self, capsys, files):
        spec = files["dir"] / "shifted.json"
        spec.write_text(json.dumps({"scales": [16], "shifts_per_scale": {"16": 3}}))
        code, out = run_stdout(capsys, ["grid", "--spec", str(spec), "--plane", "64x64"])
        assert code == 0
        rows = rows_of(out)
        assert len(rows) == 64
        assert {r["sublattice"] for r in rows} == {"0", "1", "2", "3"}

    def test_zero_plane_exits_2(self, files):
        assert main(["grid", "--spec", files["spec"], "--plane", "0x64"]) == 2

    def test_malformed_plane_is_a_usage_error(self, files):
        with pytest.raises(SystemExit) as exc:
            main(["grid", "--spec", files["spec"], "--plane", "64"])
        assert exc.value.code == 2


class TestStats:
    def test_bucket_rows(self, capsys, files):
        code, out = run_stdout(
            capsys, ["stats", "--annotations", files["ann"], "--spec", files["spec"]]
        )
        assert code == 0
        rows = rows_of(out)
        assert len(rows) == 8
        assert rows[0]["bucket_lo"] == "0" and rows[-1]["bucket_hi"] == "inf"
        by_lo = {r["bucket_lo"]: r for r in rows}
        assert by_lo["16"]["count"] == "2"
        assert by_lo["64"]["count"] == "1"
        assert by_lo["8"]["mean_max_iou"] == "nan"
        # the exact-anchor face plus the corner-pinned one: mean (1 + 1/7)/2
        assert float(by_lo["16"]["mean_max_iou"]) == pytest.approx(4.0 / 7.0, rel=1e-9)
        assert float(by_lo["16"]["recall_at_tau"]) == 0.5

    def test_single_bucket(self, capsys, files):
        code, out = run_stdout(
            capsys, ["stats", "--annotations", files["ann"], "--spec", files["spec"],
                     "--buckets", ""],
        )
        assert code == 0
        rows = rows_of(out)
        assert len(rows) == 1
        assert rows[0]["count"] == "3"

    def test_recall_monotone_in_tau(self, capsys, files):
        values = []
        for tau in ("0.1", "0.5", "0.9"):
            _, out = run_stdout(
                capsys, ["stats", "--annotations", files["ann"], "--spec", files["spec"],
                         "--buckets", "", "--tau", tau],
            )
            values.append(float(rows_of(out)[0]["recall_at_tau"]))
        assert values[0] >= values[1] >= values[2]

    def test_jitter_schema_and_determinism(self, files):
        base = ["stats", "--annotations", files["ann"], "--spec", files["spec"],
                "--jitter", "--trials", "4", "--seed", "3"]
        a = files["dir"] / "j1.csv"
        b = files["dir"] / "j2.csv"
        assert main(base + ["--out", str(a)]) == 0
        assert main(base + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        rows = rows_of(a.read_text())
        assert set(rows[0]) == {"bucket_lo", "bucket_hi", "count", "mean_max_iou",
                                "min_mean_max_iou", "max_mean_max_iou"}

    def test_missing_annotations_exits_1(self, files, capsys):
        code = main(["stats", "--annotations", str(files["dir"] / "nope.txt"),
                     "--spec", files["spec"]])
        assert code == 1

    def test_bad_annotation_structure_exits_1(self, files, capsys):
        bad = files["dir"] / "bad.txt"
        bad.write_text("a.jpg\n2\n1 1 4 4\n")
        code = main(["stats", "--annotations", str(bad), "--spec", files["spec"]])
        assert code == 1
        assert "line 3" in capsys.readouterr().err

    def test_bad_spec_json_exits_2(self, files):
        bad = files["dir"] / "bad.json"
        bad.write_text("{not json")
        assert main(["stats", "--annotations", files["ann"], "--spec", str(bad)]) == 2


class TestMatch:
    def run_match(self, files, out_name, extra):
        out = files["dir"] / out_name
        argv = ["match", "--annotations", files["ann"], "--spec", files["spec"],
                "--out", str(out)] + extra
        assert main(argv) == 0
        faces = rows_of(out.read_text())
        anchors = rows_of((files["dir"] / (out_name + ".anchors.csv")).read_text())
        return faces, anchors, out

    def test_face_and_anchor_tables(self, files):
        faces, anchors, out = self.run_match(files, "m.csv", [])
        assert [r["face"] for r in faces] == ["0", "1", "2"]
        assert faces[0]["image_id"] == "img/a.jpg"
        assert float(faces[0]["max_iou"]) == 1.0
        assert faces[0]["argmax_anchor"] == "0"
        assert {r["label"] for r in anchors} <= {"positive", "negative", "ignore"}
        # the manifest records both artifacts
        manifest = json.loads((files["dir"] / "m.csv.manifest.json").read_text())
        assert [o["path"] for o in manifest["outputs"]] == [
            str(out), str(out) + ".anchors.csv"
        ]

    def test_compensation_adds_positives(self, files):
        _, anchors_off, _ = self.run_match(files, "hc0.csv", ["--hc", "0"])
        faces_on, anchors_on, _ = self.run_match(files, "hc5.csv", ["--hc", "5"])
        pos_off = sum(r["label"] == "positive" for r in anchors_off)
        pos_on = sum(r["label"] == "positive" for r in anchors_on)
        assert pos_on > pos_off
        hard = [r for r in faces_on if float(r["max_iou"]) < 0.5]
        assert all(int(r["assigned_count"]) >= 1 for r in hard)

    def test_positive_sources_are_faces(self, files):
        _, anchors, _ = self.run_match(files, "src.csv", [])
        for r in anchors:
            if r["label"] == "positive":
                assert 0 <= int(r["source_face"]) <= 2
            if r["label"] == "negative":
                assert r["source_face"] == "-1"

    def test_inverted_thresholds_exit_2(self, files):
        code = main(["match", "--annotations", files["ann"], "--spec", files["spec"],
                     "--tl", "0.6", "--th", "0.5"])
        assert code == 2


class TestOptimize:
    def test_ranked_output(self, capsys, files):
        code, out = run_stdout(
            capsys, ["optimize", "--annotations", files["ann"], "--space", files["space"]]
        )
        assert code == 0
        rows = rows_of(out)
        assert len(rows) == 4
        assert [r["rank"] for r in rows] == ["1", "2", "3", "4"]
        objectives = [float(r["objective"]) for r in rows]
        assert objectives == sorted(objectives, reverse=True)
        # spec_json cells survive CSV quoting and parse back
        spec = json.loads(rows[0]["spec_json"])
        assert spec["scales"] == [16.0]

    def test_unsatisfiable_budget_exits_2(self, files, capsys):
        space = files["dir"] / "tight.json"
        space.write_text(json.dumps({
            "stride_divisors": [1], "shift_choices": [3], "scale_sets": [[16, 32]],
            "budget": 2,
        }))
        code = main(["optimize", "--annotations", files["ann"], "--space", str(space)])
        assert code == 2
        assert "budget" in capsys.readouterr().err


class TestReplay:
    def test_stats_replay_is_byte_exact(self, files):
        out = files["dir"] / "stats.csv"
        assert main(["stats", "--annotations", files["ann"], "--spec", files["spec"],
                     "--out", str(out)]) == 0
        replayed = files["dir"] / "replayed.csv"
        assert main(["replay", "--manifest", str(out) + ".manifest.json",
                     "--out", str(replayed)]) == 0
        assert replayed.read_bytes() == out.read_bytes()
        fresh = json.loads((files["dir"] / "replayed.csv.manifest.json").read_text())
        assert fresh["subcommand"] == "stats"

    def test_match_replay_covers_both_artifacts(self, files):
        out = files["dir"] / "m.csv"
        assert main(["match", "--annotations", files["ann"], "--spec", files["spec"],
                     "--out", str(out)]) == 0
        replayed = files["dir"] / "m2.csv"
        assert main(["replay", "--manifest", str(out) + ".manifest.json",
                     "--out", str(replayed)]) == 0
        assert replayed.read_bytes() == out.read_bytes()
        assert (files["dir"] / "m2.csv.anchors.csv").read_bytes() == \
            (files["dir"] / "m.csv.anchors.csv").read_bytes()

    def test_mc_replay_with_more_workers(self, files):
        out = files["dir"] / "mc.csv"
        assert main(["emo", "--scale", "16", "--stride", "16", "--mc",
                     "--samples", "30000", "--seed", "5", "--out", str(out)]) == 0
        replayed = files["dir"] / "mc2.csv"
        assert main(["replay", "--manifest", str(out) + ".manifest.json",
                     "--out", str(replayed), "--workers", "3"]) == 0
        assert replayed.read_bytes() == out.read_bytes()

    def test_changed_input_fails(self, files, capsys):
        out = files["dir"] / "stats.csv"
        assert main(["stats", "--annotations", files["ann"], "--spec", files["spec"],
                     "--out", str(out)]) == 0
        with open(files["ann"], "a") as fh:
            fh.write("img/new.jpg\n1\n1 1 8 8\n")
        code = main(["replay", "--manifest", str(out) + ".manifest.json",
                     "--out", str(files["dir"] / "r.csv")])
        assert code == 1
        assert "changed since" in capsys.readouterr().err

    def test_tampered_output_digest_fails(self, files, capsys):
        out = files["dir"] / "stats.csv"
        assert main(["stats", "--annotations", files["ann"], "--spec", files["spec"],
                     "--out", str(out)]) == 0
        mpath = files["dir"] / "stats.csv.manifest.json"
        manifest = json.loads(mpath.read_text())
        manifest["outputs"][0]["sha256"] = "0" * 64
        mpath.write_text(json.dumps(manifest))
        code = main(["replay", "--manifest", str(mpath),
                     "--out", str(files["dir"] / "r.csv")])
        assert code == 1
        assert "diverged" in capsys.readouterr().err

    def test_unreadable_manifest_fails(self, files, capsys):
        bad = files["dir"] / "broken.manifest.json"
        bad.write_text("{")
        assert main(["replay", "--manifest", str(bad),
                     "--out", str(files["dir"] / "r.csv")]) == 1


class TestManifest:
    def test_structure(self, files):
        out = files["dir"] / "g.csv"
        assert main(["grid", "--spec", files["spec"], "--plane", "64x64",
                     "--out", str(out)]) == 0
        manifest = json.loads((files["dir"] / "g.csv.manifest.json").read_text())
        assert manifest["tool"] == "anchorlap"
        assert manifest["subcommand"] == "grid"
        assert manifest["seed"] is None
        assert set(manifest["inputs"]) == {"spec"}
        entry = manifest["inputs"]["spec"]
        assert entry["path"] == files["spec"]
        assert len(entry["sha256"]) == 64
        assert len(manifest["outputs"]) == 1
        assert manifest["parameters"]["plane_w"] == 64.0

    def test_stdout_mode_writes_nothing(self, capsys, files, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        before = set(tmp_path.iterdir())
        code, out = run_stdout(capsys, ["grid", "--spec", files["spec"], "--plane", "64x64"])
        assert code == 0 and out
        assert set(tmp_path.iterdir()) == before


class TestJsonFormat:
    def test_nan_becomes_null(self, capsys, files):
        code, out = run_stdout(
            capsys, ["stats", "--annotations", files["ann"], "--spec", files["spec"],
                     "--format", "json"],
        )
        assert code == 0
        data = json.loads(out)
        assert len(data) == 8
        empty = [r for r in data if r["count"] == 0]
        assert empty and all(r["mean_max_iou"] is None for r in empty)
        top = [r for r in data if r["bucket_hi"] is None]
        assert len(top) == 1  # the open-ended bucket: inf is not a JSON float

    def test_csv_and_json_agree(self, capsys, files):
        _, as_csv = run_stdout(
            capsys, ["grid", "--spec", files["spec"], "--plane", "64x64"]
        )
        _, as_json = run_stdout(
            capsys, ["grid", "--spec", files["spec"], "--plane", "64x64",
                     "--format", "json"],
        )
        got = json.loads(as_json)
        for row, ref in zip(rows_of(as_csv), got):
            assert float(row["cx"]) == ref["cx"]
            assert int(row["id"]) == ref["id"]


def test_installed_entry_point_reports_version():
    proc = subprocess.run(["anchorlap", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip().startswith("anchorlap ")


def test_missing_subcommand_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
