"""Command-line interface tests.

Each subcommand prints one machine-readable JSON line, honors the layered
configuration (flag > environment > config file > default), and maps
failures to exit codes: 0 success, 2 usage error, 1 operation error.
"""
import json
import os

import numpy as np
import pytest

from drivedesk.cli import main
from drivedesk.codec import LATENT_DIM, LatentCode, save_latent_table
from drivedesk.service import ENV_PREFIX
from drivedesk.shapegen import params_id, sample_params
from drivedesk.store import content_id

# ---------------------------------------------------------------- helpers


def run(capsys, *argv):
    """Invoke the CLI in-process; returns (exit_code, stdout_json, stderr)."""
    code = main(list(argv))
    captured = capsys.readouterr()
    payload = json.loads(captured.out) if captured.out.strip() else None
    return code, payload, captured.err


@pytest.fixture()
def workdir(tmp_path, monkeypatch):
    """Isolated cwd so default outputs and data dirs stay in tmp."""
    monkeypatch.chdir(tmp_path)
    for name in ("HOST", "PORT", "DATA_DIR", "WORKERS"):
        monkeypatch.delenv(ENV_PREFIX + name, raising=False)
    return tmp_path


@pytest.fixture()
def manifest(workdir, capsys):
    path = workdir / "manifest.json"
    code, payload, _ = run(
        capsys,
        "gen-shapes",
        "--per-category",
        "2",
        "--seed",
        "0",
        "--out",
        str(path),
    )
    assert code == 0
    return path, payload


@pytest.fixture()
def latent_file(workdir):
    """A synthetic latent table covering the eight seed-0 manifest shapes."""
    ids = [params_id(p) for p in sample_params(2, seed=0)]
    rng = np.random.default_rng(5)
    table = {sid: LatentCode(rng.normal(size=LATENT_DIM) * 0.05) for sid in ids}
    path = workdir / "latents.json"
    save_latent_table(table, str(path))
    return path, ids, table


# ---------------------------------------------------------------- gen-shapes


class TestGenShapes:
    def test_deterministic_manifest_hash(self, workdir, capsys):
        args = ("gen-shapes", "--per-category", "3", "--seed", "1")
        code_a, first, _ = run(capsys, *args)
        code_b, second, _ = run(capsys, *args)
        assert code_a == code_b == 0
        assert first["manifest_hash"] == second["manifest_hash"]
        assert first["count"] == 12

    def test_seed_changes_hash(self, workdir, capsys):
        _, base, _ = run(capsys, "gen-shapes", "--per-category", "3", "--seed", "1")
        _, other, _ = run(capsys, "gen-shapes", "--per-category", "3", "--seed", "2")
        assert base["manifest_hash"] != other["manifest_hash"]

    def test_out_file_matches_reported_hash(self, manifest):
        path, payload = manifest
        blob = path.read_bytes()
        assert content_id(blob) == payload["manifest_hash"]
        rows = json.loads(blob)
        assert rows["count"] == payload["count"] == 8

    def test_missing_required_flag_is_usage_error(self, workdir, capsys):
        code, _, _ = run(capsys, "gen-shapes")
        assert code == 2

    def test_unknown_flag_is_usage_error(self, workdir, capsys):
        code, _, _ = run(capsys, "gen-shapes", "--per-category", "2", "--frobnicate")
        assert code == 2

    def test_unknown_verb_is_usage_error(self, workdir, capsys):
        code, _, _ = run(capsys, "frobnicate")
        assert code == 2


# ---------------------------------------------------------------- sketch


class TestSketch:
    def test_sketch_writes_pgm(self, manifest, capsys, workdir):
        path, payload = manifest
        shape = json.loads(path.read_text())["shapes"][0]["id"]
        out = workdir / "sketch.pgm"
        code, result, _ = run(
            capsys,
            "sketch",
            "--dataset",
            str(path),
            "--shape",
            shape,
            "--size",
            "64",
            "--out",
            str(out),
        )
        assert code == 0
        assert result["size"] == 64
        assert out.read_bytes().startswith(b"P5")

    def test_sketch_bytes_deterministic(self, manifest, capsys, workdir):
        path, _ = manifest
        shape = json.loads(path.read_text())["shapes"][0]["id"]
        blobs = []
        for name in ("a.pgm", "b.pgm"):
            out = workdir / name
            code, _, _ = run(
                capsys,
                "sketch",
                "--dataset",
                str(path),
                "--shape",
                shape,
                "--out",
                str(out),
                "--data-dir",
                str(workdir / f"data-{name}"),
            )
            assert code == 0
            blobs.append(out.read_bytes())
        assert blobs[0] == blobs[1]

    def test_sketch_unknown_shape_is_operation_error(self, manifest, capsys):
        path, _ = manifest
        code, _, err = run(
            capsys, "sketch", "--dataset", str(path), "--shape", "E-nope"
        )
        assert code == 1
        assert json.loads(err)["error"]["code"] == "not_found"


# ---------------------------------------------------------------- retrieval


class TestRetrieve:
    def test_query_file_round_trip(self, manifest, capsys, workdir):
        path, _ = manifest
        shape = json.loads(path.read_text())["shapes"][0]["id"]
        sketch_path = workdir / "query.pgm"
        code, _, _ = run(
            capsys,
            "sketch",
            "--dataset",
            str(path),
            "--shape",
            shape,
            "--size",
            "128",
            "--out",
            str(sketch_path),
        )
        assert code == 0
        code, result, _ = run(
            capsys,
            "retrieve",
            "--dataset",
            str(path),
            "--query",
            str(sketch_path),
            "--k",
            "3",
        )
        assert code == 0
        assert result["mode"] == "feature"
        assert result["entries"][0]["shape"] == shape
        scores = [e["score"] for e in result["entries"]]
        assert scores == sorted(scores, reverse=True)

    def test_shape_query(self, manifest, capsys):
        path, _ = manifest
        shape = json.loads(path.read_text())["shapes"][2]["id"]
        code, result, _ = run(
            capsys, "retrieve", "--dataset", str(path), "--shape", shape, "--k", "2"
        )
        assert code == 0
        assert len(result["entries"]) == 2

    def test_query_and_shape_are_exclusive(self, manifest, capsys, workdir):
        path, _ = manifest
        code, _, err = run(
            capsys,
            "retrieve",
            "--dataset",
            str(path),
            "--query",
            "q.pgm",
            "--shape",
            "E-x",
        )
        assert code == 2
        assert "usage error" in err

    def test_needs_query_or_shape(self, manifest, capsys):
        path, _ = manifest
        code, _, _ = run(capsys, "retrieve", "--dataset", str(path))
        assert code == 2


# ---------------------------------------------------------------- interpolate


class TestInterpolate:
    def test_endpoint_weights_reproduce_table_row(
        self, latent_file, capsys, workdir
    ):
        path, ids, table = latent_file
        out = workdir / "blend.json"
        code, result, _ = run(
            capsys,
            "interpolate",
            "--latents",
            str(path),
            "--ids",
            f"{ids[0]},{ids[1]}",
            "--weights",
            "1,0",
            "--out",
            str(out),
        )
        assert code == 0
        assert result["values"] == [float(v) for v in table[ids[0]].values]
        saved = json.loads(out.read_text())
        assert saved["values"] == result["values"]
        assert saved["parents"] == ids[:2]

    def test_midpoint_weights(self, latent_file, capsys):
        path, ids, table = latent_file
        code, result, _ = run(
            capsys,
            "interpolate",
            "--latents",
            str(path),
            "--ids",
            f"{ids[0]},{ids[1]}",
            "--weights",
            "0.5,0.5",
        )
        assert code == 0
        expected = 0.5 * table[ids[0]].values + 0.5 * table[ids[1]].values
        assert np.allclose(result["values"], expected, atol=0, rtol=0)

    def test_bad_weights_list_is_usage_error(self, latent_file, capsys):
        path, ids, _ = latent_file
        code, _, _ = run(
            capsys,
            "interpolate",
            "--latents",
            str(path),
            "--ids",
            f"{ids[0]},{ids[1]}",
            "--weights",
            "0.5,oops",
        )
        assert code == 2

    def test_unknown_id_is_operation_error(self, latent_file, capsys):
        path, ids, _ = latent_file
        code, _, err = run(
            capsys,
            "interpolate",
            "--latents",
            str(path),
            "--ids",
            "E-doesnotexist",
            "--weights",
            "1",
        )
        assert code == 1
        assert json.loads(err)["error"]["code"] == "not_found"


# ---------------------------------------------------------------- meshing


class TestMeshPipeline:
    def test_mesh_checkmesh_refine_loop(self, workdir, capsys):
        mesh_path = workdir / "domain.vtk"
        code, meshed, _ = run(capsys, "mesh", "--out", str(mesh_path))
        assert code == 0
        assert meshed["cells"] >= 96
        assert mesh_path.read_bytes().startswith(b"# vtk DataFile")

        code, checked, _ = run(capsys, "checkmesh", "--in", str(mesh_path))
        assert code == 0
        assert checked["overall_pass"] is True
        assert checked["passes"] == 10
        assert len(checked["checks"]) == 10

        refined_path = workdir / "refined.vtk"
        code, refined, _ = run(
            capsys,
            "refine",
            "--in",
            str(mesh_path),
            "--out",
            str(refined_path),
        )
        assert code == 0
        assert refined["cells"] > meshed["cells"]
        assert refined["added"] > 0
        assert refined_path.exists()

    def test_checkmesh_report_out(self, workdir, capsys):
        mesh_path = workdir / "domain.vtk"
        run(capsys, "mesh", "--out", str(mesh_path))
        report_path = workdir / "quality.json"
        code, payload, _ = run(
            capsys, "checkmesh", "--in", str(mesh_path), "--out", str(report_path)
        )
        assert code == 0
        report = json.loads(report_path.read_text())
        assert report["overall_pass"] == payload["overall_pass"]
        assert len(report["checks"]) == 10

    def test_checkmesh_missing_file(self, workdir, capsys):
        code, _, err = run(capsys, "checkmesh", "--in", str(workdir / "absent.vtk"))
        assert code == 1
        assert json.loads(err)["error"]["code"] == "operation_failed"

    def test_refine_box_needs_six_numbers(self, workdir, capsys):
        mesh_path = workdir / "domain.vtk"
        run(capsys, "mesh", "--out", str(mesh_path))
        code, _, err = run(
            capsys, "refine", "--in", str(mesh_path), "--box", "0,0,0,1"
        )
        assert code == 2
        assert "usage error" in err

    def test_refine_with_box(self, workdir, capsys):
        mesh_path = workdir / "domain.vtk"
        run(capsys, "mesh", "--out", str(mesh_path))
        code, refined, _ = run(
            capsys,
            "refine",
            "--in",
            str(mesh_path),
            "--box=-1,-1,-0.6,1,1,0.6",  # equals form: the value starts with a dash
            "--level",
            "1",
        )
        assert code == 0
        assert refined["added"] > 0

    def test_mesh_castellate_flag_validation(self, workdir, capsys):
        code, _, _ = run(capsys, "mesh", "--castellate", "maybe")
        assert code == 2


# ---------------------------------------------------------------- drag


class TestPredictDrag:
    def test_predict_by_shape_uses_oracle(self, manifest, capsys):
        path, _ = manifest
        shape = json.loads(path.read_text())["shapes"][0]["id"]
        code, result, _ = run(
            capsys, "predict-drag", "--dataset", str(path), "--shape", shape
        )
        assert code == 0
        assert result["source"] == "oracle"
        assert 0.15 <= result["cd"] <= 0.60

    def test_predict_by_latent_without_model(self, workdir, capsys):
        latent_path = workdir / "z.json"
        latent_path.write_text(json.dumps({"values": [0.0] * LATENT_DIM}))
        code, _, err = run(
            capsys, "predict-drag", "--latent-file", str(latent_path)
        )
        assert code == 1
        assert json.loads(err)["error"]["code"] == "no_model"

    def test_exclusive_flags(self, manifest, capsys):
        path, _ = manifest
        code, _, _ = run(capsys, "predict-drag", "--dataset", str(path))
        assert code == 2


# ---------------------------------------------------------------- eval


class TestEval:
    def test_unfitted_dataset_reports_cleanly(self, manifest, latent_file, capsys):
        """8 shapes with only 2 latent rows cannot fit the regressor."""
        path, _ = manifest
        latents_path, _, _ = latent_file
        code, result, _ = run(
            capsys, "eval", "--dataset", str(path), "--latents", str(latents_path)
        )
        assert code == 0
        assert result["fitted"] is False

    def test_fitted_eval_summary(self, workdir, capsys):
        manifest_path = workdir / "eval-manifest.json"
        run(capsys, "gen-shapes", "--per-category", "5", "--out", str(manifest_path))
        ids = [params_id(p) for p in sample_params(5, seed=0)]
        rng = np.random.default_rng(11)
        table = {sid: LatentCode(rng.normal(size=LATENT_DIM)) for sid in ids}
        latents_path = workdir / "eval-latents.json"
        save_latent_table(table, str(latents_path))
        out_path = workdir / "eval.json"
        code, result, _ = run(
            capsys,
            "eval",
            "--dataset",
            str(manifest_path),
            "--latents",
            str(latents_path),
            "--out",
            str(out_path),
        )
        assert code == 0
        assert result["fitted"] is True
        assert result["count"] == 20
        assert -1.0 <= result["spearman_rho"] <= 1.0
        assert [d["pair"] for d in result["deltas"]] == [
            "FD-FS",
            "FD-N",
            "E-FD",
            "N-FS",
            "E-FS",
            "E-N",
        ]
        full = json.loads(out_path.read_text())
        assert full["trend"]["spearman_rho"] == result["spearman_rho"]


# ---------------------------------------------------------------- train


class TestTrainReconstruct:
    def test_train_then_reconstruct(self, manifest, capsys, workdir):
        path, _ = manifest
        out_dir = workdir / "model"
        code, trained, _ = run(
            capsys,
            "train",
            "--dataset",
            str(path),
            "--steps",
            "20",
            "--samples",
            "1000",
            "--batch-size",
            "32",
            "--out",
            str(out_dir),
        )
        assert code == 0
        assert trained["shapes"] == 8
        ckpt = out_dir / "checkpoint.ckpt"
        latents = out_dir / "latents.json"
        assert ckpt.read_bytes().startswith(b"SDFC")
        table = json.loads(latents.read_text())
        assert len(table) == 8

        shape = json.loads(path.read_text())["shapes"][0]["id"]
        stl_path = workdir / "shape.stl"
        code, rebuilt, _ = run(
            capsys,
            "reconstruct",
            "--checkpoint",
            str(ckpt),
            "--latents",
            str(latents),
            "--dataset",
            str(path),
            "--shape",
            shape,
            "--resolution",
            "12",
            "--out",
            str(stl_path),
        )
        assert code == 0
        assert rebuilt["triangles"] >= 1
        assert stl_path.stat().st_size >= 84

        latent_path = workdir / "z.json"
        latent_path.write_text(json.dumps({"values": table[shape]}))
        code, rebuilt_z, _ = run(
            capsys,
            "reconstruct",
            "--checkpoint",
            str(ckpt),
            "--latent-file",
            str(latent_path),
            "--resolution",
            "12",
            "--out",
            str(workdir / "z.stl"),
        )
        assert code == 0
        assert rebuilt_z["triangles"] == rebuilt["triangles"]

    def test_reconstruct_exclusive_flags(self, workdir, capsys):
        code, _, _ = run(capsys, "reconstruct", "--checkpoint", "c.ckpt")
        assert code == 2


# ---------------------------------------------------------------- session


class TestSession:
    def test_session_commands_and_transcript(self, manifest, capsys, workdir):
        path, _ = manifest
        shape = json.loads(path.read_text())["shapes"][0]["id"]
        out = workdir / "transcript.jsonl"
        code, result, _ = run(
            capsys,
            "session",
            "--dataset",
            str(path),
            "--command",
            f"sketch --shape {shape} --size 48",
            "--command",
            "report --title review",
            "--out",
            str(out),
        )
        assert code == 0
        assert result["statuses"] == ["ok", "ok"]
        lines = out.read_text().strip().splitlines()
        # JSON Lines: one line per message plus one final-artifacts footer
        assert len(lines) == result["messages"] + 1
        footer = json.loads(lines[-1])
        assert "final_artifacts" in footer and "kind" not in footer
        kinds = [json.loads(line)["kind"] for line in lines[:-1]]
        assert kinds[0] == "prompt"
        assert "tool_call" in kinds and "tool_result" in kinds

    def test_failing_command_sets_exit_code(self, manifest, capsys):
        path, _ = manifest
        code, result, _ = run(
            capsys,
            "session",
            "--dataset",
            str(path),
            "--command",
            "sketch --shape E-missing",
        )
        assert code == 1
        assert result["statuses"] == ["error"]


# ---------------------------------------------------------------- config


class TestConfigLayers:
    def test_data_dir_flag_controls_store_location(self, manifest, capsys, workdir):
        path, _ = manifest
        shape = json.loads(path.read_text())["shapes"][0]["id"]
        data_dir = workdir / "flagged-data"
        code, _, _ = run(
            capsys,
            "sketch",
            "--dataset",
            str(path),
            "--shape",
            shape,
            "--data-dir",
            str(data_dir),
        )
        assert code == 0
        assert (data_dir / "artifacts").is_dir()

    def test_env_sets_data_dir(self, manifest, capsys, workdir, monkeypatch):
        path, _ = manifest
        shape = json.loads(path.read_text())["shapes"][0]["id"]
        env_dir = workdir / "env-data"
        monkeypatch.setenv(ENV_PREFIX + "DATA_DIR", str(env_dir))
        code, _, _ = run(
            capsys, "sketch", "--dataset", str(path), "--shape", shape
        )
        assert code == 0
        assert (env_dir / "artifacts").is_dir()

    def test_flag_beats_env(self, manifest, capsys, workdir, monkeypatch):
        path, _ = manifest
        shape = json.loads(path.read_text())["shapes"][0]["id"]
        env_dir = workdir / "env-data"
        flag_dir = workdir / "flag-data"
        monkeypatch.setenv(ENV_PREFIX + "DATA_DIR", str(env_dir))
        code, _, _ = run(
            capsys,
            "sketch",
            "--dataset",
            str(path),
            "--shape",
            shape,
            "--data-dir",
            str(flag_dir),
        )
        assert code == 0
        assert (flag_dir / "artifacts").is_dir()
        assert not env_dir.exists()

    def test_config_file_sets_data_dir(self, manifest, capsys, workdir):
        path, _ = manifest
        shape = json.loads(path.read_text())["shapes"][0]["id"]
        cfg_dir = workdir / "cfg-data"
        cfg_path = workdir / "cfg.json"
        cfg_path.write_text(json.dumps({"data_dir": str(cfg_dir)}))
        code, _, _ = run(
            capsys,
            "sketch",
            "--dataset",
            str(path),
            "--shape",
            shape,
            "--config",
            str(cfg_path),
        )
        assert code == 0
        assert (cfg_dir / "artifacts").is_dir()

    def test_bad_config_file_is_operation_error(self, manifest, capsys, workdir):
        path, _ = manifest
        cfg_path = workdir / "cfg.json"
        cfg_path.write_text(json.dumps({"typo_key": 1}))
        code, _, err = run(
            capsys,
            "sketch",
            "--dataset",
            str(path),
            "--shape",
            "E-x",
            "--config",
            str(cfg_path),
        )
        assert code == 1
        assert json.loads(err)["error"]["code"] == "invalid_params"
