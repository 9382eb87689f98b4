"""End-to-end command flows on a micro configuration."""

import csv
import json
import os

import numpy as np
import pytest

from graspdiff.cli import main
from graspdiff.config import config_from_dict, config_hash, load_config
from graspdiff.numerics import load_checkpoint

MICRO = {
    "dataset": {"n_objects": 2, "grasps_per_object": 10, "n_points": 96,
                "kinds": ["box", "cylinder"]},
    "model": {"n_points": 96, "pc_widths": [8, 16], "z_pc_dim": 8, "z_h_dim": 2,
              "block_width": 16, "n_blocks": 2, "cond_dim": 8, "timesteps": 40},
    "vae": {"total_steps": 25, "batch_size": 2, "grasps_per_object": 4,
            "log_every": 5},
    "diffusion": {"total_steps": 25, "batch_size": 2, "grasps_per_object": 4,
                  "log_every": 5},
    "sampler": {"kind": "ddim", "steps": 10},
    "eval": {"n_grasps": 6, "emd_samples": 6, "emd_iterations": 2},
    "seed": 5,
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Config + dataset + trained stage-1/2 checkpoints, built once."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "cfg.json"
    cfg_path.write_text(json.dumps(MICRO))
    assert main(["gen-data", "--config", str(cfg_path),
                 "--out", str(root / "data.jsonl")]) == 0
    assert main(["train", "--stage", "vae", "--config", str(cfg_path),
                 "--data", str(root / "data.jsonl"),
                 "--out", str(root / "ck_vae")]) == 0
    assert main(["train", "--stage", "ldm", "--config", str(cfg_path),
                 "--data", str(root / "data.jsonl"),
                 "--stage1", str(root / "ck_vae"),
                 "--out", str(root / "ck_ldm")]) == 0
    return root, cfg_path


class TestGenData:
    def test_byte_identical_rerun(self, workdir):
        root, cfg = workdir
        assert main(["gen-data", "--config", str(cfg),
                     "--out", str(root / "data2.jsonl")]) == 0
        assert (root / "data.jsonl").read_bytes() == (root / "data2.jsonl").read_bytes()

    def test_counts_match_config(self, workdir):
        root, _ = workdir
        lines = (root / "data.jsonl").read_text().strip().splitlines()
        assert len(lines) == 2
        total = sum(len(json.loads(line)["grasps"]) for line in lines)
        assert total == 20

    def test_invalid_config_nonzero_exit(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"dataset": {"bogus_key": 1}}))
        assert main(["gen-data", "--config", str(bad),
                     "--out", str(tmp_path / "x.jsonl")]) == 2
        assert "bogus_key" in capsys.readouterr().err

    def test_seed_env_override_changes_output(self, workdir, tmp_path,
                                              monkeypatch):
        root, cfg = workdir
        monkeypatch.setenv("GRASPLDM_SEED", "12345")
        out = tmp_path / "alt.jsonl"
        assert main(["gen-data", "--config", str(cfg), "--out", str(out)]) == 0
        assert out.read_bytes() != (root / "data.jsonl").read_bytes()


class TestTrain:
    def test_vae_checkpoint_and_metrics(self, workdir):
        root, cfg = workdir
        stores, manifest = load_checkpoint(str(root / "ck_vae"))
        assert set(stores) == {"vae"}
        assert manifest["config_hash"] == config_hash(load_config(str(cfg)))
        with open(root / "ck_vae" / "metrics.csv") as f:
            rows = list(csv.DictReader(f))
        steps = [int(r["step"]) for r in rows]
        assert steps == sorted(steps)
        assert {"loss", "recon", "kl", "lambda", "lr"} <= set(rows[0])

    def test_ldm_leaves_stage1_files_unmodified(self, workdir, tmp_path):
        root, cfg = workdir
        before = {name: (root / "ck_vae" / name).read_bytes()
                  for name in ("manifest.json", "params.bin")}
        assert main(["train", "--stage", "task-ldm", "--config", str(cfg),
                     "--data", str(root / "data.jsonl"),
                     "--stage1", str(root / "ck_vae"),
                     "--out", str(tmp_path / "ck_task")]) == 0
        for name, blob in before.items():
            assert (root / "ck_vae" / name).read_bytes() == blob

    def test_ldm_embeds_identical_vae_params(self, workdir):
        root, _ = workdir
        vae_stores, _ = load_checkpoint(str(root / "ck_vae"))
        ldm_stores, manifest = load_checkpoint(str(root / "ck_ldm"))
        assert set(ldm_stores) == {"vae", "score"}
        assert not manifest["extra"]["task_enabled"]
        for name, p in vae_stores["vae"].items():
            assert np.array_equal(ldm_stores["vae"][name].data, p.data)

    def test_ldm_requires_stage1(self, workdir, tmp_path, capsys):
        root, cfg = workdir
        assert main(["train", "--stage", "ldm", "--config", str(cfg),
                     "--data", str(root / "data.jsonl"),
                     "--out", str(tmp_path / "nope")]) == 2
        assert "--stage1" in capsys.readouterr().err

    def test_resume_continues_to_total(self, workdir, tmp_path):
        root, cfg = workdir
        out = tmp_path / "ck_resume"
        import shutil
        shutil.copytree(root / "ck_vae", out)
        assert main(["train", "--stage", "vae", "--config", str(cfg),
                     "--data", str(root / "data.jsonl"),
                     "--out", str(out), "--resume"]) == 0
        _, manifest = load_checkpoint(str(out))
        assert manifest["global_step"] == MICRO["vae"]["total_steps"]


class TestSample:
    def test_pose_count_and_determinism(self, workdir, tmp_path):
        root, _ = workdir
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for out in (a, b):
            assert main(["sample", "--checkpoint", str(root / "ck_ldm"),
                         "--data", str(root / "data.jsonl"),
                         "--n", "9", "--out", str(out)]) == 0
        doc = json.loads(a.read_text())
        assert len(doc["poses"]) == 9
        assert all(len(p) == 7 for p in doc["poses"])
        assert a.read_bytes() == b.read_bytes()

    def test_ddim_drop_in_from_ddpm_checkpoint(self, workdir, tmp_path):
        root, _ = workdir
        out = tmp_path / "ddpm.json"
        assert main(["sample", "--checkpoint", str(root / "ck_ldm"),
                     "--data", str(root / "data.jsonl"), "--n", "3",
                     "--sampler", "ddpm", "--out", str(out)]) == 0
        out2 = tmp_path / "ddim.json"
        assert main(["sample", "--checkpoint", str(root / "ck_ldm"),
                     "--data", str(root / "data.jsonl"), "--n", "3",
                     "--sampler", "ddim", "--steps", "8",
                     "--out", str(out2)]) == 0

    def test_trajectory_dump(self, workdir, tmp_path):
        root, _ = workdir
        out = tmp_path / "traj.json"
        assert main(["sample", "--checkpoint", str(root / "ck_ldm"),
                     "--data", str(root / "data.jsonl"), "--n", "4",
                     "--dump-trajectory", "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        ts = [fr["t"] for fr in doc["trajectory"]]
        assert ts == sorted(ts, reverse=True)
        assert ts[0] == MICRO["model"]["timesteps"] and ts[-1] == 0
        assert all(len(fr["poses"]) == 4 for fr in doc["trajectory"])

    def test_task_flag_on_unconditional_checkpoint_rejected(self, workdir,
                                                            tmp_path, capsys):
        root, _ = workdir
        assert main(["sample", "--checkpoint", str(root / "ck_ldm"),
                     "--data", str(root / "data.jsonl"), "--n", "2",
                     "--task", "top", "--out", str(tmp_path / "x.json")]) == 2
        assert "not task-conditional" in capsys.readouterr().err

    def test_unknown_object_rejected(self, workdir, tmp_path):
        root, _ = workdir
        assert main(["sample", "--checkpoint", str(root / "ck_ldm"),
                     "--data", str(root / "data.jsonl"), "--object", "nope",
                     "--n", "2", "--out", str(tmp_path / "x.json")]) == 2


class TestEvalAndBench:
    def test_eval_outputs(self, workdir, tmp_path):
        root, _ = workdir
        prefix = tmp_path / "ev"
        assert main(["eval", "--checkpoint", str(root / "ck_ldm"),
                     "--data", str(root / "data.jsonl"),
                     "--out", str(prefix), "--emd"]) == 0
        doc = json.loads((tmp_path / "ev.json").read_text())
        assert set(doc) == {"per_object", "median", "iqr"}
        assert all("emd" in row for row in doc["per_object"])
        with open(tmp_path / "ev.csv") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 2 * MICRO["eval"]["n_grasps"]

    def test_eval_jobs_identical(self, workdir, tmp_path):
        root, _ = workdir
        p1, p2 = tmp_path / "s1", tmp_path / "s2"
        for prefix, jobs in ((p1, "1"), (p2, "2")):
            assert main(["eval", "--checkpoint", str(root / "ck_ldm"),
                         "--data", str(root / "data.jsonl"),
                         "--out", str(prefix), "--jobs", jobs]) == 0
        assert (tmp_path / "s1.json").read_text() == (tmp_path / "s2.json").read_text()

    def test_bench_csv(self, workdir, tmp_path):
        root, _ = workdir
        out = tmp_path / "bench.csv"
        assert main(["bench", "--checkpoint", str(root / "ck_ldm"),
                     "--data", str(root / "data.jsonl"), "--batch", "5",
                     "--repeats", "2", "--out", str(out)]) == 0
        with open(out) as f:
            rows = list(csv.DictReader(f))
        assert [r["sampler"] for r in rows] == ["ddpm", "ddim", "vae"]
        assert all(float(r["sd_s"]) >= 0 for r in rows)


class TestConfig:
    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ValueError, match="top-level"):
            config_from_dict({"seeed": 1})

    def test_unknown_section_key_rejected(self):
        with pytest.raises(ValueError, match="sampler"):
            config_from_dict({"sampler": {"kind": "ddpm", "order": 3}})

    def test_unknown_gripper_key_rejected(self):
        with pytest.raises(ValueError, match="gripper"):
            config_from_dict({"dataset": {"gripper": {"wingspan": 1.0}}})

    def test_ddim_steps_capped_by_horizon(self):
        with pytest.raises(ValueError, match="horizon"):
            config_from_dict({"model": {"timesteps": 50},
                              "sampler": {"kind": "ddim", "steps": 100}})

    def test_hash_stable_and_sensitive(self):
        a = config_from_dict({"seed": 1})
        b = config_from_dict({"seed": 1})
        c = config_from_dict({"seed": 2})
        assert config_hash(a) == config_hash(b)
        assert config_hash(a) != config_hash(c)

    def test_defaults_follow_reference_values(self):
        cfg = config_from_dict({})
        assert cfg.dataset.n_points == 1024
        assert cfg.dataset.gripper.max_width == pytest.approx(0.085)
        assert cfg.model.z_pc_dim == 128
        assert cfg.model.timesteps == 1000
        assert cfg.vae.lambda_start == pytest.approx(1e-7)
        assert cfg.vae.lambda_end == pytest.approx(0.1)
        assert cfg.schedule.beta_start == pytest.approx(5e-5)
        assert cfg.schedule.beta_end == pytest.approx(1e-3)
        assert cfg.sampler.steps == 100
