import json

import numpy as np
import pytest

from meshenhance import cli, scenario
from meshenhance.config import ConfigError, PipelineConfig
from meshenhance.mesh import load_ply, save_ply


# ---------------------------------------------------------------------------
# Config file format


def test_config_text_roundtrip():
    cfg = PipelineConfig(resolution=128, w3=0.25, iterations_appearance=7,
                         step_appearance=0.5, seed=11)
    back = PipelineConfig.from_text(cfg.to_text())
    assert back == cfg


def test_config_comments_and_blank_lines():
    cfg = PipelineConfig.from_text("# comment\n\nresolution = 64  # trailing\n")
    assert cfg.resolution == 64


def test_config_unknown_key():
    with pytest.raises(ConfigError, match="unknown key"):
        PipelineConfig.from_text("resolutoin = 64\n")


def test_config_duplicate_key():
    with pytest.raises(ConfigError, match="duplicate"):
        PipelineConfig.from_text("seed = 1\nseed = 2\n")


def test_config_bad_value():
    with pytest.raises(ConfigError, match="bad value"):
        PipelineConfig.from_text("resolution = fast\n")


def test_config_validation():
    with pytest.raises(ConfigError):
        PipelineConfig(resolution=1)
    with pytest.raises(ConfigError):
        PipelineConfig(w1=-0.5)
    with pytest.raises(ConfigError):
        PipelineConfig(step_fidelity=0.0)


def test_config_save_load(tmp_path):
    cfg = PipelineConfig(grid_size=12, sigma=2.0)
    cfg.save(tmp_path / "c.txt")
    assert PipelineConfig.load(tmp_path / "c.txt") == cfg


# ---------------------------------------------------------------------------
# CLI


def make_bundle(tmp_path, name="sphere", res=48):
    bundle = scenario.make_scenario(name, seed=0, resolution=res, subdivisions=1)
    d = tmp_path / "bundle"
    scenario.save_scenario(bundle, d)
    return d


def test_cli_requires_subcommand():
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args([])


def test_cli_error_is_one_line_nonzero(tmp_path, capsys):
    rc = cli.main(["refine-geometry", "--scenario", str(tmp_path / "nope"),
                   "--out", str(tmp_path)])
    assert rc == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: ") and "\n" not in err


def test_cli_generate_scenario(tmp_path):
    out = tmp_path / "scn"
    rc = cli.main(["generate-scenario", "--name", "sphere", "--resolution", "48",
                   "--out", str(out)])
    assert rc == 0
    for fname in ("manifest.json", "gt_mesh.ply", "initial_mesh.ply",
                  "input.png", "view_0.png", "normal_5.png", "field_3.json"):
        assert (out / fname).exists(), fname


def test_cli_out_env_fallback(tmp_path, monkeypatch):
    out = tmp_path / "envout"
    monkeypatch.setenv(cli.OUT_ENV, str(out))
    rc = cli.main(["generate-scenario", "--name", "sphere", "--resolution", "48"])
    assert rc == 0
    assert (out / "manifest.json").exists()


def test_cli_refine_and_appearance(tmp_path):
    bundle = make_bundle(tmp_path)
    out = tmp_path / "out"
    rc = cli.main(["refine-geometry", "--scenario", str(bundle), "--out", str(out),
                   "--iterations-geometry", "2"])
    assert rc == 0
    assert (out / "m0.ply").exists() and (out / "loss_geometry.csv").exists()

    rc = cli.main(["enhance-appearance", "--scenario", str(bundle), "--out", str(out),
                   "--mesh", str(out / "m0.ply"),
                   "--iterations-appearance", "2", "--step-appearance", "0.3"])
    assert rc == 0
    assert (out / "mc.ply").exists() and (out / "field_out_0.json").exists()


def test_cli_fidelity_and_evaluate(tmp_path):
    bundle = make_bundle(tmp_path)
    out = tmp_path / "out"
    rc = cli.main(["enhance-fidelity", "--scenario", str(bundle), "--out", str(out),
                   "--iterations-fidelity", "2"])
    assert rc == 0
    assert (out / "mout.ply").exists() and (out / "md.ply").exists()

    rc = cli.main(["evaluate", "--mesh", str(out / "mout.ply"),
                   "--gt", str(bundle / "gt_mesh.ply"), "--out", str(out),
                   "--n-views", "2", "--eval-resolution", "48",
                   "--n-samples", "500"])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert set(report) >= {"psnr", "ssim", "chamfer", "fscore", "iou", "ghosting"}


def test_cli_pipeline_skip_fidelity(tmp_path):
    bundle = make_bundle(tmp_path)
    out = tmp_path / "pipe"
    rc = cli.main(["pipeline", "--scenario", str(bundle), "--out", str(out),
                   "--skip-fidelity", "--resolution", "48",
                   "--iterations-geometry", "2", "--iterations-appearance", "2",
                   "--step-appearance", "0.3"])
    assert rc == 0
    for fname in ("config.txt", "m0.ply", "mc.ply", "md.ply", "mout.ply",
                  "report.json", "final_render.png", "loss_geometry.csv",
                  "loss_appearance.csv"):
        assert (out / fname).exists(), fname
    # the saved config reflects the overrides
    cfg = PipelineConfig.load(out / "config.txt")
    assert cfg.resolution == 48 and cfg.iterations_geometry == 2


def test_cli_config_flag_overrides_file(tmp_path):
    cfgfile = tmp_path / "c.txt"
    PipelineConfig(resolution=64, seed=3).save(cfgfile)

    class Args:
        config = str(cfgfile)

    args = Args()
    for f in PipelineConfig.__dataclass_fields__:
        setattr(args, f, None)
    args.config = str(cfgfile)
    args.resolution = 96
    cfg = cli._build_config(args)
    assert cfg.resolution == 96 and cfg.seed == 3


def test_eval_cameras_layout():
    cams = cli.eval_cameras(n_views=6, resolution=64)
    assert len(cams) == 6
    assert [c.elevation_deg for c in cams] == [0, 15, 30, 0, 15, 30]
    assert cams[1].azimuth_deg == pytest.approx(60.0)


def test_ply_roundtrip_via_cli_paths(tmp_path):
    m = scenario.make_gt_mesh("sphere", 1, "gradient")
    save_ply(m, tmp_path / "m.ply")
    back = load_ply(tmp_path / "m.ply")
    np.testing.assert_allclose(back.vertices, m.vertices, atol=1e-5)
    np.testing.assert_array_equal(back.faces, m.faces)
