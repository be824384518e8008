import pytest

from ttcod.config import OUTPUT_ROOT_ENV, ExperimentConfig, output_root, resolve_output


def test_text_roundtrip_and_hash():
    cfg = ExperimentConfig(image_size=64, channel_scale=0.1, residual=True, variant="M2")
    again = ExperimentConfig.from_text(cfg.to_text())
    assert again == cfg and again.hash == cfg.hash
    assert len(cfg.hash) == 16 and cfg.hash != ExperimentConfig().hash
    assert "channel_scale=0.1\n" in cfg.to_text() and "residual=true\n" in cfg.to_text()
    assert "channel_scale=none\n" in ExperimentConfig().to_text()


def test_from_text_overlays_base_and_ignores_comments():
    cfg = ExperimentConfig.from_text("# toy\nsteps = 7\n\nvariant=M1  # baseline\n",
                                     ExperimentConfig(lr=0.1))
    assert (cfg.steps, cfg.variant, cfg.lr) == (7, "M1", 0.1)


@pytest.mark.parametrize("text", ["steps", "unknown=1", "residual=maybe", "steps=-1",
                                  "variant=M9", "image_size=36", "depth=6", "mini_batch=0"])
def test_invalid_config_rejected(text):
    with pytest.raises((ValueError, KeyError)):
        ExperimentConfig.from_text(text)


def test_output_root(monkeypatch, tmp_path):
    monkeypatch.delenv(OUTPUT_ROOT_ENV, raising=False)
    assert str(output_root()) == "."
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    assert resolve_output("run") == tmp_path / "run"
    assert resolve_output("/abs/run").as_posix() == "/abs/run"
