import json

import pytest

from fastcifar import config
from fastcifar.config import AugConfig, Config, RunConfig
from fastcifar.exceptions import ConfigError


class TestTree:
    def test_key_names(self):
        tree = Config().to_tree()
        assert set(tree) == {"opt", "aug", "net", "run"}
        assert tree["opt"]["lr"] == 11.5 and tree["opt"]["whiten_bias_epochs"] == 3
        assert tree["net"]["widths"] == {"block1": 64, "block2": 256, "block3": 256}
        assert tree["net"]["batchnorm_momentum"] == 0.6 and tree["net"]["tta_level"] == 2
        assert tree["aug"] == {"flip": "alternating", "translate": 2, "cutout": 0, "sampling": "random_reshuffle"}

    @pytest.mark.parametrize("name", ["airbench94", "airbench95", "airbench96"])
    def test_roundtrip(self, name):
        cfg = config.preset(name)
        assert Config.from_tree(json.loads(cfg.dumps())) == cfg

    def test_partial_update(self):
        cfg = Config.from_tree({"opt": {"lr": 5.0}, "net": {"widths": {"block2": 128}}})
        assert cfg.hp.lr == 5.0 and cfg.net.widths == (64, 128, 256) and cfg.hp.momentum == 0.85

    @pytest.mark.parametrize("tree,key", [({"aug": {"rotate": 1}}, "aug.rotate"),
                                          ({"optim": {}}, "optim"),
                                          ({"net": {"widths": {"block4": 1}}}, "net.widths.block4")])
    def test_unknown_keys(self, tree, key):
        with pytest.raises(ConfigError, match=f"Unrecognized key: {key}"):
            Config.from_tree(tree)

    def test_boolean_flip(self):
        assert Config.from_tree({"aug": {"flip": False}}).aug.flip == "none"
        assert Config.from_tree({"aug": {"flip": True}}).aug.flip == "alternating"

    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            Config.from_tree({"opt": {"momentum": 2}})
        with pytest.raises(ConfigError):
            Config.from_tree({"opt": "fast"})


class TestPresets:
    def test_airbench96(self):
        cfg = config.preset("airbench96")
        assert cfg.net.residual and cfg.net.convs_per_block == 3 and cfg.aug.cutout == 12
        assert cfg.hp.train_epochs == 40

    def test_unknown(self):
        with pytest.raises(ConfigError):
            config.preset("airbench99")


class TestFiles:
    def test_load(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"opt": {"train_epochs": 3}}))
        assert config.load(p).hp.train_epochs == 3

    def test_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{"opt": {\n"lr": ,}}')
        with pytest.raises(ConfigError, match="line 2"):
            config.load(p)


@pytest.mark.parametrize("cls,kwargs", [(AugConfig, {"flip": "x"}), (AugConfig, {"sampling": "x"}),
                                        (AugConfig, {"translate": 16}), (RunConfig, {"n_runs": 0}),
                                        (RunConfig, {"epoch_eval": "some"})])
def test_section_validation(cls, kwargs):
    with pytest.raises(ConfigError):
        cls(**kwargs)
