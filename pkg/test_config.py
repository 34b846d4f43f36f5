"""配置合併順序與輸出摘要"""

import hashlib

import pytest
import yaml

from memseizure.config import load_config
from memseizure.device import CONTINUOUS
from memseizure.digests import FileDigests
from memseizure.errors import ConfigError, InvalidInputError, InvalidParameterError


@pytest.fixture
def clean_env(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    for variable in ("MEMSEIZE_CONFIG", "MEMSEIZE_OUTPUT_DIR", "MEMSEIZE_DATA_DIR", "MEMSEIZE_LOG_LEVEL"):
        monkeypatch.delenv(variable, raising=False)
    return monkeypatch


def test_defaults_without_file(clean_env):
    config = load_config(use_env=False)
    assert config.seed == 0
    assert config.device.n_states == CONTINUOUS
    assert config.paths.dataset.as_posix() == "output/dataset"
    assert config.paths.weights.as_posix() == "output/weights"


def test_file_env_and_overrides(clean_env, tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({"seed": 4, "paths": {"output_dir": "from_file"}, "device": {"sigma": 100}}),
                    encoding="utf-8")
    config = load_config(path)
    assert config.seed == 4
    assert config.device.sigma == 100.0
    assert config.paths.output_dir.as_posix() == "from_file"

    clean_env.setenv("MEMSEIZE_OUTPUT_DIR", "from_env")
    clean_env.setenv("MEMSEIZE_LOG_LEVEL", "debug")
    config = load_config(path)
    assert config.paths.output_dir.as_posix() == "from_env"
    assert config.log_level == "debug"

    config = load_config(path, {"paths": {"output_dir": "from_flag"}, "seed": 9})
    assert config.paths.output_dir.as_posix() == "from_flag"
    assert config.seed == 9
    assert config.device.sigma == 100.0

    clean_env.setenv("MEMSEIZE_CONFIG", str(path))
    assert load_config().seed == 4


def test_invalid_configs(clean_env, tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    broken = tmp_path / "broken.yaml"
    broken.write_text("seed: [1, 2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(broken)
    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(listing)
    with pytest.raises(ConfigError):
        load_config(use_env=False, overrides={"seed": -1})
    with pytest.raises(ConfigError):
        load_config(use_env=False, overrides={"log_level": "loud"})
    with pytest.raises(ConfigError):
        load_config(use_env=False, overrides={"device": {"r_on_mean": 3000}})


def test_dump_round_trip(clean_env):
    config = load_config(use_env=False, overrides={"seed": 3, "sweep": {"states": [4, "continuous"]}})
    again = load_config(use_env=False, overrides=yaml.safe_load(config.dump()))
    assert again == config


def test_file_digests(tmp_path):
    (tmp_path / "sub").mkdir()
    (tmp_path / "b.txt").write_bytes(b"beta")
    (tmp_path / "sub" / "a.txt").write_bytes(b"alpha")
    (tmp_path / ".hidden").write_bytes(b"skip")

    digests = FileDigests()
    listing = digests.hash_directory(tmp_path)
    assert list(listing) == ["b.txt", "sub/a.txt"]
    assert listing["b.txt"] == hashlib.sha256(b"beta").hexdigest()
    assert digests.verify_file(tmp_path / "sub" / "a.txt", hashlib.sha256(b"alpha").hexdigest().upper())
    assert FileDigests("BLAKE2B").hash_bytes(b"x") == hashlib.blake2b(b"x").hexdigest()

    with pytest.raises(InvalidParameterError):
        FileDigests("md5")
    with pytest.raises(InvalidInputError):
        digests.hash_directory(tmp_path / "nowhere")
    with pytest.raises(InvalidInputError):
        digests.hash_file(tmp_path / "nowhere.bin")
