import os

import pytest
import yaml

from subparse.config import ConfigError, config_from_dict, load_config

DATA = os.path.join(os.path.dirname(__file__), "data")


def base_dict(tmp_path, **extra):
    raw = {
        "provider": {"kind": "fixture", "seed": 3, "layers": 2, "heads": 2},
        "corpus": {"ud": os.path.join(DATA, "mini_ud.conllu")},
        "layers": [0],
        "k_values": [0, 1],
        "paths": {"output_dir": str(tmp_path / "out"),
                  "cache_dir": str(tmp_path / "cache")},
    }
    raw.update(extra)
    return raw


def test_load_and_defaults(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump(base_dict(tmp_path)))
    config = load_config(path)
    assert config.provider.seed == 3
    assert config.symmetrize == "avg"
    assert config.evaluation.scheme == "UD"
    assert config.substitution.slack_factor == 2


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown config key"):
        config_from_dict(base_dict(tmp_path, bogus=1))


def test_unknown_section_key_rejected(tmp_path):
    raw = base_dict(tmp_path)
    raw["provider"]["nope"] = True
    with pytest.raises(ConfigError, match="unknown provider keys"):
        config_from_dict(raw)


def test_validation_errors(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        config_from_dict(base_dict(tmp_path, corpus={"ud": "/missing.conllu"}))
    with pytest.raises(ConfigError, match="non-negative"):
        config_from_dict(base_dict(tmp_path, k_values=[-1]))
    with pytest.raises(ConfigError, match="symmetrize"):
        config_from_dict(base_dict(tmp_path, symmetrize="weird"))


def test_dotted_overrides(tmp_path):
    config = config_from_dict(base_dict(tmp_path),
                              overrides={"evaluation.scheme": "SUD",
                                         "corpus.sud": os.path.join(
                                             DATA, "mini_ud.conllu")})
    assert config.evaluation.scheme == "SUD"


def test_env_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("SUBPARSE_CACHE_DIR", str(tmp_path / "elsewhere"))
    config = config_from_dict(base_dict(tmp_path))
    assert config.paths.cache_dir == str(tmp_path / "elsewhere")


def test_semantic_hash_ignores_locations(tmp_path):
    a = config_from_dict(base_dict(tmp_path))
    moved = base_dict(tmp_path)
    moved["paths"] = {"output_dir": str(tmp_path / "other"),
                      "cache_dir": str(tmp_path / "other-cache")}
    moved["workers"] = 16
    b = config_from_dict(moved)
    assert a.semantic_hash() == b.semantic_hash()


def test_semantic_hash_tracks_corpus_content(tmp_path):
    a = config_from_dict(base_dict(tmp_path))
    copied = tmp_path / "copy.conllu"
    copied.write_text(open(os.path.join(DATA, "mini_ud.conllu")).read())
    same_content = config_from_dict(base_dict(tmp_path,
                                              corpus={"ud": str(copied)}))
    assert a.semantic_hash() == same_content.semantic_hash()
    copied.write_text(open(os.path.join(DATA, "fixture_ud.conllu")).read())
    changed = config_from_dict(base_dict(tmp_path, corpus={"ud": str(copied)}))
    assert a.semantic_hash() != changed.semantic_hash()


def test_semantic_hash_tracks_experiment_knobs(tmp_path):
    a = config_from_dict(base_dict(tmp_path))
    b = config_from_dict(base_dict(tmp_path, k_values=[0, 5]))
    c = config_from_dict(base_dict(tmp_path, symmetrize="max"))
    assert len({a.semantic_hash(), b.semantic_hash(), c.semantic_hash()}) == 3


def test_substitution_hash_independent_of_layers(tmp_path):
    a = config_from_dict(base_dict(tmp_path))
    b = config_from_dict(base_dict(tmp_path, layers=[1]))
    assert a.substitution_hash() == b.substitution_hash()
