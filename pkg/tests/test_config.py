from __future__ import annotations

import copy
import json
from pathlib import Path

import pytest

from expms.config import (
    DEFAULT_SUITE,
    PAPER_FINE_RESOLUTION,
    apply_scale,
    load_config,
    parse_config,
    write_default_config,
)

ROOT = Path(__file__).resolve().parents[1]


def _suite(**experiment):
    base = {"scenario": "periodic", "nc": [2, 4], "m": [0, 1]}
    base.update(experiment)
    return {"name": "t", "fine_resolution": 16, "experiments": [base]}


def test_defaults():
    suite = load_config()
    assert suite.name == "desk"
    assert [e.label for e in suite.experiments] == [
        "periodic",
        "high_contrast_M16",
        "high_contrast_M64",
        "helmholtz_k16",
    ]
    periodic = suite.experiments[0]
    assert periodic.nc == (8, 16, 32)
    assert periodic.refine(32) == 8
    assert periodic.decay
    assert periodic.flags == "online"
    helm = suite.experiments[3]
    assert helm.params["k"] == 16
    assert helm.fine_resolution == 256


def test_paper_scale():
    suite = load_config(scale="paper")
    periodic, _, _, helm = suite.experiments
    assert periodic.fine_resolution == PAPER_FINE_RESOLUTION
    assert periodic.nc == (8, 16, 32, 64, 128)
    assert periodic.m == (1, 2, 3, 4, 5, 6)
    assert helm.params == {"k": 32, "seeds": [1, 2, 3]}
    assert helm.nc == (32,)


def test_apply_scale_leaves_input_untouched():
    raw = copy.deepcopy(DEFAULT_SUITE)
    apply_scale(raw, "paper")
    assert raw == DEFAULT_SUITE
    with pytest.raises(ValueError):
        apply_scale(raw, "huge")


def test_overrides():
    suite = parse_config(_suite(), out_dir="results", threads=3)
    assert suite.out_dir == Path("results")
    assert suite.threads == 3
    assert suite.experiments[0].threads == 3


def test_flags():
    exp = parse_config(_suite(online_part=False, conjugate_enrich=True)).experiments[0]
    assert exp.flags == "no_online+conj"
    raw = _suite()
    raw["oversampling_layers"] = 2
    assert parse_config(raw).experiments[0].flags == "online+layers=2"


@pytest.mark.parametrize(
    ("experiment", "message"),
    [
        ({"nc": [3]}, r"experiments\[0\]\.nc\[0\]: 3 does not divide fine_resolution 16"),
        ({"nc": [16]}, r"experiments\[0\]\.nc\[0\]: refine 1 < 2"),
        ({"nc": []}, r"experiments\[0\]\.nc: expected a non-empty list"),
        ({"m": [-1]}, r"experiments\[0\]\.m\[0\]: must be >= 0"),
        ({"m": [4]}, r"experiments\[0\]\.m\[0\]: 4 exceeds refine-1 = 3 at nc=4"),
        ({"scenario": "wave"}, r"experiments\[0\]\.scenario: unknown scenario"),
        ({"scenario": "helmholtz_rough"}, r"experiments\[0\]\.params\.k"),
        ({"decay": "yes"}, r"experiments\[0\]\.decay: expected true/false"),
        ({"colour": "red"}, r"experiments\[0\]: unknown keys: colour"),
    ],
)
def test_experiment_errors(experiment, message):
    with pytest.raises(ValueError, match=message):
        parse_config(_suite(**experiment))


def test_suite_errors():
    raw = _suite()
    raw["solver"] = "cholesky"
    with pytest.raises(ValueError, match="solver"):
        parse_config(raw)
    raw = _suite()
    raw["experiments"].append(dict(raw["experiments"][0]))
    with pytest.raises(ValueError, match="duplicate labels: periodic"):
        parse_config(raw)
    with pytest.raises(ValueError, match="experiments"):
        parse_config({"experiments": []})
    with pytest.raises(ValueError, match="threads"):
        parse_config(_suite(), threads=0)


def test_load_missing(tmp_path):
    with pytest.raises(FileNotFoundError, match="config not found"):
        load_config(tmp_path / "nope.json")


def test_load_invalid_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{ not json", encoding="utf-8")
    with pytest.raises(ValueError, match="invalid JSON"):
        load_config(path)


def test_write_default_config(tmp_path):
    path = write_default_config(tmp_path / "configs" / "suite.json")
    assert json.loads(path.read_text(encoding="utf-8")) == DEFAULT_SUITE
    suite = load_config(path)
    assert suite.source == path.resolve()
    with pytest.raises(FileExistsError):
        write_default_config(path)
    write_default_config(path, force=True)


def test_shipped_config_matches_defaults():
    raw = json.loads((ROOT / "configs" / "desk.json").read_text(encoding="utf-8"))
    assert raw == DEFAULT_SUITE
