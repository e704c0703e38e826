"""Session fixtures: small converted logs and a mixed-rig data root."""

import pytest

from helpers import build_data_root, build_log


@pytest.fixture(scope="session")
def small_log(tmp_path_factory):
    """4 s nuscenes-rig log, external payloads, persisted keyframe sync."""
    return build_log(tmp_path_factory.mktemp("small"), seed=7, duration_s=4.0, rig="nuscenes")


@pytest.fixture(scope="session")
def data_root(tmp_path_factory):
    """Mixed-rig corpus: three 20 s train logs plus one val log.

    Read-only for every test; anything that writes builds its own root.
    """
    root = tmp_path_factory.mktemp("corpus")
    sources = tmp_path_factory.mktemp("corpus_src")
    specs = [
        ("train", dict(seed=11, duration_s=20.0, rig="nuscenes")),
        ("train", dict(seed=12, duration_s=20.0, rig="kitti360")),
        ("train", dict(seed=13, duration_s=20.0, rig="pandaset")),
        ("val", dict(seed=14, duration_s=20.0, rig="av2_sensor")),
    ]
    return build_data_root(root, sources, specs)
