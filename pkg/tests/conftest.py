"""Shared fixtures: the desk-scale demo project and edit-plan helpers."""

import shutil

import numpy as np
import pytest
import torch

from iceg.dataset import CameraPose
from iceg.fixture import FIXTURE_BACKGROUND, FIXTURE_MAX_MASKS, make_fixture_dataset, write_fixture_project
from iceg.project import ProjectConfig
from iceg.rasterize import look_at_c2w

# Edit view used by the recolor/texture protocols: its segmentation isolates
# the red blob cleanly and every view's red body matches it.
EDIT_VIEW = "r_003"


def tiny_config(**overrides) -> ProjectConfig:
    base = dict(
        max_masks=FIXTURE_MAX_MASKS,
        background=list(FIXTURE_BACKGROUND),
        color_iters=30,
        texture_iters=20,
        checkpoint_every=10,
        log_every=10,
        sample_rate=0.2,
    )
    base.update(overrides)
    return ProjectConfig(**base)


@pytest.fixture(scope="session")
def fixture_scene():
    """(SceneDataset, GaussianSet) for the three-blob scene, built once."""
    return make_fixture_dataset()


@pytest.fixture(scope="session")
def _project_template(tmp_path_factory):
    root = tmp_path_factory.mktemp("fixture-template") / "proj"
    write_fixture_project(root)
    return root


@pytest.fixture
def fixture_project(_project_template, tmp_path):
    """A fresh on-disk copy of the demo project for tests that mutate it."""
    from iceg.project import Project

    dest = tmp_path / "proj"
    shutil.copytree(_project_template, dest)
    return Project.open(dest)


def simple_camera(eye=(4.0, 0.0, 0.8), focal=18.0, size=16) -> CameraPose:
    return CameraPose(c2w=look_at_c2w(eye), focal=focal, principal_point=(size / 2.0, size / 2.0))


@pytest.fixture
def criterion(capsys):
    """Report one acceptance criterion pass/fail line on the live terminal."""

    def report(name: str, passed: bool, detail: str = ""):
        line = f"[{'PASS' if passed else 'FAIL'}] {name}"
        if detail:
            line += f" ({detail})"
        with capsys.disabled():
            print(line, flush=True)
        assert passed, line

    return report
