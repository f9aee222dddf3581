"""Shared fixtures: small worlds and planned paths reused across test files."""

import numpy as np
import pytest

from rownav import config as cfgmod
from rownav import planner
from rownav.field import generate_field, ground_truth_waypoints


def make_world(**overrides):
    cfg = dict(cfgmod.DEFAULTS)
    cfg.update(overrides)
    return generate_field(cfgmod.field_spec_from(cfg)), cfg


def plan_world(world):
    grid = world.occupancy
    gt = np.array([p for p, _, _ in ground_truth_waypoints(world)])
    alpha = planner.estimate_row_orientation(grid)
    ordered = planner.cluster_and_order(gt, alpha, grid)
    path = planner.build_global_path(ordered, grid)
    return gt, ordered, path


@pytest.fixture(scope="session")
def default_world():
    world, cfg = make_world()
    return world


@pytest.fixture(scope="session")
def default_plan(default_world):
    return plan_world(default_world)
