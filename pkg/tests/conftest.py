"""Shared fixtures: small training runs and the fixed 20k/32d acceptance suite."""

from __future__ import annotations

import numpy as np
import pytest

from grlc import HyperParams, VectorSet, synth_mixture
from grlc.evaluation import GroundTruth, brute_force_knn
from grlc.index import build_index
from grlc.training import fit


def quick_hp(**overrides) -> HyperParams:
    """Short schedule for unit-scale training runs."""
    base = dict(K_init=6, epochs_max=12, warmup_epochs=4, splitclone_period=4,
                prune_period=6, batch_size=256, seed=0)
    base.update(overrides)
    hp = HyperParams(**base)
    hp.validate()
    return hp


@pytest.fixture(scope="session")
def small_dataset():
    return synth_mixture(600, 8, 6, 0.08, seed=11)


@pytest.fixture(scope="session")
def small_index(small_dataset):
    hp = quick_hp()
    state = fit(small_dataset.vectors, hp)
    return build_index(small_dataset.vectors, state.gaussians, hp, norm=state.norm), state


# -- the fixed acceptance suite: one base/query split, one trained index,
#    shared by the exactness / low-budget / monotonicity criteria

SUITE_SEED = 7
SUITE_N = 20_000
SUITE_D = 32
SUITE_COMPONENTS = 20
SUITE_SPREAD = 0.12
SUITE_QUERIES = 500


@pytest.fixture(scope="session")
def acceptance_suite():
    full = synth_mixture(SUITE_N + SUITE_QUERIES, SUITE_D, SUITE_COMPONENTS,
                         SUITE_SPREAD, seed=SUITE_SEED)
    rng = np.random.default_rng(SUITE_SEED)
    perm = rng.permutation(SUITE_N + SUITE_QUERIES)
    base = VectorSet(full.vectors.data[np.sort(perm[:SUITE_N])])
    queries = full.vectors.as_f64()[np.sort(perm[SUITE_N:])]
    return base, queries


@pytest.fixture(scope="session")
def acceptance_index(acceptance_suite):
    base, _ = acceptance_suite
    hp = HyperParams(K_init=32, seed=SUITE_SEED)
    state = fit(base, hp)
    index = build_index(base, state.gaussians, hp, norm=state.norm)
    return index, state


@pytest.fixture(scope="session")
def acceptance_gt(acceptance_suite) -> GroundTruth:
    base, queries = acceptance_suite
    return brute_force_knn(base, queries, 10)
