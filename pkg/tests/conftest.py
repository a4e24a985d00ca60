"""Shared fixtures: tiny on-disk dataset trees and synthetic datasets."""
from __future__ import annotations

import numpy as np
import pytest

from matchbench.dataset import (
    Dataset,
    GrayImage,
    SequenceRecord,
    generate_synthetic_sequence,
    random_block_texture,
    save_sequence_dir,
    subset_for_name,
)
from matchbench.geometry import Homography

DEFAULT_EXCLUDED = (
    "i_contruction",
    "i_crownnight",
    "i_dc",
    "i_pencils",
    "i_whitebuilding",
    "v_artisans",
    "v_astronautis",
    "v_talent",
)


def translation_h(tx: float, ty: float) -> Homography:
    return Homography.from_matrix([[1, 0, tx], [0, 1, ty], [0, 0, 1]])


def tiny_sequence(name: str, seed: int = 0, size: int = 24) -> SequenceRecord:
    """Six tiny images whose ground truths are small exact translations."""
    base = random_block_texture(size, size, seed=seed, cell=4)
    rng = np.random.RandomState(seed + 99)
    images = [base]
    gts = []
    for k in range(5):
        shift = int(rng.randint(0, 3))
        arr = np.roll(base.pixels, shift, axis=1)
        images.append(GrayImage(arr))
        gts.append(translation_h(shift, 0))
    return SequenceRecord(
        name=name,
        subset=subset_for_name(name),
        gt_homographies=tuple(gts),
        images=tuple(images),
    )


def write_tree(root, names, seed: int = 0):
    """Materialize tiny sequences as an HPatches-style directory tree."""
    for i, name in enumerate(names):
        save_sequence_dir(tiny_sequence(name, seed=seed + i), root)
    return root


@pytest.fixture
def small_tree(tmp_path):
    """Three-sequence tree (2 illumination + 1 viewpoint)."""
    return write_tree(tmp_path / "data", ["i_alpha", "i_beta", "v_gamma"])


@pytest.fixture(scope="session")
def pristine_tree(tmp_path_factory):
    """Mock pristine tree: 57 illumination + 59 viewpoint sequences,
    including the 8 default-excluded names."""
    root = tmp_path_factory.mktemp("pristine") / "hpatches"
    names = [n for n in DEFAULT_EXCLUDED if n.startswith("i_")]
    names += [f"i_mock{k:03d}" for k in range(57 - len(names))]
    vnames = [n for n in DEFAULT_EXCLUDED if n.startswith("v_")]
    vnames += [f"v_mock{k:03d}" for k in range(59 - len(vnames))]
    write_tree(root, names + vnames)
    return root


def synthetic_dataset(
    n_sequences: int = 3,
    seed: int = 5,
    warp_magnitude: float = 12.0,
    size: int = 160,
    n_targets: int = 5,
) -> Dataset:
    """In-memory dataset of warped textures, alternating subsets."""
    seqs = []
    for i in range(n_sequences):
        prefix = "i" if i % 2 else "v"
        base = random_block_texture(size, size, seed=seed + 10 * i)
        seqs.append(
            generate_synthetic_sequence(
                base,
                seed=seed + i,
                n_targets=n_targets,
                warp_magnitude=warp_magnitude,
                name=f"{prefix}_synth{i}",
            )
        )
    return Dataset(tuple(seqs))
