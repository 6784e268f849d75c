"""Seeded synthetic fixtures with planted group structure.

Users and items fall into matched latent groups; target interactions stay
within a user's matched item group, so a model that recovers the groups can
rank every held-out item inside the top group-sized slice.  Auxiliary
behaviors either echo that structure (mostly within-group), copy target
pairs outright (well-aligned), or ignore it (pure noise).
"""

from __future__ import annotations

import math

import numpy as np

from . import seeds
from .data import DatasetManifest, InteractionDataset


def _dataset(behaviors, target, edges, num_users, num_items) -> InteractionDataset:
    manifest = DatasetManifest(
        behaviors=tuple(behaviors),
        target=target,
        num_users=num_users,
        num_items=num_items,
    )
    width_u = len(str(num_users - 1))
    width_i = len(str(num_items - 1))
    return InteractionDataset(
        manifest=manifest,
        edges=edges,
        user_ids=tuple(f"u{k:0{width_u}d}" for k in range(num_users)),
        item_ids=tuple(f"i{k:0{width_i}d}" for k in range(num_items)),
    )


def planted_dataset(
    seed: int,
    num_users: int = 40,
    num_items: int = 40,
    num_groups: int = 4,
    target_per_user: int = 6,
    aux_per_user: int = 10,
    within_group: float = 0.9,
    aux_behaviors: tuple[str, ...] = ("view", "cart"),
    target: str = "buy",
) -> InteractionDataset:
    """Planted-preference dataset: target edges within matched groups,
    auxiliary edges mostly (``within_group`` fraction) within-group.

    Target timestamps run 1..k per user so the leave-one-out split is well
    defined; auxiliary edges get timestamp 0 (they precede every target).
    """
    if num_users % num_groups or num_items % num_groups:
        raise ValueError("users and items must divide evenly into groups")
    rng = seeds.spawn(seed, "fixture")
    users_per_group = num_users // num_groups
    items_per_group = num_items // num_groups

    def group_items(g: int) -> np.ndarray:
        return np.arange(g * items_per_group, (g + 1) * items_per_group)

    edges: dict[str, dict[tuple[int, int], int | None]] = {
        b: {} for b in (*aux_behaviors, target)
    }
    for u in range(num_users):
        g = u // users_per_group
        own = group_items(g)
        picked = rng.choice(own, size=target_per_user, replace=False)
        for ts, item in enumerate(picked, start=1):
            edges[target][(u, int(item))] = ts
        n_within = round(within_group * aux_per_user)
        others = np.setdiff1d(np.arange(num_items), own)
        for b in aux_behaviors:
            inside = rng.choice(own, size=min(n_within, len(own)), replace=False)
            outside = rng.choice(
                others, size=aux_per_user - len(inside), replace=False
            )
            for item in (*inside, *outside):
                edges[b][(u, int(item))] = 0

    return _dataset((*aux_behaviors, target), target, edges, num_users, num_items)


def planted_dataset_mixed_alignment(
    seed: int,
    num_users: int = 40,
    num_items: int = 40,
    num_groups: int = 4,
    target_per_user: int = 5,
    aligned_fraction: float = 0.95,
    noise_per_user: int = 12,
    aligned_behavior: str = "aligned",
    noise_behavior: str = "noise",
    target: str = "buy",
) -> InteractionDataset:
    """Planted dataset with one well-aligned and one pure-noise auxiliary.

    The aligned behavior copies ``aligned_fraction`` of all target pairs
    (alignment ratio >= that fraction by construction); the noise behavior
    samples user-item pairs disjoint from the target set, keeping its
    alignment ratio at 0.
    """
    rng = seeds.spawn(seed, "fixture")
    if num_users % num_groups or num_items % num_groups:
        raise ValueError("users and items must divide evenly into groups")
    users_per_group = num_users // num_groups
    items_per_group = num_items // num_groups

    edges: dict[str, dict[tuple[int, int], int | None]] = {
        aligned_behavior: {}, noise_behavior: {}, target: {}
    }
    for u in range(num_users):
        g = u // users_per_group
        own = np.arange(g * items_per_group, (g + 1) * items_per_group)
        picked = rng.choice(own, size=target_per_user, replace=False)
        for ts, item in enumerate(picked, start=1):
            edges[target][(u, int(item))] = ts

    target_pairs = sorted(edges[target])
    n_copy = math.ceil(aligned_fraction * len(target_pairs))
    copied = rng.choice(len(target_pairs), size=n_copy, replace=False)
    for k in copied:
        edges[aligned_behavior][target_pairs[k]] = 0

    target_set = set(target_pairs)
    for u in range(num_users):
        count = 0
        while count < noise_per_user:
            item = int(rng.integers(num_items))
            if (u, item) in target_set or (u, item) in edges[noise_behavior]:
                continue
            edges[noise_behavior][(u, item)] = 0
            count += 1

    return _dataset(
        (aligned_behavior, noise_behavior, target),
        target,
        edges,
        num_users,
        num_items,
    )
