"""Shared fixtures: small deterministic datasets and graphs."""

import numpy as np
import pytest

from concf import RawInteractions, build_normalized_adjacency, build_split


def make_raw(n_users: int, n_items: int, n_pairs: int, seed: int = 0) -> RawInteractions:
    """Random distinct (user, item) pairs with zero-padded string keys."""
    rng = np.random.default_rng(seed)
    pairs = set()
    while len(pairs) < n_pairs:
        pairs.add((int(rng.integers(n_users)), int(rng.integers(n_items))))
    pairs = sorted(pairs)
    return RawInteractions(
        users=tuple(f"u{u:04d}" for u, _ in pairs),
        items=tuple(f"i{i:04d}" for _, i in pairs),
    )


def random_split(n_users: int, n_items: int, n_pairs: int, seed: int = 0):
    return build_split(make_raw(n_users, n_items, n_pairs, seed), seed=seed)


@pytest.fixture(scope="session")
def small_split():
    """30 users x 40 items, ~900 interactions; every user in every split."""
    return random_split(30, 40, 900, seed=7)


@pytest.fixture(scope="session")
def small_adj(small_split):
    return build_normalized_adjacency(small_split)


def planted_communities(
    n_users: int = 200,
    n_items: int = 300,
    n_comm: int = 8,
    target_interactions: int = 6000,
    in_out_ratio: float = 10.0,
    seed: int = 0,
) -> RawInteractions:
    """Block-structured bipartite data: within-community edges are
    ``in_out_ratio`` times as likely as cross-community ones."""
    rng = np.random.default_rng(seed)
    u_comm = np.arange(n_users) % n_comm
    i_comm = np.arange(n_items) % n_comm
    same = u_comm[:, None] == i_comm[None, :]
    n_in_per_user = same.sum(axis=1)
    n_out_per_user = n_items - n_in_per_user
    # solve: n_users * (n_in * p_in + n_out * p_out) = target, p_in = ratio * p_out
    denom = float((in_out_ratio * n_in_per_user + n_out_per_user).sum())
    p_out = target_interactions / denom
    p_in = in_out_ratio * p_out
    probs = np.where(same, p_in, p_out)
    mask = rng.random((n_users, n_items)) < probs
    # every user needs a handful of interactions to populate all splits
    for u in range(n_users):
        while mask[u].sum() < 5:
            own = np.flatnonzero(same[u])
            mask[u, own[rng.integers(len(own))]] = True
    us, its = np.nonzero(mask)
    return RawInteractions(
        users=tuple(f"u{u:04d}" for u in us),
        items=tuple(f"i{i:04d}" for i in its),
    )
