"""Synthetic embedding fixtures shared by evaluation tests."""

import numpy as np


def clustered_embeddings(n_classes, per_class, dim=16, noise=0.1, seed=0):
    """id -> (per_class, dim) unit embeddings scattered around a class center."""
    rng = np.random.default_rng(seed)
    out = {}
    for c in range(n_classes):
        center = rng.standard_normal(dim)
        center /= np.linalg.norm(center)
        members = center[None] + noise * rng.standard_normal((per_class, dim))
        members /= np.linalg.norm(members, axis=1, keepdims=True)
        out[f"ind{c:03d}"] = members
    return out


def random_unit_rows(n, dim, seed):
    rng = np.random.default_rng(seed)
    rows = rng.standard_normal((n, dim))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def condition_embeddings(n_classes, per_class, dim=32, n_conditions=6,
                         w_cond=1.0, sigma=0.15, seed=0):
    """Embeddings with identity + shared capture-condition structure.

    Same-condition genuine pairs score high, so max-fusion rewards larger
    templates (they cover more conditions) -- the regime where TAR@FAR
    grows with template size.
    """
    rng = np.random.default_rng(seed)
    conds = rng.standard_normal((n_conditions, dim))
    conds /= np.linalg.norm(conds, axis=1, keepdims=True)
    out = {}
    for c in range(n_classes):
        center = rng.standard_normal(dim)
        center /= np.linalg.norm(center)
        rows = []
        for _ in range(per_class):
            cond = conds[rng.integers(n_conditions)]
            v = center + w_cond * cond + sigma * rng.standard_normal(dim)
            rows.append(v / np.linalg.norm(v))
        out[f"ind{c:03d}"] = np.array(rows)
    return out
