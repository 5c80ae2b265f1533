"""Implicit-feedback matrix factorization of listening logs.

Play counts become confidence weights (c = 1 + alpha * r) over binary
preferences, and user/item factor tables are fit by alternating exact
ridge solves.  Item vectors are the transferable song representation the
rest of the pipeline consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve

from .fileio import load_float_table, save_float_table


@dataclass(frozen=True)
class ListeningLog:
    """One user-item interaction; ``count`` defaults to a single play."""

    user_id: Hashable
    item_id: Hashable
    count: int = 1


@dataclass
class AlsConfig:
    n_factors: int = 40
    reg_lambda: float = 0.1
    alpha: float = 40.0
    n_iterations: int = 15
    seed: int = 0
    # Scale the ridge term per row by its interaction count (the regime the
    # solver and weighted_loss must agree on for monotone sweeps).
    scale_reg_by_count: bool = True

    def __post_init__(self):
        if self.n_factors < 1:
            raise ValueError("n_factors must be >= 1")
        if self.reg_lambda <= 0:
            raise ValueError("reg_lambda must be > 0")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be >= 0")


class UserItemMatrix:
    """Sparse user-by-item play counts with id <-> index maps."""

    def __init__(self, counts: sp.csr_matrix, user_ids, item_ids):
        counts = counts.tocsr()
        counts.sum_duplicates()
        if counts.shape != (len(user_ids), len(item_ids)):
            raise ValueError("count matrix shape does not match id lists")
        if counts.nnz == 0:
            raise ValueError("interaction matrix has no entries")
        if counts.data.min() < 1:
            raise ValueError("stored counts must be >= 1")
        self.counts = counts
        self.user_ids = list(user_ids)
        self.item_ids = list(item_ids)
        self.user_index = {u: i for i, u in enumerate(self.user_ids)}
        self.item_index = {m: i for i, m in enumerate(self.item_ids)}

    @property
    def n_users(self) -> int:
        return self.counts.shape[0]

    @property
    def n_items(self) -> int:
        return self.counts.shape[1]

    @property
    def nnz(self) -> int:
        return self.counts.nnz


def build_interaction_matrix(logs: Sequence[ListeningLog]) -> UserItemMatrix:
    """Aggregate logs into a sparse count matrix.

    Duplicate (user, item) pairs sum their counts; users and items are
    indexed in order of first appearance so the result is deterministic
    for a given log sequence.
    """
    logs = list(logs)
    if not logs:
        raise ValueError("cannot build an interaction matrix from an empty log")
    user_ids: list = []
    item_ids: list = []
    user_index: dict = {}
    item_index: dict = {}
    rows, cols, vals = [], [], []
    for log in logs:
        if log.count < 1:
            raise ValueError(f"log count must be >= 1, got {log.count}")
        u = user_index.setdefault(log.user_id, len(user_ids))
        if u == len(user_ids):
            user_ids.append(log.user_id)
        i = item_index.setdefault(log.item_id, len(item_ids))
        if i == len(item_ids):
            item_ids.append(log.item_id)
        rows.append(u)
        cols.append(i)
        vals.append(log.count)
    counts = sp.coo_matrix(
        (np.asarray(vals, dtype=np.float64), (rows, cols)),
        shape=(len(user_ids), len(item_ids)),
    ).tocsr()
    return UserItemMatrix(counts, user_ids, item_ids)


def parse_log_file(path) -> list[ListeningLog]:
    """Parse tab-separated ``user_id<TAB>item_id[<TAB>count]`` lines."""
    logs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) == 2:
                user, item = parts
                count = 1
            elif len(parts) == 3:
                user, item = parts[:2]
                try:
                    count = int(parts[2])
                except ValueError:
                    raise ValueError(
                        f"{path}:{lineno}: count {parts[2]!r} is not an integer"
                    ) from None
            else:
                raise ValueError(
                    f"{path}:{lineno}: expected 2 or 3 tab-separated fields, "
                    f"got {len(parts)}"
                )
            if count < 1:
                raise ValueError(f"{path}:{lineno}: count must be >= 1")
            logs.append(ListeningLog(user, item, count))
    if not logs:
        raise ValueError(f"{path}: log file contains no interactions")
    return logs


def confidence(r, alpha):
    """Linear confidence 1 + alpha * r of an observed count r."""
    if np.any(np.asarray(r) < 0):
        raise ValueError("counts must be nonnegative")
    return 1.0 + alpha * np.asarray(r, dtype=np.float64)


@dataclass
class CfEmbedding:
    """User and item factor tables from one ALS fit."""

    item_vectors: np.ndarray
    user_vectors: Optional[np.ndarray]
    item_ids: list
    user_ids: Optional[list] = None
    item_index: dict = field(default_factory=dict)

    def __post_init__(self):
        self.item_vectors = np.asarray(self.item_vectors, dtype=np.float64)
        if self.item_vectors.ndim != 2:
            raise ValueError("item_vectors must be 2-D")
        if not np.all(np.isfinite(self.item_vectors)):
            raise ValueError("item_vectors contain non-finite entries")
        if len(self.item_ids) != self.item_vectors.shape[0]:
            raise ValueError("item id count does not match item_vectors rows")
        if self.user_vectors is not None:
            self.user_vectors = np.asarray(self.user_vectors, dtype=np.float64)
            if not np.all(np.isfinite(self.user_vectors)):
                raise ValueError("user_vectors contain non-finite entries")
            if self.user_vectors.shape[1] != self.item_vectors.shape[1]:
                raise ValueError("user and item factor widths differ")
        if not self.item_index:
            self.item_index = {m: i for i, m in enumerate(self.item_ids)}

    @property
    def n_factors(self) -> int:
        return self.item_vectors.shape[1]


def item_vector(emb: CfEmbedding, item_id) -> np.ndarray:
    """Stored factor row for ``item_id``; raises KeyError for unknown ids."""
    try:
        idx = emb.item_index[item_id]
    except KeyError:
        raise KeyError(f"unknown item id {item_id!r}") from None
    return emb.item_vectors[idx]


def _row_reg(config: AlsConfig, nnz_row: int) -> float:
    return config.reg_lambda * (nnz_row if config.scale_reg_by_count else 1.0)


def als_solve_side(fixed, matrix: UserItemMatrix, config: AlsConfig, side: str):
    """Exact ridge solve of one side given the other side's factors.

    For each row u the solution is
    ``x_u = (Y^T C_u Y + lam I)^-1 Y^T C_u p(u)`` with binary preferences
    ``p`` and diagonal confidences ``C_u``.  Assembly uses
    ``Y^T C_u Y = Y^T Y + Y^T (C_u - I) Y`` so the per-row cost scales
    with the row's non-zeros, not with the full item count.  Rows with no
    interactions get the zero vector (the ridge minimizer).
    """
    if side not in ("user", "item"):
        raise ValueError(f"side must be 'user' or 'item', got {side!r}")
    fixed = np.asarray(fixed, dtype=np.float64)
    k = config.n_factors
    if fixed.ndim != 2 or fixed.shape[1] != k:
        raise ValueError(
            f"fixed factors must have {k} columns, got shape {fixed.shape}"
        )
    counts = matrix.counts if side == "user" else matrix.counts.T.tocsr()
    if fixed.shape[0] != counts.shape[1]:
        raise ValueError(
            f"fixed side has {fixed.shape[0]} rows, matrix expects {counts.shape[1]}"
        )
    yty = fixed.T @ fixed
    out = np.zeros((counts.shape[0], k), dtype=np.float64)
    eye = np.eye(k)
    for u in range(counts.shape[0]):
        lo, hi = counts.indptr[u], counts.indptr[u + 1]
        if lo == hi:
            continue
        cols = counts.indices[lo:hi]
        r = counts.data[lo:hi]
        m = fixed[cols]
        a = yty + (m.T * (config.alpha * r)) @ m + _row_reg(config, hi - lo) * eye
        b = m.T @ (1.0 + config.alpha * r)
        try:
            factor = cho_factor(a, lower=True)
        except np.linalg.LinAlgError as exc:  # unreachable for reg_lambda > 0
            raise ValueError(f"normal matrix for row {u} is not SPD: {exc}") from exc
        out[u] = cho_solve(factor, b)
    return out


def als_fit(
    matrix: UserItemMatrix,
    config: AlsConfig,
    on_sweep: Optional[Callable[[int, np.ndarray, np.ndarray], None]] = None,
) -> CfEmbedding:
    """Alternate user- and item-side solves for ``n_iterations`` sweeps.

    Factors start uniform in [-0.01, 0.01] from the seeded generator, so a
    zero-iteration fit returns the initialization.  ``on_sweep`` (if given)
    observes (sweep_index, user_vectors, item_vectors) after each full
    sweep.  Row solves within a side are independent; this implementation
    runs them serially, which is the deterministic reference order.
    """
    rng = np.random.default_rng(config.seed)
    users = rng.uniform(-0.01, 0.01, size=(matrix.n_users, config.n_factors))
    items = rng.uniform(-0.01, 0.01, size=(matrix.n_items, config.n_factors))
    for sweep in range(config.n_iterations):
        users = als_solve_side(items, matrix, config, "user")
        items = als_solve_side(users, matrix, config, "item")
        if on_sweep is not None:
            on_sweep(sweep, users, items)
    return CfEmbedding(
        item_vectors=items,
        user_vectors=users,
        item_ids=matrix.item_ids,
        user_ids=matrix.user_ids,
    )


def weighted_loss(matrix: UserItemMatrix, emb: CfEmbedding, config: AlsConfig):
    """Exact confidence-weighted objective, including all zero entries.

    Computed densely, which is fine at the scales this artifact targets;
    at production scale the usual sparse identity over the nonzeros would
    be required instead.  The ridge term follows the config: per-row
    count-scaled when ``scale_reg_by_count`` is set, plain otherwise, so
    the value is the precise objective the solver minimizes.
    """
    if emb.user_vectors is None:
        raise ValueError("weighted_loss needs both factor tables")
    x, y = emb.user_vectors, emb.item_vectors
    if x.shape[0] != matrix.n_users or y.shape[0] != matrix.n_items:
        raise ValueError(
            f"embedding shapes {x.shape}/{y.shape} do not match matrix "
            f"{matrix.n_users}x{matrix.n_items}"
        )
    if x.shape[1] != y.shape[1]:
        raise ValueError("factor widths differ between sides")
    r = matrix.counts.toarray().astype(np.float64)
    conf = 1.0 + config.alpha * r
    pref = (r > 0).astype(np.float64)
    pred = x @ y.T
    data_term = float(np.sum(conf * (pref - pred) ** 2))
    nnz_u = np.diff(matrix.counts.indptr)
    nnz_i = np.diff(matrix.counts.T.tocsr().indptr)
    if config.scale_reg_by_count:
        reg = config.reg_lambda * (
            float(nnz_u @ np.sum(x * x, axis=1)) + float(nnz_i @ np.sum(y * y, axis=1))
        )
    else:
        reg = config.reg_lambda * (float(np.sum(x * x)) + float(np.sum(y * y)))
    return data_term + reg


def save_embedding(emb: CfEmbedding, path, meta=None):
    """Persist the item table (the transferable knowledge) as a float table."""
    info = {"kind": "cf_item_embedding", "n_factors": emb.n_factors}
    info.update(meta or {})
    save_float_table(path, emb.item_ids, emb.item_vectors, meta=info)


def load_embedding(path) -> CfEmbedding:
    """Load an item embedding table saved by :func:`save_embedding`."""
    ids, matrix, _meta = load_float_table(path)
    return CfEmbedding(item_vectors=matrix, user_vectors=None, item_ids=ids)
