from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AssumptionError, ConfigurationError


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Linear features; column ``i`` of ``table`` is Phi(s, a) for flattened pair i."""

    table: np.ndarray  # (d_f, N)
    kind: str = "custom"

    def __post_init__(self):
        table = np.array(self.table, dtype=float)
        if table.ndim != 2 or min(table.shape) < 1:
            raise ConfigurationError(f"feature table must be a non-empty matrix, got shape {table.shape}")
        if not np.all(np.isfinite(table)):
            raise ConfigurationError("feature table must be finite")
        if self.kind == "one-hot" and not np.array_equal(table, np.eye(table.shape[1])):
            raise ConfigurationError("one-hot feature table must be the identity")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @classmethod
    def one_hot(cls, num_pairs: int) -> "FeatureMap":
        return cls(np.eye(num_pairs), kind="one-hot")

    @property
    def dim(self) -> int:
        return self.table.shape[0]

    @property
    def num_pairs(self) -> int:
        return self.table.shape[1]

    def __call__(self, pair: int) -> np.ndarray:
        return self.table[:, pair]

    def check_independent(self) -> None:
        """Feature vectors of distinct pairs must span a space of full dimension d_f."""
        if np.linalg.matrix_rank(self.table) < self.dim:
            raise AssumptionError("feature matrix does not have linearly independent rows/columns")

    def sparse_columns(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Padded (index, value, count) arrays of the non-zeros in each column."""
        nz = [np.flatnonzero(self.table[:, i]) for i in range(self.num_pairs)]
        width = max(1, max(len(z) for z in nz))
        idx = np.zeros((self.num_pairs, width), dtype=np.int64)
        val = np.zeros((self.num_pairs, width))
        cnt = np.zeros(self.num_pairs, dtype=np.int64)
        for i, z in enumerate(nz):
            idx[i, :len(z)] = z
            val[i, :len(z)] = self.table[z, i]
            cnt[i] = len(z)
        return idx, val, cnt
