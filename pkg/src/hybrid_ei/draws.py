"""Retained posterior draws and their CSV representation."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .data import Dimensions
from .estimands import estimand_names


def mu_names(dims: Dimensions) -> list[str]:
    return [f"mu_{c}" for c in dims.coordinate_labels()]


def sigma_names(dims: Dimensions) -> list[str]:
    labels = dims.coordinate_labels()
    return [f"sigma_{labels[a]}__{labels[b]}" for a in range(dims.dim) for b in range(a, dims.dim)]


def draw_columns(dims: Dimensions) -> list[str]:
    return estimand_names(dims) + mu_names(dims) + sigma_names(dims)


def pack_sigma(sigma) -> np.ndarray:
    """(n, D, D) -> (n, D(D+1)/2), row-major upper triangle."""
    S = np.asarray(sigma)
    iu = np.triu_indices(S.shape[-1])
    return S[..., iu[0], iu[1]]


def unpack_sigma(packed, D: int) -> np.ndarray:
    P = np.asarray(packed, dtype=float)
    iu = np.triu_indices(D)
    out = np.zeros(P.shape[:-1] + (D, D))
    out[..., iu[0], iu[1]] = P
    out[..., iu[1], iu[0]] = P
    return out


@dataclass
class DrawStore:
    """Retained draws of the estimands, mu and Sigma with chain provenance."""

    dims: Dimensions
    values: np.ndarray
    chain: np.ndarray
    iteration: np.ndarray
    source: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = self.values.shape[0]
        self.chain = np.asarray(self.chain, dtype=np.int64).reshape(n)
        self.iteration = np.asarray(self.iteration, dtype=np.int64).reshape(n)
        self.source = np.asarray(self.source, dtype=object).reshape(n)
        if self.values.shape[1] != len(self.columns):
            raise ValueError("draw values do not match the column schema")

    @property
    def columns(self) -> list[str]:
        return draw_columns(self.dims)

    def __len__(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def estimands(self) -> dict[str, np.ndarray]:
        return {n: self.column(n) for n in estimand_names(self.dims)}

    def mu_draws(self) -> np.ndarray:
        k = len(estimand_names(self.dims))
        return self.values[:, k : k + self.dims.dim]

    def sigma_draws(self) -> np.ndarray:
        k = len(estimand_names(self.dims)) + self.dims.dim
        return unpack_sigma(self.values[:, k:], self.dims.dim)

    def equals(self, other: "DrawStore") -> bool:
        """Bit-exact equality of the retained draws and their provenance."""
        return (
            self.dims == other.dims
            and np.array_equal(self.values, other.values, equal_nan=True)
            and np.array_equal(self.chain, other.chain)
            and np.array_equal(self.iteration, other.iteration)
            and list(self.source) == list(other.source)
        )

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.values, columns=self.columns)
        df.insert(0, "source", list(self.source))
        df.insert(0, "iteration", self.iteration)
        df.insert(0, "chain", self.chain)
        return df

    def write_csv(self, path) -> None:
        # repr-precision floats so the file parses back bit-exactly
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def read_csv(cls, path) -> "DrawStore":
        df = pd.read_csv(
            path, dtype={"source": str}, keep_default_na=False, na_values=["", "nan", "NaN"], float_precision="round_trip"
        )
        dims = dims_from_columns(list(df.columns))
        values = df[draw_columns(dims)].to_numpy(dtype=float)
        return cls(dims, values, df["chain"].to_numpy(), df["iteration"].to_numpy(), df["source"].to_numpy())


def dims_from_columns(columns: list[str]) -> Dimensions:
    """Recover race and choice labels from a draw file header."""
    races = [c[len("gamma_") :] for c in columns if c.startswith("gamma_")]
    if len(races) < 2:
        raise ValueError("draw file has no gamma_<race> columns")
    prefix = f"lambda_{races[0]}_"
    votes = [c[len(prefix) :] for c in columns if c.startswith(prefix)]
    dims = Dimensions.from_labels(races, votes)
    missing = [c for c in draw_columns(dims) if c not in columns]
    if missing:
        raise ValueError(f"draw file is missing columns: {', '.join(missing[:5])}")
    return dims


def concat_stores(stores: list[DrawStore]) -> DrawStore:
    dims = stores[0].dims
    if any(s.dims != dims for s in stores):
        raise ValueError("draw stores have different estimand schemas")
    diag = {}
    for s in stores:
        for k, v in s.diagnostics.items():
            diag.setdefault(k, []).append(v)
    return DrawStore(
        dims,
        np.concatenate([s.values for s in stores]),
        np.concatenate([s.chain for s in stores]),
        np.concatenate([s.iteration for s in stores]),
        np.concatenate([s.source for s in stores]),
        diag,
    )


def write_draws(store: DrawStore, path: str | Path) -> None:
    store.write_csv(path)


def read_draws(path: str | Path) -> DrawStore:
    return DrawStore.read_csv(path)
