"""Feature preprocessing: z-score normalization followed by PCA to 7 axes.

The fitted state is stored with every downstream model; transforming test
data with the training-set statistics is part of the contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import TrainingSample
from .ir import ProgramError, SchemaError, dumps

PREPROC_SCHEMA = "preproc/1"
N_COMPONENTS = 7


class PreprocessError(ProgramError):
    """Not enough data to fit, or a malformed stored state."""


@dataclass
class PreprocessState:
    mean: np.ndarray  # (n_features,)
    std: np.ndarray  # (n_features,), constant features hold 1.0
    constant: np.ndarray  # bool mask of constant features
    components: np.ndarray  # (N_COMPONENTS, n_features), orthonormal rows
    variances: np.ndarray  # (N_COMPONENTS,), descending

    def to_obj(self) -> dict:
        return {
            "schema": PREPROC_SCHEMA,
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "constant": [bool(v) for v in self.constant],
            "components": [[float(v) for v in row] for row in self.components],
            "variances": [float(v) for v in self.variances],
        }

    @staticmethod
    def from_obj(obj: dict) -> "PreprocessState":
        if not isinstance(obj, dict) or obj.get("schema") != PREPROC_SCHEMA:
            raise SchemaError(f"expected schema {PREPROC_SCHEMA!r}, got {obj.get('schema')!r}")
        try:
            state = PreprocessState(
                mean=np.array(obj["mean"], dtype=np.float64),
                std=np.array(obj["std"], dtype=np.float64),
                constant=np.array(obj["constant"], dtype=bool),
                components=np.array(obj["components"], dtype=np.float64),
                variances=np.array(obj["variances"], dtype=np.float64),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed preprocess state: {exc}") from exc
        if state.components.shape != (N_COMPONENTS, state.mean.shape[0]):
            raise SchemaError("preprocess state has inconsistent shapes")
        return state

    def to_json(self) -> str:
        return dumps(self.to_obj())


def _as_matrix(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        X = np.asarray(samples, dtype=np.float64)
        if X.ndim != 2:
            raise PreprocessError(f"feature matrix must be 2D, got shape {X.shape}")
        return X
    rows = [s.features for s in samples]
    return np.array(rows, dtype=np.float64)


def fit_preprocess(samples: "list[TrainingSample] | np.ndarray") -> PreprocessState:
    """Fit normalization and PCA on training rows.

    Needs at least 8 distinct rows. Constant features are centered and kept
    with std 1 so the column contract never changes. Component signs follow
    a fixed convention: the largest-magnitude entry of each is positive.
    """
    X = _as_matrix(samples)
    distinct = {tuple(row) for row in X}
    if len(distinct) < 8:
        raise PreprocessError(f"need at least 8 distinct samples, got {len(distinct)}")

    mean = X.mean(axis=0)
    std = X.std(axis=0)  # population std
    constant = std == 0.0
    std = np.where(constant, 1.0, std)

    Z = (X - mean) / std
    cov = np.cov(Z, rowvar=False, ddof=1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:N_COMPONENTS]
    variances = np.maximum(eigvals[order], 0.0)
    components = eigvecs[:, order].T.copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PreprocessState(
        mean=mean,
        std=std,
        constant=constant,
        components=components,
        variances=variances,
    )


def transform(ps: PreprocessState, v: np.ndarray) -> np.ndarray:
    """Project feature vectors (or a row matrix) onto the fitted axes."""
    arr = np.asarray(v, dtype=np.float64)
    z = (arr - ps.mean) / ps.std
    return z @ ps.components.T


def transform_samples(ps: PreprocessState, samples: list[TrainingSample]) -> np.ndarray:
    return transform(ps, _as_matrix(samples))
