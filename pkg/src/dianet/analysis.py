"""Feature-integration analysis of the hidden states of a shared attention unit.

For a stage with hidden states h_1..h_F (each of width C), every target layer
j >= 2 is regressed on the concatenation of h_1..h_{j-1} with a random forest.
The forest importances are summed in consecutive groups of C (one group per
source layer) and the row is divided by its maximum, giving a lower-triangular
matrix with a 1.0 in every non-degenerate row.

The target loop starts at j = 2 since layer 1 has no predecessors, and
importances are grouped in clean blocks of exactly C features.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .forest import ForestParams, RegressionForest
from .tensor import no_grad


@dataclass
class HiddenStateTrace:
    values: np.ndarray      # (batch, channels, layers)
    stage: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ConfigError(f"trace must be 3-D (batch, channels, layers), got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ConfigError("trace contains non-finite values")

    @property
    def layers(self) -> int:
        return self.values.shape[2]

    def layer(self, t: int) -> np.ndarray:
        """Hidden state of 1-based layer ``t``, shape (batch, channels)."""
        return self.values[:, :, t - 1]


@dataclass
class IntegrationMatrix:
    scores: np.ndarray                       # (F, F); row t-1 = target layer t, column n-1 = source n < t
    degenerate_rows: list[int] = field(default_factory=list)
    stage: int = 0

    @property
    def layers(self) -> int:
        return self.scores.shape[0]

    def rows(self):
        """(target, source, score) triples, 1-based, ordered by target then source."""
        for t in range(2, self.layers + 1):
            for n in range(1, t):
                yield t, n, float(self.scores[t - 1, n - 1])


def capture_traces(model, images: np.ndarray, stage: int, batch_size: int = 128) -> HiddenStateTrace:
    """Run ``model`` in inference mode and stack the stage's attention vectors per block."""
    from .backbone import Network
    from .checkpoint import load_checkpoint

    net = model if isinstance(model, Network) else load_checkpoint(model)[0]
    if not 0 <= stage < len(net.stages):
        raise ConfigError(f"stage {stage} out of range")
    if net.stages[stage].unit is None:
        raise ConfigError(f"stage {stage} has no recurrent attention unit")
    net.eval()
    chunks = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            xb = np.asarray(images[start:start + batch_size], dtype=net.dtype)
            res = net.forward(xb)
            chunks.append(np.stack([h.data for h in res.traces[stage]], axis=-1))
    return HiddenStateTrace(np.concatenate(chunks).astype(np.float64), stage)


def integration_row(sources: list[np.ndarray], target: np.ndarray, params: ForestParams,
                    layer_ids=None) -> tuple[np.ndarray, bool]:
    """Normalized importance of each source layer for predicting ``target``.

    ``layer_ids`` label the sources for seeding feature subsampling, so that a
    permutation of the sources (with their ids) permutes the result.
    Returns (scores, degenerate).
    """
    c = target.shape[1]
    ids = list(range(len(sources))) if layer_ids is None else list(layer_ids)
    X = np.concatenate(sources, axis=1)
    fids = np.concatenate([np.arange(c) + i * c for i in ids])
    forest = RegressionForest(params).fit(X, target, feature_ids=fids)
    res = forest.feature_importances_.reshape(len(sources), c).sum(axis=1)
    top = res.max()
    if forest.degenerate or top <= 0:
        return np.zeros(len(sources)), True
    return res / top, False


def integration_matrix(trace: HiddenStateTrace, params: ForestParams | None = None) -> IntegrationMatrix:
    f = trace.layers
    if f < 2:
        raise ConfigError("integration matrix needs at least two layers")
    params = params or ForestParams()
    scores = np.zeros((f, f))
    degenerate = []
    for t in range(2, f + 1):
        sources = [trace.layer(n) for n in range(1, t)]
        row, bad = integration_row(sources, trace.layer(t), params)
        scores[t - 1, :t - 1] = row
        if bad:
            degenerate.append(t)
    return IntegrationMatrix(scores, degenerate, trace.stage)


def emit_heatmap_csv(matrix: IntegrationMatrix, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("target_layer", "source_layer", "score"))
        for t, n, s in matrix.rows():
            w.writerow((t, n, repr(s)))


def read_heatmap_csv(path) -> IntegrationMatrix:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != ("target_layer", "source_layer", "score"):
            raise ConfigError(f"{path}: unexpected heatmap header {header}")
        rows = [(int(t), int(n), float(s)) for t, n, s in reader]
    f = max((t for t, _, _ in rows), default=1)
    scores = np.zeros((f, f))
    for t, n, s in rows:
        scores[t - 1, n - 1] = s
    return IntegrationMatrix(scores)
