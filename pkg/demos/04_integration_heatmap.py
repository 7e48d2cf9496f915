"""Which earlier blocks does a stage's attention state draw on?

Trains a short run, captures the hidden states of the shared unit in one
stage, and regresses each block's state on all earlier ones with a random
forest. Prints the normalized importance matrix as text.
"""
import numpy as np

from dianet.analysis import capture_traces, integration_matrix
from dianet.backbone import NetworkConfig, StageSpec
from dianet.forest import ForestParams
from dianet.train import TrainConfig, train

cfg = TrainConfig(subset=512, test_subset=256, max_steps=60, epochs=5, eval_interval=100)
net_cfg = NetworkConfig(stages=[StageSpec(16, 5, 1), StageSpec(32, 5, 2)], num_classes=4)
res = train(net_cfg, cfg)

trace = capture_traces(res.model, res.test_data.images, stage=0)
matrix = integration_matrix(trace, ForestParams(n_trees=30, seed=0))

np.set_printoptions(precision=2, suppress=True)
print("rows: target block, columns: source block (1-based)")
for t in range(2, matrix.layers + 1):
    row = " ".join(f"{v:4.2f}" for v in matrix.scores[t - 1, :t - 1])
    print(f"  h{t}: {row}")
