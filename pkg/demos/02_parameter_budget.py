"""How much does attention cost as the network gets deeper?

One recurrent unit is shared by every block of a stage, so its parameter
count does not grow with depth. A per-block SE module grows linearly.
"""
from dianet.backbone import NetworkConfig, StageSpec, count_model_params

widths = (16, 32, 64)
print(f"{'blocks/stage':>12} {'depth':>6} {'backbone':>10} {'DIA extra':>10} {'SE extra':>10}")
for blocks in (3, 9, 18):
    stages = [StageSpec(w, blocks, 1 if i == 0 else 2) for i, w in enumerate(widths)]
    plain = count_model_params(NetworkConfig(stages=stages, attention="none"))
    dia = count_model_params(NetworkConfig(stages=stages, attention="dia_lstm", reduction=4))
    se = count_model_params(NetworkConfig(stages=stages, attention="se", reduction=4))
    print(f"{blocks:>12} {6 * blocks + 2:>6} {plain.total:>10} {dia.attention_total:>10} {se.attention_total:>10}")

# the reduction ratio trades capacity for parameters
stages = [StageSpec(w, 3, 1 if i == 0 else 2) for i, w in enumerate(widths)]
for r in (1, 2, 4, 8, 16):
    rep = count_model_params(NetworkConfig(stages=stages, reduction=r))
    print(f"r={r:<2} attention weights per stage:", [s["attention_weights"] for s in rep.stages])
