"""Train a small attention network and a plain baseline on the synthetic task.

Usage: python3 demos/03_train_synthetic.py [steps]
Takes roughly a minute per 200 steps on one CPU core.
"""
import sys

from dianet.backbone import NetworkConfig, StageSpec
from dianet.train import TrainConfig, load_datasets, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 100
cfg = TrainConfig(batch_size=16, epochs=10, lr=0.1, subset=1000, test_subset=500, num_classes=4,
                  difficulty="mid", max_steps=steps, eval_interval=100)
data = load_datasets(cfg)
stages = [StageSpec(16, 2, 1), StageSpec(32, 2, 2), StageSpec(64, 2, 2)]

for attention in ("dia_lstm", "none"):
    net = NetworkConfig(stages=stages, attention=attention, num_classes=4)
    res = train(net, cfg, data=data)
    rec = res.record
    loss = rec.series("loss")
    print(f"{attention:>9}: loss {loss[0]:.3f} -> {loss[-1]:.3f}, "
          f"train {rec.series('accuracy', 'train')[-1]:.3f}, test {rec.series('accuracy', 'test')[-1]:.3f}")
    if attention == "dia_lstm":
        print(f"           attention range seen during training: "
              f"[{min(rec.series('attention_min')):.3f}, {max(rec.series('attention_max')):.3f}]")
