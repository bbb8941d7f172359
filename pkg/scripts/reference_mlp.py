"""Reference run: a 2-layer MLP on the synthetic blobs.

This is the yardstick behind the 0.9 accuracy threshold used for the
retrained S2 genotype.

    python scripts/reference_mlp.py --epochs 20
"""

import argparse

from progdarts.config import config_from_dict, prepare_data
from progdarts.evaluate import MLP, TrainConfig, train_model


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = config_from_dict({"dataset": {"n": 512, "classes": 4, "side": 8}})
    data = prepare_data(cfg)
    d = cfg.dataset
    model = MLP(3 * d.side * d.side, args.hidden, d.classes, seed=args.seed)
    rep = train_model(model, data.train, TrainConfig(epochs=args.epochs, lr=0.05, batch_size=32),
                      args.seed, data.test)
    print(f"train_acc={rep.train_acc:.4f} test_acc={rep.test_acc:.4f} "
          f"params={rep.num_params} final_loss={rep.final_loss:.4f}")


if __name__ == "__main__":
    main()
