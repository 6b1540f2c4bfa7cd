"""
Training the segmenter
======================

A small U-shaped network fed by the fixed kernel responses, trained for a few
epochs on synthetic 32x32 scenes and scored on held-out ones.  Larger images
and more epochs do better; this is sized to run in about half a minute.
"""

from tirseg.metrics import evaluate
from tirseg.segnet import NetConfig, TrainConfig, build_network, infer, train
from tirseg.synthgen import SceneParams, gen_dataset

base = SceneParams(width=32, height=32, n_targets=2, target_snr=4.0)
train_set = gen_dataset(base, 60, seed=1).items
test_set = gen_dataset(base, 20, seed=2).items

net = build_network(NetConfig(seed=0))
print("trainable parameters:", sum(p.value.size for p in net.parameters()))


def log(epoch, loss):
    r = evaluate(net, test_set)
    print(f"epoch {epoch + 1}: loss {loss:.4f}  mIOU {r.miou:.3f}  recall {r.recall}")


train(net, train_set, TrainConfig(epochs=6, batch_size=8), log=log)

report = evaluate(net, test_set)
print({k: v for k, v in report.to_dict().items() if k != "per_image"})

lmap, mask, overlay = infer(net, test_set[0].image)
print("predicted target pixels", int(mask.sum()), "true", int(test_set[0].mask.sum()))
