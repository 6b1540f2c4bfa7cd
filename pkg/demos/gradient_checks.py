"""
Checking hand-written gradients
===============================

Every layer's backward pass is compared with central finite differences.
Coordinates where the +/- step flips a ReLU are skipped, since the loss is not
smooth there.
"""

import numpy as np

from tirseg import nn
from tirseg.segnet import NetConfig, build_network, network_grad_check

rng = np.random.default_rng(0)
for name, layer in [("conv 3x3", nn.Conv2d(2, 3, 3, rng=rng)),
                    ("conv stride 2", nn.Conv2d(2, 3, 3, stride=2, padding=1, rng=rng)),
                    ("residual block", nn.ResBlock(2, 4, rng)),
                    ("ASPP", nn.ASPP(2, 2, (1, 2, 4), rng))]:
    rep = nn.layer_report(layer, rng.normal(size=(1, 2, 6, 6)), rng)
    print(f"{name:15s} max rel err {rep['max_error']:.1e}  checked {rep['checked']}  skipped {rep['skipped']}")

net = build_network(NetConfig(seed=1))
x = rng.normal(size=(1, 16, 8, 8))
mask = (rng.random((8, 8)) > 0.8).astype(np.uint8)
rep = network_grad_check(net, x, mask, n_samples=100)
print(f"whole network: max rel err {rep['max_error']:.1e} over {rep['checked']} parameters")
