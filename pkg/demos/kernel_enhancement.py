"""
Fixed center-surround kernels
=============================

Each kernel subtracts the mean of a ring of surrounding pixels from the mean of
a small center.  Flat or slowly varying background gives almost nothing back;
a compact bright spot gives a strong positive peak.
"""

import numpy as np

from tirseg.enhance import build_default_bank, enhance_stack, kernel_response
from tirseg.synthgen import SceneParams, gen_scene

bank = build_default_bank()
for k in bank:
    print(f"{k.size:2d}x{k.size:<2d} {k.aspect or 'square':10s} red {k.n_red:2d} blue {k.n_blue:3d}")

# a constant image: every response is zero, borders included
flat = np.full((32, 32), 0.4)
print("flat image, max |response|:", max(np.abs(kernel_response(flat, k)).max() for k in bank))

# a scene with three dim targets
item = gen_scene(SceneParams(n_targets=3, target_snr=3.0, seed=5))
stack = enhance_stack(item.image)[0]
on = item.mask == 1


def contrast(chan):
    bg = chan[~on]
    return (chan[on].mean() - bg.mean()) / bg.std()


print("raw image contrast       %.2f" % contrast(stack[0]))
for i, k in enumerate(bank, start=1):
    print(f"kernel {k.size:2d} {k.aspect or 'square':10s} contrast {contrast(stack[i]):.2f}")
