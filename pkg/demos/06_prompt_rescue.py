"""Where the refinement stage earns its keep: rescuing bad initial prototypes.

When the prompt features are nearly uninformative (one very noisy prompt per
class), the fused prototype starts far from the class centers and the
nearest-prototype classifier suffers. Training the field long enough for its
support-driven dynamics to converge moves the prototypes back toward
class-consistent positions and recovers several points, the behavior the
whole construction is designed for.

Takes about two minutes (two seeds, 60 epochs each).
"""

import numpy as np

from node_adapter import SyntheticSpec, SolverConfig, TrainConfig, synth_generate
from node_adapter.evaluation import ablation_run

gains = []
for seed in range(2):
    spec = SyntheticSpec(classes=6, dim=32, shots=12, queries_per_class=12,
                         prompts_per_class=1, visual_noise=0.25,
                         textual_noise=0.9, support_bias=0.3, seed=seed)
    support, query, prompts = synth_generate(spec)
    cfg = TrainConfig(epochs=60, lr0=3e-3, embed_dim=32, seed=seed,
                      solver=SolverConfig(method="rk4", steps=4, t0=0.0, tm=2.0))
    by = {r.variant: r.accuracy for r in ablation_run(support, prompts, query, cfg, seed=seed)}
    gains.append(100 * (by["TP+VP+NODE"] - by["TP+VP"]))
    print(f"seed {seed}:  TP {by['TP']:.3f}   VP {by['VP']:.3f}   "
          f"TP+VP {by['TP+VP']:.3f}   TP+VP+NODE {by['TP+VP+NODE']:.3f}"
          f"   gain {gains[-1]:+.1f}")

print(f"\nrefinement gain over the untrained fusion: {np.mean(gains):+.1f} points")
