"""Cross-modal prototypes: per-class means and the learnable convex mix.

Each class gets a textual prototype (mean prompt feature) and a visual
prototype (mean support feature). A sigmoid gate conditioned on the visual
prototype blends them; with the fusion vector u at zero the mix is an even
50/50, and training moves u to favor whichever modality separates the data.
"""

import numpy as np

from node_adapter import (SyntheticSpec, synth_generate, textual_prototype,
                          visual_prototype, fusion_coefficients, fuse, predict)

spec = SyntheticSpec(classes=5, dim=16, shots=8, queries_per_class=10,
                     prompts_per_class=4, seed=2)
support, query, prompts = synth_generate(spec)

p_t = textual_prototype(prompts)
p_v = visual_prototype(support)
print("textual prototype norms:", np.round(np.linalg.norm(p_t, axis=1), 3))
print("visual prototype norms: ", np.round(np.linalg.norm(p_v, axis=1), 3))

u = np.zeros((1, support.dim))
lam = fusion_coefficients(p_v, u)
print("fusion coefficients at u = 0:", lam.ravel())

state = fuse(p_t, p_v, lam)
print("fused rows sit exactly on the textual-visual segment:",
      np.allclose(state.matrix, lam * p_v + (1 - lam) * p_t))

for name, protos in (("textual", p_t), ("visual", p_v), ("fused", state.matrix)):
    acc = np.mean(predict(query, protos) == query.labels)
    print(f"query accuracy with {name:8s} prototypes: {acc:.3f}")

# push u toward the first visual prototype: its class leans fully visual
u_directed = 8.0 * p_v[:1] / np.sum(p_v[0] ** 2)
lam2 = fusion_coefficients(p_v, u_directed)
print("coefficients with u aligned to class 0:", np.round(lam2.ravel(), 3))
