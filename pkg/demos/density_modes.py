"""Build a small density model and evaluate it three ways.

    python3 demos/density_modes.py
"""
import numpy as np

from dqnn import ansatz as A
from dqnn.density import (DensityModel, expectation_exact, expectation_sampled, lcu_expectation,
                          prepare_deterministic)
from dqnn.grad import density_gradient
from dqnn.pauli import z_sum

rng = np.random.default_rng(0)
n, K = 3, 3

# K one-layer hardware-efficient sub-units, each starting on a different rotation axis
subs = [A.build_hardware_efficient(n, 1, first_layer=k) for k in range(K)]
model = DensityModel(subs, [c.init_params(rng) * 5 for c in subs], logits=[0.5, 0.0, -0.5],
                     loader=A.Loader("product_ry"))
H = z_sum(n)
x = rng.uniform(-1, 1, n)

exact = expectation_exact(model, x, H)
rho = prepare_deterministic(model, x)
est, sem = expectation_sampled(model, x, H, shots_per_draw=100, draws=2000, rng=rng,
                               return_sem=True)

print(f"exact mixture        {exact:+.6f}")
print(f"Tr(H rho) ancilla    {rho.expectation(H):+.6f}")
print(f"sampled (2000 draws) {est.estimate:+.6f} +- {sem:.4f}  circuits={est.circuits_used}")
print(f"LCU value            {lcu_expectation(model, x, H):+.6f}")

grad, plan = density_gradient(model, x[None], H, engine="commuting")
print(f"\n{plan.n_gradient_circuits} gradient circuits for {model.theta.size} angles")
for e in plan.entries:
    print(f"  {e.descriptor:32s} params={list(e.params)} circuits={e.circuits}")
