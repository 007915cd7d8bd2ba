# The tiny frozen-base + low-rank-adapter classifier: exact manual
# backprop checked against finite differences, the adapter/full-space
# chain-rule identity, and the versioned checkpoint round trip.

import os
import tempfile

import numpy as np

from gemproj import (
    ModelConfig,
    adapter_dim,
    backward,
    build_model,
    forward,
    get_adapter_params,
    jacobian_apply,
    jacobian_transpose_apply,
    load_checkpoint,
    save_checkpoint,
    set_adapter_params,
    weight_space_gradient,
)

config = ModelConfig(input_dim=8, hidden_dim=6, n_classes=3, rank=2, alpha=8.0)
model = build_model(config, seed=0)
print(f"model: {config.input_dim}->{config.hidden_dim}->{config.n_classes}, "
      f"rank {config.rank}, d_phi = {adapter_dim(model)}")

rng = np.random.default_rng(0)
phi = get_adapter_params(model).phi
set_adapter_params(model, phi + 0.05 * rng.standard_normal(phi.size))  # generic point

X = rng.standard_normal((10, 8))
y = rng.integers(0, 3, size=10)

loss, g = backward(model, X, y)
print(f"\nbatch loss = {loss:.6f}, ||g_phi|| = {np.linalg.norm(g):.6f}")

# central differences as an independent oracle for a few coordinates
step = 1e-5
print("coordinate   backward      central-diff")
for j in (0, 7, 42, adapter_dim(model) - 1):
    probe = get_adapter_params(model).phi
    vals = []
    for sign in (+1, -1):
        p = probe.copy()
        p[j] += sign * step
        set_adapter_params(model, p)
        vals.append(backward(model, X, y)[0])
    set_adapter_params(model, probe)
    fd = (vals[0] - vals[1]) / (2 * step)
    print(f"  {j:9d}  {g[j]:+.8f}  {fd:+.8f}")

# chain rule: pulling the full-weight gradient back through the adapter
# Jacobian reproduces backward exactly
g_full = weight_space_gradient(model, X, y)
pulled = jacobian_transpose_apply(model, g_full)
print(f"\nmax |backward - J'g_full| = {np.abs(g - pulled).max():.2e}")

# adjoint identity: <g_full, J dphi> == <J' g_full, dphi>
dphi = rng.standard_normal(adapter_dim(model))
lhs = g_full @ jacobian_apply(model, dphi)
rhs = pulled @ dphi
print(f"adjoint identity mismatch = {abs(lhs - rhs):.2e}")

# versioned little-endian checkpoint
with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "model.npz")
    save_checkpoint(model, path)
    clone = load_checkpoint(path)
    x = rng.standard_normal(8)
    same = np.array_equal(forward(model, x), forward(clone, x))
    print(f"\ncheckpoint round trip reproduces logits bit-for-bit: {same}")
