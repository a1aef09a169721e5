"""A short tour of the tape.

Every operation performed inside ``with Tape()`` is appended to the tape in
execution order; ``backward`` walks it in reverse. Here we check a few
gradients against central differences by hand.
"""
import numpy as np

from diffmcc import autodiff as ad
from diffmcc.autodiff import Tensor

rng = np.random.default_rng(0)

# a small two-layer map with a sigmoid at the end
x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
b = Tensor(np.zeros(2), requires_grad=True)

with ad.Tape() as tape:
    y = ad.sigmoid(ad.bias_add(x @ w, b)).mean()

print("recorded ops:", tape.ops)
tape.backward(y)
print("dy/dw =\n", w.grad)

# central differences on w[1, 0]
h = 1e-6
def value():
    with ad.no_grad():
        return ad.sigmoid(ad.bias_add(x @ w, b)).mean().item()

w.data[1, 0] += h
up = value()
w.data[1, 0] -= 2 * h
down = value()
w.data[1, 0] += h
print("finite difference:", (up - down) / (2 * h), " tape:", w.grad[1, 0])

# reset clears the records and the leaf gradients; a rerun gives the same numbers
first = w.grad.copy()
tape.reset()
with tape:
    y = ad.sigmoid(ad.bias_add(x @ w, b)).mean()
tape.backward(y)
print("identical after reset:", np.array_equal(first, w.grad))

# shape mistakes are loud
try:
    ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
except ad.DimensionError as exc:
    print("DimensionError:", exc)
