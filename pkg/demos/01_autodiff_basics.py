"""
Reverse-mode gradients on a tiny graph
======================================

Every operation records itself on an implicit tape.  Calling ``backward``
walks the tape in reverse and leaves gradients on the leaves.
"""

import numpy as np

from coarse_loftr import numerics as nx

rng = np.random.default_rng(0)

# two leaves that want gradients
x = nx.tensor(rng.standard_normal((3, 4)), requires_grad=True)
w = nx.tensor(rng.standard_normal((4, 2)), requires_grad=True)


# a small network: matmul, elu, softmax over rows, then a scalar
def forward():
    probs = nx.softmax(nx.elu(nx.matmul(x, w)), dim=1)
    return nx.sum(probs * probs)


loss = forward()
print("loss:", loss.item())

nx.backward(loss)
print("dL/dw:\n", w.grad)

# compare one entry against a central difference
h = 1e-6
w.data[1, 0] += h
with nx.no_grad():
    up = forward().item()
w.data[1, 0] -= 2 * h
with nx.no_grad():
    down = forward().item()
w.data[1, 0] += h
print("tape:", w.grad[1, 0], " finite difference:", (up - down) / (2 * h))

# NaN and Inf are caught at the op that produced them
try:
    nx.log(nx.tensor([-1.0]))
except FloatingPointError as exc:
    print("caught:", exc)
