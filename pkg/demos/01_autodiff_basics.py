"""
Reverse-mode autodiff on numpy arrays
=====================================

The whole training stack rests on one Tensor class: numpy data, a grad
slot, and a closure that knows how to push gradients to its parents.
This walk-through builds a few graphs by hand and compares every
gradient against either pencil-and-paper math or finite differences.
"""

import numpy as np

from vinet.tensor import Tensor, backward
from vinet import nn

# ---------------------------------------------------------------------
# a scalar chain: y = (a * b + a) ** 2
# dy/da = 2(ab + a)(b + 1), dy/db = 2(ab + a) a
# ---------------------------------------------------------------------
a = Tensor(np.array(3.0), requires_grad=True)
b = Tensor(np.array(-1.5), requires_grad=True)
y = (a * b + a) * (a * b + a)
backward(y)

print("dy/da:", a.grad, " hand value:", 2 * (3.0 * -1.5 + 3.0) * (-1.5 + 1.0))
print("dy/db:", b.grad, " hand value:", 2 * (3.0 * -1.5 + 3.0) * 3.0)

# ---------------------------------------------------------------------
# the same autodiff machinery drives real layers; check a conv against
# central finite differences at one weight coordinate
# ---------------------------------------------------------------------
rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((1, 2, 6, 6)), requires_grad=True)
w = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.3, requires_grad=True)


def loss_value():
    out = nn.conv2d(x, w, stride=1, padding=1)
    return (out * out).sum()


w.zero_grad()
x.zero_grad()
backward(loss_value())
analytic = w.grad[1, 0, 2, 2]

h = 1e-5
orig = w.data[1, 0, 2, 2]
w.data[1, 0, 2, 2] = orig + h
up = float(loss_value().data)
w.data[1, 0, 2, 2] = orig - h
down = float(loss_value().data)
w.data[1, 0, 2, 2] = orig

numeric = (up - down) / (2 * h)
print(f"conv weight grad: analytic {analytic:.8f} vs numeric {numeric:.8f}")

# ---------------------------------------------------------------------
# gradients accumulate across uses of the same tensor, which is what
# lets a shared filter (like the descriptor's phi) see every joint
# ---------------------------------------------------------------------
shared = Tensor(np.array(2.0), requires_grad=True)
total = shared * Tensor(np.array(5.0)) + shared * Tensor(np.array(7.0))
backward(total)
print("shared-weight grad (expect 12):", shared.grad)

# ---------------------------------------------------------------------
# cross-entropy at uniform logits equals ln(num classes): the training
# loss starts there and falling below it means the net left the prior
# ---------------------------------------------------------------------
for classes in (2, 5):
    ce = nn.softmax_cross_entropy(Tensor(np.zeros((1, classes))), np.array([0]))
    print(f"uniform CE over {classes} classes: {float(ce.data):.6f}"
          f"  (ln {classes} = {np.log(classes):.6f})")
