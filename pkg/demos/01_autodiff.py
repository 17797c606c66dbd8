# %% [markdown]
# The autodiff engine: numpy arrays wrapped in a Tensor that records a tape.

# %%
import numpy as np

from pdlab import tensor as T
from pdlab.tensor import Tensor

x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
w = Tensor(np.array([[0.5], [0.1], [-0.3]]), requires_grad=True)
y = T.gelu(x.reshape(1, 3) @ w)
loss = (y * y).sum()
loss.backward()
print("loss", loss.item())
print("dL/dx", x.grad)
print("dL/dw", w.grad.ravel())

# %%
# compare with central differences
h = 1e-6
num = np.zeros(3)
for i in range(3):
    for s in (1, -1):
        xd = x.data.copy()
        xd[i] += s * h
        out = T.gelu(Tensor(xd.reshape(1, 3)) @ Tensor(w.data)).data
        num[i] += s * float((out ** 2).sum()) / (2 * h)
print("finite differences", num)

# %%
# grads accumulate until zeroed, like most frameworks
loss = (T.gelu(x.reshape(1, 3) @ w) ** 2).sum()
loss.backward()
print("after a second backward", x.grad)
x.zero_grad()

# %%
# no_grad skips the tape entirely, which is what evaluation uses
with T.no_grad():
    z = x * 2
print("requires_grad inside no_grad:", z.requires_grad)
