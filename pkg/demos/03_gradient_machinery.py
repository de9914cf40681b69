"""The autodiff core and the gradient barrier between the two branches.

Everything trains through a small reverse-mode tape over float64 numpy
arrays.  Two rules shape the objective's gradient flow: the bias factor
alpha is a constant (no gradient into the question-only head through the
reweighting), and the question-only head reads a detached question
embedding (no gradient from its loss into the shared encoders).
"""
import numpy as np

from debiasvqa import (
    ModelConfig,
    Parameter,
    Tensor,
    alpha_from_qo,
    grad_check,
    init_params,
    lpf_loss,
    qo_loss,
    weighted_cross_entropy,
    zero_grad,
)
from debiasvqa.autodiff import linear, relu
from debiasvqa.harness import forward_batch

print("= reverse mode on a tiny graph =")
w = Parameter(np.array([[0.5, -0.2], [0.1, 0.3]]), name="w")
x = Tensor(np.array([[1.0, 2.0]]))
loss = weighted_cross_entropy(relu(linear(x, w)), [1], np.ones(1))
loss.backward()
print(f"  loss {float(loss.data):.4f}")
print(f"  dloss/dw =\n{np.round(w.grad, 4)}")

print("\n= analytic gradients match central finite differences =")
zero_grad([w])
err = grad_check(lambda: weighted_cross_entropy(relu(linear(x, w)), [1], np.ones(1)), [w])
print(f"  max relative error: {err:.2e}")

print("\n= the barrier, shown as exact zeros =")
config = ModelConfig(vocab_size=8, num_answers=6, v_in_dim=5, seed=0)
params = init_params(config)
rng = np.random.default_rng(1)
tokens = rng.integers(0, 8, size=(4, 3))
feats = rng.normal(size=(4, 5))
targets = rng.integers(0, 6, size=4)

logits_vqa, logits_qo = forward_batch(params, tokens, feats)

# direction 1: the question-only loss must not touch the encoders
qo_loss(logits_qo, targets).backward()
enc_max = max(float(np.abs(t.grad).max()) for t in params.encoder_parameters())
qo_max = max(float(np.abs(t.grad).max()) for t in params.qo_parameters())
print(f"  after question-only backward: max |encoder grad| = {enc_max} (exact zero), "
      f"max |qo grad| = {qo_max:.2e}")
zero_grad(params.all_parameters())

# direction 2: the reweighted loss must not touch the question-only head,
# because alpha is read off as a constant
logits_vqa, logits_qo = forward_batch(params, tokens, feats)
alpha = alpha_from_qo(logits_qo, targets)
lpf_loss(logits_vqa, targets, alpha, gamma=2.0).backward()
qo_max = max(float(np.abs(t.grad).max()) for t in params.qo_parameters())
enc_max = max(float(np.abs(t.grad).max()) for t in params.encoder_parameters())
print(f"  after reweighted backward:    max |qo grad| = {qo_max} (exact zero), "
      f"max |encoder grad| = {enc_max:.2e}")
print("\nBoth zeros are structural (a detached embedding and a constant alpha),")
print("not numerically small values.")
