"""End-to-end finite-difference audit of the hand-written backward pass.

Run: python3 demos/model_gradient_audit.py
"""

from miolab.losses import LossConfig, get_loss
from miolab.model import default_model_spec, finite_diff_audit, init_params
from miolab.numerics import Rng
from miolab.pairing import build_pairs

pairs = build_pairs(4)
x = Rng(1).normal(size=(8, 6))
for bn in (False, True):
    spec = default_model_spec(input_dim=6, hidden=8, out_dim=4, batch_norm=bn)
    state = init_params(spec, Rng(0))
    for name in ("mio", "infonce", "mio_l2"):
        fn = get_loss(name)

        def loss(z):
            r = fn(z, pairs, LossConfig(tau=0.5, lam=1.0, mode="cosine"))
            return r.value, r.grad_z

        res = finite_diff_audit(state, spec, x, loss)
        print(f"batch_norm={bn!s:5s} {name:8s} {res.checked} params, max rel err {res.max_rel_err:.1e} at {res.worst_parameter}")
