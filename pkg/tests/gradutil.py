"""Central-finite-difference gradient checking shared by the test modules.

The check is relative-error < 1e-3 at float64, with an absolute floor that
absorbs cancellation noise of the difference quotient itself (about
machine-eps * |f| / h) for entries whose true gradient is zero.
"""

import torch

REL_TOL = 1e-3
FD_STEP = 1e-6
NOISE_FLOOR = 5e-8


def assert_grads_match_fd(objective, params, max_probes_per_param=6, rel_tol=REL_TOL, h=FD_STEP):
    """Compare autograd gradients of objective() against central differences.

    objective: callable returning a scalar tensor, deterministic per call.
    params: parameter tensors to probe (a strided subset of entries each).
    Returns the number of probed entries.
    """
    loss = objective()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    floor = NOISE_FLOOR * max(1.0, abs(loss.item()))
    checked = 0
    for p, g in zip(params, grads):
        flat = p.data.view(-1)
        gflat = torch.zeros_like(flat) if g is None else g.reshape(-1)
        stride = max(1, flat.numel() // max_probes_per_param)
        for i in range(0, flat.numel(), stride):
            orig = flat[i].item()
            flat[i] = orig + h
            up = objective().item()
            flat[i] = orig - h
            down = objective().item()
            flat[i] = orig
            fd = (up - down) / (2 * h)
            ana = gflat[i].item()
            err = abs(fd - ana)
            denom = max(abs(fd), abs(ana))
            assert err <= floor or err / denom < rel_tol, (
                f"gradient mismatch at entry {i} of shape {tuple(p.shape)}: fd={fd:.6e} autograd={ana:.6e}"
            )
            checked += 1
    return checked
