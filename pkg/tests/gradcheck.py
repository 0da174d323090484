"""Central finite-difference gradient oracle shared by the test modules.

Independent of the tape: it only re-runs the forward closure with nudged
parameter entries and compares against whatever backward produced.
"""

from signet.tensor import Tape, backward


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / (abs(analytic) + abs(numeric) + 1e-8)


def finite_difference_check(loss_fn, params, rng, n_coords=100, eps=1e-3):
    """Max relative error between tape gradients and central differences.

    loss_fn rebuilds the scalar loss from the current parameter values;
    params are the tensors to differentiate. Samples up to n_coords
    coordinates per tensor.
    """
    with Tape() as tape:
        loss = loss_fn()
    grads = backward(loss, tape)
    worst = 0.0
    for t in params:
        flat = t.data.reshape(-1)
        g = grads[t].reshape(-1)
        k = min(n_coords, flat.size)
        coords = rng.choice(flat.size, size=k, replace=False)
        for i in coords:
            saved = flat[i]
            flat[i] = saved + eps
            up = loss_fn().item()
            flat[i] = saved - eps
            down = loss_fn().item()
            flat[i] = saved
            numeric = (up - down) / (2.0 * eps)
            worst = max(worst, relative_error(float(g[i]), numeric))
    return worst
