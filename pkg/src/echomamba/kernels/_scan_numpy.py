"""Pure-numpy selective scan: a python loop over time, vectorized over lanes."""
import numpy as np

from ._zoh import zoh_coef, zoh_coef_grads


def _step_terms(delta_t, a, zoh):
    # delta_t: [B, Di] -> terms [B, Di, N]
    z = delta_t[:, :, None] * a[None]
    abar = np.exp(z)
    if zoh:
        coef = zoh_coef(delta_t[:, :, None], a[None])
    else:
        coef = np.broadcast_to(delta_t[:, :, None], z.shape)
    return abar, coef


def scan_forward(x, delta, a, b, c, d_skip, zoh=True, save_states=True):
    """Return ``(y, states)``; ``states`` is ``None`` unless requested."""
    bsz, length, di = x.shape
    n = a.shape[1]
    h = np.zeros((bsz, di, n), dtype=x.dtype)
    y = np.empty_like(x)
    states = np.empty((bsz, length, di, n), dtype=x.dtype) if save_states else None
    for t in range(length):
        abar, coef = _step_terms(delta[:, t], a, zoh)
        h = abar * h + coef * b[:, t, None, :] * x[:, t, :, None]
        y[:, t] = np.einsum("bdn,bn->bd", h, c[:, t]) + d_skip * x[:, t]
        if save_states:
            states[:, t] = h
    return y, states


def scan_backward(dy, x, delta, a, b, c, d_skip, zoh=True, states=None):
    """Gradients ``(dx, ddelta, da, db, dc, dd_skip)`` of the fused scan."""
    if states is None:
        _, states = scan_forward(x, delta, a, b, c, d_skip, zoh, True)
    bsz, length, di = x.shape
    n = a.shape[1]
    dx = dy * d_skip
    dd_skip = (dy * x).sum(axis=(0, 1))
    ddelta = np.zeros_like(delta)
    da = np.zeros_like(a)
    db = np.zeros_like(b)
    dc = np.einsum("btd,btdn->btn", dy, states)
    gh = np.zeros((bsz, di, n), dtype=x.dtype)
    zero = np.zeros((bsz, di, n), dtype=x.dtype)
    for t in range(length - 1, -1, -1):
        gh = gh + c[:, t, None, :] * dy[:, t, :, None]
        h_prev = states[:, t - 1] if t > 0 else zero
        dt = delta[:, t, :, None]
        abar, coef = _step_terms(delta[:, t], a, zoh)
        bt = b[:, t, None, :]
        xt = x[:, t, :, None]
        ga = gh * h_prev * abar
        gcoef = gh * bt * xt
        db[:, t] = np.einsum("bdn,bdn->bn", gh * coef, np.broadcast_to(xt, gh.shape))
        dx[:, t] += np.einsum("bdn,bdn->bd", gh * coef, np.broadcast_to(bt, gh.shape))
        if zoh:
            c_dt, c_da = zoh_coef_grads(dt, a[None])
            ddelta[:, t] += (ga * a[None] + gcoef * c_dt).sum(-1)
            da += (ga * dt + gcoef * c_da).sum(0)
        else:
            ddelta[:, t] += (ga * a[None] + gcoef).sum(-1)
            da += (ga * dt).sum(0)
        gh = gh * abar
    return dx, ddelta, da, db, dc, dd_skip
