"""Shared finite-difference utilities.

Central differences estimate a derivative only where the function is C1
on [theta - h, theta + h]. ReLU networks are piecewise smooth, so before
trusting an FD sample we verify that no ReLU changes state between the
two perturbed evaluations; coordinates that straddle a kink are resampled
deterministically. The validity check uses forward activations only and
never looks at the FD-vs-analytic comparison.
"""

import numpy as np

from trackprobe.probe import ProbeParams, _forward_batch

PROBE_PARAM_NAMES = ("w_e1", "b_e1", "w_e2", "b_e2", "w_p", "b_p", "w_o", "b_o")


def relative_error(fd: float, analytic: float, floor: float = 1e-6) -> float:
    return abs(fd - analytic) / max(abs(fd), abs(analytic), floor)


def probe_relu_masks(cmaps: np.ndarray, params: ProbeParams) -> tuple[np.ndarray, np.ndarray]:
    fwd = _forward_batch(cmaps, params)
    return fwd["pre1"] > 0.0, fwd["pre2"] > 0.0


def fd_probe_param_check(cmaps, loss_fn, params, rng, *, step, tol,
                         coords_per_group=2, max_attempts=50):
    """FD-check every probe parameter group against ``loss_fn``'s gradients.

    Returns the worst relative error over all accepted coordinates, or
    None when some group could not collect enough kink-free coordinates.
    """
    loss, grads = loss_fn(params)
    worst = 0.0
    for name in PROBE_PARAM_NAMES:
        arr = getattr(params, name)
        accepted = 0
        for _ in range(max_attempts):
            if accepted >= coords_per_group:
                break
            idx = tuple(rng.integers(0, s) for s in arr.shape)
            orig = arr[idx]
            arr[idx] = orig + step
            masks_plus = probe_relu_masks(cmaps, params)
            loss_plus = loss_fn(params)[0]
            arr[idx] = orig - step
            masks_minus = probe_relu_masks(cmaps, params)
            loss_minus = loss_fn(params)[0]
            arr[idx] = orig
            if not all(np.array_equal(a, b) for a, b in zip(masks_plus, masks_minus)):
                continue  # FD sample straddles a ReLU kink; not a derivative
            fd = (loss_plus - loss_minus) / (2.0 * step)
            worst = max(worst, relative_error(fd, float(grads[name][idx])))
            accepted += 1
        if accepted < coords_per_group:
            return None
    assert worst <= tol, f"worst FD relative error {worst:.3e} exceeds {tol}"
    return worst
