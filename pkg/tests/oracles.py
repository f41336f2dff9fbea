"""Independent reference implementations shared by the test modules."""

import numpy as np


def ssim_loop(x, y, size=11, sigma=1.5, L=1.0):
    """Windowed SSIM written out position by position with a full 2-D kernel."""
    ax = np.arange(size) - (size - 1) / 2
    k = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * sigma**2))
    k /= k.sum()
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    vals = []
    for r in range(x.shape[0] - size + 1):
        for c in range(x.shape[1] - size + 1):
            px, py = x[r : r + size, c : c + size], y[r : r + size, c : c + size]
            mx, my = (k * px).sum(), (k * py).sum()
            vx = (k * px * px).sum() - mx * mx
            vy = (k * py * py).sum() - my * my
            cov = (k * px * py).sum() - mx * my
            vals.append(((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))
