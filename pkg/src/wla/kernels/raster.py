"""Anti-aliased sprite rasterizer used by the synthetic environments.

Sprites are signed-distance shapes (kind 0 = disc, kind 1 = rotatable square)
blended back-to-front over a solid background. Coverage is a 1-pixel linear
feather of the SDF, sampled at pixel centers (col + 0.5, row + 0.5). With
``wrap`` on, each sprite also renders its eight torus translates so shapes
crossing a border reappear on the opposite side.
"""

import numpy as np

from . import USE_NUMBA, jit


def _sdf(kind, qx, qy, half, ca, sa):
    if kind == 0:
        return np.sqrt(qx * qx + qy * qy) - half
    rx = ca * qx + sa * qy
    ry = -sa * qx + ca * qy
    ax = abs(rx) - half
    ay = abs(ry) - half
    ox = ax if ax > 0.0 else 0.0
    oy = ay if ay > 0.0 else 0.0
    inner = ax if ax > ay else ay
    if inner > 0.0:
        inner = 0.0
    return np.sqrt(ox * ox + oy * oy) + inner


def _render_loop(kinds, cx, cy, half, angle, colors, bg, offx, offy, out):
    h, w, _ = out.shape
    for r in range(h):
        for c_ in range(w):
            out[r, c_, 0] = bg[0]
            out[r, c_, 1] = bg[1]
            out[r, c_, 2] = bg[2]
    for s in range(kinds.shape[0]):
        ca = np.cos(angle[s])
        sa = np.sin(angle[s])
        for r in range(h):
            py = r + 0.5
            for c_ in range(w):
                px = c_ + 0.5
                d = 1e9
                for k in range(offx.shape[0]):
                    qx = px - (cx[s] + offx[k])
                    qy = py - (cy[s] + offy[k])
                    dd = _sdf(kinds[s], qx, qy, half[s], ca, sa)
                    if dd < d:
                        d = dd
                cov = 0.5 - d
                if cov <= 0.0:
                    continue
                if cov > 1.0:
                    cov = 1.0
                keep = 1.0 - cov
                out[r, c_, 0] = out[r, c_, 0] * keep + colors[s, 0] * cov
                out[r, c_, 1] = out[r, c_, 1] * keep + colors[s, 1] * cov
                out[r, c_, 2] = out[r, c_, 2] * keep + colors[s, 2] * cov


if USE_NUMBA:
    _sdf = jit(_sdf)
    _render_jit = jit(_render_loop)


def _render_np(kinds, cx, cy, half, angle, colors, bg, offx, offy, out):
    h, w, _ = out.shape
    py, px = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    out[:] = bg[None, None, :]
    for s in range(kinds.shape[0]):
        d = np.full((h, w), 1e9)
        ca, sa = np.cos(angle[s]), np.sin(angle[s])
        for k in range(offx.shape[0]):
            qx = px - (cx[s] + offx[k])
            qy = py - (cy[s] + offy[k])
            if kinds[s] == 0:
                dd = np.sqrt(qx * qx + qy * qy) - half[s]
            else:
                rx = ca * qx + sa * qy
                ry = -sa * qx + ca * qy
                ax = np.abs(rx) - half[s]
                ay = np.abs(ry) - half[s]
                dd = (np.sqrt(np.maximum(ax, 0.0) ** 2 + np.maximum(ay, 0.0) ** 2)
                      + np.minimum(np.maximum(ax, ay), 0.0))
            d = np.minimum(d, dd)
        cov = np.clip(0.5 - d, 0.0, 1.0)
        out[:] = out * (1.0 - cov)[..., None] + colors[s][None, None, :] * cov[..., None]


def render_frame(kinds, cx, cy, half, angle, colors, bg, h, w, wrap):
    """Render sprites to a [h, w, 3] float32 image in [0, 1].

    kinds: [S] int64 (0 disc, 1 square); cx, cy, half, angle: [S] float64 in
    pixel units; colors: [S, 3]; bg: [3]; wrap: torus borders when True.
    """
    kinds = np.ascontiguousarray(kinds, np.int64)
    cx = np.ascontiguousarray(cx, np.float64)
    cy = np.ascontiguousarray(cy, np.float64)
    half = np.ascontiguousarray(half, np.float64)
    angle = np.ascontiguousarray(angle, np.float64)
    colors = np.ascontiguousarray(colors, np.float64)
    bg = np.ascontiguousarray(bg, np.float64)
    if wrap:
        offs = [(ox, oy) for oy in (-h, 0.0, h) for ox in (-w, 0.0, w)]
    else:
        offs = [(0.0, 0.0)]
    offx = np.array([o[0] for o in offs], np.float64)
    offy = np.array([o[1] for o in offs], np.float64)
    out = np.empty((h, w, 3), np.float64)
    if USE_NUMBA:
        _render_jit(kinds, cx, cy, half, angle, colors, bg, offx, offy, out)
    else:
        _render_np(kinds, cx, cy, half, angle, colors, bg, offx, offy, out)
    return out.astype(np.float32)
