"""Pure-numpy kernels. Reference semantics for the compiled module ``_kernels``.

Both implementations perform the same floating-point operations in the same
order, so their results are bit-identical.
"""
import numpy as np

# (dy, dx) offsets of the 3x3 window, row-major; column k of an im2col block
OFFSETS = [(dy, dx) for dy in range(3) for dx in range(3)]


def im2col3(x):
    """Same-padded 3x3 patches: [N, C, H, W] -> [N, C*9, H*W]."""
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2, w + 2))
    xp[:, :, 1:h + 1, 1:w + 1] = x
    cols = np.empty((n, c, 9, h, w))
    for k, (dy, dx) in enumerate(OFFSETS):
        cols[:, :, k] = xp[:, :, dy:dy + h, dx:dx + w]
    return cols.reshape(n, c * 9, h * w)


def col2im3(cols, c, h, w):
    """Adjoint of :func:`im2col3`: scatter-add patches back to [N, C, H, W]."""
    n = cols.shape[0]
    d = cols.reshape(n, c, 9, h, w)
    out = np.zeros((n, c, h + 2, w + 2))
    for k, (dy, dx) in enumerate(OFFSETS):
        out[:, :, dy:dy + h, dx:dx + w] += d[:, :, k]
    return np.ascontiguousarray(out[:, :, 1:h + 1, 1:w + 1])


def maxpool2_forward(x):
    """2x2/stride-2 max pool. Returns (pooled, window index 0..3 of the max)."""
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    win = (x[:, :, :2 * ho, :2 * wo]
           .reshape(n, c, ho, 2, wo, 2)
           .transpose(0, 1, 2, 4, 3, 5)
           .reshape(n, c, ho, wo, 4))
    idx = np.argmax(win, axis=-1).astype(np.uint8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2_backward(dout, idx, h, w):
    n, c, ho, wo = dout.shape
    win = np.zeros((n, c, ho, wo, 4))
    np.put_along_axis(win, idx[..., None].astype(np.intp), dout[..., None], axis=-1)
    dx = np.zeros((n, c, h, w))
    dx[:, :, :2 * ho, :2 * wo] = (win.reshape(n, c, ho, wo, 2, 2)
                                  .transpose(0, 1, 2, 4, 3, 5)
                                  .reshape(n, c, 2 * ho, 2 * wo))
    return dx


def affine_warp(images, mats):
    """Bilinear inverse warp with zero fill.

    ``images`` is [N, H, W]; ``mats`` is [N, 2, 3] mapping output pixel
    (x, y, 1) to source coordinates (sx, sy).
    """
    n, h, w = images.shape
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    out = np.empty((n, h, w))
    for i in range(n):
        m = mats[i]
        img = images[i]
        sx = m[0, 0] * xs + m[0, 1] * ys + m[0, 2]
        sy = m[1, 0] * xs + m[1, 1] * ys + m[1, 2]
        x0f = np.floor(sx)
        y0f = np.floor(sy)
        fx = sx - x0f
        fy = sy - y0f
        x0 = x0f.astype(np.intp)
        y0 = y0f.astype(np.intp)

        def pix(yy, xx):
            ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            v = np.zeros((h, w))
            v[ok] = img[yy[ok], xx[ok]]
            return v

        p00 = pix(y0, x0)
        p01 = pix(y0, x0 + 1)
        p10 = pix(y0 + 1, x0)
        p11 = pix(y0 + 1, x0 + 1)
        top = (1.0 - fx) * p00 + fx * p01
        bot = (1.0 - fx) * p10 + fx * p11
        out[i] = (1.0 - fy) * top + fy * bot
    return out
