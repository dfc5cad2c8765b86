import numpy as np


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of scalar ``f`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    """Largest absolute deviation relative to the larger gradient magnitude."""
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return float(np.abs(a - b).max() / scale)


def conv_oracle(x, w, b, stride, padding):
    """Direct six-loop cross-correlation with explicit zero padding."""
    B, C, H, W = x.shape
    N, _, kh, kw = w.shape
    if padding == "same":
        ho, wo = -(-H // stride), -(-W // stride)
        th = max((ho - 1) * stride + kh - H, 0)
        tw = max((wo - 1) * stride + kw - W, 0)
        pt, pl = th // 2, tw // 2
    else:
        ho, wo = (H - kh) // stride + 1, (W - kw) // stride + 1
        pt = pl = 0
    out = np.zeros((B, N, ho, wo))
    for bi in range(B):
        for n in range(N):
            for i in range(ho):
                for j in range(wo):
                    acc = b[n]
                    for c in range(C):
                        for u in range(kh):
                            for v in range(kw):
                                r, s = i * stride + u - pt, j * stride + v - pl
                                if 0 <= r < H and 0 <= s < W:
                                    acc += x[bi, c, r, s] * w[n, c, u, v]
                    out[bi, n, i, j] = acc
    return out


def dct2_literal(x):
    """Quadruple loop over the unscaled 2-D cosine sum."""
    m, n = x.shape
    X = np.zeros((m, n))
    for k in range(m):
        for l in range(n):
            acc = 0.0
            for i in range(m):
                for j in range(n):
                    acc += x[i, j] * np.cos(np.pi / n * (j + 0.5) * l) * np.cos(np.pi / m * (i + 0.5) * k)
            X[k, l] = acc
    return X
