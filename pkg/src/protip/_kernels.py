"""Compiled inner loops.  Each has a plain numpy counterpart used as test oracle."""
import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def classify_points(pts, base_point, normal, e1, e2, thickness, half_extent,
                    centers, radii, heights, out):
    """Loop version of phantom.classify_point writing uint8 labels into ``out``."""
    n = pts.shape[0]
    k = centers.shape[0]
    for i in range(n):
        qx, qy, qz = pts[i, 0], pts[i, 1], pts[i, 2]
        lab = 0
        for c in range(k):
            rx = qx - centers[c, 0]
            ry = qy - centers[c, 1]
            rz = qz - centers[c, 2]
            hc = rx * normal[0] + ry * normal[1] + rz * normal[2]
            if hc < 0.0 or hc > heights[c]:
                continue
            px = rx - hc * normal[0]
            py = ry - hc * normal[1]
            pz = rz - hc * normal[2]
            if np.sqrt(px * px + py * py + pz * pz) <= radii[c] * (1.0 - hc / heights[c]):
                lab = 2
                break
        if lab == 0:
            rx = qx - base_point[0]
            ry = qy - base_point[1]
            rz = qz - base_point[2]
            h = rx * normal[0] + ry * normal[1] + rz * normal[2]
            if h <= 0.0 and h >= -thickness:
                a = rx * e1[0] + ry * e1[1] + rz * e1[2]
                b = rx * e2[0] + ry * e2[1] + rz * e2[2]
                if abs(a) <= half_extent and abs(b) <= half_extent:
                    lab = 1
        out[i] = lab
    return out


@numba.njit(cache=True, nogil=True, fastmath=True, error_model="numpy")
def reslice_accumulate(a_rot, a_trans, x0_a, sp_a, valid_a, inv_rot, inv_trans, images,
                       interior_b, x0_b, sp_b, slab, acc, wsum):
    """Slab-weighted bilinear compounding of B frames in the plane of one A frame.

    a_rot/a_trans: A image plane -> world.  inv_rot/inv_trans: world -> each
    B image plane.  Image-shaped arrays are stored transposed, [column, row],
    and ``images`` is typically uint8 so the whole B sweep stays in cache.
    interior_b[c, r]: the bilinear cell with top-left pixel (r, c) has all
    four corners valid.
    Along an A row every B-plane coordinate is affine in the column index,
    so the columns within the slab form one interval computed up front.
    """
    Cc = valid_a.shape[0]
    R = valid_a.shape[1]
    nb = images.shape[0]
    cols_b = images.shape[1]
    rows_b = images.shape[2]
    inv_sp = 1.0 / sp_b
    inv_slab = 1.0 / slab
    # world position of pixel (r, c) = origin + r * down + c * across
    ox = a_trans[0] + a_rot[0, 0] * x0_a
    oy = a_trans[1] + a_rot[1, 0] * x0_a
    oz = a_trans[2] + a_rot[2, 0] * x0_a
    ax, ay, az_ = a_rot[0, 0] * sp_a, a_rot[1, 0] * sp_a, a_rot[2, 0] * sp_a
    dx_, dy_, dz_ = a_rot[0, 1] * sp_a, a_rot[1, 1] * sp_a, a_rot[2, 1] * sp_a
    for j in range(nb):
        m = inv_rot[j]
        tx, ty, tz = inv_trans[j, 0], inv_trans[j, 1], inv_trans[j, 2]
        img = images[j]
        dx = m[0, 0] * ax + m[0, 1] * ay + m[0, 2] * az_
        dy = m[1, 0] * ax + m[1, 1] * ay + m[1, 2] * az_
        dz = m[2, 0] * ax + m[2, 1] * ay + m[2, 2] * az_
        for r in range(R):
            wx = ox + r * dx_
            wy = oy + r * dy_
            wz = oz + r * dz_
            z0 = m[2, 0] * wx + m[2, 1] * wy + m[2, 2] * wz + tz
            if dz == 0.0:
                if abs(z0) >= slab:
                    continue
                c_lo, c_hi = 0, Cc - 1
            else:
                ca = (-slab - z0) / dz
                cb = (slab - z0) / dz
                if ca > cb:
                    ca, cb = cb, ca
                c_lo = max(0, int(np.floor(ca)))
                c_hi = min(Cc - 1, int(np.ceil(cb)))
            if c_lo > c_hi:
                continue
            x_0 = m[0, 0] * wx + m[0, 1] * wy + m[0, 2] * wz + tx
            y_0 = m[1, 0] * wx + m[1, 1] * wy + m[1, 2] * wz + ty
            for c in range(c_lo, c_hi + 1):
                if not valid_a[c, r]:
                    continue
                z = z0 + c * dz
                w = 1.0 - abs(z) * inv_slab
                if w <= 0.0:
                    continue
                fc = (x_0 + c * dx - x0_b) * inv_sp
                fr = (y_0 + c * dy) * inv_sp
                if fr < 0.0 or fc < 0.0 or fr > rows_b - 1 or fc > cols_b - 1:
                    continue
                ir = min(int(fr), rows_b - 2)
                ic = min(int(fc), cols_b - 2)
                if not interior_b[ic, ir]:
                    continue
                ar = fr - ir
                ac = fc - ic
                v = ((1.0 - ar) * ((1.0 - ac) * img[ic, ir] + ac * img[ic + 1, ir])
                     + ar * ((1.0 - ac) * img[ic, ir + 1] + ac * img[ic + 1, ir + 1]))
                acc[c, r] += w * v
                wsum[c, r] += w


@numba.njit(cache=True, nogil=True)
def masked_ncc(a, acc, wsum, valid):
    """Pearson correlation of ``a`` with acc/wsum where wsum > 0 and valid.

    Two passes (means, then centred sums) in a fixed order.  Returns
    (score, degenerate, n_pixels); tolerances follow refine.ncc.
    """
    n = 0
    sa = 0.0
    sb = 0.0
    amax = 1.0
    bmax = 1.0
    for i in range(a.shape[0]):
        for k in range(a.shape[1]):
            if valid[i, k] and wsum[i, k] > 0.0:
                b = acc[i, k] / wsum[i, k]
                n += 1
                sa += a[i, k]
                sb += b
                amax = max(amax, abs(a[i, k]))
                bmax = max(bmax, abs(b))
    if n < 2:
        return 0.0, True, n
    ma = sa / n
    mb = sb / n
    vaa = 0.0
    vbb = 0.0
    vab = 0.0
    for i in range(a.shape[0]):
        for k in range(a.shape[1]):
            if valid[i, k] and wsum[i, k] > 0.0:
                da = a[i, k] - ma
                db = acc[i, k] / wsum[i, k] - mb
                vaa += da * da
                vbb += db * db
                vab += da * db
    scale = max(amax, bmax)
    tiny = (1e-12 * scale) ** 2 * n
    if vaa <= tiny or vbb <= tiny:
        return 0.0, True, n
    score = vab / np.sqrt(vaa * vbb)
    return min(1.0, max(-1.0, score)), False, n
