//! Kernels for the individual layer kinds on flat `f64` buffers.
//!
//! Volumes are `channels × side³`, x-fastest inside each channel, matching
//! [`VoxelGrid`](crate::microstructure::VoxelGrid). Kernels are stored
//! `(out, in, z, y, x)`.

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub side_in: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub side_out: usize,
}

impl ConvGeom {
    fn kidx(&self, f: usize, c: usize, p: usize, q: usize, r: usize) -> usize {
        (((f * self.c_in + c) * self.kernel + p) * self.kernel + q) * self.kernel + r
    }
}

pub(crate) fn conv_forward(g: &ConvGeom, x: &[f64], k: &[f64], b: &[f64], y: &mut [f64]) {
    let (si, so, s) = (g.side_in, g.side_out, g.stride);
    let vol_in = si * si * si;
    let vol_out = so * so * so;
    for f in 0..g.filters {
        let yf = &mut y[f * vol_out..(f + 1) * vol_out];
        yf.fill(b[f]);
        for c in 0..g.c_in {
            let xc = &x[c * vol_in..(c + 1) * vol_in];
            for p in 0..g.kernel {
                for q in 0..g.kernel {
                    for r in 0..g.kernel {
                        let w = k[g.kidx(f, c, p, q, r)];
                        for oz in 0..so {
                            for oy in 0..so {
                                let yrow = &mut yf[(oz * so + oy) * so..][..so];
                                let base = ((oz * s + p) * si + oy * s + q) * si + r;
                                if s == 1 {
                                    for (yv, xv) in yrow.iter_mut().zip(&xc[base..base + so]) {
                                        *yv += w * xv;
                                    }
                                } else {
                                    for (ox, yv) in yrow.iter_mut().enumerate() {
                                        *yv += w * xc[base + ox * s];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates kernel/bias gradients and, when `gx` is given, the input gradient.
pub(crate) fn conv_backward(
    g: &ConvGeom,
    x: &[f64],
    k: &[f64],
    gy: &[f64],
    gk: &mut [f64],
    gb: &mut [f64],
    mut gx: Option<&mut [f64]>,
) {
    let (si, so, s) = (g.side_in, g.side_out, g.stride);
    let vol_in = si * si * si;
    let vol_out = so * so * so;
    for f in 0..g.filters {
        let gyf = &gy[f * vol_out..(f + 1) * vol_out];
        gb[f] += gyf.iter().sum::<f64>();
        for c in 0..g.c_in {
            let xc = &x[c * vol_in..(c + 1) * vol_in];
            for p in 0..g.kernel {
                for q in 0..g.kernel {
                    for r in 0..g.kernel {
                        let ki = g.kidx(f, c, p, q, r);
                        let w = k[ki];
                        let mut acc = 0.0;
                        for oz in 0..so {
                            for oy in 0..so {
                                let grow = &gyf[(oz * so + oy) * so..][..so];
                                let base = ((oz * s + p) * si + oy * s + q) * si + r;
                                if s == 1 {
                                    acc += grow
                                        .iter()
                                        .zip(&xc[base..base + so])
                                        .map(|(a, b)| a * b)
                                        .sum::<f64>();
                                    if let Some(gx) = gx.as_deref_mut() {
                                        let gxc = &mut gx[c * vol_in + base..c * vol_in + base + so];
                                        for (gv, gyv) in gxc.iter_mut().zip(grow) {
                                            *gv += w * gyv;
                                        }
                                    }
                                } else {
                                    for (ox, gyv) in grow.iter().enumerate() {
                                        acc += gyv * xc[base + ox * s];
                                        if let Some(gx) = gx.as_deref_mut() {
                                            gx[c * vol_in + base + ox * s] += w * gyv;
                                        }
                                    }
                                }
                            }
                        }
                        gk[ki] += acc;
                    }
                }
            }
        }
    }
}

/// `y = W x + b` with `W` stored row-major `(out, in)`.
pub(crate) fn dense_forward(n_in: usize, x: &[f64], w: &[f64], b: &[f64], y: &mut [f64]) {
    for (o, yv) in y.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        *yv = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

pub(crate) fn dense_backward(
    n_in: usize,
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    gx: Option<&mut [f64]>,
) {
    for (o, &g) in gy.iter().enumerate() {
        gb[o] += g;
        if g == 0.0 {
            continue;
        }
        let grow = &mut gw[o * n_in..(o + 1) * n_in];
        for (gv, xv) in grow.iter_mut().zip(x) {
            *gv += g * xv;
        }
    }
    if let Some(gx) = gx {
        gx.fill(0.0);
        for (o, &g) in gy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &w[o * n_in..(o + 1) * n_in];
            for (gv, wv) in gx.iter_mut().zip(row) {
                *gv += g * wv;
            }
        }
    }
}

/// Non-overlapping max pooling; trailing voxels that do not fill a window are dropped.
pub(crate) fn maxpool_forward(channels: usize, side: usize, win: usize, x: &[f64], y: &mut [f64]) {
    let so = side / win;
    for c in 0..channels {
        for oz in 0..so {
            for oy in 0..so {
                for ox in 0..so {
                    let (_, v) = window_argmax(c, side, win, oz, oy, ox, x);
                    y[((c * so + oz) * so + oy) * so + ox] = v;
                }
            }
        }
    }
}

pub(crate) fn maxpool_backward(
    channels: usize,
    side: usize,
    win: usize,
    x: &[f64],
    gy: &[f64],
    gx: &mut [f64],
) {
    let so = side / win;
    gx.fill(0.0);
    for c in 0..channels {
        for oz in 0..so {
            for oy in 0..so {
                for ox in 0..so {
                    let (i, _) = window_argmax(c, side, win, oz, oy, ox, x);
                    gx[i] += gy[((c * so + oz) * so + oy) * so + ox];
                }
            }
        }
    }
}

fn window_argmax(
    c: usize,
    side: usize,
    win: usize,
    oz: usize,
    oy: usize,
    ox: usize,
    x: &[f64],
) -> (usize, f64) {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for dz in 0..win {
        for dy in 0..win {
            for dx in 0..win {
                let i = ((c * side + oz * win + dz) * side + oy * win + dy) * side + ox * win + dx;
                if x[i] > best.1 || best.0 == usize::MAX {
                    best = (i, x[i]);
                }
            }
        }
    }
    best
}
