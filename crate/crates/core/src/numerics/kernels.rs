//! Raw forward/backward kernels over flat row-major buffers.
//!
//! The tape calls into these; tests compare them against nested-loop
//! references that index tensors element by element.

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[t * n..(t + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `da[m×k] += dc[m×n] · bᵀ`
pub fn matmul_grad_a(dc: &[f64], b: &[f64], da: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        for t in 0..k {
            let b_row = &b[t * n..(t + 1) * n];
            let dot: f64 = dc_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            da[i * k + t] += dot;
        }
    }
}

/// `db[k×n] += aᵀ · dc[m×n]`
pub fn matmul_grad_b(a: &[f64], dc: &[f64], db: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let db_row = &mut db[t * n..(t + 1) * n];
            for (d, &g) in db_row.iter_mut().zip(dc_row) {
                *d += av * g;
            }
        }
    }
}

/// Geometry of a valid convolution over an `L×H×C` input with `F` filters of height `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvDims {
    pub len: usize,
    pub height: usize,
    pub channels: usize,
    pub width: usize,
    pub filters: usize,
}

impl ConvDims {
    pub fn positions(&self) -> usize {
        self.len + 1 - self.width
    }

    /// Number of input values under one filter window.
    pub fn window(&self) -> usize {
        self.width * self.height * self.channels
    }
}

/// Valid convolution. Because the input is row-major `L×H×C`, the window
/// starting at position `p` is the contiguous slice `x[p·H·C .. (p+n)·H·C]`,
/// and its flat order matches the `n×H×C` prefix of the weight layout.
pub fn conv_forward(x: &[f64], w: &[f64], b: &[f64], dims: ConvDims) -> Vec<f64> {
    let row = dims.height * dims.channels;
    let win = dims.window();
    let f = dims.filters;
    let mut y = Vec::with_capacity(dims.positions() * f);
    for p in 0..dims.positions() {
        let start = y.len();
        y.extend_from_slice(b);
        let out = &mut y[start..start + f];
        let window = &x[p * row..p * row + win];
        for (k, &xv) in window.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let w_row = &w[k * f..(k + 1) * f];
            for (o, &wv) in out.iter_mut().zip(w_row) {
                *o += xv * wv;
            }
        }
    }
    y
}

/// Accumulates convolution gradients. Positions with an all-zero upstream
/// row are skipped, which is the common case after max-over-time pooling.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dims: ConvDims,
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
) {
    let row = dims.height * dims.channels;
    let win = dims.window();
    let f = dims.filters;
    for p in 0..dims.positions() {
        let g_row = &dy[p * f..(p + 1) * f];
        for (fi, &g) in g_row.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            if let Some(db) = db.as_deref_mut() {
                db[fi] += g;
            }
            let base = p * row;
            if let Some(dw) = dw.as_deref_mut() {
                for k in 0..win {
                    dw[k * f + fi] += x[base + k] * g;
                }
            }
            if let Some(dx) = dx.as_deref_mut() {
                for k in 0..win {
                    dx[base + k] += w[k * f + fi] * g;
                }
            }
        }
    }
}

/// Row-wise numerically stable softmax over rows of length `k`.
pub fn softmax_rows(z: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(z.len());
    for row in z.chunks(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - max).exp()));
        let total: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|v| *v /= total);
    }
    out
}
