//! Same-size 2-D convolution kernels (im2col + GEMM per group).

/// Geometry of a same-padded, stride-1 convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub height: usize,
    pub width: usize,
    pub k: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvGeom {
    fn hw(&self) -> usize {
        self.height * self.width
    }
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }
    fn rows(&self) -> usize {
        self.cin_g() * self.k * self.k
    }
    fn cols(&self) -> usize {
        self.batch * self.hw()
    }
}

/// Fills `cols[(ci*k + ky)*k + kx][b*HW + y*W + x]` for input channels of one group.
fn im2col(input: &[f64], g: &ConvGeom, group: usize, cols: &mut [f64]) {
    let (h, w, k, pad) = (g.height as isize, g.width as isize, g.k, g.pad as isize);
    let hw = g.hw();
    let ncols = g.cols();
    for cl in 0..g.cin_g() {
        let ci = group * g.cin_g() + cl;
        for ky in 0..k {
            for kx in 0..k {
                let row = (cl * k + ky) * k + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                let x_lo = (-dx).clamp(0, w) as usize;
                let x_hi = (w - dx).clamp(0, w) as usize;
                for b in 0..g.batch {
                    let plane = &input[(b * g.cin + ci) * hw..(b * g.cin + ci + 1) * hw];
                    for y in 0..h {
                        let out_row = &mut dst[b * hw + (y * w) as usize..b * hw + ((y + 1) * w) as usize];
                        let sy = y + dy;
                        if sy < 0 || sy >= h || x_lo >= x_hi {
                            out_row.fill(0.0);
                            continue;
                        }
                        out_row[..x_lo].fill(0.0);
                        out_row[x_hi..].fill(0.0);
                        let src = &plane[(sy * w) as usize..((sy + 1) * w) as usize];
                        let s0 = (x_lo as isize + dx) as usize;
                        out_row[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                    }
                }
            }
        }
    }
}

/// Scatter-adds column gradients back onto the input gradient (adjoint of `im2col`).
fn col2im(dcols: &[f64], g: &ConvGeom, group: usize, dinput: &mut [f64]) {
    let (h, w, k, pad) = (g.height as isize, g.width as isize, g.k, g.pad as isize);
    let hw = g.hw();
    let ncols = g.cols();
    for cl in 0..g.cin_g() {
        let ci = group * g.cin_g() + cl;
        for ky in 0..k {
            for kx in 0..k {
                let row = (cl * k + ky) * k + kx;
                let src = &dcols[row * ncols..(row + 1) * ncols];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                let x_lo = (-dx).clamp(0, w) as usize;
                let x_hi = (w - dx).clamp(0, w) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for b in 0..g.batch {
                    let plane = &mut dinput[(b * g.cin + ci) * hw..(b * g.cin + ci + 1) * hw];
                    for y in 0..h {
                        let sy = y + dy;
                        if sy < 0 || sy >= h {
                            continue;
                        }
                        let s_row = &src[b * hw + (y * w) as usize..];
                        let d0 = (sy * w) as usize + (x_lo as isize + dx) as usize;
                        let dst = &mut plane[d0..d0 + (x_hi - x_lo)];
                        for (d, s) in dst.iter_mut().zip(&s_row[x_lo..x_hi]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

/// `c[m x n] = beta*c + a[m x k] * b[k x n]` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: every caller sizes `a`, `b` and `c` from the same `ConvGeom`
    // so the strided extents stay in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn forward(input: &[f64], kernel: &[f64], bias: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let (rows, ncols, hw) = (g.rows(), g.cols(), g.hw());
    let cout_g = g.cout_g();
    let mut cols = vec![0.0; rows * ncols];
    let mut prod = vec![0.0; cout_g * ncols];
    let mut out = vec![0.0; g.batch * g.cout * hw];
    for group in 0..g.groups {
        im2col(input, g, group, &mut cols);
        let wk = &kernel[group * cout_g * rows..(group + 1) * cout_g * rows];
        gemm(cout_g, rows, ncols, wk, (rows as isize, 1), &cols, (ncols as isize, 1), 0.0, &mut prod);
        for cl in 0..cout_g {
            let co = group * cout_g + cl;
            let bv = bias.map_or(0.0, |b| b[co]);
            for b in 0..g.batch {
                let src = &prod[cl * ncols + b * hw..cl * ncols + (b + 1) * hw];
                let dst = &mut out[(b * g.cout + co) * hw..(b * g.cout + co + 1) * hw];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bv;
                }
            }
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub kernel: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

pub(crate) fn backward(
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads {
    let (need_input, need_kernel, need_bias) = need;
    let (rows, ncols, hw) = (g.rows(), g.cols(), g.hw());
    let cout_g = g.cout_g();

    let bias = need_bias.then(|| {
        let mut db = vec![0.0; g.cout];
        for b in 0..g.batch {
            for (co, acc) in db.iter_mut().enumerate() {
                *acc += grad_out[(b * g.cout + co) * hw..(b * g.cout + co + 1) * hw].iter().sum::<f64>();
            }
        }
        db
    });
    if !need_input && !need_kernel {
        return ConvGrads {
            input: None,
            kernel: None,
            bias,
        };
    }

    let mut dinput = need_input.then(|| vec![0.0; input.len()]);
    let mut dkernel = need_kernel.then(|| vec![0.0; kernel.len()]);
    let mut cols = vec![0.0; rows * ncols];
    let mut dcols = vec![0.0; rows * ncols];
    let mut go = vec![0.0; cout_g * ncols];
    for group in 0..g.groups {
        for cl in 0..cout_g {
            let co = group * cout_g + cl;
            for b in 0..g.batch {
                go[cl * ncols + b * hw..cl * ncols + (b + 1) * hw]
                    .copy_from_slice(&grad_out[(b * g.cout + co) * hw..(b * g.cout + co + 1) * hw]);
            }
        }
        if let Some(dk) = dkernel.as_mut() {
            im2col(input, g, group, &mut cols);
            let dst = &mut dk[group * cout_g * rows..(group + 1) * cout_g * rows];
            // dW = go * cols^T
            gemm(cout_g, ncols, rows, &go, (ncols as isize, 1), &cols, (1, ncols as isize), 0.0, dst);
        }
        if let Some(di) = dinput.as_mut() {
            let wk = &kernel[group * cout_g * rows..(group + 1) * cout_g * rows];
            // dcols = W^T * go
            gemm(rows, cout_g, ncols, wk, (1, rows as isize), &go, (ncols as isize, 1), 0.0, &mut dcols);
            col2im(&dcols, g, group, di);
        }
    }
    ConvGrads {
        input: dinput,
        kernel: dkernel,
        bias,
    }
}
