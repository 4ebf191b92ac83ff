//! Dense numeric kernels behind the graph ops. All buffers are row-major,
//! images are `[H, W, C]`.

use std::collections::HashMap;

/// `C = A·B + beta·C` for strided views. Offsets are folded into the slices.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta != 1.0 {
            for i in 0..m {
                for j in 0..n {
                    c[i * rsc + j * csc] *= beta;
                }
            }
        }
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len(), "gemm: A view out of bounds");
    assert!((k - 1) * rsb + (n - 1) * csb < b.len(), "gemm: B view out of bounds");
    assert!((m - 1) * rsc + (n - 1) * csc < c.len(), "gemm: C view out of bounds");
    // SAFETY: the three asserts above bound every element the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl Conv2dGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.dilation * (self.k - 1) - 1) / self.stride + 1
    }
    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.dilation * (self.k - 1) - 1) / self.stride + 1
    }

    /// Output column range whose input column for tap `kx` is in bounds.
    fn valid_cols(&self, kx: usize) -> Option<(usize, usize)> {
        let shift = kx * self.dilation;
        let ow = self.out_w();
        // ix = ox*s + shift - pad in [0, w)
        let lo = if self.pad > shift { (self.pad - shift).div_ceil(self.stride) } else { 0 };
        let top = self.w as isize - 1 + self.pad as isize - shift as isize;
        if top < 0 {
            return None;
        }
        let hi = ((top as usize) / self.stride).min(ow - 1);
        if lo > hi {
            None
        } else {
            Some((lo, hi + 1))
        }
    }

    fn input_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky * self.dilation) as isize - self.pad as isize;
        if iy < 0 || iy >= self.h as isize {
            None
        } else {
            Some(iy as usize)
        }
    }

    fn input_col(&self, ox: usize, kx: usize) -> usize {
        ox * self.stride + kx * self.dilation - self.pad
    }
}

/// Cross-correlation with zero padding. `w` is `[k, k, cin, cout]`.
pub fn conv2d_forward(g: &Conv2dGeom, x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![0.0; oh * ow * g.cout];
    for px in out.chunks_mut(g.cout) {
        px.copy_from_slice(bias);
    }
    for ky in 0..g.k {
        for kx in 0..g.k {
            let Some((c0, c1)) = g.valid_cols(kx) else { continue };
            let tap = &w[(ky * g.k + kx) * g.cin * g.cout..][..g.cin * g.cout];
            for oy in 0..oh {
                let Some(iy) = g.input_row(oy, ky) else { continue };
                let ix0 = g.input_col(c0, kx);
                gemm(
                    c1 - c0,
                    g.cin,
                    g.cout,
                    &x[(iy * g.w + ix0) * g.cin..],
                    g.stride * g.cin,
                    1,
                    tap,
                    g.cout,
                    1,
                    1.0,
                    &mut out[(oy * ow + c0) * g.cout..],
                    g.cout,
                    1,
                );
            }
        }
    }
    out
}

/// Accumulates input, weight and bias gradients for [`conv2d_forward`].
pub fn conv2d_backward(
    g: &Conv2dGeom,
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    dx: Option<&mut [f64]>,
    dw: &mut [f64],
    db: &mut [f64],
) {
    let (oh, ow) = (g.out_h(), g.out_w());
    for px in dout.chunks(g.cout) {
        for (d, v) in db.iter_mut().zip(px) {
            *d += v;
        }
    }
    let mut dx = dx;
    for ky in 0..g.k {
        for kx in 0..g.k {
            let Some((c0, c1)) = g.valid_cols(kx) else { continue };
            let off = (ky * g.k + kx) * g.cin * g.cout;
            for oy in 0..oh {
                let Some(iy) = g.input_row(oy, ky) else { continue };
                let ix0 = g.input_col(c0, kx);
                let m = c1 - c0;
                let xs = &x[(iy * g.w + ix0) * g.cin..];
                let ds = &dout[(oy * ow + c0) * g.cout..];
                // dW_tap += X^T · dOut
                gemm(g.cin, m, g.cout, xs, 1, g.stride * g.cin, ds, g.cout, 1, 1.0, &mut dw[off..], g.cout, 1);
                if let Some(dx) = dx.as_deref_mut() {
                    // dX += dOut · W_tap^T
                    gemm(
                        m,
                        g.cout,
                        g.cin,
                        ds,
                        g.cout,
                        1,
                        &w[off..],
                        1,
                        g.cout,
                        1.0,
                        &mut dx[(iy * g.w + ix0) * g.cin..],
                        g.stride * g.cin,
                        1,
                    );
                }
            }
        }
    }
}

/// Neighbor pairs of a submanifold 3x3x3 convolution: for kernel offset `o`,
/// `pairs[o]` lists `(input_site, output_site)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rulebook {
    pub num_sites: usize,
    pub pairs: Vec<Vec<(u32, u32)>>,
}

/// Kernel offset index for a displacement in `{-1, 0, 1}^3` over `(ix, iy, iz)`.
pub fn offset_index(d: [isize; 3]) -> usize {
    ((d[0] + 1) * 9 + (d[1] + 1) * 3 + (d[2] + 1)) as usize
}

impl Rulebook {
    pub fn build(coords: &[[usize; 3]]) -> Self {
        let index: HashMap<[usize; 3], u32> = coords.iter().enumerate().map(|(i, c)| (*c, i as u32)).collect();
        let mut pairs = vec![Vec::new(); 27];
        for (out, c) in coords.iter().enumerate() {
            for dx in -1isize..=1 {
                for dy in -1isize..=1 {
                    for dz in -1isize..=1 {
                        let n = [c[0] as isize + dx, c[1] as isize + dy, c[2] as isize + dz];
                        if n.iter().any(|v| *v < 0) {
                            continue;
                        }
                        let key = [n[0] as usize, n[1] as usize, n[2] as usize];
                        if let Some(&inp) = index.get(&key) {
                            pairs[offset_index([dx, dy, dz])].push((inp, out as u32));
                        }
                    }
                }
            }
        }
        Rulebook { num_sites: coords.len(), pairs }
    }
}

/// Submanifold convolution: `out[i] = b + sum_o W[o]^T x[nbr(i, o)]` over active neighbors.
pub fn subm_conv3d_forward(rb: &Rulebook, x: &[f64], cin: usize, w: &[f64], bias: &[f64], cout: usize) -> Vec<f64> {
    let mut out = vec![0.0; rb.num_sites * cout];
    for px in out.chunks_mut(cout) {
        px.copy_from_slice(bias);
    }
    let mut gathered = Vec::new();
    let mut prod = Vec::new();
    for (o, pairs) in rb.pairs.iter().enumerate() {
        if pairs.is_empty() {
            continue;
        }
        gathered.clear();
        for &(i, _) in pairs {
            gathered.extend_from_slice(&x[i as usize * cin..(i as usize + 1) * cin]);
        }
        prod.clear();
        prod.resize(pairs.len() * cout, 0.0);
        gemm(pairs.len(), cin, cout, &gathered, cin, 1, &w[o * cin * cout..], cout, 1, 0.0, &mut prod, cout, 1);
        for (p, &(_, j)) in pairs.iter().enumerate() {
            let dst = &mut out[j as usize * cout..(j as usize + 1) * cout];
            for (d, v) in dst.iter_mut().zip(&prod[p * cout..(p + 1) * cout]) {
                *d += v;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn subm_conv3d_backward(
    rb: &Rulebook,
    x: &[f64],
    cin: usize,
    w: &[f64],
    cout: usize,
    dout: &[f64],
    dx: Option<&mut [f64]>,
    dw: &mut [f64],
    db: &mut [f64],
) {
    for px in dout.chunks(cout) {
        for (d, v) in db.iter_mut().zip(px) {
            *d += v;
        }
    }
    let mut dx = dx;
    let mut gx = Vec::new();
    let mut gd = Vec::new();
    let mut gdx = Vec::new();
    for (o, pairs) in rb.pairs.iter().enumerate() {
        if pairs.is_empty() {
            continue;
        }
        let p = pairs.len();
        gx.clear();
        gd.clear();
        for &(i, j) in pairs {
            gx.extend_from_slice(&x[i as usize * cin..(i as usize + 1) * cin]);
            gd.extend_from_slice(&dout[j as usize * cout..(j as usize + 1) * cout]);
        }
        let wo = &w[o * cin * cout..(o + 1) * cin * cout];
        gemm(cin, p, cout, &gx, 1, cin, &gd, cout, 1, 1.0, &mut dw[o * cin * cout..], cout, 1);
        if let Some(dx) = dx.as_deref_mut() {
            gdx.clear();
            gdx.resize(p * cin, 0.0);
            gemm(p, cout, cin, &gd, cout, 1, wo, 1, cout, 0.0, &mut gdx, cin, 1);
            for (q, &(i, _)) in pairs.iter().enumerate() {
                let dst = &mut dx[i as usize * cin..(i as usize + 1) * cin];
                for (d, v) in dst.iter_mut().zip(&gdx[q * cin..(q + 1) * cin]) {
                    *d += v;
                }
            }
        }
    }
}
