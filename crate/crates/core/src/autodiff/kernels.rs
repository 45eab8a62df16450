//! Dense loops behind the tape operations. All matrices are row-major.

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += s * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            c[i * n + j] += dot(a_row, b_row);
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub(crate) fn gemm_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let s = a[p * m + i];
            if s == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += s * bv;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the loop vectorize; summation order is fixed
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Output extent of a convolution or pooling window along one axis.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if kernel == 0 || stride == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn out_len(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfold one `c×h×w` image into a `(c·kh·kw) × (oh·ow)` patch matrix.
pub(crate) fn im2col(img: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let p = g.out_len();
    for ch in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ch * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oi in 0..g.oh {
                    let y = (oi * g.stride + ki) as isize - g.padding as isize;
                    for oj in 0..g.ow {
                        let x = (oj * g.stride + kj) as isize - g.padding as isize;
                        dst[oi * g.ow + oj] = if y >= 0 && x >= 0 && (y as usize) < g.h && (x as usize) < g.w {
                            img[(ch * g.h + y as usize) * g.w + x as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back onto the image.
pub(crate) fn col2im_acc(cols: &[f64], g: &ConvGeom, img: &mut [f64]) {
    let p = g.out_len();
    for ch in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ch * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oi in 0..g.oh {
                    let y = (oi * g.stride + ki) as isize - g.padding as isize;
                    if y < 0 || y as usize >= g.h {
                        continue;
                    }
                    for oj in 0..g.ow {
                        let x = (oj * g.stride + kj) as isize - g.padding as isize;
                        if x >= 0 && (x as usize) < g.w {
                            img[(ch * g.h + y as usize) * g.w + x as usize] += src[oi * g.ow + oj];
                        }
                    }
                }
            }
        }
    }
}
