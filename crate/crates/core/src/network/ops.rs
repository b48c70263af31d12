//! Dense kernels shared by the layers: a checked GEMM wrapper, im2col and
//! its adjoint, and small vector helpers.

/// Row-major matrix view description: `rows x cols` with row stride `rs`
/// and column stride `cs` (either may be 1, which expresses transposes).
#[derive(Clone, Copy, Debug)]
pub(crate) struct View {
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    pub fn rm(rows: usize, cols: usize) -> Self {
        Self { rows, cols, rs: cols, cs: 1 }
    }

    /// Transpose of a row-major `rows x cols` buffer.
    pub fn rm_t(rows: usize, cols: usize) -> Self {
        Self { rows: cols, cols: rows, rs: 1, cs: cols }
    }

    fn extent(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `c = alpha * a * b + beta * c` with `c` row-major.
pub(crate) fn gemm(alpha: f32, a: &[f32], av: View, b: &[f32], bv: View, beta: f32, c: &mut [f32]) {
    assert_eq!(av.cols, bv.rows, "gemm inner dimension");
    assert!(a.len() >= av.extent() && b.len() >= bv.extent());
    assert!(c.len() >= av.rows * bv.cols);
    // SAFETY: extents checked above; the three buffers are distinct borrows.
    unsafe {
        matrixmultiply::sgemm(
            av.rows,
            av.cols,
            bv.cols,
            alpha,
            a.as_ptr(),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr(),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr(),
            bv.cols as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.in_c * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// CHW input to a `[c*k*k, out_h*out_w]` column matrix.
pub(crate) fn im2col(input: &[f32], g: ConvGeom, col: &mut [f32]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let n = oh * ow;
    for c in 0..g.in_c {
        let plane = &input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.in_w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates column gradients into `d_input`.
pub(crate) fn col2im(col: &[f32], g: ConvGeom, d_input: &mut [f32]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let n = oh * ow;
    for c in 0..g.in_c {
        let plane = &mut d_input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let base = iy as usize * g.in_w;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.in_w {
                            plane[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `y = W x + b` for row-major `W` of shape `[out, in]`.
pub(crate) fn affine(w: &[f32], b: Option<&[f32]>, x: &[f32], out: usize) -> Vec<f32> {
    let inp = x.len();
    let mut y = match b {
        Some(b) => b[..out].to_vec(),
        None => vec![0.0; out],
    };
    for (o, yo) in y.iter_mut().enumerate() {
        let row = &w[o * inp..(o + 1) * inp];
        *yo += row.iter().zip(x).map(|(a, b)| a * b).sum::<f32>();
    }
    y
}

/// Backward of [`affine`]: accumulates `dW += dy x^T`, `db += dy` and
/// returns `W^T dy`.
pub(crate) fn affine_backward(
    w: &[f32],
    x: &[f32],
    dy: &[f32],
    dw: &mut [f32],
    db: Option<&mut [f32]>,
) -> Vec<f32> {
    let inp = x.len();
    let mut dx = vec![0.0; inp];
    for (o, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &w[o * inp..(o + 1) * inp];
        let drow = &mut dw[o * inp..(o + 1) * inp];
        for i in 0..inp {
            drow[i] += g * x[i];
            dx[i] += g * row[i];
        }
    }
    if let Some(db) = db {
        for (d, g) in db.iter_mut().zip(dy) {
            *d += g;
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_with_transposes() {
        // a = [[1,2,3],[4,5,6]] (2x3), b = a^T
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut c = [0.0; 4];
        gemm(1.0, &a, View::rm(2, 3), &a, View::rm_t(2, 3), 0.0, &mut c);
        assert_eq!(c, [14.0, 32.0, 32.0, 77.0]);
    }

    #[test]
    fn im2col_col2im_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for arbitrary x, y.
        let g = ConvGeom { in_c: 2, in_h: 7, in_w: 6, k: 3, stride: 2, pad: 1 };
        let x: Vec<f32> = (0..2 * 7 * 6).map(|i| ((i * 37) % 11) as f32 - 5.0).collect();
        let y: Vec<f32> = (0..g.col_rows() * g.col_cols()).map(|i| ((i * 13) % 7) as f32 - 3.0).collect();
        let mut col = vec![0.0; y.len()];
        im2col(&x, g, &mut col);
        let mut back = vec![0.0; x.len()];
        col2im(&y, g, &mut back);
        let lhs: f32 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f32 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn conv_output_sizes() {
        let g = ConvGeom { in_c: 3, in_h: 224, in_w: 224, k: 4, stride: 4, pad: 0 };
        assert_eq!((g.out_h(), g.out_w()), (56, 56));
        let g = ConvGeom { in_c: 8, in_h: 56, in_w: 56, k: 3, stride: 2, pad: 1 };
        assert_eq!(g.out_h(), 28);
    }
}
