//! Small from-scratch building blocks for 3×3 convolutions on the 28×28
//! grid, plus Adam and softmax.
//!
//! Activations are cell-major: `a[cell * channels + k]`. Convolution weights
//! are laid out `[c_in][tap][c_out]` so the innermost loop runs over output
//! channels. Taps are numbered `(dr + 1) * 3 + (dc + 1)` for offsets
//! `dr, dc ∈ {-1, 0, 1}`; the border is zero-padded.

use serde::{Deserialize, Serialize};

use crate::world::GRID;

pub const TAPS: usize = 9;
pub const CELLS: usize = GRID * GRID;

/// The input cell that output `cell` reads through tap `t`, if inside the grid.
#[inline]
pub fn tap_source(cell: usize, t: usize) -> Option<usize> {
    let r = (cell / GRID) as isize + (t / 3) as isize - 1;
    let c = (cell % GRID) as isize + (t % 3) as isize - 1;
    if r < 0 || c < 0 || r >= GRID as isize || c >= GRID as isize {
        None
    } else {
        Some(r as usize * GRID + c as usize)
    }
}

/// The output cell that reads input `cell` through tap `t`.
#[inline]
pub fn tap_target(cell: usize, t: usize) -> Option<usize> {
    let r = (cell / GRID) as isize - (t / 3) as isize + 1;
    let c = (cell % GRID) as isize - (t % 3) as isize + 1;
    if r < 0 || c < 0 || r >= GRID as isize || c >= GRID as isize {
        None
    } else {
        Some(r as usize * GRID + c as usize)
    }
}

/// Number of parameters of a 3×3 convolution with bias.
pub const fn conv_len(cin: usize, cout: usize) -> usize {
    cin * TAPS * cout + cout
}

/// A sparse multi-channel grid: explicit nonzero entries plus channels that
/// hold one value over the whole grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseGrid {
    /// `(cell, channel, value)`.
    pub entries: Vec<(u32, u16, f64)>,
    /// `(channel, value)` for constant planes.
    pub constants: Vec<(u16, f64)>,
}

impl SparseGrid {
    /// Sparse view of a channel-major dense tensor. Planes from
    /// `constant_from` on that hold one nonzero value everywhere become
    /// constants.
    pub fn from_channel_major(data: &[f64], channels: usize, constant_from: usize) -> Self {
        let mut out = SparseGrid::default();
        for ch in 0..channels {
            let plane = &data[ch * CELLS..(ch + 1) * CELLS];
            let v0 = plane[0];
            if ch >= constant_from && v0 != 0.0 && plane.iter().all(|&v| v == v0) {
                out.constants.push((ch as u16, v0));
                continue;
            }
            for (cell, &v) in plane.iter().enumerate() {
                if v != 0.0 {
                    out.entries.push((cell as u32, ch as u16, v));
                }
            }
        }
        out
    }

    /// Dense cell-major copy.
    pub fn to_cell_major(&self, channels: usize) -> Vec<f64> {
        let mut x = vec![0.0; CELLS * channels];
        for &(cell, ch, v) in &self.entries {
            x[cell as usize * channels + ch as usize] += v;
        }
        for &(ch, v) in &self.constants {
            for cell in 0..CELLS {
                x[cell * channels + ch as usize] += v;
            }
        }
        x
    }
}

/// Pre-activation output of a 3×3 convolution over a sparse input.
pub fn conv3x3_sparse(input: &SparseGrid, w: &[f64], b: &[f64], cout: usize) -> Vec<f64> {
    let mut z = Vec::with_capacity(CELLS * cout);
    for _ in 0..CELLS {
        z.extend_from_slice(b);
    }
    for &(cell, ch, v) in &input.entries {
        let cell = cell as usize;
        let (r, c) = (cell / GRID, cell % GRID);
        let interior = r > 0 && c > 0 && r + 1 < GRID && c + 1 < GRID;
        let wch = &w[ch as usize * TAPS * cout..][..TAPS * cout];
        for t in 0..TAPS {
            let o = if interior {
                cell + GRID + 1 - (t / 3) * GRID - t % 3
            } else {
                match tap_target(cell, t) {
                    Some(o) => o,
                    None => continue,
                }
            };
            let wrow = &wch[t * cout..][..cout];
            let zrow = &mut z[o * cout..][..cout];
            for (zo, &wo) in zrow.iter_mut().zip(wrow) {
                *zo += v * wo;
            }
        }
    }
    if !input.constants.is_empty() {
        // Per-tap contribution of all constant planes, then sum the valid taps.
        let mut per_tap = vec![0.0; TAPS * cout];
        for &(ch, v) in &input.constants {
            for t in 0..TAPS {
                let wrow = &w[(ch as usize * TAPS + t) * cout..][..cout];
                for (p, &wo) in per_tap[t * cout..][..cout].iter_mut().zip(wrow) {
                    *p += v * wo;
                }
            }
        }
        let mut all = vec![0.0; cout];
        for t in 0..TAPS {
            for (a, &p) in all.iter_mut().zip(&per_tap[t * cout..][..cout]) {
                *a += p;
            }
        }
        for o in 0..CELLS {
            let zrow = &mut z[o * cout..][..cout];
            let (r, c) = (o / GRID, o % GRID);
            if r > 0 && c > 0 && r + 1 < GRID && c + 1 < GRID {
                for (zo, &p) in zrow.iter_mut().zip(&all) {
                    *zo += p;
                }
                continue;
            }
            for t in 0..TAPS {
                if tap_source(o, t).is_some() {
                    for (zo, &p) in zrow.iter_mut().zip(&per_tap[t * cout..][..cout]) {
                        *zo += p;
                    }
                }
            }
        }
    }
    z
}

/// Pre-activation output of a 3×3 convolution over a dense cell-major
/// input. The input is zero-padded to a 30×30 grid so that every tap is one
/// matrix product over a shifted view; output columns 28 and 29 of the
/// padded rows are scratch.
pub fn conv3x3_dense(a: &[f64], cin: usize, w: &[f64], b: &[f64], cout: usize) -> Vec<f64> {
    const P: usize = GRID + 2;
    assert_eq!(a.len(), CELLS * cin);
    assert_eq!(w.len(), cin * TAPS * cout);
    assert_eq!(b.len(), cout);
    let rows = GRID * P;
    let mut padded = vec![0.0; (P * P + 2) * cin];
    for r in 0..GRID {
        let dst = ((r + 1) * P + 1) * cin;
        padded[dst..dst + GRID * cin].copy_from_slice(&a[r * GRID * cin..][..GRID * cin]);
    }
    let mut wt = vec![0.0; cin * cout];
    let mut zp = vec![0.0; rows * cout];
    for t in 0..TAPS {
        for ci in 0..cin {
            wt[ci * cout..][..cout].copy_from_slice(&w[(ci * TAPS + t) * cout..][..cout]);
        }
        let shift = (t / 3) * P + t % 3;
        let view = &padded[shift * cin..];
        assert!(view.len() >= rows * cin);
        // view holds at least rows×cin values, wt is cin×cout and zp is
        // rows×cout, all row-major.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                cin,
                cout,
                1.0,
                view.as_ptr(),
                cin as isize,
                1,
                wt.as_ptr(),
                cout as isize,
                1,
                1.0,
                zp.as_mut_ptr(),
                cout as isize,
                1,
            );
        }
    }
    let mut z = Vec::with_capacity(CELLS * cout);
    for r in 0..GRID {
        for c in 0..GRID {
            let src = &zp[(r * P + c) * cout..][..cout];
            z.extend(src.iter().zip(b).map(|(v, bias)| v + bias));
        }
    }
    z
}

/// Backward pass of [`conv3x3_dense`]: accumulates weight and bias
/// gradients and, if asked, the input gradient.
pub fn conv3x3_dense_backward(
    a: &[f64],
    cin: usize,
    w: &[f64],
    cout: usize,
    dz: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut da: Option<&mut [f64]>,
) {
    for o in 0..CELLS {
        let dzrow = &dz[o * cout..][..cout];
        for (d, &g) in db.iter_mut().zip(dzrow) {
            *d += g;
        }
    }
    for i in 0..CELLS {
        for t in 0..TAPS {
            let Some(o) = tap_target(i, t) else { continue };
            let dzrow = &dz[o * cout..][..cout];
            for ci in 0..cin {
                let v = a[i * cin + ci];
                let off = (ci * TAPS + t) * cout;
                if v != 0.0 {
                    for (d, &g) in dw[off..off + cout].iter_mut().zip(dzrow) {
                        *d += v * g;
                    }
                }
                if let Some(da) = da.as_deref_mut() {
                    let wrow = &w[off..off + cout];
                    da[i * cin + ci] += wrow.iter().zip(dzrow).map(|(x, y)| x * y).sum::<f64>();
                }
            }
        }
    }
}

/// Weight and bias gradients of [`conv3x3_sparse`] for inputs without
/// constant planes.
pub fn conv3x3_sparse_backward(
    input: &SparseGrid,
    cout: usize,
    dz: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) {
    debug_assert!(input.constants.is_empty());
    for o in 0..CELLS {
        for (d, &g) in db.iter_mut().zip(&dz[o * cout..][..cout]) {
            *d += g;
        }
    }
    for &(cell, ch, v) in &input.entries {
        for t in 0..TAPS {
            if let Some(o) = tap_target(cell as usize, t) {
                let off = (ch as usize * TAPS + t) * cout;
                for (d, &g) in dw[off..off + cout].iter_mut().zip(&dz[o * cout..][..cout]) {
                    *d += v * g;
                }
            }
        }
    }
}

pub fn relu_inplace(z: &mut [f64]) {
    for v in z {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `y = W x + b` with `W` stored row-major `[out][in]`.
pub fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bo)| {
            bo + w[o * n..][..n]
                .iter()
                .zip(x)
                .map(|(a, c)| a * c)
                .sum::<f64>()
        })
        .collect()
}

/// Backward of [`affine`]; returns `dx`.
pub fn affine_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let n = x.len();
    let mut dx = vec![0.0; n];
    for (o, &g) in dy.iter().enumerate() {
        db[o] += g;
        let row = &w[o * n..][..n];
        let drow = &mut dw[o * n..][..n];
        for i in 0..n {
            drow[i] += g * x[i];
            dx[i] += g * row[i];
        }
    }
    dx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_sparse(seed: u64, channels: usize, density: f64) -> SparseGrid {
        let mut rng = crate::rng::from_seed(seed);
        let mut g = SparseGrid::default();
        for ch in 0..channels {
            for cell in 0..CELLS {
                if rng.gen_bool(density) {
                    g.entries
                        .push((cell as u32, ch as u16, rng.gen_range(-1.0..1.0)));
                }
            }
        }
        g
    }

    /// Direct definition of the convolution, one output at a time.
    fn naive(x: &[f64], cin: usize, w: &[f64], b: &[f64], cout: usize) -> Vec<f64> {
        let mut z = vec![0.0; CELLS * cout];
        for o in 0..CELLS {
            for co in 0..cout {
                let mut s = b[co];
                for t in 0..TAPS {
                    if let Some(i) = tap_source(o, t) {
                        for ci in 0..cin {
                            s += x[i * cin + ci] * w[(ci * TAPS + t) * cout + co];
                        }
                    }
                }
                z[o * cout + co] = s;
            }
        }
        z
    }

    #[test]
    fn taps_are_inverse() {
        for cell in 0..CELLS {
            for t in 0..TAPS {
                if let Some(i) = tap_source(cell, t) {
                    assert_eq!(tap_target(i, t), Some(cell));
                }
            }
        }
        assert_eq!(tap_source(0, 0), None);
        assert_eq!(tap_source(0, 4), Some(0));
        assert_eq!(tap_source(0, 8), Some(GRID + 1));
    }

    #[test]
    fn sparse_and_dense_match_naive() {
        let (cin, cout) = (5, 3);
        let mut rng = crate::rng::from_seed(1);
        let w: Vec<f64> = (0..cin * TAPS * cout)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let b: Vec<f64> = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = random_sparse(2, cin - 1, 0.3);
        g.constants.push(((cin - 1) as u16, 0.7));
        let x = g.to_cell_major(cin);
        let expect = naive(&x, cin, &w, &b, cout);
        for (a, e) in conv3x3_sparse(&g, &w, &b, cout).iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
        for (a, e) in conv3x3_dense(&x, cin, &w, &b, cout).iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_planes_are_detected() {
        let mut data = vec![0.0; 3 * CELLS];
        data[5] = 0.5;
        for v in &mut data[CELLS..3 * CELLS] {
            *v = -0.25;
        }
        let g = SparseGrid::from_channel_major(&data, 3, 2);
        assert_eq!(g.entries.len(), 1 + CELLS);
        assert_eq!(g.entries[0], (5, 0, 0.5));
        assert_eq!(g.constants, vec![(2, -0.25)]);
    }

    #[test]
    fn dense_backward_matches_finite_differences() {
        let (cin, cout) = (3, 2);
        let mut rng = crate::rng::from_seed(7);
        let x: Vec<f64> = (0..CELLS * cin).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut w: Vec<f64> = (0..cin * TAPS * cout)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let b: Vec<f64> = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let coef: Vec<f64> = (0..CELLS * cout)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let loss = |w: &[f64], x: &[f64]| -> f64 {
            conv3x3_dense(x, cin, w, &b, cout)
                .iter()
                .zip(&coef)
                .map(|(a, c)| a * c)
                .sum()
        };
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; cout];
        let mut dx = vec![0.0; x.len()];
        conv3x3_dense_backward(&x, cin, &w, cout, &coef, &mut dw, &mut db, Some(&mut dx));
        let h = 1e-5;
        for i in [0, 7, 20, w.len() - 1] {
            let orig = w[i];
            w[i] = orig + h;
            let up = loss(&w, &x);
            w[i] = orig - h;
            let down = loss(&w, &x);
            w[i] = orig;
            assert!(((up - down) / (2.0 * h) - dw[i]).abs() < 1e-6);
        }
        let mut xx = x.clone();
        for i in [0, 100, xx.len() - 1] {
            let orig = xx[i];
            xx[i] = orig + h;
            let up = loss(&w, &xx);
            xx[i] = orig - h;
            let down = loss(&w, &xx);
            xx[i] = orig;
            assert!(((up - down) / (2.0 * h) - dx[i]).abs() < 1e-6);
        }
        let total: f64 = (0..CELLS).map(|o| coef[o * cout]).sum();
        assert!((db[0] - total).abs() < 1e-9);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, 999.0, -5.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > p[1] && p[1] > p[2]);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(2);
        for _ in 0..2000 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut x, &g, 0.01);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2));
    }
}
