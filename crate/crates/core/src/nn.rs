//! Dense building blocks shared by the encoders, projection layer and
//! decoders: row-major GEMM, affine layers, 3x3 / 3x3x3 convolutions and
//! scalar activations. Everything is f64.

use rand::Rng;

use crate::error::{Error, Result};

/// `c = op(a) * op(b) + beta * c` with row-major storage.
///
/// `a` is `m x k` (stored `k x m` when `a_t`), `b` is `k x n` (stored `n x k`
/// when `b_t`), `c` is `m x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices are at least as long as the strided extents checked above.
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

/// Softplus with sharpness: `ln(1 + exp(beta x)) / beta`.
pub const SOFTPLUS_BETA: f64 = 100.0;

#[inline]
pub fn softplus(x: f64) -> f64 {
    softplus_with_grad(x).0
}

/// Value and slope of [`softplus`] from a single exponential.
#[inline]
pub fn softplus_with_grad(x: f64) -> (f64, f64) {
    let z = SOFTPLUS_BETA * x;
    let e = (-z.abs()).exp();
    // below 2^-53, ln_1p(e) rounds to e itself
    let log_term = if e < 1.1e-16 { e } else { e.ln_1p() };
    let value = x.max(0.0) + log_term / SOFTPLUS_BETA;
    let slope = if z >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    (value, slope)
}

/// Derivative of [`softplus`], i.e. the logistic function of `beta x`.
#[inline]
pub fn softplus_grad(x: f64) -> f64 {
    sigmoid(SOFTPLUS_BETA * x)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))` without overflow.
#[inline]
pub fn ln_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Compensated summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Order-independent sum: terms are sorted before compensated accumulation,
/// so any permutation of the input yields the same bits.
pub fn sorted_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    let mut acc = KahanSum::default();
    for &t in terms.iter() {
        acc.add(t);
    }
    acc.value()
}

fn uniform_fill(rng: &mut impl Rng, len: usize, bound: f64) -> Vec<f64> {
    (0..len)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
        .collect()
}

/// Affine map `y = W x + b`, `W` stored `out x in` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform init with bound `gain / sqrt(in_dim)`; zero bias.
    pub fn init(in_dim: usize, out_dim: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let bound = gain / (in_dim as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            weight: uniform_fill(rng, in_dim * out_dim, bound),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::shape(format!(
                "linear layer expects {} inputs, got {}",
                self.in_dim,
                x.len()
            )));
        }
        let mut y = self.bias.clone();
        self.forward_batch_into(x, 1, &mut y);
        Ok(y)
    }

    /// `y (rows x out) = x (rows x in) W^T + b`, overwriting `y`.
    pub fn forward_batch_into(&self, x: &[f64], rows: usize, y: &mut [f64]) {
        for row in y[..rows * self.out_dim].chunks_exact_mut(self.out_dim) {
            row.copy_from_slice(&self.bias);
        }
        gemm(rows, self.in_dim, self.out_dim, x, false, &self.weight, true, 1.0, y);
    }

    /// Input gradient `dx = dy W` (overwrites `dx`).
    pub fn backward_input(&self, dy: &[f64], rows: usize, dx: &mut [f64]) {
        gemm(rows, self.out_dim, self.in_dim, dy, false, &self.weight, false, 0.0, dx);
    }

    /// Accumulates parameter gradients for a batch into `grad`.
    pub fn accumulate_param_grad(&self, x: &[f64], dy: &[f64], rows: usize, grad: &mut Linear) {
        gemm(self.out_dim, rows, self.in_dim, dy, true, x, false, 1.0, &mut grad.weight);
        for row in dy[..rows * self.out_dim].chunks_exact(self.out_dim) {
            for (g, d) in grad.bias.iter_mut().zip(row) {
                *g += d;
            }
        }
    }
}

/// Dense convolution weights with an odd cubic/square kernel of side 3.
///
/// `weight` is laid out `[c_out][c_in][tap]`, taps in raster order of the
/// kernel offsets (outermost axis first).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub c_in: usize,
    pub c_out: usize,
    pub taps: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvWeights {
    pub fn zeros(c_in: usize, c_out: usize, taps: usize) -> Self {
        Self {
            c_in,
            c_out,
            taps,
            weight: vec![0.0; c_out * c_in * taps],
            bias: vec![0.0; c_out],
        }
    }

    pub fn init(c_in: usize, c_out: usize, taps: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let bound = gain / ((c_in * taps) as f64).sqrt();
        Self {
            c_in,
            c_out,
            taps,
            weight: uniform_fill(rng, c_out * c_in * taps, bound),
            bias: vec![0.0; c_out],
        }
    }

    pub fn weight_at(&self, co: usize, ci: usize, tap: usize) -> f64 {
        self.weight[(co * self.c_in + ci) * self.taps + tap]
    }

    fn cols(&self) -> usize {
        self.c_in * self.taps
    }
}

/// Neighbour offsets of a 3-wide kernel over `D` axes, raster order.
fn kernel_offsets<const D: usize>() -> Vec<[isize; D]> {
    let taps = 3usize.pow(D as u32);
    (0..taps)
        .map(|mut t| {
            let mut off = [0isize; D];
            for axis in (0..D).rev() {
                off[axis] = (t % 3) as isize - 1;
                t /= 3;
            }
            off
        })
        .collect()
}

/// Grid of `D` spatial axes with channels innermost (e.g. HWC or XYZC).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid<const D: usize> {
    pub dims: [usize; D],
}

impl<const D: usize> Grid<D> {
    pub fn positions(&self) -> usize {
        self.dims.iter().product()
    }

    fn neighbour(&self, pos: usize, off: &[isize; D]) -> Option<usize> {
        let mut rem = pos;
        let mut coord = [0usize; D];
        for axis in (0..D).rev() {
            coord[axis] = rem % self.dims[axis];
            rem /= self.dims[axis];
        }
        let mut idx = 0usize;
        for axis in 0..D {
            let c = coord[axis] as isize + off[axis];
            if c < 0 || c >= self.dims[axis] as isize {
                return None;
            }
            idx = idx * self.dims[axis] + c as usize;
        }
        Some(idx)
    }

    /// For each position, the flat index of every kernel neighbour (or none
    /// at a zero-padded border).
    pub fn neighbour_table(&self) -> Vec<Option<usize>> {
        let offsets = kernel_offsets::<D>();
        let mut table = Vec::with_capacity(self.positions() * offsets.len());
        for pos in 0..self.positions() {
            table.extend(offsets.iter().map(|off| self.neighbour(pos, off)));
        }
        table
    }
}

fn im2col(input: &[f64], c_in: usize, taps: usize, table: &[Option<usize>]) -> Vec<f64> {
    let positions = table.len() / taps;
    let mut cols = vec![0.0; positions * c_in * taps];
    for pos in 0..positions {
        let row = &mut cols[pos * c_in * taps..(pos + 1) * c_in * taps];
        for (tap, nb) in table[pos * taps..(pos + 1) * taps].iter().enumerate() {
            if let Some(nb) = nb {
                let src = &input[nb * c_in..(nb + 1) * c_in];
                for (ci, &v) in src.iter().enumerate() {
                    row[ci * taps + tap] = v;
                }
            }
        }
    }
    cols
}

fn col2im_add(dcols: &[f64], c_in: usize, taps: usize, table: &[Option<usize>], dinput: &mut [f64]) {
    let positions = table.len() / taps;
    for pos in 0..positions {
        let row = &dcols[pos * c_in * taps..(pos + 1) * c_in * taps];
        for (tap, nb) in table[pos * taps..(pos + 1) * taps].iter().enumerate() {
            if let Some(nb) = nb {
                let dst = &mut dinput[nb * c_in..(nb + 1) * c_in];
                for (ci, d) in dst.iter_mut().enumerate() {
                    *d += row[ci * taps + tap];
                }
            }
        }
    }
}

/// Zero-padded "same" convolution over a channels-last grid.
pub fn conv_forward<const D: usize>(grid: Grid<D>, input: &[f64], conv: &ConvWeights) -> Result<Vec<f64>> {
    let taps = 3usize.pow(D as u32);
    if conv.taps != taps {
        return Err(Error::shape(format!("{D}-D convolution needs {taps} taps, kernel has {}", conv.taps)));
    }
    let positions = grid.positions();
    if input.len() != positions * conv.c_in {
        return Err(Error::shape(format!(
            "convolution input has {} values, expected {} positions x {} channels",
            input.len(),
            positions,
            conv.c_in
        )));
    }
    let table = grid.neighbour_table();
    let cols = im2col(input, conv.c_in, taps, &table);
    let mut out = vec![0.0; positions * conv.c_out];
    for row in out.chunks_exact_mut(conv.c_out) {
        row.copy_from_slice(&conv.bias);
    }
    gemm(positions, conv.cols(), conv.c_out, &cols, false, &conv.weight, true, 1.0, &mut out);
    Ok(out)
}

/// Backward of [`conv_forward`]: accumulates kernel gradients into `grad`
/// and, when requested, returns the input gradient.
pub fn conv_backward<const D: usize>(
    grid: Grid<D>,
    input: &[f64],
    conv: &ConvWeights,
    dout: &[f64],
    grad: &mut ConvWeights,
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let taps = conv.taps;
    let positions = grid.positions();
    let table = grid.neighbour_table();
    let cols = im2col(input, conv.c_in, taps, &table);
    gemm(conv.c_out, positions, conv.cols(), dout, true, &cols, false, 1.0, &mut grad.weight);
    for row in dout.chunks_exact(conv.c_out) {
        for (g, d) in grad.bias.iter_mut().zip(row) {
            *g += d;
        }
    }
    if !want_input_grad {
        return None;
    }
    let mut dcols = vec![0.0; positions * conv.cols()];
    gemm(positions, conv.c_out, conv.cols(), dout, false, &conv.weight, false, 0.0, &mut dcols);
    let mut dinput = vec![0.0; input.len()];
    col2im_add(&dcols, conv.c_in, taps, &table, &mut dinput);
    Some(dinput)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn naive_conv2d(h: usize, w: usize, input: &[f64], conv: &ConvWeights) -> Vec<f64> {
        let mut out = vec![0.0; h * w * conv.c_out];
        for r in 0..h {
            for c in 0..w {
                for co in 0..conv.c_out {
                    let mut acc = conv.bias[co];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (rr, cc) = (r as isize + ky as isize - 1, c as isize + kx as isize - 1);
                            if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                                continue;
                            }
                            for ci in 0..conv.c_in {
                                acc += conv.weight_at(co, ci, ky * 3 + kx)
                                    * input[((rr as usize) * w + cc as usize) * conv.c_in + ci];
                            }
                        }
                    }
                    out[(r * w + c) * conv.c_out + co] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn gemm_matches_loops_for_all_transposes() {
        let mut rng = stream(1, &[]);
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.random::<f64>()).collect();
        let mut expect = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                expect[i * n + j] = (0..k).map(|l| a[i * k + l] * b[l * n + j]).sum();
            }
        }
        let transpose = |x: &[f64], r: usize, c: usize| {
            let mut t = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    t[j * r + i] = x[i * c + j];
                }
            }
            t
        };
        let at = transpose(&a, m, k);
        let bt = transpose(&b, k, n);
        for (aa, a_t, bb, b_t) in [(&a, false, &b, false), (&at, true, &b, false), (&a, false, &bt, true), (&at, true, &bt, true)] {
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, aa, a_t, bb, b_t, 0.0, &mut c);
            for (x, y) in c.iter().zip(&expect) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv2d_matches_naive_loops() {
        let mut rng = stream(2, &[]);
        let (h, w) = (5, 7);
        let conv = ConvWeights::init(3, 4, 9, 1.0, &mut rng);
        let input: Vec<f64> = (0..h * w * 3).map(|_| rng.random::<f64>() - 0.5).collect();
        let fast = conv_forward(Grid { dims: [h, w] }, &input, &conv).unwrap();
        let slow = naive_conv2d(h, w, &input, &conv);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = stream(3, &[]);
        let grid = Grid { dims: [3, 4, 2] };
        let mut conv = ConvWeights::init(2, 3, 27, 1.0, &mut rng);
        let input: Vec<f64> = (0..grid.positions() * 2).map(|_| rng.random::<f64>() - 0.5).collect();
        let probe: Vec<f64> = (0..grid.positions() * 3).map(|_| rng.random::<f64>() - 0.5).collect();
        let loss = |conv: &ConvWeights, input: &[f64]| -> f64 {
            conv_forward(grid, input, conv).unwrap().iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let mut grad = ConvWeights::zeros(2, 3, 27);
        let dinput = conv_backward(grid, &input, &conv, &probe, &mut grad, true).unwrap();
        let eps = 1e-6;
        for i in (0..conv.weight.len()).step_by(7) {
            let orig = conv.weight[i];
            conv.weight[i] = orig + eps;
            let up = loss(&conv, &input);
            conv.weight[i] = orig - eps;
            let down = loss(&conv, &input);
            conv.weight[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            assert!((fd - grad.weight[i]).abs() < 1e-7, "weight {i}: {fd} vs {}", grad.weight[i]);
        }
        let mut x = input.clone();
        for i in 0..x.len() {
            let orig = x[i];
            x[i] = orig + eps;
            let up = loss(&conv, &x);
            x[i] = orig - eps;
            let down = loss(&conv, &x);
            x[i] = orig;
            assert!(((up - down) / (2.0 * eps) - dinput[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn activations_are_stable_at_extremes() {
        assert_eq!(softplus(10.0), 10.0);
        assert!(softplus(-10.0) >= 0.0);
        assert!((ln_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert_eq!(ln_sigmoid(800.0), 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sorted_sum_is_permutation_invariant() {
        let mut a = vec![1e16, 1.0, -1e16, 3.5, 1e-3, 7.25];
        let mut b = vec![7.25, 1e-3, 3.5, -1e16, 1.0, 1e16];
        assert_eq!(sorted_sum(&mut a).to_bits(), sorted_sum(&mut b).to_bits());
    }
}
