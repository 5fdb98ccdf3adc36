//! Sequence layers with explicit reverse-mode gradients.
//!
//! Every layer works on `T x features` matrices. `backward` accumulates
//! parameter gradients into a same-shaped layer and returns the input gradient.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

pub const LEAKY_SLOPE: f64 = 0.01;

pub(crate) type Named<'a> = Vec<(String, ArrayViewD<'a, f64>)>;
pub(crate) type NamedMut<'a> = Vec<(String, ArrayViewMutD<'a, f64>)>;

fn uniform<R: Rng>(rng: &mut R, bound: f64, n: usize) -> Vec<f64> {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    (0..n).map(|_| dist.sample(rng)).collect()
}

pub fn leaky_relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

/// Gradient through LeakyReLU given its pre-activation input.
pub fn leaky_relu_backward(pre: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(pre, |d, &p| {
        if p <= 0.0 {
            *d *= LEAKY_SLOPE
        }
    });
    dx
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Affine map `y = x W^T + b` with `W` shaped `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = (1.0 / input as f64).sqrt();
        Self {
            weight: Array2::from_shape_vec((output, input), uniform(rng, bound, output * input))
                .expect("shape"),
            bias: Array1::from(uniform(rng, bound, output)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        dy: &Array2<f64>,
        grad: &mut Linear,
        need_input: bool,
    ) -> Option<Array2<f64>> {
        grad.weight += &dy.t().dot(&x);
        grad.bias += &dy.sum_axis(Axis(0));
        need_input.then(|| dy.dot(&self.weight))
    }

    pub(crate) fn named<'a>(&'a self, prefix: &str, out: &mut Named<'a>) {
        out.push((format!("{prefix}.weight"), self.weight.view().into_dyn()));
        out.push((format!("{prefix}.bias"), self.bias.view().into_dyn()));
    }

    pub(crate) fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedMut<'a>) {
        out.push((format!("{prefix}.weight"), self.weight.view_mut().into_dyn()));
        out.push((format!("{prefix}.bias"), self.bias.view_mut().into_dyn()));
    }
}

/// Temporal convolution over all input channels with dilated taps and
/// symmetric zero ("same") padding. Weights are `filters x channels x kernel`.
#[derive(Debug, Clone, PartialEq)]
pub struct DilatedConv {
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
    pub dilation: usize,
}

impl DilatedConv {
    pub fn zeros(channels: usize, filters: usize, kernel: usize, dilation: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        Self {
            weight: Array3::zeros((filters, channels, kernel)),
            bias: Array1::zeros(filters),
            dilation,
        }
    }

    pub fn init<R: Rng>(
        channels: usize,
        filters: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        let bound = (1.0 / (channels * kernel) as f64).sqrt();
        Self {
            weight: Array3::from_shape_vec(
                (filters, channels, kernel),
                uniform(rng, bound, filters * channels * kernel),
            )
            .expect("shape"),
            bias: Array1::from(uniform(rng, bound, filters)),
            dilation,
        }
    }

    pub fn radius(&self) -> usize {
        self.weight.dim().2 / 2
    }

    /// For tap `j`, the range of output frames whose input `t + offset` is in range.
    fn tap_ranges(&self, j: usize, frames: usize) -> Option<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        let offset = (j as isize - self.radius() as isize) * self.dilation as isize;
        let start = (-offset).max(0) as usize;
        let end = (frames as isize - offset.max(0)).max(0) as usize;
        if start >= end {
            return None;
        }
        let src_start = (start as isize + offset) as usize;
        Some((start..end, src_start..src_start + (end - start)))
    }

    /// Pre-activation output.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let frames = x.nrows();
        let mut y = Array2::<f64>::zeros((frames, self.weight.dim().0));
        y += &self.bias;
        for j in 0..self.weight.dim().2 {
            if let Some((dst, src)) = self.tap_ranges(j, frames) {
                let w = self.weight.index_axis(Axis(2), j);
                let mut out = y.slice_mut(s![dst, ..]);
                ndarray::linalg::general_mat_mul(1.0, &x.slice(s![src, ..]), &w.t(), 1.0, &mut out);
            }
        }
        y
    }

    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        dy: &Array2<f64>,
        grad: &mut DilatedConv,
    ) -> Array2<f64> {
        let frames = x.nrows();
        let mut dx = Array2::<f64>::zeros(x.raw_dim());
        grad.bias += &dy.sum_axis(Axis(0));
        for j in 0..self.weight.dim().2 {
            if let Some((dst, src)) = self.tap_ranges(j, frames) {
                let dy_tap = dy.slice(s![dst, ..]);
                let mut gw = grad.weight.index_axis_mut(Axis(2), j);
                ndarray::linalg::general_mat_mul(1.0, &dy_tap.t(), &x.slice(s![src.clone(), ..]), 1.0, &mut gw);
                let w = self.weight.index_axis(Axis(2), j);
                let mut dx_tap = dx.slice_mut(s![src, ..]);
                ndarray::linalg::general_mat_mul(1.0, &dy_tap, &w, 1.0, &mut dx_tap);
            }
        }
        dx
    }

    pub(crate) fn named<'a>(&'a self, prefix: &str, out: &mut Named<'a>) {
        out.push((format!("{prefix}.weight"), self.weight.view().into_dyn()));
        out.push((format!("{prefix}.bias"), self.bias.view().into_dyn()));
    }

    pub(crate) fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedMut<'a>) {
        out.push((format!("{prefix}.weight"), self.weight.view_mut().into_dyn()));
        out.push((format!("{prefix}.bias"), self.bias.view_mut().into_dyn()));
    }
}

/// Single-direction LSTM with gate order input, forget, cell, output and zero
/// initial state. `w_ih` is `4H x I`, `w_hh` is `4H x H`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub w_ih: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Activations recorded during an LSTM pass, indexed by time step.
#[derive(Debug, Clone)]
pub struct LstmCache {
    /// Post-activation gates `[i | f | g | o]`, `T x 4H`.
    gates: Array2<f64>,
    cell: Array2<f64>,
    tanh_cell: Array2<f64>,
    pub hidden: Array2<f64>,
    reverse: bool,
}

impl Lstm {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Array2::zeros((4 * hidden, input)),
            w_hh: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bi = (1.0 / input as f64).sqrt();
        let bh = (1.0 / hidden as f64).sqrt();
        Self {
            w_ih: Array2::from_shape_vec((4 * hidden, input), uniform(rng, bi, 4 * hidden * input))
                .expect("shape"),
            w_hh: Array2::from_shape_vec((4 * hidden, hidden), uniform(rng, bh, 4 * hidden * hidden))
                .expect("shape"),
            bias: Array1::from(uniform(rng, bh, 4 * hidden)),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hh.ncols()
    }

    fn order(frames: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
        if reverse {
            Box::new((0..frames).rev())
        } else {
            Box::new(0..frames)
        }
    }

    fn previous(t: usize, frames: usize, reverse: bool) -> Option<usize> {
        if reverse {
            (t + 1 < frames).then_some(t + 1)
        } else {
            t.checked_sub(1)
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>, reverse: bool) -> LstmCache {
        let frames = x.nrows();
        let h = self.hidden_dim();
        let mut pre = x.dot(&self.w_ih.t());
        pre += &self.bias;
        let mut gates = Array2::<f64>::zeros((frames, 4 * h));
        let mut cell = Array2::<f64>::zeros((frames, h));
        let mut tanh_cell = Array2::<f64>::zeros((frames, h));
        let mut hidden = Array2::<f64>::zeros((frames, h));
        for t in Self::order(frames, reverse) {
            let mut z = pre.row(t).to_owned();
            let prev = Self::previous(t, frames, reverse);
            if let Some(p) = prev {
                z += &self.w_hh.dot(&hidden.row(p));
            }
            for k in 0..h {
                let i = sigmoid(z[k]);
                let f = sigmoid(z[h + k]);
                let g = z[2 * h + k].tanh();
                let o = sigmoid(z[3 * h + k]);
                let c_prev = prev.map_or(0.0, |p| cell[[p, k]]);
                let c = f * c_prev + i * g;
                let tc = c.tanh();
                gates[[t, k]] = i;
                gates[[t, h + k]] = f;
                gates[[t, 2 * h + k]] = g;
                gates[[t, 3 * h + k]] = o;
                cell[[t, k]] = c;
                tanh_cell[[t, k]] = tc;
                hidden[[t, k]] = o * tc;
            }
        }
        LstmCache {
            gates,
            cell,
            tanh_cell,
            hidden,
            reverse,
        }
    }

    /// Backpropagation through time; `dh` is the gradient on every output state.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        cache: &LstmCache,
        dh: &Array2<f64>,
        grad: &mut Lstm,
        need_input: bool,
    ) -> Option<Array2<f64>> {
        let frames = x.nrows();
        let h = self.hidden_dim();
        let reverse = cache.reverse;
        let mut dz = Array2::<f64>::zeros((frames, 4 * h));
        let mut h_prev = Array2::<f64>::zeros((frames, h));
        let mut dh_rec = Array1::<f64>::zeros(h);
        let mut dc_rec = Array1::<f64>::zeros(h);
        let steps: Vec<usize> = Self::order(frames, reverse).collect();
        for &t in steps.iter().rev() {
            let prev = Self::previous(t, frames, reverse);
            for k in 0..h {
                let i = cache.gates[[t, k]];
                let f = cache.gates[[t, h + k]];
                let g = cache.gates[[t, 2 * h + k]];
                let o = cache.gates[[t, 3 * h + k]];
                let tc = cache.tanh_cell[[t, k]];
                let c_prev = prev.map_or(0.0, |p| cache.cell[[p, k]]);
                let dht = dh[[t, k]] + dh_rec[k];
                let d_o = dht * tc;
                let dc = dht * o * (1.0 - tc * tc) + dc_rec[k];
                dz[[t, k]] = dc * g * i * (1.0 - i);
                dz[[t, h + k]] = dc * c_prev * f * (1.0 - f);
                dz[[t, 2 * h + k]] = dc * i * (1.0 - g * g);
                dz[[t, 3 * h + k]] = d_o * o * (1.0 - o);
                dc_rec[k] = dc * f;
            }
            dh_rec = self.w_hh.t().dot(&dz.row(t));
            if let Some(p) = prev {
                h_prev.row_mut(t).assign(&cache.hidden.row(p));
            }
        }
        grad.w_ih += &dz.t().dot(&x);
        grad.w_hh += &dz.t().dot(&h_prev);
        grad.bias += &dz.sum_axis(Axis(0));
        need_input.then(|| dz.dot(&self.w_ih))
    }

    pub(crate) fn named<'a>(&'a self, prefix: &str, out: &mut Named<'a>) {
        out.push((format!("{prefix}.w_ih"), self.w_ih.view().into_dyn()));
        out.push((format!("{prefix}.w_hh"), self.w_hh.view().into_dyn()));
        out.push((format!("{prefix}.bias"), self.bias.view().into_dyn()));
    }

    pub(crate) fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedMut<'a>) {
        out.push((format!("{prefix}.w_ih"), self.w_ih.view_mut().into_dyn()));
        out.push((format!("{prefix}.w_hh"), self.w_hh.view_mut().into_dyn()));
        out.push((format!("{prefix}.bias"), self.bias.view_mut().into_dyn()));
    }
}

/// Forward and backward LSTMs over the same input; outputs are `[h_fwd | h_bwd]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    fwd: LstmCache,
    bwd: LstmCache,
    pub output: Array2<f64>,
}

impl BiLstm {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            forward: Lstm::zeros(input, hidden),
            backward: Lstm::zeros(input, hidden),
        }
    }

    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let forward = Lstm::init(input, hidden, rng);
        let backward = Lstm::init(input, hidden, rng);
        Self { forward, backward }
    }

    pub fn run(&self, x: ArrayView2<f64>) -> BiLstmCache {
        let fwd = self.forward.forward(x, false);
        let bwd = self.backward.forward(x, true);
        let output = ndarray::concatenate(Axis(1), &[fwd.hidden.view(), bwd.hidden.view()])
            .expect("same frame count");
        BiLstmCache { fwd, bwd, output }
    }

    pub fn backprop(
        &self,
        x: ArrayView2<f64>,
        cache: &BiLstmCache,
        dy: &Array2<f64>,
        grad: &mut BiLstm,
        need_input: bool,
    ) -> Option<Array2<f64>> {
        let h = self.forward.hidden_dim();
        let df = dy.slice(s![.., ..h]).to_owned();
        let db = dy.slice(s![.., h..]).to_owned();
        let dx_f = self.forward.backward(x, &cache.fwd, &df, &mut grad.forward, need_input);
        let dx_b = self.backward.backward(x, &cache.bwd, &db, &mut grad.backward, need_input);
        match (dx_f, dx_b) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        }
    }

    pub(crate) fn named<'a>(&'a self, prefix: &str, out: &mut Named<'a>) {
        self.forward.named(&format!("{prefix}.fwd"), out);
        self.backward.named(&format!("{prefix}.bwd"), out);
    }

    pub(crate) fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedMut<'a>) {
        self.forward.named_mut(&format!("{prefix}.fwd"), out);
        self.backward.named_mut(&format!("{prefix}.bwd"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ndarray::array;

    #[test]
    fn dilation_two_three_tap_sum() {
        let mut conv = DilatedConv::zeros(1, 1, 3, 2);
        conv.weight.fill(1.0);
        let x = array![[1.0], [2.0], [3.0], [4.0], [5.0]];
        let y = conv.forward(x.view());
        assert_eq!(y.column(0).to_vec(), vec![4.0, 6.0, 9.0, 6.0, 8.0]);
    }

    #[test]
    fn identity_kernel_any_dilation() {
        let x = array![[0.5, -1.0], [2.0, 3.0], [-4.0, 0.25]];
        for dilation in [1, 2, 4, 8] {
            let mut conv = DilatedConv::zeros(2, 2, 3, dilation);
            conv.weight[[0, 0, 1]] = 1.0;
            conv.weight[[1, 1, 1]] = 1.0;
            assert_eq!(conv.forward(x.view()), x);
        }
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut conv = DilatedConv::zeros(3, 2, 3, 4);
        conv.bias = array![1.5, -2.0];
        let y = conv.forward(Array2::zeros((6, 3)).view());
        assert!(y.rows().into_iter().all(|r| r.to_vec() == vec![1.5, -2.0]));
    }

    #[test]
    fn zero_lstm_stays_zero() {
        let lstm = Lstm::zeros(3, 4);
        let x = Array2::from_elem((5, 3), 0.7);
        let c = lstm.forward(x.view(), false);
        assert!(c.hidden.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reverse_lstm_reads_future_only() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let lstm = Lstm::init(2, 3, &mut rng);
        let x = Array2::from_shape_fn((6, 2), |(t, c)| (t * 2 + c) as f64 * 0.1);
        let base = lstm.forward(x.view(), true).hidden;
        let mut x2 = x.clone();
        x2[[1, 0]] += 1.0;
        let moved = lstm.forward(x2.view(), true).hidden;
        for t in 2..6 {
            assert_eq!(base.row(t), moved.row(t));
        }
        assert_ne!(base.row(0), moved.row(0));
    }

    use rand::SeedableRng;

    proptest! {
        #[test]
        fn forward_lstm_is_causal(seed in 0u64..1000, frames in 2usize..16, k in 0usize..16) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let lstm = Lstm::init(2, 3, &mut rng);
            let k = k % frames;
            let x = Array2::from_shape_fn((frames, 2), |(t, c)| ((t * 3 + c) % 5) as f64 * 0.2 - 0.4);
            let mut x2 = x.clone();
            x2[[k, 1]] += 1.0;
            let (a, b) = (lstm.forward(x.view(), false).hidden, lstm.forward(x2.view(), false).hidden);
            for t in 0..k {
                prop_assert_eq!(a.row(t), b.row(t));
            }
            prop_assert_ne!(a.row(k), b.row(k));
        }

        #[test]
        fn conv_output_depends_on_three_taps(dilation in 1usize..9, frames in 1usize..40, k in 0usize..40) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(dilation as u64);
            let conv = DilatedConv::init(2, 3, 3, dilation, &mut rng);
            let k = k % frames;
            let x = Array2::from_shape_fn((frames, 2), |(t, c)| ((t * 7 + c) % 4) as f64 * 0.5);
            let mut x2 = x.clone();
            x2[[k, 0]] += 1.0;
            let (a, b) = (conv.forward(x.view()), conv.forward(x2.view()));
            for t in 0..frames {
                if t.abs_diff(k) > dilation {
                    prop_assert_eq!(a.row(t), b.row(t));
                }
            }
        }
    }
}
