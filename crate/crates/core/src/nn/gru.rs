//! A standard GRU cell (reset/update gates, candidate state) with shared
//! weights across agents, plus hand-written backpropagation through time.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Gate weights stacked row-wise as [reset; update; candidate], the usual
/// 3H×D / 3H×H packing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub hidden: usize,
    pub w_ih: DMatrix<f64>,
    pub w_hh: DMatrix<f64>,
    pub b_ih: DVector<f64>,
    pub b_hh: DVector<f64>,
}

pub(crate) struct GruStep {
    h_prev: DVector<f64>,
    r: DVector<f64>,
    z: DVector<f64>,
    n: DVector<f64>,
    /// U_n·h_prev + b_n, the recurrent half of the candidate pre-activation.
    gh_n: DVector<f64>,
}

pub(crate) struct GruTrace {
    steps: Vec<GruStep>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl GruParams {
    pub fn init(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> Self {
        let a_ih = (6.0 / (3 * hidden + input) as f64).sqrt();
        let a_hh = (6.0 / (3 * hidden + hidden) as f64).sqrt();
        Self {
            hidden,
            w_ih: DMatrix::from_fn(3 * hidden, input, |_, _| rng.random_range(-a_ih..a_ih)),
            w_hh: DMatrix::from_fn(3 * hidden, hidden, |_, _| rng.random_range(-a_hh..a_hh)),
            b_ih: DVector::zeros(3 * hidden),
            b_hh: DVector::zeros(3 * hidden),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hidden: self.hidden,
            w_ih: DMatrix::zeros(self.w_ih.nrows(), self.w_ih.ncols()),
            w_hh: DMatrix::zeros(self.w_hh.nrows(), self.w_hh.ncols()),
            b_ih: DVector::zeros(self.b_ih.len()),
            b_hh: DVector::zeros(self.b_hh.len()),
        }
    }

    /// Run the cell over one sequence from a zero initial hidden state.
    /// Returns the final hidden state and, when `record` is set, the per-step
    /// trace needed by [`GruParams::backward`].
    pub(crate) fn forward(
        &self,
        sequence: &[DVector<f64>],
        record: bool,
    ) -> (DVector<f64>, Option<GruTrace>) {
        let hn = self.hidden;
        let mut h = DVector::<f64>::zeros(hn);
        let mut steps = Vec::with_capacity(if record { sequence.len() } else { 0 });
        for x in sequence {
            let gi = &self.w_ih * x + &self.b_ih;
            let gh = &self.w_hh * &h + &self.b_hh;
            let r = DVector::from_fn(hn, |i, _| sigmoid(gi[i] + gh[i]));
            let z = DVector::from_fn(hn, |i, _| sigmoid(gi[hn + i] + gh[hn + i]));
            let gh_n = gh.rows(2 * hn, hn).into_owned();
            let n = DVector::from_fn(hn, |i, _| (gi[2 * hn + i] + r[i] * gh_n[i]).tanh());
            let h_next = DVector::from_fn(hn, |i, _| (1.0 - z[i]) * n[i] + z[i] * h[i]);
            if record {
                steps.push(GruStep { h_prev: h, r, z, n, gh_n });
            }
            h = h_next;
        }
        (h, record.then_some(GruTrace { steps }))
    }

    /// Backpropagation through time from a gradient on the final hidden
    /// state; weight gradients accumulate into `grad`.
    pub(crate) fn backward(
        &self,
        sequence: &[DVector<f64>],
        trace: &GruTrace,
        dh_final: &DVector<f64>,
        grad: &mut GruParams,
    ) {
        let hn = self.hidden;
        let mut dh = dh_final.clone();
        for (x, step) in sequence.iter().zip(&trace.steps).rev() {
            let GruStep { h_prev, r, z, n, gh_n } = step;
            let dz_gate = DVector::from_fn(hn, |i, _| dh[i] * (h_prev[i] - n[i]));
            let dn = DVector::from_fn(hn, |i, _| dh[i] * (1.0 - z[i]));
            let mut dh_prev = DVector::from_fn(hn, |i, _| dh[i] * z[i]);

            let dn_pre = DVector::from_fn(hn, |i, _| dn[i] * (1.0 - n[i] * n[i]));
            let dr = DVector::from_fn(hn, |i, _| dn_pre[i] * gh_n[i]);
            let dgh_n = DVector::from_fn(hn, |i, _| dn_pre[i] * r[i]);
            let dr_pre = DVector::from_fn(hn, |i, _| dr[i] * r[i] * (1.0 - r[i]));
            let dz_pre = DVector::from_fn(hn, |i, _| dz_gate[i] * z[i] * (1.0 - z[i]));

            let mut dgi = DVector::<f64>::zeros(3 * hn);
            dgi.rows_mut(0, hn).copy_from(&dr_pre);
            dgi.rows_mut(hn, hn).copy_from(&dz_pre);
            dgi.rows_mut(2 * hn, hn).copy_from(&dn_pre);
            let mut dgh = DVector::<f64>::zeros(3 * hn);
            dgh.rows_mut(0, hn).copy_from(&dr_pre);
            dgh.rows_mut(hn, hn).copy_from(&dz_pre);
            dgh.rows_mut(2 * hn, hn).copy_from(&dgh_n);

            grad.w_ih.gemm(1.0, &dgi, &x.transpose(), 1.0);
            grad.b_ih += &dgi;
            grad.w_hh.gemm(1.0, &dgh, &h_prev.transpose(), 1.0);
            grad.b_hh += &dgh;

            dh_prev.gemv_tr(1.0, &self.w_hh, &dgh, 1.0);
            dh = dh_prev;
        }
    }
}
