//! Gated recurrent unit with explicit backpropagation through time.
//!
//! Tensors are time-major `(T, B, F)`. Gate layout along the `3H` axis is
//! `[reset, update, candidate]`:
//!
//! ```text
//! r = σ(x W_ir + b_ir + h W_hr + b_hr)
//! u = σ(x W_iu + b_iu + h W_hu + b_hu)
//! n = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))
//! h' = (1 - u) ⊙ n + u ⊙ h
//! ```

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView3, Axis, Zip};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    /// `(input, 3H)`
    pub w_ih: Array2<f64>,
    /// `(H, 3H)`
    pub w_hh: Array2<f64>,
    pub b_ih: Array1<f64>,
    pub b_hh: Array1<f64>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruTrace {
    /// Hidden states including the zero initial state, `(T + 1, B, H)`.
    pub states: Array3<f64>,
    reset: Array3<f64>,
    update: Array3<f64>,
    candidate: Array3<f64>,
    /// `h W_hn + b_hn`, needed for the reset-gate gradient.
    hidden_cand: Array3<f64>,
}

impl GruTrace {
    /// Hidden-state sequence `(T, B, H)` without the initial state.
    pub fn outputs(&self) -> ArrayView3<'_, f64> {
        self.states.slice(s![1.., .., ..])
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruParams {
            w_ih: Array2::zeros((input, 3 * hidden)),
            w_hh: Array2::zeros((hidden, 3 * hidden)),
            b_ih: Array1::zeros(3 * hidden),
            b_hh: Array1::zeros(3 * hidden),
        }
    }

    /// Uniform in `±1/sqrt(H)` for every weight and bias.
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut p = Self::zeros(input, hidden);
        for v in p
            .w_ih
            .iter_mut()
            .chain(p.w_hh.iter_mut())
            .chain(p.b_ih.iter_mut())
            .chain(p.b_hh.iter_mut())
        {
            *v = rng.random_range(-bound..bound);
        }
        p
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.nrows()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.nrows()
    }

    pub fn forward(&self, x: ArrayView3<f64>) -> GruTrace {
        let (t_len, batch, input) = x.dim();
        debug_assert_eq!(input, self.input_size());
        let h = self.hidden_size();

        let x2 = x.to_shape((t_len * batch, input)).expect("time-major input");
        let mut gi = x2.dot(&self.w_ih);
        gi += &self.b_ih;
        let gi = gi
            .into_shape_with_order((t_len, batch, 3 * h))
            .expect("contiguous gate buffer");

        let mut states = Array3::zeros((t_len + 1, batch, h));
        let mut reset = Array3::zeros((t_len, batch, h));
        let mut update = Array3::zeros((t_len, batch, h));
        let mut candidate = Array3::zeros((t_len, batch, h));
        let mut hidden_cand = Array3::zeros((t_len, batch, h));
        let mut gh = Array2::zeros((batch, 3 * h));

        for t in 0..t_len {
            let (prev, mut next) = states.multi_slice_mut((s![t, .., ..], s![t + 1, .., ..]));
            gh.assign(&self.b_hh.broadcast((batch, 3 * h)).unwrap());
            general_mat_mul(1.0, &prev, &self.w_hh, 1.0, &mut gh);
            let gi_t = gi.index_axis(Axis(0), t);
            for b in 0..batch {
                for k in 0..h {
                    let r = sigmoid(gi_t[[b, k]] + gh[[b, k]]);
                    let u = sigmoid(gi_t[[b, h + k]] + gh[[b, h + k]]);
                    let hn = gh[[b, 2 * h + k]];
                    let n = (gi_t[[b, 2 * h + k]] + r * hn).tanh();
                    next[[b, k]] = (1.0 - u) * n + u * prev[[b, k]];
                    reset[[t, b, k]] = r;
                    update[[t, b, k]] = u;
                    candidate[[t, b, k]] = n;
                    hidden_cand[[t, b, k]] = hn;
                }
            }
        }

        GruTrace {
            states,
            reset,
            update,
            candidate,
            hidden_cand,
        }
    }

    /// Accumulates parameter gradients into `grads` given the gradient of
    /// the loss with respect to every output state. Returns the input
    /// gradient when `want_input_grad` is set.
    pub fn backward(
        &self,
        x: ArrayView3<f64>,
        trace: &GruTrace,
        d_out: ArrayView3<f64>,
        grads: &mut GruParams,
        want_input_grad: bool,
    ) -> Option<Array3<f64>> {
        let (t_len, batch, input) = x.dim();
        let h = self.hidden_size();

        let mut dgi = Array3::<f64>::zeros((t_len, batch, 3 * h));
        let mut dgh = Array3::<f64>::zeros((t_len, batch, 3 * h));
        let mut dh_next = Array2::<f64>::zeros((batch, h));
        let mut dh = Array2::<f64>::zeros((batch, h));

        for t in (0..t_len).rev() {
            dh.assign(&d_out.index_axis(Axis(0), t));
            dh += &dh_next;
            let prev = trace.states.index_axis(Axis(0), t);
            let mut dgi_t = dgi.index_axis_mut(Axis(0), t);
            let mut dgh_t = dgh.index_axis_mut(Axis(0), t);
            for b in 0..batch {
                for k in 0..h {
                    let g = dh[[b, k]];
                    let r = trace.reset[[t, b, k]];
                    let u = trace.update[[t, b, k]];
                    let n = trace.candidate[[t, b, k]];
                    let hn = trace.hidden_cand[[t, b, k]];
                    let dn_pre = g * (1.0 - u) * (1.0 - n * n);
                    let du_pre = g * (prev[[b, k]] - n) * u * (1.0 - u);
                    let dr_pre = dn_pre * hn * r * (1.0 - r);
                    dgi_t[[b, k]] = dr_pre;
                    dgi_t[[b, h + k]] = du_pre;
                    dgi_t[[b, 2 * h + k]] = dn_pre;
                    dgh_t[[b, k]] = dr_pre;
                    dgh_t[[b, h + k]] = du_pre;
                    dgh_t[[b, 2 * h + k]] = dn_pre * r;
                    dh_next[[b, k]] = g * u;
                }
            }
            general_mat_mul(1.0, &dgh_t, &self.w_hh.t(), 1.0, &mut dh_next);
        }

        let rows = t_len * batch;
        let dgi2 = dgi.into_shape_with_order((rows, 3 * h)).unwrap();
        let dgh2 = dgh.into_shape_with_order((rows, 3 * h)).unwrap();
        let x2 = x.to_shape((rows, input)).expect("time-major input");
        let prev_states = trace.states.slice(s![..t_len, .., ..]);
        let prev2 = prev_states.to_shape((rows, h)).unwrap();

        general_mat_mul(1.0, &x2.t(), &dgi2, 1.0, &mut grads.w_ih);
        general_mat_mul(1.0, &prev2.t(), &dgh2, 1.0, &mut grads.w_hh);
        Zip::from(&mut grads.b_ih)
            .and(dgi2.columns())
            .for_each(|g, c| *g += c.sum());
        Zip::from(&mut grads.b_hh)
            .and(dgh2.columns())
            .for_each(|g, c| *g += c.sum());

        if want_input_grad {
            let dx = dgi2.dot(&self.w_ih.t());
            Some(dx.into_shape_with_order((t_len, batch, input)).unwrap())
        } else {
            None
        }
    }
}
