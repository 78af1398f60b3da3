//! Scalar-memory recurrent cell with exponential gating and memory mixing.
//!
//! Recurrence (per step, all vectors of width d):
//! ```text
//! z = tanh(W_z x + R_z h + b_z)        candidate
//! i = exp(ĩ)    ĩ = W_i x + R_i h + b_i    input gate
//! f = exp(f̃)    f̃ = W_f x + R_f h + b_f    forget gate
//! o = σ(õ)      õ = W_o x + R_o h + b_o    output gate
//! c' = f ⊙ c + i ⊙ z       n' = f ⊙ n + i       h' = o ⊙ (c'/n')
//! ```
//! The exponential gates overflow quickly, so the cell tracks a log-domain
//! stabilizer m and uses i' = exp(ĩ − m'), f' = exp(f̃ + m − m') with
//! m' = max(f̃ + m, ĩ). The common factor cancels in c'/n', leaving h'
//! mathematically unchanged while every exponent stays ≤ 0.
//!
//! Memory mixing comes from the recurrent matrices R, which are constrained
//! block-diagonal across `n_heads` so heads mix internally but not with each
//! other.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NamedParams, Tensor};
use crate::error::{CoreError, Result};
use crate::xlstm::init::{uniform_weight, zero_bias};

pub struct SLstm {
    d_in: usize,
    d: usize,
    n_heads: usize,
    w_z: Tensor,
    w_i: Tensor,
    w_f: Tensor,
    w_o: Tensor,
    r_z: Tensor,
    r_i: Tensor,
    r_f: Tensor,
    r_o: Tensor,
    b_z: Tensor,
    b_i: Tensor,
    b_f: Tensor,
    b_o: Tensor,
    /// Constant 0/1 block-diagonal pattern applied to every R before use;
    /// masking the product masks the gradient too, so off-block entries
    /// remain exactly zero through training.
    mask: Tensor,
}

#[derive(Clone)]
pub struct SLstmState {
    pub h: Tensor,
    pub c: Tensor,
    pub n: Tensor,
    pub m: Tensor,
}

impl SLstm {
    pub fn new(d_in: usize, d: usize, n_heads: usize, rng: &mut ChaCha8Rng) -> Result<SLstm> {
        if n_heads == 0 || !d.is_multiple_of(n_heads) {
            return Err(CoreError::contract(
                "slstm",
                format!("width {d} not divisible into {n_heads} heads"),
            ));
        }
        let head = d / n_heads;
        let mut mask = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                if i / head == j / head {
                    mask[i * d + j] = 1.0;
                }
            }
        }
        let mask = Tensor::from_shape(vec![d, d], mask)?;
        let masked = |t: Tensor, mask: &Tensor| -> Result<Tensor> {
            // Start inside the constraint set, not just projected onto it.
            let vals: Vec<f64> = t
                .to_vec()
                .iter()
                .zip(mask.to_vec())
                .map(|(&v, m)| v * m)
                .collect();
            Tensor::param(vec![d, d], vals)
        };
        Ok(SLstm {
            d_in,
            d,
            n_heads,
            w_z: uniform_weight(d, d_in, rng)?,
            w_i: uniform_weight(d, d_in, rng)?,
            w_f: uniform_weight(d, d_in, rng)?,
            w_o: uniform_weight(d, d_in, rng)?,
            r_z: masked(uniform_weight(d, d, rng)?, &mask)?,
            r_i: masked(uniform_weight(d, d, rng)?, &mask)?,
            r_f: masked(uniform_weight(d, d, rng)?, &mask)?,
            r_o: masked(uniform_weight(d, d, rng)?, &mask)?,
            b_z: zero_bias(d)?,
            b_i: zero_bias(d)?,
            // Positive forget bias starts the cell near-remembering.
            b_f: Tensor::param(vec![d], vec![1.0; d])?,
            b_o: zero_bias(d)?,
            mask,
        })
    }

    pub fn width(&self) -> usize {
        self.d
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn zero_state(&self) -> SLstmState {
        SLstmState {
            h: Tensor::zeros(vec![self.d]),
            c: Tensor::zeros(vec![self.d]),
            n: Tensor::zeros(vec![self.d]),
            m: Tensor::zeros(vec![self.d]),
        }
    }

    pub fn params(&self) -> NamedParams {
        vec![
            ("w_z".to_string(), self.w_z.clone()),
            ("w_i".to_string(), self.w_i.clone()),
            ("w_f".to_string(), self.w_f.clone()),
            ("w_o".to_string(), self.w_o.clone()),
            ("r_z".to_string(), self.r_z.clone()),
            ("r_i".to_string(), self.r_i.clone()),
            ("r_f".to_string(), self.r_f.clone()),
            ("r_o".to_string(), self.r_o.clone()),
            ("b_z".to_string(), self.b_z.clone()),
            ("b_i".to_string(), self.b_i.clone()),
            ("b_f".to_string(), self.b_f.clone()),
            ("b_o".to_string(), self.b_o.clone()),
        ]
    }

    pub fn step(&self, x: &Tensor, state: &SLstmState) -> Result<(Tensor, SLstmState)> {
        if x.shape() != [self.d_in] {
            return Err(CoreError::dim(
                "slstm_step",
                format!("input shape {:?}, expected [{}]", x.shape(), self.d_in),
            ));
        }
        if state.h.shape() != [self.d] {
            return Err(CoreError::dim(
                "slstm_step",
                format!("state width {:?}, cell expects [{}]", state.h.shape(), self.d),
            ));
        }
        let pre = |w: &Tensor, r: &Tensor, b: &Tensor| -> Result<Tensor> {
            w.matmul(x)?
                .add(&r.mul(&self.mask)?.matmul(&state.h)?)?
                .add(b)
        };
        let z_pre = pre(&self.w_z, &self.r_z, &self.b_z)?;
        let i_pre = pre(&self.w_i, &self.r_i, &self.b_i)?;
        let f_pre = pre(&self.w_f, &self.r_f, &self.b_f)?;
        let o_pre = pre(&self.w_o, &self.r_o, &self.b_o)?;
        self.step_from_preactivations(&z_pre, &i_pre, &f_pre, &o_pre, state)
    }

    /// Applies the stabilized gate recurrence to already-computed gate
    /// preactivations. Exposed so the gating math can be tested against a
    /// naive (unstabilized) reference without involving the projections.
    pub fn step_from_preactivations(
        &self,
        z_pre: &Tensor,
        i_pre: &Tensor,
        f_pre: &Tensor,
        o_pre: &Tensor,
        state: &SLstmState,
    ) -> Result<(Tensor, SLstmState)> {
        let f_shifted = f_pre.add(&state.m)?;
        let m_new = f_shifted.maximum(i_pre)?;
        let i_gate = i_pre.sub(&m_new)?.exp()?;
        let f_gate = f_shifted.sub(&m_new)?.exp()?;
        let z = z_pre.tanh()?;
        let c_new = f_gate.mul(&state.c)?.add(&i_gate.mul(&z)?)?;
        let n_new = f_gate.mul(&state.n)?.add(&i_gate)?;
        let h_new = o_pre.sigmoid()?.mul(&c_new.div(&n_new)?)?;
        let state_new = SLstmState {
            h: h_new.clone(),
            c: c_new,
            n: n_new,
            m: m_new,
        };
        Ok((h_new, state_new))
    }
}
