//! Matrix-memory recurrent cell with a covariance update rule.
//!
//! Per step, with query/key/value projections of the input (gates come from
//! the input only — there is no hidden-state recurrence):
//! ```text
//! q = W_q x + b_q     k = (W_k x + b_k)/√d     v = W_v x + b_v
//! i = exp(ĩ), f = exp(f̃), o = σ(õ)            (ĩ, f̃, õ = W x + b, vectors)
//! C' = f ⊙_rows C + i ⊙ (v kᵀ)     n' = f ⊙ n + i ⊙ k
//! h  = o ⊙ (C' q / max(|n'ᵀ q|, 1))
//! ```
//! The exponential gates are stabilized exactly as in the scalar cell, per
//! row r: the stored memory is C̃[r,:] = C[r,:]·e^(−m_r), ñ = n·e^(−m). The
//! readout needs the true C q and nᵀq back, which would overflow if
//! re-scaled directly, so it is evaluated in a shifted log domain: with
//! M = max_r m_r and w_r = e^(m_r − M) ≤ 1,
//! ```text
//! h̃ = (C̃'q ⊙ w) / max(|Σ_r w_r ñ'_r q_r|, e^(−M))
//! ```
//! which equals C'q / max(|n'ᵀq|, 1) exactly (both sides divided by e^M),
//! with every exponent ≤ 0 on the numerator side.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NamedParams, Tensor};
use crate::error::{CoreError, Result};
use crate::xlstm::init::{uniform_weight, zero_bias};

pub struct MLstm {
    d_in: usize,
    d: usize,
    w_q: Tensor,
    w_k: Tensor,
    w_v: Tensor,
    w_i: Tensor,
    w_f: Tensor,
    w_o: Tensor,
    b_q: Tensor,
    b_k: Tensor,
    b_v: Tensor,
    b_i: Tensor,
    b_f: Tensor,
    b_o: Tensor,
    ones: Tensor,
    /// Floor for the denominator when e^(−M) underflows; keeps the division
    /// defined (true value 0/1 = 0) instead of producing 0/0.
    tiny: Tensor,
}

#[derive(Clone)]
pub struct MLstmState {
    /// Matrix memory, stored row-rescaled by e^(−m).
    pub c: Tensor,
    /// Normalizer, stored rescaled by e^(−m).
    pub n: Tensor,
    /// Per-row log-domain stabilizer.
    pub m: Tensor,
}

impl MLstm {
    pub fn new(d_in: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<MLstm> {
        if d == 0 {
            return Err(CoreError::contract("mlstm", "width must be positive".to_string()));
        }
        Ok(MLstm {
            d_in,
            d,
            w_q: uniform_weight(d, d_in, rng)?,
            w_k: uniform_weight(d, d_in, rng)?,
            w_v: uniform_weight(d, d_in, rng)?,
            w_i: uniform_weight(d, d_in, rng)?,
            w_f: uniform_weight(d, d_in, rng)?,
            w_o: uniform_weight(d, d_in, rng)?,
            b_q: zero_bias(d)?,
            b_k: zero_bias(d)?,
            b_v: zero_bias(d)?,
            b_i: zero_bias(d)?,
            b_f: Tensor::param(vec![d], vec![1.0; d])?,
            b_o: zero_bias(d)?,
            ones: Tensor::from_shape(vec![d], vec![1.0; d])?,
            tiny: Tensor::scalar(f64::MIN_POSITIVE)?,
        })
    }

    pub fn width(&self) -> usize {
        self.d
    }

    pub fn zero_state(&self) -> MLstmState {
        MLstmState {
            c: Tensor::zeros(vec![self.d, self.d]),
            n: Tensor::zeros(vec![self.d]),
            m: Tensor::zeros(vec![self.d]),
        }
    }

    pub fn params(&self) -> NamedParams {
        vec![
            ("w_q".to_string(), self.w_q.clone()),
            ("w_k".to_string(), self.w_k.clone()),
            ("w_v".to_string(), self.w_v.clone()),
            ("w_i".to_string(), self.w_i.clone()),
            ("w_f".to_string(), self.w_f.clone()),
            ("w_o".to_string(), self.w_o.clone()),
            ("b_q".to_string(), self.b_q.clone()),
            ("b_k".to_string(), self.b_k.clone()),
            ("b_v".to_string(), self.b_v.clone()),
            ("b_i".to_string(), self.b_i.clone()),
            ("b_f".to_string(), self.b_f.clone()),
            ("b_o".to_string(), self.b_o.clone()),
        ]
    }

    pub fn step(&self, x: &Tensor, state: &MLstmState) -> Result<(Tensor, MLstmState)> {
        if x.shape() != [self.d_in] {
            return Err(CoreError::dim(
                "mlstm_step",
                format!("input shape {:?}, expected [{}]", x.shape(), self.d_in),
            ));
        }
        if state.n.shape() != [self.d] {
            return Err(CoreError::dim(
                "mlstm_step",
                format!("state width {:?}, cell expects [{}]", state.n.shape(), self.d),
            ));
        }
        let proj = |w: &Tensor, b: &Tensor| -> Result<Tensor> { w.matmul(x)?.add(b) };
        let q = proj(&self.w_q, &self.b_q)?;
        let k = proj(&self.w_k, &self.b_k)?.scale(1.0 / (self.d as f64).sqrt())?;
        let v = proj(&self.w_v, &self.b_v)?;
        let i_pre = proj(&self.w_i, &self.b_i)?;
        let f_pre = proj(&self.w_f, &self.b_f)?;
        let o_pre = proj(&self.w_o, &self.b_o)?;
        self.step_from_projections(&q, &k, &v, &i_pre, &f_pre, &o_pre, state)
    }

    /// Applies the gated covariance update to already-computed projections.
    /// `k` must already carry the 1/√d scale. Exposed so the update can be
    /// tested against a naive (unstabilized) reference.
    #[allow(clippy::too_many_arguments)]
    pub fn step_from_projections(
        &self,
        q: &Tensor,
        k: &Tensor,
        v: &Tensor,
        i_pre: &Tensor,
        f_pre: &Tensor,
        o_pre: &Tensor,
        state: &MLstmState,
    ) -> Result<(Tensor, MLstmState)> {
        let f_shifted = f_pre.add(&state.m)?;
        let m_new = f_shifted.maximum(i_pre)?;
        let i_gate = i_pre.sub(&m_new)?.exp()?;
        let f_gate = f_shifted.sub(&m_new)?.exp()?;
        let c_new = f_gate
            .outer(&self.ones)?
            .mul(&state.c)?
            .add(&i_gate.mul(v)?.outer(k)?)?;
        let n_new = f_gate.mul(&state.n)?.add(&i_gate.mul(k)?)?;

        let m_max = m_new.reduce_max()?;
        let w = m_new.sub(&m_max)?.exp()?;
        let gauge = n_new.mul(&w)?.dot(q)?;
        let floor = m_max.neg()?.exp()?.maximum(&self.tiny)?;
        let denom = gauge.abs()?.maximum(&floor)?;
        let h_tilde = c_new.matmul(q)?.mul(&w)?.div(&denom)?;
        let h = o_pre.sigmoid()?.mul(&h_tilde)?;
        let state_new = MLstmState {
            c: c_new,
            n: n_new,
            m: m_new,
        };
        Ok((h, state_new))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradient_check, special};
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_value_stream_gives_zero_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cell = MLstm::new(3, 4, &mut rng).unwrap();
        cell.w_v.set_values(&[0.0; 12]).unwrap();
        cell.b_v.set_values(&[0.0; 4]).unwrap();
        let mut state = cell.zero_state();
        for _ in 0..5 {
            let x =
                Tensor::vector((0..3).map(|_| rng.random_range(-2.0..=2.0)).collect()).unwrap();
            let (h, next) = cell.step(&x, &state).unwrap();
            assert_eq!(h.to_vec(), vec![0.0; 4]);
            state = next;
        }
    }

    #[test]
    fn single_step_outer_product_example() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 2;
        let cell = MLstm::new(d, d, &mut rng).unwrap();
        // i = exp(0) = 1, q = k = e1 (k taken post-scale), v = e2, õ = 0.
        let e1 = Tensor::vector(vec![1.0, 0.0]).unwrap();
        let e2 = Tensor::vector(vec![0.0, 1.0]).unwrap();
        let zeros = Tensor::vector(vec![0.0, 0.0]).unwrap();
        let (h, state) = cell
            .step_from_projections(&e1, &e1, &e2, &zeros, &zeros, &zeros, &cell.zero_state())
            .unwrap();
        // C' = e2 e1^T, n' = e1, stabilizer stays 0 so stored = true values.
        assert_eq!(state.c.to_vec(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(state.n.to_vec(), vec![1.0, 0.0]);
        assert_eq!(state.m.to_vec(), vec![0.0, 0.0]);
        // h̃ = C'q / max(|n'ᵀq|, 1) = e2; output gate σ(0) halves it.
        assert_eq!(h.to_vec(), vec![0.0, 0.5]);
    }

    /// Unstabilized reference in raw f64: true C, n and the plain
    /// max(|nᵀq|, 1) denominator.
    #[allow(clippy::too_many_arguments)]
    fn naive_step(
        d: usize,
        c: &mut [f64],
        n: &mut [f64],
        q: &[f64],
        k: &[f64],
        v: &[f64],
        i_pre: &[f64],
        f_pre: &[f64],
        o_pre: &[f64],
    ) -> Vec<f64> {
        for r in 0..d {
            let i = i_pre[r].exp();
            let f = f_pre[r].exp();
            for col in 0..d {
                c[r * d + col] = f * c[r * d + col] + i * v[r] * k[col];
            }
            n[r] = f * n[r] + i * k[r];
        }
        let dot: f64 = (0..d).map(|r| n[r] * q[r]).sum();
        let denom = dot.abs().max(1.0);
        (0..d)
            .map(|r| {
                let cq: f64 = (0..d).map(|col| c[r * d + col] * q[col]).sum();
                special::sigmoid(o_pre[r]) * cq / denom
            })
            .collect()
    }

    #[test]
    fn stabilized_matches_naive_recurrence() {
        let d = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cell = MLstm::new(d, d, &mut rng).unwrap();
        for _ in 0..10 {
            let mut c = vec![0.0; d * d];
            let mut n = vec![0.0; d];
            let mut state = cell.zero_state();
            for t in 0..20 {
                let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                    (0..d).map(|_| rng.random_range(-2.0..=2.0)).collect()
                };
                let (q, k, v) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
                let (ip, fp, op) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
                let expect = naive_step(d, &mut c, &mut n, &q, &k, &v, &ip, &fp, &op);
                let (h, next) = cell
                    .step_from_projections(
                        &Tensor::vector(q).unwrap(),
                        &Tensor::vector(k).unwrap(),
                        &Tensor::vector(v).unwrap(),
                        &Tensor::vector(ip).unwrap(),
                        &Tensor::vector(fp).unwrap(),
                        &Tensor::vector(op).unwrap(),
                        &state,
                    )
                    .unwrap();
                for (a, b) in h.to_vec().iter().zip(&expect) {
                    assert!((a - b).abs() <= 1e-8, "step {t}: {a} vs {b}");
                }
                state = next;
            }
        }
    }

    #[test]
    fn extreme_preactivations_stay_finite() {
        let d = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cell = MLstm::new(d, d, &mut rng).unwrap();
        let mut state = cell.zero_state();
        for t in 0..20 {
            let gates = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..d)
                    .map(|_| if rng.random::<bool>() { 50.0 } else { -50.0 })
                    .collect()
            };
            let proj = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..d).map(|_| rng.random_range(-2.0..=2.0)).collect()
            };
            let (h, next) = cell
                .step_from_projections(
                    &Tensor::vector(proj(&mut rng)).unwrap(),
                    &Tensor::vector(proj(&mut rng)).unwrap(),
                    &Tensor::vector(proj(&mut rng)).unwrap(),
                    &Tensor::vector(gates(&mut rng)).unwrap(),
                    &Tensor::vector(gates(&mut rng)).unwrap(),
                    &Tensor::vector(gates(&mut rng)).unwrap(),
                    &state,
                )
                .unwrap_or_else(|e| panic!("step {t} not finite: {e}"));
            assert!(h.to_vec().iter().all(|v| v.is_finite()));
            state = next;
        }
    }

    #[test]
    fn five_step_rollout_passes_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let cell = MLstm::new(2, 3, &mut rng).unwrap();
        let xs: Vec<Tensor> = (0..5)
            .map(|_| {
                Tensor::vector((0..2).map(|_| rng.random_range(-1.0..=1.0)).collect()).unwrap()
            })
            .collect();
        let f = || {
            let mut state = cell.zero_state();
            let mut parts = Vec::new();
            for x in &xs {
                let (h, next) = cell.step(x, &state)?;
                parts.push(h);
                state = next;
            }
            crate::autodiff::concat(&parts)?.sum()
        };
        let params: Vec<Tensor> = cell.params().into_iter().map(|(_, p)| p).collect();
        let err = gradient_check(f, &params, 1e-5).unwrap();
        assert!(err < 1e-4, "gradient error {err}");
    }

    #[test]
    fn rejects_mismatched_input_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let cell = MLstm::new(3, 4, &mut rng).unwrap();
        let x = Tensor::vector(vec![1.0; 5]).unwrap();
        assert!(matches!(
            cell.step(&x, &cell.zero_state()),
            Err(CoreError::Dimension { .. })
        ));
    }
}
