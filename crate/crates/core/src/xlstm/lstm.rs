//! Conventional LSTM cell, used as the comparison baseline.
//!
//! ```text
//! i = σ(W_i x + R_i h + b_i)      f = σ(W_f x + R_f h + b_f)
//! g = tanh(W_g x + R_g h + b_g)   o = σ(W_o x + R_o h + b_o)
//! c' = f ⊙ c + i ⊙ g              h' = o ⊙ tanh(c')
//! ```

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NamedParams, Tensor};
use crate::error::{CoreError, Result};
use crate::xlstm::init::{uniform_weight, zero_bias};

pub struct Lstm {
    d_in: usize,
    d: usize,
    w_i: Tensor,
    w_f: Tensor,
    w_g: Tensor,
    w_o: Tensor,
    r_i: Tensor,
    r_f: Tensor,
    r_g: Tensor,
    r_o: Tensor,
    b_i: Tensor,
    b_f: Tensor,
    b_g: Tensor,
    b_o: Tensor,
}

#[derive(Clone)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl Lstm {
    pub fn new(d_in: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<Lstm> {
        Ok(Lstm {
            d_in,
            d,
            w_i: uniform_weight(d, d_in, rng)?,
            w_f: uniform_weight(d, d_in, rng)?,
            w_g: uniform_weight(d, d_in, rng)?,
            w_o: uniform_weight(d, d_in, rng)?,
            r_i: uniform_weight(d, d, rng)?,
            r_f: uniform_weight(d, d, rng)?,
            r_g: uniform_weight(d, d, rng)?,
            r_o: uniform_weight(d, d, rng)?,
            b_i: zero_bias(d)?,
            // The usual positive forget bias.
            b_f: Tensor::param(vec![d], vec![1.0; d])?,
            b_g: zero_bias(d)?,
            b_o: zero_bias(d)?,
        })
    }

    pub fn width(&self) -> usize {
        self.d
    }

    pub fn zero_state(&self) -> LstmState {
        LstmState {
            h: Tensor::zeros(vec![self.d]),
            c: Tensor::zeros(vec![self.d]),
        }
    }

    pub fn params(&self) -> NamedParams {
        vec![
            ("w_i".to_string(), self.w_i.clone()),
            ("w_f".to_string(), self.w_f.clone()),
            ("w_g".to_string(), self.w_g.clone()),
            ("w_o".to_string(), self.w_o.clone()),
            ("r_i".to_string(), self.r_i.clone()),
            ("r_f".to_string(), self.r_f.clone()),
            ("r_g".to_string(), self.r_g.clone()),
            ("r_o".to_string(), self.r_o.clone()),
            ("b_i".to_string(), self.b_i.clone()),
            ("b_f".to_string(), self.b_f.clone()),
            ("b_g".to_string(), self.b_g.clone()),
            ("b_o".to_string(), self.b_o.clone()),
        ]
    }

    pub fn step(&self, x: &Tensor, state: &LstmState) -> Result<(Tensor, LstmState)> {
        if x.shape() != [self.d_in] {
            return Err(CoreError::dim(
                "lstm_step",
                format!("input shape {:?}, expected [{}]", x.shape(), self.d_in),
            ));
        }
        if state.h.shape() != [self.d] {
            return Err(CoreError::dim(
                "lstm_step",
                format!("state width {:?}, cell expects [{}]", state.h.shape(), self.d),
            ));
        }
        let pre = |w: &Tensor, r: &Tensor, b: &Tensor| -> Result<Tensor> {
            w.matmul(x)?.add(&r.matmul(&state.h)?)?.add(b)
        };
        let i_pre = pre(&self.w_i, &self.r_i, &self.b_i)?;
        let f_pre = pre(&self.w_f, &self.r_f, &self.b_f)?;
        let g_pre = pre(&self.w_g, &self.r_g, &self.b_g)?;
        let o_pre = pre(&self.w_o, &self.r_o, &self.b_o)?;
        self.step_from_preactivations(&i_pre, &f_pre, &g_pre, &o_pre, state)
    }

    /// Applies the gate recurrence to already-computed preactivations.
    pub fn step_from_preactivations(
        &self,
        i_pre: &Tensor,
        f_pre: &Tensor,
        g_pre: &Tensor,
        o_pre: &Tensor,
        state: &LstmState,
    ) -> Result<(Tensor, LstmState)> {
        let i = i_pre.sigmoid()?;
        let f = f_pre.sigmoid()?;
        let g = g_pre.tanh()?;
        let o = o_pre.sigmoid()?;
        let c_new = f.mul(&state.c)?.add(&i.mul(&g)?)?;
        let h_new = o.mul(&c_new.tanh()?)?;
        let state_new = LstmState {
            h: h_new.clone(),
            c: c_new,
        };
        Ok((h_new, state_new))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient_check;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_weights_zero_state_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cell = Lstm::new(3, 4, &mut rng).unwrap();
        for (_, p) in cell.params() {
            p.set_values(&vec![0.0; p.len()]).unwrap();
        }
        let x = Tensor::vector(vec![1.0, -2.0, 0.5]).unwrap();
        let (h, state) = cell.step(&x, &cell.zero_state()).unwrap();
        assert_eq!(h.to_vec(), vec![0.0; 4]);
        assert_eq!(state.c.to_vec(), vec![0.0; 4]);
    }

    #[test]
    fn scalar_cell_hand_example() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cell = Lstm::new(1, 1, &mut rng).unwrap();
        // All preactivations 0 except the candidate, pushed to saturation so
        // g = tanh(20) rounds to exactly 1.0.
        let zero = Tensor::vector(vec![0.0]).unwrap();
        let g_pre = Tensor::vector(vec![20.0]).unwrap();
        let (h, state) = cell
            .step_from_preactivations(&zero, &zero, &g_pre, &zero, &cell.zero_state())
            .unwrap();
        // c' = σ(0)·0 + σ(0)·1 = 0.5, h = σ(0)·tanh(0.5).
        assert_eq!(state.c.to_vec(), vec![0.5]);
        assert!((h.to_vec()[0] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
        assert!((h.to_vec()[0] - 0.23106).abs() < 5e-6);
    }

    #[test]
    fn five_step_rollout_passes_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cell = Lstm::new(3, 4, &mut rng).unwrap();
        let xs: Vec<Tensor> = (0..5)
            .map(|_| {
                Tensor::vector((0..3).map(|_| rng.random_range(-1.0..=1.0)).collect()).unwrap()
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
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cell = Lstm::new(3, 4, &mut rng).unwrap();
        let x = Tensor::vector(vec![1.0; 4]).unwrap();
        assert!(matches!(
            cell.step(&x, &cell.zero_state()),
            Err(CoreError::Dimension { .. })
        ));
    }
}
