//! Residual block stack wrapping the recurrent cells.
//!
//! Every block applies the same pre-norm skeleton regardless of cell kind:
//! ```text
//! u = x + cell(layernorm(x))
//! y = u + W_down · gelu(W_up · layernorm(u) + b_up) + b_down
//! ```
//! With all weights zero both branches vanish and the block is the identity.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NamedParams, Tensor};
use crate::error::{CoreError, Result};
use crate::xlstm::init::{uniform_weight, zero_bias};
use crate::xlstm::lstm::{Lstm, LstmState};
use crate::xlstm::mlstm::{MLstm, MLstmState};
use crate::xlstm::slstm::{SLstm, SLstmState};

/// Which recurrent cell a block hosts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    SLstm,
    MLstm,
    Lstm,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockStackConfig {
    pub embedding_dim: usize,
    pub layers: Vec<CellKind>,
    pub n_heads: usize,
    pub mlp_expansion: f64,
    pub ln_eps: f64,
}

impl Default for BlockStackConfig {
    /// Smallest stack exercising both gated-memory cell kinds.
    fn default() -> Self {
        BlockStackConfig {
            embedding_dim: 128,
            layers: vec![CellKind::MLstm, CellKind::SLstm],
            n_heads: 1,
            mlp_expansion: 2.0,
            ln_eps: 1e-12,
        }
    }
}

impl BlockStackConfig {
    /// Comparison baseline: the same depth built from conventional LSTMs.
    pub fn lstm_baseline() -> Self {
        BlockStackConfig {
            layers: vec![CellKind::Lstm, CellKind::Lstm],
            ..BlockStackConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(CoreError::contract(
                "stack_config",
                "at least one layer required".to_string(),
            ));
        }
        if self.embedding_dim == 0 {
            return Err(CoreError::contract(
                "stack_config",
                "embedding_dim must be positive".to_string(),
            ));
        }
        if self.n_heads == 0 || !self.embedding_dim.is_multiple_of(self.n_heads) {
            return Err(CoreError::contract(
                "stack_config",
                format!(
                    "embedding_dim {} not divisible by n_heads {}",
                    self.embedding_dim, self.n_heads
                ),
            ));
        }
        if self.mlp_expansion.is_nan() || self.mlp_expansion <= 0.0 {
            return Err(CoreError::contract(
                "stack_config",
                format!("mlp_expansion must be positive, got {}", self.mlp_expansion),
            ));
        }
        if self.ln_eps.is_nan() || self.ln_eps <= 0.0 {
            return Err(CoreError::contract(
                "stack_config",
                format!("ln_eps must be positive, got {}", self.ln_eps),
            ));
        }
        Ok(())
    }
}

pub enum Cell {
    SLstm(SLstm),
    MLstm(MLstm),
    Lstm(Lstm),
}

#[derive(Clone)]
pub enum CellState {
    SLstm(SLstmState),
    MLstm(MLstmState),
    Lstm(LstmState),
}

impl CellState {
    /// Every state tensor's values flattened in a fixed order, for
    /// snapshot comparison and diagnostics.
    pub fn flatten_values(&self) -> Vec<f64> {
        match self {
            CellState::SLstm(s) => {
                let mut out = s.h.to_vec();
                out.extend(s.c.to_vec());
                out.extend(s.n.to_vec());
                out.extend(s.m.to_vec());
                out
            }
            CellState::MLstm(s) => {
                let mut out = s.c.to_vec();
                out.extend(s.n.to_vec());
                out.extend(s.m.to_vec());
                out
            }
            CellState::Lstm(s) => {
                let mut out = s.h.to_vec();
                out.extend(s.c.to_vec());
                out
            }
        }
    }
}

impl Cell {
    fn new(kind: CellKind, d: usize, n_heads: usize, rng: &mut ChaCha8Rng) -> Result<Cell> {
        Ok(match kind {
            CellKind::SLstm => Cell::SLstm(SLstm::new(d, d, n_heads, rng)?),
            CellKind::MLstm => Cell::MLstm(MLstm::new(d, d, rng)?),
            CellKind::Lstm => Cell::Lstm(Lstm::new(d, d, rng)?),
        })
    }

    fn zero_state(&self) -> CellState {
        match self {
            Cell::SLstm(c) => CellState::SLstm(c.zero_state()),
            Cell::MLstm(c) => CellState::MLstm(c.zero_state()),
            Cell::Lstm(c) => CellState::Lstm(c.zero_state()),
        }
    }

    fn step(&self, x: &Tensor, state: &CellState) -> Result<(Tensor, CellState)> {
        match (self, state) {
            (Cell::SLstm(c), CellState::SLstm(s)) => {
                let (h, s2) = c.step(x, s)?;
                Ok((h, CellState::SLstm(s2)))
            }
            (Cell::MLstm(c), CellState::MLstm(s)) => {
                let (h, s2) = c.step(x, s)?;
                Ok((h, CellState::MLstm(s2)))
            }
            (Cell::Lstm(c), CellState::Lstm(s)) => {
                let (h, s2) = c.step(x, s)?;
                Ok((h, CellState::Lstm(s2)))
            }
            _ => Err(CoreError::contract(
                "stack_step",
                "state kind does not match cell kind".to_string(),
            )),
        }
    }

    fn params(&self) -> NamedParams {
        match self {
            Cell::SLstm(c) => c.params(),
            Cell::MLstm(c) => c.params(),
            Cell::Lstm(c) => c.params(),
        }
    }
}

struct Block {
    ln1_gain: Tensor,
    ln1_bias: Tensor,
    cell: Cell,
    ln2_gain: Tensor,
    ln2_bias: Tensor,
    w_up: Tensor,
    b_up: Tensor,
    w_down: Tensor,
    b_down: Tensor,
    ln_eps: f64,
}

impl Block {
    fn new(
        kind: CellKind,
        d: usize,
        n_heads: usize,
        mlp_expansion: f64,
        ln_eps: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Block> {
        let d_up = ((d as f64 * mlp_expansion).round() as usize).max(1);
        Ok(Block {
            ln1_gain: Tensor::param(vec![d], vec![1.0; d])?,
            ln1_bias: zero_bias(d)?,
            cell: Cell::new(kind, d, n_heads, rng)?,
            ln2_gain: Tensor::param(vec![d], vec![1.0; d])?,
            ln2_bias: zero_bias(d)?,
            w_up: uniform_weight(d_up, d, rng)?,
            b_up: zero_bias(d_up)?,
            w_down: uniform_weight(d, d_up, rng)?,
            b_down: zero_bias(d)?,
            ln_eps,
        })
    }

    fn step(&self, x: &Tensor, state: &CellState) -> Result<(Tensor, CellState)> {
        let normed = x.layer_norm(&self.ln1_gain, &self.ln1_bias, self.ln_eps)?;
        let (cell_out, state_new) = self.cell.step(&normed, state)?;
        let u = x.add(&cell_out)?;
        let hidden = self
            .w_up
            .matmul(&u.layer_norm(&self.ln2_gain, &self.ln2_bias, self.ln_eps)?)?
            .add(&self.b_up)?
            .gelu()?;
        let mlp = self.w_down.matmul(&hidden)?.add(&self.b_down)?;
        let y = u.add(&mlp)?;
        Ok((y, state_new))
    }

    fn params(&self) -> NamedParams {
        let mut out = vec![
            ("ln1.gain".to_string(), self.ln1_gain.clone()),
            ("ln1.bias".to_string(), self.ln1_bias.clone()),
        ];
        for (name, p) in self.cell.params() {
            out.push((format!("cell.{name}"), p));
        }
        out.extend([
            ("ln2.gain".to_string(), self.ln2_gain.clone()),
            ("ln2.bias".to_string(), self.ln2_bias.clone()),
            ("mlp.w_up".to_string(), self.w_up.clone()),
            ("mlp.b_up".to_string(), self.b_up.clone()),
            ("mlp.w_down".to_string(), self.w_down.clone()),
            ("mlp.b_down".to_string(), self.b_down.clone()),
        ]);
        out
    }
}

pub struct BlockStack {
    blocks: Vec<Block>,
    embedding_dim: usize,
}

impl BlockStack {
    pub fn new(config: &BlockStackConfig, rng: &mut ChaCha8Rng) -> Result<BlockStack> {
        config.validate()?;
        let blocks = config
            .layers
            .iter()
            .map(|&kind| {
                Block::new(
                    kind,
                    config.embedding_dim,
                    config.n_heads,
                    config.mlp_expansion,
                    config.ln_eps,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BlockStack {
            blocks,
            embedding_dim: config.embedding_dim,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn zero_states(&self) -> Vec<CellState> {
        self.blocks.iter().map(|b| b.cell.zero_state()).collect()
    }

    /// Advances every block by one step. Input states are untouched; the
    /// returned vector holds each block's fresh state.
    pub fn step(&self, x: &Tensor, states: &[CellState]) -> Result<(Tensor, Vec<CellState>)> {
        if states.len() != self.blocks.len() {
            return Err(CoreError::contract(
                "stack_step",
                format!(
                    "{} states passed for {} blocks",
                    states.len(),
                    self.blocks.len()
                ),
            ));
        }
        if x.shape() != [self.embedding_dim] {
            return Err(CoreError::dim(
                "stack_step",
                format!(
                    "input shape {:?}, expected [{}]",
                    x.shape(),
                    self.embedding_dim
                ),
            ));
        }
        let mut y = x.clone();
        let mut new_states = Vec::with_capacity(self.blocks.len());
        for (block, state) in self.blocks.iter().zip(states) {
            let (out, next) = block.step(&y, state)?;
            y = out;
            new_states.push(next);
        }
        Ok((y, new_states))
    }

    /// All parameters, layer-qualified as `blocks.{i}.{name}`.
    pub fn params(&self) -> NamedParams {
        let mut out = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            for (name, p) in block.params() {
                out.push((format!("blocks.{i}.{name}"), p));
            }
        }
        out
    }
}
