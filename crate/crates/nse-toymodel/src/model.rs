// SPDX-License-Identifier: MIT OR Apache-2.0

//! The planner and its forward pass.
//!
//! Each of the `L` blocks mixes positions by causal mean pooling and then
//! applies a tanh MLP with a residual connection:
//!
//! ```text
//! mix_i = h_i + mean_{j ≤ i} h_j
//! k_i   = tanh(W1 · mix_i)
//! h_i  ← h_i + W2 · k_i
//! ```
//!
//! The next-token distribution is `softmax(U · h_last)`. `W2` of a block is
//! the editable key→value memory; `k_i` are its keys.
//!
//! Products are evaluated row by row with the inner index summed in
//! ascending order, so a prompt's activations at position `i` are
//! bit-identical to those of its length-`i+1` prefix.

use nse_tensor::{dot, Matrix};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{ModelError, Result};

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub d_model: usize,
    pub d_hidden: usize,
    pub vocab: usize,
    pub layers: usize,
    pub seed: u64,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            d_hidden: 64,
            vocab: 64,
            layers: 8,
            seed: DEFAULT_SEED,
            activation: Activation::Tanh,
        }
    }
}

impl PlannerConfig {
    /// # Errors
    ///
    /// [`ModelError::InvalidConfig`] when a count is zero or `vocab < 4`.
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("d_model", self.d_model),
            ("d_hidden", self.d_hidden),
            ("layers", self.layers),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!(
                    "{name} must be at least 1"
                )));
            }
        }
        if self.vocab < 4 {
            return Err(ModelError::InvalidConfig(format!(
                "vocab must be at least 4, got {}",
                self.vocab
            )));
        }
        Ok(())
    }
}

/// One residual MLP block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    w1: Matrix,
    w2: Matrix,
    w1t: Matrix,
    w2t: Matrix,
}

impl Block {
    fn new(w1: Matrix, w2: Matrix) -> Self {
        let w1t = w1.transpose();
        let w2t = w2.transpose();
        Self { w1, w2, w1t, w2t }
    }

    /// `W1`, `d_hidden × d_model`.
    pub fn w1(&self) -> &Matrix {
        &self.w1
    }

    /// `W2`, `d_model × d_hidden`: the editable memory.
    pub fn w2(&self) -> &Matrix {
        &self.w2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPlanner {
    config: PlannerConfig,
    embed: Matrix,
    blocks: Vec<Block>,
    unembed: Matrix,
}

/// Where a restoration writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Site {
    /// Residual stream after the block.
    Hidden,
    /// MLP activation inside the block.
    Key,
}

/// Overwrite activations at `layer` and `positions` with those of `source`.
#[derive(Debug, Clone, Copy)]
pub struct Restore<'a> {
    pub site: Site,
    pub layer: usize,
    pub positions: &'a [usize],
    pub source: &'a ForwardTrace,
}

/// Interventions applied during a forward pass.
#[derive(Debug, Clone, Default)]
pub struct Intervention<'a> {
    /// Added to the token embeddings, `len × d_model`.
    pub embed_noise: Option<&'a Matrix>,
    pub restores: Vec<Restore<'a>>,
    /// Replace block `layer`'s MLP output at the final position.
    pub forced_output: Option<(usize, &'a [f64])>,
}

/// Activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Per layer, the `len × d_model` residual stream after the block.
    pub hidden: Vec<Matrix>,
    /// Per layer, the `len × d_hidden` MLP activations.
    pub keys: Vec<Matrix>,
    /// Final-position logits.
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.hidden.first().map_or(0, Matrix::rows)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hidden_at(&self, layer: usize, pos: usize) -> &[f64] {
        self.hidden[layer].row(pos)
    }

    pub fn key_at(&self, layer: usize, pos: usize) -> &[f64] {
        self.keys[layer].row(pos)
    }

    /// Final-position key at `layer`.
    pub fn final_key(&self, layer: usize) -> &[f64] {
        self.key_at(layer, self.len() - 1)
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.logits)
    }

    /// `z[token] − max_{j ≠ token} z[j]`.
    pub fn margin(&self, token: usize) -> f64 {
        logit_margin(&self.logits, token)
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `z[token] − max_{j ≠ token} z[j]`.
pub fn logit_margin(z: &[f64], token: usize) -> f64 {
    let other = z
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != token)
        .map(|(_, &x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    z[token] - other
}

/// Max-subtracted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn gaussian_matrix<R: rand::Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let scale = 1.0 / (cols as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

/// Fresh planner with Gaussian weights scaled by `1/√fan_in`.
///
/// Draw order: embedding, then `W1`, `W2` per block, then unembedding, all
/// from the `"init"` stream of the configured seed.
///
/// # Errors
///
/// [`ModelError::InvalidConfig`].
pub fn init_planner(cfg: &PlannerConfig) -> Result<ToyPlanner> {
    cfg.validate()?;
    let mut rng = seed::stream(cfg.seed, "init");
    let embed = gaussian_matrix(&mut rng, cfg.vocab, cfg.d_model);
    let mut blocks = Vec::with_capacity(cfg.layers);
    for _ in 0..cfg.layers {
        let w1 = gaussian_matrix(&mut rng, cfg.d_hidden, cfg.d_model);
        let w2 = gaussian_matrix(&mut rng, cfg.d_model, cfg.d_hidden);
        blocks.push(Block::new(w1, w2));
    }
    let unembed = gaussian_matrix(&mut rng, cfg.vocab, cfg.d_model);
    Ok(ToyPlanner {
        config: *cfg,
        embed,
        blocks,
        unembed,
    })
}

fn expect_shape(what: &'static str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.shape() == (rows, cols) {
        Ok(())
    } else {
        Err(ModelError::DimMismatch {
            what,
            expected: (rows, cols),
            found: m.shape(),
        })
    }
}

impl ToyPlanner {
    /// Assemble a planner from explicit weights.
    ///
    /// # Errors
    ///
    /// [`ModelError::InvalidConfig`], [`ModelError::DimMismatch`],
    /// [`ModelError::NonFinite`].
    pub fn from_parts(
        config: PlannerConfig,
        embed: Matrix,
        blocks: Vec<(Matrix, Matrix)>,
        unembed: Matrix,
    ) -> Result<Self> {
        config.validate()?;
        let c = &config;
        expect_shape("embed", &embed, c.vocab, c.d_model)?;
        expect_shape("unembed", &unembed, c.vocab, c.d_model)?;
        if blocks.len() != c.layers {
            return Err(ModelError::InvalidConfig(format!(
                "{} blocks supplied for {} layers",
                blocks.len(),
                c.layers
            )));
        }
        for (w1, w2) in &blocks {
            expect_shape("w1", w1, c.d_hidden, c.d_model)?;
            expect_shape("w2", w2, c.d_model, c.d_hidden)?;
        }
        let all_finite = embed.is_finite()
            && unembed.is_finite()
            && blocks.iter().all(|(a, b)| a.is_finite() && b.is_finite());
        if !all_finite {
            return Err(ModelError::NonFinite);
        }
        Ok(Self {
            config,
            embed,
            blocks: blocks.into_iter().map(|(a, b)| Block::new(a, b)).collect(),
            unembed,
        })
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    pub fn layers(&self) -> usize {
        self.blocks.len()
    }

    pub fn embed(&self) -> &Matrix {
        &self.embed
    }

    pub fn unembed(&self) -> &Matrix {
        &self.unembed
    }

    pub fn block(&self, layer: usize) -> &Block {
        &self.blocks[layer]
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// # Errors
    ///
    /// [`ModelError::LayerOutOfRange`].
    pub fn check_layer(&self, layer: usize) -> Result<()> {
        if layer < self.layers() {
            Ok(())
        } else {
            Err(ModelError::LayerOutOfRange {
                layer,
                layers: self.layers(),
            })
        }
    }

    /// # Errors
    ///
    /// [`ModelError::EmptyPrompt`], [`ModelError::TokenOutOfRange`].
    pub fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(ModelError::EmptyPrompt);
        }
        let vocab = self.config.vocab;
        match tokens.iter().find(|&&t| t >= vocab) {
            Some(&token) => Err(ModelError::TokenOutOfRange { token, vocab }),
            None => Ok(()),
        }
    }

    /// Copy with `W2` at `layer` replaced.
    ///
    /// # Errors
    ///
    /// [`ModelError::LayerOutOfRange`], [`ModelError::DimMismatch`],
    /// [`ModelError::NonFinite`].
    pub fn with_w2(&self, layer: usize, w2: Matrix) -> Result<Self> {
        self.check_layer(layer)?;
        expect_shape("w2", &w2, self.config.d_model, self.config.d_hidden)?;
        if !w2.is_finite() {
            return Err(ModelError::NonFinite);
        }
        let mut out = self.clone();
        let w1 = out.blocks[layer].w1.clone();
        out.blocks[layer] = Block::new(w1, w2);
        Ok(out)
    }

    /// Token embeddings of a prompt, `len × d_model`.
    fn embed_tokens(&self, tokens: &[usize]) -> Matrix {
        let d = self.config.d_model;
        let mut h = Matrix::zeros(tokens.len(), d);
        for (i, &t) in tokens.iter().enumerate() {
            h.row_mut(i).copy_from_slice(self.embed.row(t));
        }
        h
    }

    /// # Errors
    ///
    /// [`ModelError::EmptyPrompt`], [`ModelError::TokenOutOfRange`].
    pub fn forward(&self, tokens: &[usize]) -> Result<ForwardTrace> {
        self.forward_with(tokens, &Intervention::default())
    }

    /// Forward pass with interventions.
    ///
    /// # Errors
    ///
    /// Token errors, [`ModelError::LayerOutOfRange`] or
    /// [`ModelError::PositionOutOfRange`] for bad restorations, and
    /// [`ModelError::DimMismatch`] for a noise or forced-value shape error.
    pub fn forward_with(&self, tokens: &[usize], iv: &Intervention<'_>) -> Result<ForwardTrace> {
        self.check_tokens(tokens)?;
        let n = tokens.len();
        let mut h = self.embed_tokens(tokens);
        if let Some(noise) = iv.embed_noise {
            expect_shape("embedding noise", noise, n, self.config.d_model)?;
            h = h.add(noise)?;
        }
        for r in &iv.restores {
            self.check_layer(r.layer)?;
            if r.source.len() != n {
                return Err(ModelError::DimMismatch {
                    what: "restoration source length",
                    expected: (n, 0),
                    found: (r.source.len(), 0),
                });
            }
            if let Some(&pos) = r.positions.iter().find(|&&p| p >= n) {
                return Err(ModelError::PositionOutOfRange { pos, len: n });
            }
        }
        if let Some((layer, v)) = iv.forced_output {
            self.check_layer(layer)?;
            if v.len() != self.config.d_model {
                return Err(ModelError::DimMismatch {
                    what: "forced output",
                    expected: (self.config.d_model, 1),
                    found: (v.len(), 1),
                });
            }
        }

        let mut hidden = Vec::with_capacity(self.layers());
        let mut keys = Vec::with_capacity(self.layers());
        for (l, block) in self.blocks.iter().enumerate() {
            let mut key = block_keys(block, &h)?;
            for r in iv
                .restores
                .iter()
                .filter(|r| r.layer == l && r.site == Site::Key)
            {
                for &p in r.positions {
                    key.row_mut(p).copy_from_slice(r.source.key_at(l, p));
                }
            }
            let mut out = key.matmul(&block.w2t)?;
            if let Some((fl, v)) = iv.forced_output {
                if fl == l {
                    out.row_mut(n - 1).copy_from_slice(v);
                }
            }
            h = h.add(&out)?;
            for r in iv
                .restores
                .iter()
                .filter(|r| r.layer == l && r.site == Site::Hidden)
            {
                for &p in r.positions {
                    h.row_mut(p).copy_from_slice(r.source.hidden_at(l, p));
                }
            }
            hidden.push(h.clone());
            keys.push(key);
        }
        let logits = self.unembed.matvec(h.row(n - 1))?;
        let probs = softmax(&logits);
        Ok(ForwardTrace {
            hidden,
            keys,
            logits,
            probs,
        })
    }

    /// Run blocks `from..L` on the residual stream `h` entering block `from`
    /// and return the final-position logits.
    ///
    /// The last block is evaluated at the final position only; the result is
    /// bit-identical to a full pass.
    ///
    /// # Errors
    ///
    /// [`ModelError::LayerOutOfRange`] when `from > L`,
    /// [`ModelError::DimMismatch`] for a wrong residual width.
    pub fn resume(&self, from: usize, mut h: Matrix) -> Result<Vec<f64>> {
        if from > self.layers() {
            return Err(ModelError::LayerOutOfRange {
                layer: from,
                layers: self.layers(),
            });
        }
        if h.cols() != self.config.d_model || h.rows() == 0 {
            return Err(ModelError::DimMismatch {
                what: "residual stream",
                expected: (h.rows().max(1), self.config.d_model),
                found: h.shape(),
            });
        }
        let n = h.rows();
        let last = self.layers().saturating_sub(1);
        for l in from..self.layers() {
            let block = &self.blocks[l];
            if l == last {
                let mix = mix_rows(&h);
                let final_mix = Matrix::new(1, h.cols(), mix.row(n - 1).to_vec())?;
                let mut pre = final_mix.matmul(&block.w1t)?;
                for v in pre.row_mut(0) {
                    *v = v.tanh();
                }
                let out = pre.matmul(&block.w2t)?;
                for (a, b) in h.row_mut(n - 1).iter_mut().zip(out.row(0)) {
                    *a += b;
                }
            } else {
                let key = block_keys(block, &h)?;
                h = h.add(&key.matmul(&block.w2t)?)?;
            }
        }
        Ok(self.unembed.matvec(h.row(n - 1))?)
    }

    /// Next-token distribution at every position, `len × vocab`; row `i`
    /// equals the output for the prompt `tokens[..=i]`.
    ///
    /// # Errors
    ///
    /// Token errors.
    pub fn position_probs(&self, tokens: &[usize]) -> Result<Vec<Vec<f64>>> {
        let trace = self.forward(tokens)?;
        let h = &trace.hidden[self.layers() - 1];
        (0..tokens.len())
            .map(|i| Ok(softmax(&self.unembed.matvec(h.row(i))?)))
            .collect()
    }

    /// Final-position distributions for many prompts.
    ///
    /// Runs of prompts where each is a prefix of the next share one pass.
    ///
    /// # Errors
    ///
    /// Token errors.
    pub fn final_probs_batch(&self, prompts: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(prompts.len());
        for run in prefix_runs(prompts) {
            let longest = &prompts[*run.last().unwrap_or(&0)];
            let all = self.position_probs(longest)?;
            for &i in &run {
                out.push(all[prompts[i].len() - 1].clone());
            }
        }
        Ok(out)
    }
}

fn mix_rows(h: &Matrix) -> Matrix {
    let (n, d) = h.shape();
    let mut mix = Matrix::zeros(n, d);
    let mut sum = vec![0.0; d];
    for i in 0..n {
        let denom = (i + 1) as f64;
        let hr = h.row(i);
        for (s, &x) in sum.iter_mut().zip(hr) {
            *s += x;
        }
        for ((m, &x), &s) in mix.row_mut(i).iter_mut().zip(hr).zip(&sum) {
            *m = x + s / denom;
        }
    }
    mix
}

fn block_keys(block: &Block, h: &Matrix) -> Result<Matrix> {
    let mut key = mix_rows(h).matmul(&block.w1t)?;
    let n = key.rows();
    for i in 0..n {
        for v in key.row_mut(i) {
            *v = v.tanh();
        }
    }
    Ok(key)
}

/// Group consecutive indices where each prompt is a prefix of the next.
pub(crate) fn prefix_runs(prompts: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut runs: Vec<Vec<usize>> = Vec::new();
    for (i, p) in prompts.iter().enumerate() {
        let extends = i > 0 && {
            let prev = &prompts[i - 1];
            p.len() > prev.len() && p.starts_with(prev)
        };
        match runs.last_mut() {
            Some(run) if extends => run.push(i),
            _ => runs.push(vec![i]),
        }
    }
    runs
}

/// `W2 · k` at `layer`, matching the forward pass bit for bit.
pub(crate) fn block_output(model: &ToyPlanner, layer: usize, key: &[f64]) -> Vec<f64> {
    let w2 = model.block(layer).w2();
    (0..w2.rows()).map(|i| dot(w2.row(i), key)).collect()
}
