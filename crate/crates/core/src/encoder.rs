//! Siamese convolutional sentence encoder.
//!
//! One [`EncoderModel`] is applied to the query and to every document, so the
//! branches of the Siamese network share parameters by construction: there
//! is exactly one copy of the filters.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::SentenceMatrix;
use crate::numerics::{
    conv1d_wide, conv1d_wide_backward, dropout, max_pool, Differentiable, Matrix, ParamStore,
};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub size: usize,
    pub copies: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embedding_dim: usize,
    pub filters: Vec<FilterSpec>,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embedding_dim: 300,
            filters: [3, 4, 5]
                .into_iter()
                .map(|size| FilterSpec { size, copies: 10 })
                .collect(),
            dropout: 0.5,
        }
    }
}

impl EncoderConfig {
    /// Number of pooled features, one per filter copy.
    pub fn output_dim(&self) -> usize {
        self.filters.iter().map(|f| f.copies).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if self.filters.is_empty() {
            return Err(Error::Config("at least one filter size is required".into()));
        }
        for f in &self.filters {
            if f.size == 0 || f.copies == 0 {
                return Err(Error::Config(format!(
                    "filter size and copies must be >= 1, got {}x{}",
                    f.size, f.copies
                )));
            }
        }
        if self.filters.windows(2).any(|w| w[0].size >= w[1].size) {
            return Err(Error::Config(
                "filter sizes must be distinct and listed in ascending order".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

pub fn weight_slot(size: usize) -> String {
    format!("conv{size}.weight")
}

pub fn bias_slot(size: usize) -> String {
    format!("conv{size}.bias")
}

/// Forward-pass record of one branch, enough to run its backward pass.
#[derive(Clone, Debug)]
pub struct EncodeTrace {
    /// Position of the pooled window in the wide-convolution output, per unit.
    pub argmax: Vec<usize>,
    /// Pre-activation value at that position, per unit.
    pub preact: Vec<f64>,
    /// Dropout multipliers applied after pooling.
    pub mask: Vec<f64>,
}

#[derive(Debug)]
pub struct EncoderModel {
    config: EncoderConfig,
    pub params: ParamStore,
    passes: AtomicU64,
}

impl Clone for EncoderModel {
    fn clone(&self) -> Self {
        EncoderModel {
            config: self.config.clone(),
            params: self.params.clone(),
            passes: AtomicU64::new(self.forward_passes()),
        }
    }
}

/// Glorot-uniform filters (fan-in `m * d`, fan-out 1) and zero biases.
pub fn init_encoder(config: EncoderConfig, seed: u64) -> Result<EncoderModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.embedding_dim;
    let mut params = ParamStore::new();
    for f in &config.filters {
        let fan_in = (f.size * d) as f64;
        let limit = (6.0 / (fan_in + 1.0)).sqrt();
        let data = (0..f.copies * f.size * d)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        params.insert(weight_slot(f.size), Matrix::from_vec(f.copies, f.size * d, data)?);
        params.insert(bias_slot(f.size), Matrix::zeros(f.copies, 1));
    }
    Ok(EncoderModel {
        config,
        params,
        passes: AtomicU64::new(0),
    })
}

impl EncoderModel {
    /// Rebuilds a model from stored parameters, checking every slot's shape.
    pub fn from_params(config: EncoderConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let d = config.embedding_dim;
        for f in &config.filters {
            let w = params.slot(&weight_slot(f.size))?;
            let b = params.slot(&bias_slot(f.size))?;
            if w.value.shape() != (f.copies, f.size * d) || b.value.shape() != (f.copies, 1) {
                return Err(Error::dim(
                    "EncoderModel::from_params",
                    format!("filter {}x{} with {} copies", f.size, d, f.copies),
                    format!("stored {:?} / {:?}", w.value.shape(), b.value.shape()),
                ));
            }
        }
        Ok(EncoderModel {
            config,
            params,
            passes: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// Number of [`encode`](Self::encode) calls made on this model so far.
    pub fn forward_passes(&self) -> u64 {
        self.passes.load(Ordering::Relaxed)
    }

    fn filter(&self, size: usize, copy: usize) -> Result<(Matrix, f64)> {
        let d = self.config.embedding_dim;
        let w = &self.params.slot(&weight_slot(size))?.value;
        let b = self.params.slot(&bias_slot(size))?.value.get(copy, 0);
        Ok((Matrix::from_vec(size, d, w.row(copy).to_vec())?, b))
    }

    /// Encodes one sentence: wide convolution, ReLU and max-pooling per filter
    /// copy (size-major, copy-minor), then dropout in train mode.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        s: &SentenceMatrix,
        train_mode: bool,
        rng: &mut R,
    ) -> Result<(Vec<f64>, EncodeTrace)> {
        let d = self.config.embedding_dim;
        if s.dim() != d {
            return Err(Error::dim(
                "encode",
                format!("filters of width {d}"),
                format!("sentence matrix {}x{}", s.rows(), s.dim()),
            ));
        }
        self.passes.fetch_add(1, Ordering::Relaxed);

        // Windows lying wholly in the zero padding all evaluate to the bias and
        // come after every window touching a real row, so convolving the valid
        // prefix and appending one bias-valued slot reproduces the pooled
        // result of the full convolution, argmax included.
        let valid = s.valid_rows.min(s.rows());
        let prefix = Matrix::from_vec(valid, d, s.matrix.as_slice()[..valid * d].to_vec())?;
        let has_padding_window = s.rows() > valid;

        let f_dim = self.output_dim();
        let mut pooled = Vec::with_capacity(f_dim);
        let mut argmax = Vec::with_capacity(f_dim);
        let mut preact = Vec::with_capacity(f_dim);
        for spec in &self.config.filters {
            for c in 0..spec.copies {
                let (filter, bias) = self.filter(spec.size, c)?;
                let v = conv1d_wide(&prefix, &filter, bias)?;
                let (mut best, mut pos) = max_pool(&v);
                if v.is_empty() || (has_padding_window && bias > best) {
                    best = bias;
                    pos = v.len();
                }
                argmax.push(pos);
                preact.push(best);
                pooled.push(best.max(0.0));
            }
        }
        let (features, mask) = dropout(&pooled, self.config.dropout, rng, train_mode)?;
        Ok((features, EncodeTrace { argmax, preact, mask }))
    }

    /// Accumulates parameter gradients for one branch given `dL/dfeatures`,
    /// and optionally `dL/dS` into `grad_input`.
    pub fn backward(
        &mut self,
        s: &SentenceMatrix,
        trace: &EncodeTrace,
        upstream: &[f64],
        mut grad_input: Option<&mut Matrix>,
    ) -> Result<()> {
        let f_dim = self.output_dim();
        if upstream.len() != f_dim || trace.argmax.len() != f_dim {
            return Err(Error::dim(
                "EncoderModel::backward",
                format!("{f_dim} features"),
                format!("upstream {} / trace {}", upstream.len(), trace.argmax.len()),
            ));
        }
        let specs = self.config.filters.clone();
        let mut unit = 0;
        for spec in &specs {
            let out_len = s.rows() + spec.size - 1;
            for c in 0..spec.copies {
                let g = upstream[unit] * trace.mask[unit];
                if g != 0.0 && trace.preact[unit] > 0.0 {
                    let (filter, _) = self.filter(spec.size, c)?;
                    let mut one_hot = vec![0.0; out_len];
                    one_hot[trace.argmax[unit]] = g;
                    let row_len = spec.size * self.config.embedding_dim;
                    let mut gw = vec![0.0; row_len];
                    let mut gb = 0.0;
                    conv1d_wide_backward(
                        &s.matrix,
                        &filter,
                        &one_hot,
                        &mut gw,
                        &mut gb,
                        grad_input.as_deref_mut(),
                    )?;
                    let wslot = self.params.slot_mut(&weight_slot(spec.size))?;
                    for (a, x) in wslot.grad.row_mut(c).iter_mut().zip(&gw) {
                        *a += x;
                    }
                    let bslot = self.params.slot_mut(&bias_slot(spec.size))?;
                    let cur = bslot.grad.get(c, 0);
                    bslot.grad.set(c, 0, cur + gb);
                }
                unit += 1;
            }
        }
        Ok(())
    }
}

impl Differentiable for EncoderModel {
    fn param_stores(&self) -> Vec<&ParamStore> {
        vec![&self.params]
    }

    fn param_stores_mut(&mut self) -> Vec<&mut ParamStore> {
        vec![&mut self.params]
    }
}

/// Element-wise squared difference `(v_q - v_d)^2`.
pub fn join_phi(v_q: &[f64], v_d: &[f64]) -> Result<Vec<f64>> {
    if v_q.len() != v_d.len() {
        return Err(Error::dim("join_phi", v_q.len(), v_d.len()));
    }
    Ok(v_q.iter().zip(v_d).map(|(a, b)| (a - b) * (a - b)).collect())
}

/// Gradients of [`join_phi`] with respect to `v_q` and `v_d`.
pub fn join_phi_backward(v_q: &[f64], v_d: &[f64], upstream: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let gq: Vec<f64> = v_q
        .iter()
        .zip(v_d)
        .zip(upstream)
        .map(|((a, b), g)| 2.0 * (a - b) * g)
        .collect();
    let gd = gq.iter().map(|x| -x).collect();
    (gq, gd)
}
