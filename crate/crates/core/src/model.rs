//! GMF and MLP rating predictors over user/item embeddings.
//!
//! Both models take a user latent vector rather than a user index, so the same
//! forward pass serves individual users (one-hot input) and groups (weighted
//! multi-hot input). GMF feeds `l_u * l_i` (elementwise) to a single linear
//! unit; MLP feeds `[l_u, l_i]` to a ReLU tower with a linear output.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aggregation::AggregationWeights;
use crate::data::RatingsDataset;
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamConfig, AdamState, DenseLayer};

pub const EMBEDDING_INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelType {
    Gmf,
    Mlp,
}

impl ModelType {
    pub fn name(self) -> &'static str {
        match self {
            ModelType::Gmf => "gmf",
            ModelType::Mlp => "mlp",
        }
    }

    fn tag(self) -> u8 {
        match self {
            ModelType::Gmf => 0,
            ModelType::Mlp => 1,
        }
    }
}

impl fmt::Display for ModelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gmf" => Ok(ModelType::Gmf),
            "mlp" => Ok(ModelType::Mlp),
            other => Err(Error::Config(format!(
                "unknown model {other:?} (expected gmf or mlp)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn from_values(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape(
                "embedding dimension must be at least 1".into(),
            ));
        }
        if values.len() != rows * dim {
            return Err(Error::Shape(format!(
                "{rows}x{dim} embedding given {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding value".into()));
        }
        Ok(EmbeddingMatrix { rows, dim, values })
    }

    pub fn uniform<R: Rng + ?Sized>(rows: usize, dim: usize, range: f64, rng: &mut R) -> Self {
        let values = (0..rows * dim)
            .map(|_| rng.gen_range(-range..range))
            .collect();
        EmbeddingMatrix { rows, dim, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, index: u32) -> Result<&[f64]> {
        let i = index as usize;
        if i >= self.rows {
            return Err(Error::IndexOutOfRange {
                what: "embedding row",
                index: i,
                len: self.rows,
            });
        }
        Ok(&self.values[i * self.dim..(i + 1) * self.dim])
    }

    /// `sum_u w_u * l_u`, accumulated in ascending member order.
    pub fn embed_weighted(&self, weights: &AggregationWeights) -> Result<Vec<f64>> {
        weighted_sum(self, weights.entries())
    }
}

fn weighted_sum(emb: &EmbeddingMatrix, entries: &[(u32, f64)]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; emb.dim];
    for &(u, w) in entries {
        for (o, v) in out.iter_mut().zip(emb.row(u)?) {
            *o += w * v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub factors: usize,
    pub mlp_layers: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub test_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            factors: 8,
            mlp_layers: vec![32, 16, 8],
            learning_rate: 1e-2,
            batch_size: 64,
            epochs: 20,
            seed: 42,
            test_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factors == 0 {
            return Err(Error::Config("factors must be positive".into()));
        }
        if self.mlp_layers.contains(&0) {
            return Err(Error::Config("mlp layer widths must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("test fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One training (or gradient-check) example. `users` is the multi-hot user
/// input; a plain rating uses a single `(user, 1.0)` entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub users: Vec<(u32, f64)>,
    pub item: u32,
    pub target: f64,
}

impl Example {
    pub fn single(user: u32, item: u32, target: f64) -> Self {
        Example {
            users: vec![(user, 1.0)],
            item,
            target,
        }
    }
}

/// Gradients of a batch loss. Embedding gradients are kept only for the rows
/// the batch touched, in ascending row order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub user_rows: Vec<usize>,
    pub user_grads: Vec<f64>,
    pub item_rows: Vec<usize>,
    pub item_grads: Vec<f64>,
    pub head: Vec<(Vec<f64>, Vec<f64>)>,
}

fn scatter(rows: &[usize], grads: &[f64], dim: usize, total_rows: usize) -> Vec<f64> {
    let mut dense = vec![0.0; total_rows * dim];
    for (&r, g) in rows.iter().zip(grads.chunks_exact(dim)) {
        dense[r * dim..(r + 1) * dim].copy_from_slice(g);
    }
    dense
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    model_type: ModelType,
    user_embeddings: EmbeddingMatrix,
    item_embeddings: EmbeddingMatrix,
    head: Vec<DenseLayer>,
    score_min: f64,
    score_max: f64,
}

struct TowerTrace {
    inputs: Vec<Vec<f64>>,
    pres: Vec<Vec<f64>>,
}

impl ModelParams {
    pub fn new(
        model_type: ModelType,
        user_embeddings: EmbeddingMatrix,
        item_embeddings: EmbeddingMatrix,
        head: Vec<DenseLayer>,
        score_min: f64,
        score_max: f64,
    ) -> Result<Self> {
        let k = user_embeddings.dim();
        if item_embeddings.dim() != k {
            return Err(Error::Shape(format!(
                "user embedding dim {k} != item embedding dim {}",
                item_embeddings.dim()
            )));
        }
        let first_in = match model_type {
            ModelType::Gmf => k,
            ModelType::Mlp => 2 * k,
        };
        if head.is_empty() {
            return Err(Error::Shape("model head has no layers".into()));
        }
        if model_type == ModelType::Gmf
            && (head.len() != 1 || head[0].activation != Activation::Identity)
        {
            return Err(Error::Shape(
                "GMF head must be a single identity layer".into(),
            ));
        }
        let mut expected_in = first_in;
        for (n, layer) in head.iter().enumerate() {
            if layer.in_dim() != expected_in {
                return Err(Error::Shape(format!(
                    "layer {n} expects input {} but receives {expected_in}",
                    layer.in_dim()
                )));
            }
            expected_in = layer.out_dim();
        }
        if expected_in != 1 {
            return Err(Error::Shape(format!(
                "model output width {expected_in}, expected 1"
            )));
        }
        if score_min.partial_cmp(&score_max).is_none_or(|o| o.is_gt()) {
            return Err(Error::Shape(format!(
                "score range [{score_min}, {score_max}]"
            )));
        }
        Ok(ModelParams {
            model_type,
            user_embeddings,
            item_embeddings,
            head,
            score_min,
            score_max,
        })
    }

    /// Seeded initialization. Embeddings are `U(-0.05, 0.05)`, dense layers
    /// He-uniform, and the output bias starts at `output_bias` (training uses
    /// the mean train rating).
    pub fn init<R: Rng + ?Sized>(
        model_type: ModelType,
        users: usize,
        items: usize,
        config: &TrainConfig,
        score_range: (f64, f64),
        output_bias: f64,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let k = config.factors;
        let user_embeddings = EmbeddingMatrix::uniform(users, k, EMBEDDING_INIT_RANGE, rng);
        let item_embeddings = EmbeddingMatrix::uniform(items, k, EMBEDDING_INIT_RANGE, rng);
        let mut head = match model_type {
            ModelType::Gmf => vec![DenseLayer::he_uniform(k, 1, Activation::Identity, rng)],
            ModelType::Mlp => {
                let mut layers = Vec::with_capacity(config.mlp_layers.len() + 1);
                let mut width = 2 * k;
                for &w in &config.mlp_layers {
                    layers.push(DenseLayer::he_uniform(width, w, Activation::Relu, rng));
                    width = w;
                }
                layers.push(DenseLayer::he_uniform(width, 1, Activation::Identity, rng));
                layers
            }
        };
        head.last_mut().expect("non-empty head").bias[0] = output_bias;
        ModelParams::new(
            model_type,
            user_embeddings,
            item_embeddings,
            head,
            score_range.0,
            score_range.1,
        )
    }

    pub fn model_type(&self) -> ModelType {
        self.model_type
    }

    pub fn factors(&self) -> usize {
        self.user_embeddings.dim()
    }

    pub fn users(&self) -> usize {
        self.user_embeddings.rows()
    }

    pub fn items(&self) -> usize {
        self.item_embeddings.rows()
    }

    pub fn user_embeddings(&self) -> &EmbeddingMatrix {
        &self.user_embeddings
    }

    pub fn item_embeddings(&self) -> &EmbeddingMatrix {
        &self.item_embeddings
    }

    pub fn head(&self) -> &[DenseLayer] {
        &self.head
    }

    pub fn score_range(&self) -> (f64, f64) {
        (self.score_min, self.score_max)
    }

    pub fn clamp(&self, r: f64) -> f64 {
        r.clamp(self.score_min, self.score_max)
    }

    fn head_input(&self, user_latent: &[f64], item_latent: &[f64]) -> Vec<f64> {
        match self.model_type {
            ModelType::Gmf => user_latent
                .iter()
                .zip(item_latent)
                .map(|(u, i)| u * i)
                .collect(),
            ModelType::Mlp => user_latent.iter().chain(item_latent).copied().collect(),
        }
    }

    fn run_tower(&self, input: Vec<f64>) -> (f64, TowerTrace) {
        let mut trace = TowerTrace {
            inputs: Vec::with_capacity(self.head.len()),
            pres: Vec::with_capacity(self.head.len()),
        };
        let mut x = input;
        for layer in &self.head {
            let pre = layer.affine(&x);
            let out = match layer.activation {
                Activation::Identity => pre.clone(),
                Activation::Relu => pre.iter().map(|z| z.max(0.0)).collect(),
            };
            trace.inputs.push(x);
            trace.pres.push(pre);
            x = out;
        }
        (x[0], trace)
    }

    fn check_latent(&self, user_latent: &[f64]) -> Result<()> {
        if user_latent.len() != self.factors() {
            return Err(Error::Shape(format!(
                "user latent of length {}, model has {} factors",
                user_latent.len(),
                self.factors()
            )));
        }
        Ok(())
    }

    /// Prediction for a user latent vector, without clamping.
    pub fn forward_raw(&self, user_latent: &[f64], item: u32) -> Result<f64> {
        self.check_latent(user_latent)?;
        let item_latent = self.item_embeddings.row(item)?;
        let mut x = self.head_input(user_latent, item_latent);
        for layer in &self.head {
            x = layer.forward(&x)?;
        }
        Ok(x[0])
    }

    /// Prediction clamped to the training score range.
    pub fn forward(&self, user_latent: &[f64], item: u32) -> Result<f64> {
        self.forward_raw(user_latent, item).map(|r| self.clamp(r))
    }

    pub fn predict_raw(&self, user: u32, item: u32) -> Result<f64> {
        self.forward_raw(self.user_embeddings.row(user)?, item)
    }

    pub fn predict(&self, user: u32, item: u32) -> Result<f64> {
        self.predict_raw(user, item).map(|r| self.clamp(r))
    }

    /// Mean squared error of raw predictions over a batch.
    pub fn batch_loss(&self, batch: &[Example]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let mut total = 0.0;
        for ex in batch {
            let latent = weighted_sum(&self.user_embeddings, &ex.users)?;
            let err = self.forward_raw(&latent, ex.item)? - ex.target;
            total += err * err;
        }
        Ok(total / batch.len() as f64)
    }

    /// Batch MSE and its exact gradient with respect to every parameter.
    pub fn batch_loss_and_grads(&self, batch: &[Example]) -> Result<(f64, ModelGrads)> {
        if batch.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let k = self.factors();
        let scale = 2.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut user_acc: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut item_acc: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut head: Vec<(Vec<f64>, Vec<f64>)> = self
            .head
            .iter()
            .map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
            .collect();

        for ex in batch {
            let user_latent = weighted_sum(&self.user_embeddings, &ex.users)?;
            let item_latent = self.item_embeddings.row(ex.item)?;
            let (pred, trace) = self.run_tower(self.head_input(&user_latent, item_latent));
            let err = pred - ex.target;
            loss += err * err;

            let mut upstream = vec![scale * err];
            for (n, layer) in self.head.iter().enumerate().rev() {
                let g = layer.backward_from_pre(&trace.inputs[n], &trace.pres[n], &upstream);
                for (acc, v) in head[n].0.iter_mut().zip(&g.weight) {
                    *acc += v;
                }
                for (acc, v) in head[n].1.iter_mut().zip(&g.bias) {
                    *acc += v;
                }
                upstream = g.input;
            }
            let (d_user, d_item): (Vec<f64>, Vec<f64>) = match self.model_type {
                ModelType::Gmf => (
                    upstream
                        .iter()
                        .zip(item_latent)
                        .map(|(g, i)| g * i)
                        .collect(),
                    upstream
                        .iter()
                        .zip(&user_latent)
                        .map(|(g, u)| g * u)
                        .collect(),
                ),
                ModelType::Mlp => (upstream[..k].to_vec(), upstream[k..].to_vec()),
            };
            for &(u, w) in &ex.users {
                let acc = user_acc.entry(u as usize).or_insert_with(|| vec![0.0; k]);
                for (a, d) in acc.iter_mut().zip(&d_user) {
                    *a += w * d;
                }
            }
            let acc = item_acc
                .entry(ex.item as usize)
                .or_insert_with(|| vec![0.0; k]);
            for (a, d) in acc.iter_mut().zip(&d_item) {
                *a += d;
            }
        }

        let (user_rows, user_grads) = flatten_rows(user_acc);
        let (item_rows, item_grads) = flatten_rows(item_acc);
        Ok((
            loss / batch.len() as f64,
            ModelGrads {
                user_rows,
                user_grads,
                item_rows,
                item_grads,
                head,
            },
        ))
    }

    pub fn param_count(&self) -> usize {
        self.user_embeddings.values.len()
            + self.item_embeddings.values.len()
            + self.head.iter().map(DenseLayer::param_count).sum::<usize>()
    }

    /// All parameters in checkpoint order: user embeddings, item embeddings,
    /// then each layer's weights followed by its biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(&self.user_embeddings.values);
        out.extend_from_slice(&self.item_embeddings.values);
        for layer in &self.head {
            out.extend_from_slice(&layer.weight);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} parameters given, model has {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut rest = params;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        take(&mut self.user_embeddings.values);
        take(&mut self.item_embeddings.values);
        for layer in &mut self.head {
            take(&mut layer.weight);
            take(&mut layer.bias);
        }
        Ok(())
    }

    /// Dense gradient vector aligned with [`ModelParams::params_flat`].
    pub fn grads_flat(&self, grads: &ModelGrads) -> Vec<f64> {
        let k = self.factors();
        let mut out = scatter(&grads.user_rows, &grads.user_grads, k, self.users());
        out.extend(scatter(
            &grads.item_rows,
            &grads.item_grads,
            k,
            self.items(),
        ));
        for (w, b) in &grads.head {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    fn all_finite(&self) -> bool {
        self.params_flat().iter().all(|v| v.is_finite())
    }
}

fn flatten_rows(acc: BTreeMap<usize, Vec<f64>>) -> (Vec<usize>, Vec<f64>) {
    let mut rows = Vec::with_capacity(acc.len());
    let mut grads = Vec::new();
    for (r, g) in acc {
        rows.push(r);
        grads.extend(g);
    }
    (rows, grads)
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: ModelParams,
    /// Mean squared error over each epoch's batches, in order.
    pub epoch_losses: Vec<f64>,
}

struct Optimizers {
    users: AdamState,
    items: AdamState,
    head: Vec<(AdamState, AdamState)>,
}

/// Mini-batch Adam on the mean squared error of individual train ratings.
///
/// Embedding rows are updated only when they appear in the batch. The run is
/// fully determined by `config.seed`.
pub fn train(
    dataset: &RatingsDataset,
    model_type: ModelType,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    let examples: Vec<(u32, u32, f64)> =
        dataset.train().map(|r| (r.user, r.item, r.value)).collect();
    if examples.is_empty() {
        return Err(Error::Config("train split is empty".into()));
    }
    let mean = examples.iter().map(|e| e.2).sum::<f64>() / examples.len() as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = ModelParams::init(
        model_type,
        dataset.users(),
        dataset.items(),
        config,
        (dataset.score_min(), dataset.score_max()),
        mean,
        &mut rng,
    )?;
    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut opt = Optimizers {
        users: AdamState::new(model.user_embeddings.values.len(), adam),
        items: AdamState::new(model.item_embeddings.values.len(), adam),
        head: model
            .head
            .iter()
            .map(|l| {
                (
                    AdamState::new(l.weight.len(), adam),
                    AdamState::new(l.bias.len(), adam),
                )
            })
            .collect(),
    };

    let k = model.factors();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut weighted_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Example> = chunk
                .iter()
                .map(|&n| {
                    let (u, i, r) = examples[n];
                    Example::single(u, i, r)
                })
                .collect();
            let (loss, grads) = model.batch_loss_and_grads(&batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {loss} in epoch {}; aborting",
                    epoch + 1
                )));
            }
            weighted_loss += loss * chunk.len() as f64;
            opt.users.step_rows(
                &mut model.user_embeddings.values,
                &grads.user_rows,
                &grads.user_grads,
                k,
            )?;
            opt.items.step_rows(
                &mut model.item_embeddings.values,
                &grads.item_rows,
                &grads.item_grads,
                k,
            )?;
            for ((layer, (w_opt, b_opt)), (gw, gb)) in
                model.head.iter_mut().zip(&mut opt.head).zip(&grads.head)
            {
                w_opt.step(&mut layer.weight, gw)?;
                b_opt.step(&mut layer.bias, gb)?;
            }
        }
        let epoch_loss = weighted_loss / examples.len() as f64;
        if !epoch_loss.is_finite() || !model.all_finite() {
            return Err(Error::NonFinite(format!(
                "epoch {} ended with loss {epoch_loss}",
                epoch + 1
            )));
        }
        info!("{model_type} epoch {:>3} loss {epoch_loss:.6}", epoch + 1);
        epoch_losses.push(epoch_loss);
    }
    Ok(TrainedModel {
        params: model,
        epoch_losses,
    })
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GREC";
pub const CHECKPOINT_VERSION: u8 = 1;

impl ModelParams {
    /// Binary checkpoint: magic, version byte, model-type byte, u32 header
    /// fields, f32 parameters in [`ModelParams::params_flat`] order, then the
    /// score range as f64. All little-endian.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 4 * self.param_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.push(self.model_type.tag());
        for v in [self.users(), self.items(), self.factors(), self.head.len()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for layer in &self.head {
            out.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
        }
        for v in self.params_flat() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.extend_from_slice(&self.score_min.to_le_bytes());
        out.extend_from_slice(&self.score_max.to_le_bytes());
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let version = r.take(1)?[0];
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let model_type = match r.take(1)?[0] {
            0 => ModelType::Gmf,
            1 => ModelType::Mlp,
            t => return Err(Error::Checkpoint(format!("unknown model type byte {t}"))),
        };
        let users = r.u32()? as usize;
        let items = r.u32()? as usize;
        let k = r.u32()? as usize;
        let layer_count = r.u32()? as usize;
        if k == 0 || layer_count == 0 {
            return Err(Error::Checkpoint("zero factors or zero layers".into()));
        }
        let widths = (0..layer_count)
            .map(|_| r.u32().map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        let user_values = r.f32s(users.checked_mul(k).ok_or_else(overflow)?)?;
        let item_values = r.f32s(items.checked_mul(k).ok_or_else(overflow)?)?;
        let mut head = Vec::with_capacity(layer_count);
        let mut in_dim = match model_type {
            ModelType::Gmf => k,
            ModelType::Mlp => 2 * k,
        };
        for (n, &out_dim) in widths.iter().enumerate() {
            let weight = r.f32s(in_dim.checked_mul(out_dim).ok_or_else(overflow)?)?;
            let bias = r.f32s(out_dim)?;
            let activation = if n + 1 == layer_count {
                Activation::Identity
            } else {
                Activation::Relu
            };
            head.push(DenseLayer::from_parts(
                in_dim, out_dim, weight, bias, activation,
            )?);
            in_dim = out_dim;
        }
        let score_min = r.f64()?;
        let score_max = r.f64()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after parameters",
                bytes.len() - r.pos
            )));
        }
        let users_emb = EmbeddingMatrix::from_values(users, k, user_values)?;
        let items_emb = EmbeddingMatrix::from_values(items, k, item_values)?;
        ModelParams::new(model_type, users_emb, items_emb, head, score_min, score_max)
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}

fn overflow() -> Error {
    Error::Checkpoint("header sizes overflow".into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "truncated file: needed {n} bytes at offset {}",
                    self.pos
                ))
            })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(overflow)?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }
}
