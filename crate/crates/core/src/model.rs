//! Desk-scale autoregressive text-to-pose regressor with hand-written
//! backpropagation.
//!
//! Tokens are mean-pooled into a context vector. A single tanh layer maps
//! `[context; previous pose; t / max_frames]` to a hidden state that feeds
//! three heads: the next pose, an EOS logit and a progress counter.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{composite_loss, eos_classification_loss, sigmoid, LossCoefficients};
use crate::posedata::{add_gaussian_noise, Dataset, PoseSequence, Split};
use crate::skeleton::{Pose, Skeleton};
use crate::termination::{counter_target, EosHead, EosPolarity, TerminationConfig, TerminationMode};
use crate::weighting::{BoneLambdas, JointWeights};
use crate::SeededRng;

const MAGIC: &[u8; 4] = b"SGKT";
const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub joints: usize,
}

impl ModelDims {
    fn input(&self) -> usize {
        self.embed + 3 * self.joints + 1
    }

    fn pose(&self) -> usize {
        3 * self.joints
    }
}

/// Offsets of each parameter block inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    emb: usize,
    w1: usize,
    b1: usize,
    wp: usize,
    bp: usize,
    we: usize,
    be: usize,
    wc: usize,
    bc: usize,
    len: usize,
}

impl Layout {
    fn new(d: &ModelDims) -> Self {
        let emb = 0;
        let w1 = emb + d.vocab * d.embed;
        let b1 = w1 + d.hidden * d.input();
        let wp = b1 + d.hidden;
        let bp = wp + d.pose() * d.hidden;
        let we = bp + d.pose();
        let be = we + d.hidden;
        let wc = be + 1;
        let bc = wc + d.hidden;
        Layout {
            emb,
            w1,
            b1,
            wp,
            bp,
            we,
            be,
            wc,
            bc,
            len: bc + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    vocabulary: Vec<String>,
    dims: ModelDims,
    max_frames: usize,
    params: Vec<f64>,
}

/// Outputs of one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub pose: Pose,
    pub hidden: Vec<f64>,
    pub eos_logit: f64,
    pub eos_prob: f64,
    pub counter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub coefficients: LossCoefficients,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default)]
    pub termination: TerminationConfig,
    /// Joint weights file; uniform weights when absent.
    #[serde(default)]
    pub weights_path: Option<PathBuf>,
    /// Bone lambdas file; uniform lambdas when absent.
    #[serde(default)]
    pub lambdas_path: Option<PathBuf>,
    #[serde(default = "default_embed")]
    pub embed_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    /// Sequences whose gradients are averaged per optimizer step.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from the base rate to zero over all steps.
    #[default]
    Cosine,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_epochs() -> usize {
    40
}
fn default_noise() -> f64 {
    0.01
}
fn default_embed() -> usize {
    16
}
fn default_hidden() -> usize {
    64
}
fn default_batch() -> usize {
    4
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        TrainConfig {
            seed,
            learning_rate: default_lr(),
            epochs: default_epochs(),
            coefficients: LossCoefficients::default(),
            noise_std: default_noise(),
            termination: TerminationConfig::default(),
            weights_path: None,
            lambdas_path: None,
            embed_dim: default_embed(),
            hidden_dim: default_hidden(),
            batch_size: default_batch(),
            lr_schedule: LrSchedule::default(),
        }
    }

    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: TrainConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("embed_dim and hidden_dim must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::Config("noise_std must be finite and >= 0".into()));
        }
        self.coefficients.validate()?;
        self.termination.validate()
    }
}

/// Everything the training objective needs besides the model.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub skeleton: &'a Skeleton,
    pub weights: &'a JointWeights,
    pub lambdas: &'a BoneLambdas,
    pub coefficients: LossCoefficients,
    pub mode: TerminationMode,
    pub polarity: EosPolarity,
}

/// Unweighted loss terms of one sequence (or their epoch means).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub mse: f64,
    pub bone: f64,
    pub pose: f64,
    /// EOS cross-entropy, or counter squared error in counter mode.
    pub eos: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<LossTerms>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,total,mse,bone,pose,eos\n");
        for (i, e) in self.epochs.iter().enumerate() {
            s.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                i + 1,
                e.total,
                e.mse,
                e.bone,
                e.pose,
                e.eos
            ));
        }
        s
    }
}

struct StepCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
}

impl ToyModel {
    /// Parameters drawn uniformly from `[-0.1, 0.1]`.
    pub fn init(vocabulary: Vec<String>, joints: usize, max_frames: usize, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut m = ToyModel::zeros(vocabulary, config.embed_dim, config.hidden_dim, joints, max_frames)?;
        let mut rng = SeededRng::seed_from_u64(config.seed);
        for p in &mut m.params {
            *p = rng.random_range(-0.1..=0.1);
        }
        Ok(m)
    }

    /// All-zero parameters. The vocabulary is sorted and de-duplicated.
    pub fn zeros(mut vocabulary: Vec<String>, embed: usize, hidden: usize, joints: usize, max_frames: usize) -> Result<Self> {
        vocabulary.sort();
        vocabulary.dedup();
        if embed == 0 || hidden == 0 || joints == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if vocabulary.is_empty() {
            return Err(Error::invalid("model vocabulary is empty"));
        }
        if max_frames == 0 {
            return Err(Error::invalid("max_frames must be at least 1"));
        }
        let dims = ModelDims {
            vocab: vocabulary.len(),
            embed,
            hidden,
            joints,
        };
        Ok(ToyModel {
            vocabulary,
            dims,
            max_frames,
            params: vec![0.0; Layout::new(&dims).len],
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn max_frames(&self) -> usize {
        self.max_frames
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Replaces the parameter vector; its length must match the layout.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::Shape {
                context: "model parameters".into(),
                expected: self.params.len(),
                found: params.len(),
            });
        }
        Ok(ToyModel {
            params,
            ..self.clone()
        })
    }

    fn layout(&self) -> Layout {
        Layout::new(&self.dims)
    }

    pub fn eos_head(&self) -> EosHead {
        let l = self.layout();
        EosHead {
            weight: self.params[l.we..l.be].to_vec(),
            bias: self.params[l.be],
        }
    }

    fn token_ids(&self, tokens: &[String]) -> Result<Vec<usize>> {
        if tokens.is_empty() {
            return Err(Error::invalid("token list is empty"));
        }
        tokens
            .iter()
            .map(|t| {
                self.vocabulary
                    .binary_search(t)
                    .map_err(|_| Error::UnknownToken(t.clone()))
            })
            .collect()
    }

    fn context(&self, ids: &[usize]) -> Vec<f64> {
        let (l, d) = (self.layout(), self.dims.embed);
        let mut ctx = vec![0.0; d];
        for &i in ids {
            for (c, e) in ctx.iter_mut().zip(&self.params[l.emb + i * d..l.emb + (i + 1) * d]) {
                *c += e;
            }
        }
        let inv = 1.0 / ids.len() as f64;
        ctx.iter_mut().for_each(|c| *c *= inv);
        ctx
    }

    fn step(&self, ctx: &[f64], prev: &Pose, t: usize) -> (StepOutput, StepCache) {
        let (l, dm) = (self.layout(), self.dims);
        let mut input = Vec::with_capacity(dm.input());
        input.extend_from_slice(ctx);
        input.extend(prev.flat());
        input.push(t as f64 / self.max_frames as f64);
        let ni = dm.input();
        let hidden: Vec<f64> = (0..dm.hidden)
            .map(|r| {
                let row = &self.params[l.w1 + r * ni..l.w1 + (r + 1) * ni];
                (row.iter().zip(&input).map(|(w, x)| w * x).sum::<f64>() + self.params[l.b1 + r]).tanh()
            })
            .collect();
        let dot_h = |off: usize| -> f64 {
            self.params[off..off + dm.hidden]
                .iter()
                .zip(&hidden)
                .map(|(w, h)| w * h)
                .sum::<f64>()
        };
        let flat: Vec<f64> = (0..dm.pose())
            .map(|r| dot_h(l.wp + r * dm.hidden) + self.params[l.bp + r])
            .collect();
        let pose = Pose::new(flat.chunks(3).map(|c| [c[0], c[1], c[2]]).collect());
        let eos_logit = dot_h(l.we) + self.params[l.be];
        let counter = dot_h(l.wc) + self.params[l.bc];
        (
            StepOutput {
                pose,
                hidden: hidden.clone(),
                eos_logit,
                eos_prob: sigmoid(eos_logit),
                counter,
            },
            StepCache { input, hidden },
        )
    }

    /// One decoding step predicting frame `t` (1-based) from the previous pose.
    pub fn forward_step(&self, tokens: &[String], prev_pose: &Pose, t: usize) -> Result<StepOutput> {
        if t == 0 {
            return Err(Error::invalid("frame index t must be >= 1"));
        }
        if prev_pose.num_joints() != self.dims.joints {
            return Err(Error::Shape {
                context: "previous pose".into(),
                expected: self.dims.joints,
                found: prev_pose.num_joints(),
            });
        }
        let ids = self.token_ids(tokens)?;
        Ok(self.step(&self.context(&ids), prev_pose, t).0)
    }

    /// Loss and parameter gradient for one sequence under teacher forcing.
    /// `inputs[t]` is the pose fed in when predicting frame `t + 1`.
    pub fn loss_and_gradient(
        &self,
        seq: &PoseSequence,
        inputs: &[Pose],
        objective: &Objective<'_>,
    ) -> Result<(LossTerms, Vec<f64>)> {
        let (l, dm) = (self.layout(), self.dims);
        let len = seq.len();
        if inputs.len() != len {
            return Err(Error::Shape {
                context: "teacher-forcing inputs".into(),
                expected: len,
                found: inputs.len(),
            });
        }
        let ids = self.token_ids(&seq.tokens)?;
        let ctx = self.context(&ids);
        let mut outs = Vec::with_capacity(len);
        let mut caches = Vec::with_capacity(len);
        for (t, prev) in inputs.iter().enumerate() {
            let (o, c) = self.step(&ctx, prev, t + 1);
            outs.push(o);
            caches.push(c);
        }
        let preds: Vec<Pose> = outs.iter().map(|o| o.pose.clone()).collect();
        let comp = composite_loss(
            &preds,
            &seq.frames,
            objective.skeleton,
            objective.weights,
            objective.lambdas,
            &objective.coefficients,
        )?;
        let ew = objective.coefficients.eos_weight;
        // Gradient of the termination term with respect to the active head's output.
        let (term_value, term_grad): (f64, Vec<f64>) = match objective.mode {
            TerminationMode::Eos => {
                let logits: Vec<f64> = outs.iter().map(|o| o.eos_logit).collect();
                let targets: Vec<f64> = (1..=len).map(|t| objective.polarity.target(t, len)).collect();
                let e = eos_classification_loss(&logits, &targets)?;
                (e.value, e.grad_logits)
            }
            TerminationMode::Counter => {
                let inv = 1.0 / len as f64;
                let mut v = 0.0;
                let g = outs
                    .iter()
                    .enumerate()
                    .map(|(t, o)| {
                        let r = o.counter - counter_target(t + 1, len);
                        v += r * r * inv;
                        2.0 * r * inv
                    })
                    .collect();
                (v, g)
            }
        };
        let head = match objective.mode {
            TerminationMode::Eos => l.we,
            TerminationMode::Counter => l.wc,
        };
        let head_bias = head + dm.hidden;

        let mut grad = vec![0.0; self.params.len()];
        let mut g_ctx = vec![0.0; dm.embed];
        let ni = dm.input();
        let mut g_hidden = vec![0.0; dm.hidden];
        for t in 0..len {
            let cache = &caches[t];
            g_hidden.iter_mut().for_each(|g| *g = 0.0);
            let gp: Vec<f64> = comp.total.grad[t].flat().collect();
            for (r, &g) in gp.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad[l.bp + r] += g;
                let row = l.wp + r * dm.hidden;
                for k in 0..dm.hidden {
                    grad[row + k] += g * cache.hidden[k];
                    g_hidden[k] += g * self.params[row + k];
                }
            }
            let gh = ew * term_grad[t];
            if gh != 0.0 {
                grad[head_bias] += gh;
                for k in 0..dm.hidden {
                    grad[head + k] += gh * cache.hidden[k];
                    g_hidden[k] += gh * self.params[head + k];
                }
            }
            for k in 0..dm.hidden {
                let ga = g_hidden[k] * (1.0 - cache.hidden[k] * cache.hidden[k]);
                if ga == 0.0 {
                    continue;
                }
                grad[l.b1 + k] += ga;
                let row = l.w1 + k * ni;
                for (i, x) in cache.input.iter().enumerate() {
                    grad[row + i] += ga * x;
                }
                for (i, gc) in g_ctx.iter_mut().enumerate() {
                    *gc += ga * self.params[row + i];
                }
            }
        }
        let inv = 1.0 / ids.len() as f64;
        for &i in &ids {
            for (k, gc) in g_ctx.iter().enumerate() {
                grad[l.emb + i * dm.embed + k] += gc * inv;
            }
        }
        let terms = LossTerms {
            total: comp.total.value + ew * term_value,
            mse: comp.mse,
            bone: comp.bone,
            pose: comp.pose,
            eos: term_value,
        };
        Ok((terms, grad))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.params.len() * 8);
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        for v in [
            self.dims.vocab,
            self.dims.embed,
            self.dims.hidden,
            self.dims.joints,
            self.max_frames,
        ] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for w in &self.vocabulary {
            out.extend_from_slice(&(w.len() as u64).to_le_bytes());
            out.extend_from_slice(w.as_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::ModelFormat("bad magic".into()));
        }
        let mut version = [0u8; 1];
        read_exact(&mut r, &mut version)?;
        if version[0] != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {}", version[0])));
        }
        let vocab = read_u64(&mut r)?;
        let embed = read_u64(&mut r)?;
        let hidden = read_u64(&mut r)?;
        let joints = read_u64(&mut r)?;
        let max_frames = read_u64(&mut r)?;
        let mut vocabulary = Vec::with_capacity(vocab.min(1 << 16));
        for _ in 0..vocab {
            let n = read_u64(&mut r)?;
            if n > r.len() {
                return Err(Error::ModelFormat("truncated vocabulary".into()));
            }
            let mut buf = vec![0u8; n];
            read_exact(&mut r, &mut buf)?;
            vocabulary.push(String::from_utf8(buf).map_err(|_| Error::ModelFormat("vocabulary is not UTF-8".into()))?);
        }
        if vocabulary.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::ModelFormat("vocabulary must be sorted and unique".into()));
        }
        let mut model = ToyModel::zeros(vocabulary, embed, hidden, joints, max_frames)
            .map_err(|e| Error::ModelFormat(e.to_string()))?;
        let count = read_u64(&mut r)?;
        if count != model.params.len() {
            return Err(Error::ModelFormat(format!(
                "parameter count {count} does not match dimensions ({})",
                model.params.len()
            )));
        }
        for p in &mut model.params {
            let mut b = [0u8; 8];
            read_exact(&mut r, &mut b)?;
            *p = f64::from_le_bytes(b);
        }
        if !r.is_empty() {
            return Err(Error::ModelFormat("trailing bytes".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        ToyModel::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::ModelFormat("truncated file".into()))
}

fn read_u64(r: &mut &[u8]) -> Result<usize> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::ModelFormat("size overflow".into()))
}

/// Adam with bias correction.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        if lr == 0.0 {
            return;
        }
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Teacher-forced inputs for a sequence: a zero pose for the first frame,
/// then each ground-truth frame (noise-augmented) for the next.
pub fn teacher_inputs<R: Rng + ?Sized>(seq: &PoseSequence, joints: usize, noise_std: f64, rng: &mut R) -> Result<Vec<Pose>> {
    let mut inputs = Vec::with_capacity(seq.len());
    inputs.push(Pose::zeros(joints));
    for f in &seq.frames[..seq.len().saturating_sub(1)] {
        inputs.push(add_gaussian_noise(f, noise_std, rng)?);
    }
    Ok(inputs)
}

/// Trains with one Adam step per mini-batch, visiting sequences in a seeded
/// shuffled order each epoch. Deterministic for a fixed config.
pub fn train(
    model: &ToyModel,
    dataset: &Dataset,
    weights: &JointWeights,
    lambdas: &BoneLambdas,
    config: &TrainConfig,
) -> Result<(ToyModel, TrainingLog)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.skeleton.num_joints() != model.dims.joints {
        return Err(Error::Shape {
            context: "model joints vs dataset skeleton".into(),
            expected: model.dims.joints,
            found: dataset.skeleton.num_joints(),
        });
    }
    let objective = Objective {
        skeleton: &dataset.skeleton,
        weights,
        lambdas,
        coefficients: config.coefficients,
        mode: config.termination.mode,
        polarity: config.termination.eos_polarity,
    };
    let mut model = model.clone();
    let mut adam = Adam::new(model.params.len());
    // Stream separate from the initialization seed.
    let mut rng = SeededRng::seed_from_u64(config.seed ^ 0x5eed_7a1e_u64);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = TrainingLog { epochs: Vec::new() };
    let batches_per_epoch = dataset.len().div_ceil(config.batch_size);
    let total_steps = (batches_per_epoch * config.epochs) as f64;
    let mut step = 0usize;
    let mut grad = vec![0.0; model.params.len()];
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossTerms::default();
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let seq = &dataset.sequences[i];
                let inputs = teacher_inputs(seq, model.dims.joints, config.noise_std, &mut rng)?;
                let (terms, g) = model.loss_and_gradient(seq, &inputs, &objective)?;
                if !terms.total.is_finite() || g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFiniteLoss {
                        sequence: seq.id.clone(),
                        epoch,
                    });
                }
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
                sum.total += terms.total;
                sum.mse += terms.mse;
                sum.bone += terms.bone;
                sum.pose += terms.pose;
                sum.eos += terms.eos;
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            let lr = match config.lr_schedule {
                LrSchedule::Constant => config.learning_rate,
                LrSchedule::Cosine => {
                    config.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps).cos())
                }
            };
            adam.update(&mut model.params, &grad, lr);
            step += 1;
        }
        let n = dataset.len() as f64;
        log.epochs.push(LossTerms {
            total: sum.total / n,
            mse: sum.mse / n,
            bone: sum.bone / n,
            pose: sum.pose / n,
            eos: sum.eos / n,
        });
    }
    Ok((model, log))
}

/// Free-running decoding from a zero pose, feeding back each prediction and
/// stopping per the termination config (always within `max_frames`).
pub fn generate(model: &ToyModel, tokens: &[String], termination: &TerminationConfig) -> Result<Vec<Pose>> {
    termination.validate()?;
    let ids = model.token_ids(tokens)?;
    let ctx = model.context(&ids);
    let mut prev = Pose::zeros(model.dims.joints);
    let mut frames = Vec::new();
    loop {
        let (out, _) = model.step(&ctx, &prev, frames.len() + 1);
        frames.push(out.pose.clone());
        if !termination.should_continue(frames.len(), out.eos_prob, out.counter) {
            break;
        }
        prev = out.pose;
    }
    Ok(frames)
}

/// Free-running decoding for exactly `frames` steps, ignoring both heads.
pub fn generate_fixed(model: &ToyModel, tokens: &[String], frames: usize) -> Result<Vec<Pose>> {
    let ids = model.token_ids(tokens)?;
    let ctx = model.context(&ids);
    let mut prev = Pose::zeros(model.dims.joints);
    let mut out = Vec::with_capacity(frames);
    for t in 1..=frames {
        let (o, _) = model.step(&ctx, &prev, t);
        prev = o.pose.clone();
        out.push(o.pose);
    }
    Ok(out)
}

/// How long generated sequences are.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LengthPolicy {
    /// Stop per the termination config.
    Free(TerminationConfig),
    /// Match each reference sequence's frame count.
    Reference,
}

/// Generates one sequence per reference sequence, keeping ids and tokens.
pub fn generate_dataset(model: &ToyModel, reference: &Dataset, policy: LengthPolicy) -> Result<Dataset> {
    let mut sequences = Vec::with_capacity(reference.len());
    for r in &reference.sequences {
        let frames = match policy {
            LengthPolicy::Free(t) => generate(model, &r.tokens, &t)?,
            LengthPolicy::Reference => generate_fixed(model, &r.tokens, r.len())?,
        };
        sequences.push(PoseSequence {
            id: r.id.clone(),
            tokens: r.tokens.clone(),
            frames,
        });
    }
    Dataset::new(reference.skeleton.clone(), sequences, Split::Test)
}
