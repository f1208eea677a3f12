//! Ablation harness: trains several loss/termination variants on one seeded
//! synthetic split and tabulates every metric per variant.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossCoefficients;
use crate::metrics::{evaluate, EvaluationReport};
use crate::model::{generate_dataset, train, LengthPolicy, ToyModel, TrainConfig, TrainingLog};
use crate::posedata::{synthesize_dataset, Dataset, Split, SynthConfig};
use crate::termination::{TerminationConfig, TerminationMode};
use crate::weighting::{bone_length_lambda, joint_variances, parent_relative_weights, BoneLambdas, JointWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaSource {
    /// All ones.
    #[default]
    Uniform,
    /// Two-phase: train with uniform lambdas, measure bone-length error on
    /// the dev split, retrain with the measured lambdas.
    Dev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub coefficients: LossCoefficients,
    /// Use parent-relative joint weights in the reconstruction loss.
    #[serde(default)]
    pub joint_weights: bool,
    #[serde(default)]
    pub lambda: LambdaSource,
    #[serde(default)]
    pub mode: TerminationMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSplit {
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default = "default_train")]
    pub train: usize,
    #[serde(default)]
    pub dev: usize,
    #[serde(default = "default_test")]
    pub test: usize,
}

fn default_train() -> usize {
    200
}

fn default_test() -> usize {
    50
}

impl Default for DataSplit {
    fn default() -> Self {
        DataSplit {
            synth: SynthConfig::default(),
            train: default_train(),
            dev: 0,
            test: default_test(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub data: DataSplit,
    /// Shared training settings; its seed is replaced by the experiment seed.
    #[serde(default = "default_base")]
    pub train: TrainConfig,
    pub variants: Vec<Variant>,
}

fn default_base() -> TrainConfig {
    TrainConfig::with_seed(0)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::Config("experiment lists no variants".into()));
        }
        let mut seen = BTreeSet::new();
        for v in &self.variants {
            if !seen.insert(v.name.as_str()) {
                return Err(Error::Config(format!("duplicate variant name `{}`", v.name)));
            }
            if v.name.is_empty() || v.name.contains([',', '\n', '"']) {
                return Err(Error::Config(format!("invalid variant name `{}`", v.name)));
            }
            v.coefficients.validate()?;
            if v.lambda == LambdaSource::Dev && self.data.dev == 0 {
                return Err(Error::Config(format!(
                    "variant `{}` needs dev lambdas but data.dev is 0",
                    v.name
                )));
            }
        }
        if self.data.train == 0 {
            return Err(Error::Config("data.train must be at least 1".into()));
        }
        self.train.validate()
    }
}

/// The seeded train/dev/test split drawn from one synthetic corpus.
pub struct Splits {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    /// Token vocabulary of the generator, which may include tokens the
    /// training split never draws.
    pub vocabulary: Vec<String>,
}

pub fn make_splits(data: &DataSplit, seed: u64) -> Result<Splits> {
    let synth = SynthConfig {
        num_sequences: data.train + data.dev + data.test,
        ..data.synth.clone()
    };
    let mut all = synthesize_dataset(&synth, seed)?;
    let mut rest = all.split_off(data.train, Split::Dev);
    let test = rest.split_off(data.dev, Split::Test);
    Ok(Splits {
        train: Dataset {
            split: Split::Train,
            ..all
        },
        dev: rest,
        test,
        vocabulary: synth.vocabulary,
    })
}

/// A trained variant together with everything needed to evaluate it.
pub struct VariantRun {
    pub name: String,
    pub model: ToyModel,
    pub log: TrainingLog,
    pub lambdas: BoneLambdas,
    /// Metrics with poses generated at reference length and frame lengths
    /// from free-running generation.
    pub report: EvaluationReport,
}

pub struct ExperimentResult {
    pub runs: Vec<VariantRun>,
}

pub const TABLE_HEADER: &str = "variant,bone_length_pct,variance_global_pct,variance_local_pct,velocity_global_pct,velocity_local_pct,frame_length_signed_pct,frame_length_abs_pct,final_train_loss";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

impl ExperimentResult {
    /// One row per variant, in configuration order.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{TABLE_HEADER}\n");
        for r in &self.runs {
            let m = &r.report;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.name,
                cell(m.bone_length.overall),
                cell(m.variance_global.overall),
                cell(m.variance_local.overall),
                cell(m.velocity_global.overall),
                cell(m.velocity_local.overall),
                cell(m.frame_length.mean_signed_rel_diff),
                cell(m.frame_length.mean_abs_rel_diff),
                cell(r.log.epochs.last().map(|e| e.total)),
            );
        }
        s
    }
}

/// Configuration for one variant derived from the shared base.
pub fn variant_config(base: &TrainConfig, variant: &Variant, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        coefficients: variant.coefficients,
        termination: TerminationConfig {
            mode: variant.mode,
            ..base.termination
        },
        ..base.clone()
    }
}

/// Trains one variant (two phases when lambdas come from the dev split) and
/// evaluates it on the test split.
pub fn run_variant(splits: &Splits, base: &TrainConfig, variant: &Variant, seed: u64) -> Result<VariantRun> {
    let cfg = variant_config(base, variant, seed);
    let skel = &splits.train.skeleton;
    let weights = if variant.joint_weights {
        parent_relative_weights(&joint_variances(&splits.train)?)
    } else {
        JointWeights::uniform(skel.num_joints())
    };
    let init = ToyModel::init(splits.vocabulary.clone(), skel.num_joints(), cfg.termination.max_frames, &cfg)?;
    let uniform = BoneLambdas::uniform(skel.num_bones());
    let (mut model, mut log) = train(&init, &splits.train, &weights, &uniform, &cfg)?;
    let mut lambdas = uniform;
    if variant.lambda == LambdaSource::Dev {
        let dev_pred = generate_dataset(&model, &splits.dev, LengthPolicy::Reference)?;
        lambdas = bone_length_lambda(&dev_pred, &splits.dev)?;
        (model, log) = train(&init, &splits.train, &weights, &lambdas, &cfg)?;
    }
    let report = evaluate_model(&model, &splits.test, &cfg.termination)?;
    Ok(VariantRun {
        name: variant.name.clone(),
        model,
        log,
        lambdas,
        report,
    })
}

/// Pose metrics from reference-length generation; frame-length statistics
/// from free-running generation.
pub fn evaluate_model(model: &ToyModel, test: &Dataset, termination: &TerminationConfig) -> Result<EvaluationReport> {
    let fixed = generate_dataset(model, test, LengthPolicy::Reference)?;
    let free = generate_dataset(model, test, LengthPolicy::Free(*termination))?;
    let mut report = evaluate(&fixed, test)?;
    report.frame_length = evaluate(&free, test)?.frame_length;
    Ok(report)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let splits = make_splits(&config.data, config.seed)?;
    let runs = config
        .variants
        .iter()
        .map(|v| run_variant(&splits, &config.train, v, config.seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult { runs })
}
