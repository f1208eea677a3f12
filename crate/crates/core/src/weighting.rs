//! Corpus statistics that reweight the losses: per-joint spatio-temporal
//! variance, parent-relative joint weights, and per-bone length factors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::posedata::Dataset;

/// Per-joint variance. The root uses its absolute position, every other
/// joint uses its link to the parent.
#[derive(Debug, Clone, PartialEq)]
pub struct JointVariances {
    pub sigma_sq: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointWeights {
    pub w: Vec<f64>,
}

impl JointWeights {
    pub fn uniform(n: usize) -> Self {
        JointWeights { w: vec![1.0; n] }
    }
}

/// Per-bone factors for the bone-length loss, in canonical bone order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoneLambdas {
    pub lambda: Vec<f64>,
}

impl BoneLambdas {
    pub fn uniform(num_bones: usize) -> Self {
        BoneLambdas {
            lambda: vec![1.0; num_bones],
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string(value).expect("serializes") + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

impl JointWeights {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(self, path.as_ref())
    }
}

impl BoneLambdas {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(self, path.as_ref())
    }
}

/// Pools every frame of every sequence and returns, per joint, the trace of
/// the population covariance of its root position or link vector.
pub fn joint_variances(dataset: &Dataset) -> Result<JointVariances> {
    if dataset.is_empty() || dataset.total_frames() == 0 {
        return Err(Error::EmptyDataset);
    }
    let skel = &dataset.skeleton;
    let sample = |j: usize| {
        let parent = skel.parent(j);
        dataset.sequences.iter().flat_map(move |s| {
            s.frames.iter().map(move |f| -> Vec3 {
                match parent {
                    None => f.coords[j],
                    Some(p) => geom::sub(f.coords[j], f.coords[p]),
                }
            })
        })
    };
    Ok(JointVariances {
        sigma_sq: (0..skel.num_joints())
            .map(|j| geom::trace_variance(sample(j)))
            .collect(),
    })
}

/// `w_i = 1 - σ_i² / Σ_j σ_j²`; all ones when the total variance is zero.
pub fn parent_relative_weights(variances: &JointVariances) -> JointWeights {
    let total: f64 = variances.sigma_sq.iter().sum();
    if total <= 0.0 {
        return JointWeights::uniform(variances.sigma_sq.len());
    }
    JointWeights {
        w: variances.sigma_sq.iter().map(|s| 1.0 - s / total).collect(),
    }
}

/// Checks that two datasets hold the same sequence ids in the same order.
pub(crate) fn check_same_ids(pred: &Dataset, reference: &Dataset) -> Result<()> {
    if pred.len() != reference.len() {
        return Err(Error::Misaligned(format!(
            "{} predicted vs {} reference sequences",
            pred.len(),
            reference.len()
        )));
    }
    if pred.skeleton.num_joints() != reference.skeleton.num_joints() {
        return Err(Error::Misaligned("skeletons differ in joint count".into()));
    }
    for (p, r) in pred.sequences.iter().zip(&reference.sequences) {
        if p.id != r.id {
            return Err(Error::Misaligned(format!(
                "sequence id `{}` vs `{}`",
                p.id, r.id
            )));
        }
    }
    Ok(())
}

/// Mean relative absolute bone-length error per bone, each aligned frame of
/// each sequence counting as one sample.
pub fn bone_length_lambda(pred: &Dataset, reference: &Dataset) -> Result<BoneLambdas> {
    check_same_ids(pred, reference)?;
    let skel = &reference.skeleton;
    let mut sums = vec![0.0; skel.num_bones()];
    let mut samples = 0usize;
    for (p, r) in pred.sequences.iter().zip(&reference.sequences) {
        if p.len() != r.len() {
            return Err(Error::Misaligned(format!(
                "sequence `{}` has {} predicted vs {} reference frames",
                p.id,
                p.len(),
                r.len()
            )));
        }
        for (t, (pf, rf)) in p.frames.iter().zip(&r.frames).enumerate() {
            for (k, (c, par)) in skel.bone_pairs().enumerate() {
                let ref_len = geom::norm(geom::sub(rf.coords[c], rf.coords[par]));
                if ref_len < 1e-8 {
                    return Err(Error::DegenerateBone {
                        joint: c,
                        frame: t,
                        length: ref_len,
                    });
                }
                let pred_len = geom::norm(geom::sub(pf.coords[c], pf.coords[par]));
                sums[k] += (ref_len - pred_len).abs() / ref_len;
            }
            samples += 1;
        }
    }
    if samples == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(BoneLambdas {
        lambda: sums.into_iter().map(|s| s / samples as f64).collect(),
    })
}
