//! Kinematic evaluation: bone-length deviation per body part, movement
//! variance and velocity (global and parent-relative), and frame-length
//! statistics.
//!
//! Deviations are aggregated per sequence first, then averaged across
//! sequences, then across the members of each bone group.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::losses::MIN_REFERENCE_BONE;
use crate::posedata::{Dataset, PoseSequence};
use crate::skeleton::{BoneGroup, Skeleton};
use crate::weighting::check_same_ids;

/// Reference statistics below this are excluded from relative deviations.
pub const MIN_REFERENCE_STAT: f64 = 1e-12;

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Absolute joint positions.
    Global,
    /// Link vectors relative to the parent joint; the root stays absolute.
    Local,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Global => "global",
            Mode::Local => "local",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Mode::Global),
            "local" => Ok(Mode::Local),
            _ => Err(Error::invalid(format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MovementKind {
    Variance,
    Velocity,
}

/// Percent deviations per joint and per bone group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    /// Indexed by [`BoneGroup::index`]; `None` when no member contributed.
    pub groups: [Option<f64>; 6],
    /// Number of contributing members per group.
    pub members: [usize; 6],
    /// Member-count-weighted mean of the group values.
    pub overall: Option<f64>,
    /// Indexed by joint; `None` for the root in bone reports and for joints
    /// with no included sample.
    pub per_joint: Vec<Option<f64>>,
    /// Excluded `(sequence, joint)` samples per joint.
    pub excluded: Vec<usize>,
    /// Sequences skipped because the statistic is undefined for them.
    pub skipped_sequences: usize,
}

impl GroupReport {
    fn from_joint_means(
        skeleton: &Skeleton,
        per_joint: Vec<Option<f64>>,
        excluded: Vec<usize>,
        skipped_sequences: usize,
    ) -> Self {
        let mut sums = [0.0; 6];
        let mut members = [0usize; 6];
        for (j, v) in per_joint.iter().enumerate() {
            if let (Some(v), Some(g)) = (v, skeleton.group_of(j)) {
                sums[g.index()] += v;
                members[g.index()] += 1;
            }
        }
        let groups = std::array::from_fn(|g| (members[g] > 0).then(|| sums[g] / members[g] as f64));
        let total: usize = members.iter().sum();
        let overall = (total > 0).then(|| {
            BoneGroup::ALL
                .iter()
                .filter_map(|g| groups[g.index()].map(|v| v * members[g.index()] as f64))
                .sum::<f64>()
                / total as f64
        });
        GroupReport {
            groups,
            members,
            overall,
            per_joint,
            excluded,
            skipped_sequences,
        }
    }

    pub fn group(&self, g: BoneGroup) -> Option<f64> {
        self.groups[g.index()]
    }

    pub fn total_excluded(&self) -> usize {
        self.excluded.iter().sum()
    }
}

fn mean_of(acc: &[(f64, usize)]) -> Vec<Option<f64>> {
    acc.iter()
        .map(|&(s, n)| (n > 0).then(|| s / n as f64))
        .collect()
}

/// Per-bone mean of `|‖b̂‖ − ‖b‖| / ‖b‖ × 100`. Frames are paired by index
/// over the common prefix of each sequence pair.
pub fn bone_length_deviation(pred: &Dataset, reference: &Dataset) -> Result<GroupReport> {
    check_same_ids(pred, reference)?;
    let skel = &reference.skeleton;
    let n = skel.num_joints();
    let mut acc = vec![(0.0, 0usize); n];
    for (p, r) in pred.sequences.iter().zip(&reference.sequences) {
        let frames = p.len().min(r.len());
        if frames == 0 {
            continue;
        }
        for (c, par) in skel.bone_pairs() {
            let mut sum = 0.0;
            for t in 0..frames {
                let rl = geom::norm(geom::sub(r.frames[t].coords[c], r.frames[t].coords[par]));
                if !(rl >= MIN_REFERENCE_BONE) {
                    return Err(Error::DegenerateBone {
                        joint: c,
                        frame: t,
                        length: rl,
                    });
                }
                let pl = geom::norm(geom::sub(p.frames[t].coords[c], p.frames[t].coords[par]));
                sum += (pl - rl).abs() / rl * 100.0;
            }
            acc[c].0 += sum / frames as f64;
            acc[c].1 += 1;
        }
    }
    Ok(GroupReport::from_joint_means(skel, mean_of(&acc), vec![0; n], 0))
}

fn joint_track(seq: &PoseSequence, skeleton: &Skeleton, joint: usize, mode: Mode) -> Vec<Vec3> {
    let parent = match mode {
        Mode::Global => None,
        Mode::Local => skeleton.parent(joint),
    };
    seq.frames
        .iter()
        .map(|f| match parent {
            None => f.coords[joint],
            Some(p) => geom::sub(f.coords[joint], f.coords[p]),
        })
        .collect()
}

/// Per-joint trace of the population covariance over the sequence's frames.
pub fn movement_variance(seq: &PoseSequence, skeleton: &Skeleton, mode: Mode) -> Vec<f64> {
    (0..skeleton.num_joints())
        .map(|j| geom::trace_variance(joint_track(seq, skeleton, j, mode)))
        .collect()
}

/// Per-joint mean Euclidean displacement between consecutive frames.
pub fn movement_velocity(seq: &PoseSequence, skeleton: &Skeleton, mode: Mode) -> Result<Vec<f64>> {
    if seq.len() < 2 {
        return Err(Error::invalid(format!(
            "velocity undefined for single-frame sequence `{}`",
            seq.id
        )));
    }
    Ok((0..skeleton.num_joints())
        .map(|j| {
            let track = joint_track(seq, skeleton, j, mode);
            track
                .windows(2)
                .map(|w| geom::norm(geom::sub(w[1], w[0])))
                .sum::<f64>()
                / (track.len() - 1) as f64
        })
        .collect())
}

/// Percent deviation of a per-sequence movement statistic. Joints whose
/// reference statistic is below [`MIN_REFERENCE_STAT`] are excluded and
/// tallied; for velocity, sequence pairs where either side has a single
/// frame are skipped and tallied.
pub fn movement_deviation(
    pred: &Dataset,
    reference: &Dataset,
    kind: MovementKind,
    mode: Mode,
) -> Result<GroupReport> {
    check_same_ids(pred, reference)?;
    let skel = &reference.skeleton;
    let n = skel.num_joints();
    let mut acc = vec![(0.0, 0usize); n];
    let mut excluded = vec![0usize; n];
    let mut skipped = 0;
    for (p, r) in pred.sequences.iter().zip(&reference.sequences) {
        let (ps, rs) = match kind {
            MovementKind::Variance => (
                movement_variance(p, skel, mode),
                movement_variance(r, skel, mode),
            ),
            MovementKind::Velocity => {
                if p.len() < 2 || r.len() < 2 {
                    skipped += 1;
                    continue;
                }
                (
                    movement_velocity(p, skel, mode)?,
                    movement_velocity(r, skel, mode)?,
                )
            }
        };
        for j in 0..n {
            if rs[j] < MIN_REFERENCE_STAT {
                excluded[j] += 1;
            } else {
                acc[j].0 += (ps[j] - rs[j]).abs() / rs[j] * 100.0;
                acc[j].1 += 1;
            }
        }
    }
    Ok(GroupReport::from_joint_means(skel, mean_of(&acc), excluded, skipped))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub pred_counts: Vec<usize>,
    pub ref_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameLengthStats {
    pub mean_signed_rel_diff: Option<f64>,
    pub mean_abs_rel_diff: Option<f64>,
    pub mean_pred_len: Option<f64>,
    pub mean_ref_len: Option<f64>,
    pub histogram: Histogram,
}

fn histogram(pred: &[f64], reference: &[f64], bins: usize) -> Histogram {
    let pooled = pred.iter().chain(reference);
    let lo = pooled.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = pooled.copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return Histogram {
            edges: vec![],
            pred_counts: vec![],
            ref_counts: vec![],
        };
    }
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|k| if k == bins { hi } else { lo + width * k as f64 })
        .collect();
    let count = |xs: &[f64]| {
        let mut c = vec![0usize; bins];
        for &x in xs {
            let k = (((x - lo) / width) as usize).min(bins - 1);
            c[k] += 1;
        }
        c
    };
    Histogram {
        edges,
        pred_counts: count(pred),
        ref_counts: count(reference),
    }
}

/// Signed and absolute relative frame-count differences in percent, with
/// 20-bin histograms over the pooled range of both length distributions.
pub fn frame_length_stats(pred: &Dataset, reference: &Dataset) -> Result<FrameLengthStats> {
    check_same_ids(pred, reference)?;
    let pl: Vec<f64> = pred.sequences.iter().map(|s| s.len() as f64).collect();
    let rl: Vec<f64> = reference.sequences.iter().map(|s| s.len() as f64).collect();
    let diffs: Vec<f64> = pl.iter().zip(&rl).map(|(p, r)| (p - r) / r * 100.0).collect();
    let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    Ok(FrameLengthStats {
        mean_signed_rel_diff: mean(&diffs),
        mean_abs_rel_diff: mean(&abs),
        mean_pred_len: mean(&pl),
        mean_ref_len: mean(&rl),
        histogram: histogram(&pl, &rl, HISTOGRAM_BINS),
    })
}

/// Every metric for one prediction/reference pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub bone_length: GroupReport,
    pub variance_global: GroupReport,
    pub variance_local: GroupReport,
    pub velocity_global: GroupReport,
    pub velocity_local: GroupReport,
    pub frame_length: FrameLengthStats,
}

pub fn evaluate(pred: &Dataset, reference: &Dataset) -> Result<EvaluationReport> {
    Ok(EvaluationReport {
        bone_length: bone_length_deviation(pred, reference)?,
        variance_global: movement_deviation(pred, reference, MovementKind::Variance, Mode::Global)?,
        variance_local: movement_deviation(pred, reference, MovementKind::Variance, Mode::Local)?,
        velocity_global: movement_deviation(pred, reference, MovementKind::Velocity, Mode::Global)?,
        velocity_local: movement_deviation(pred, reference, MovementKind::Velocity, Mode::Local)?,
        frame_length: frame_length_stats(pred, reference)?,
    })
}
