//! Pose sequences and datasets: JSON Lines I/O, scale normalization, noise
//! augmentation and the synthetic sign-like motion generator.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::skeleton::{bone_lengths, reconstruct_pose, LinkSet, Pose, Skeleton};
use crate::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSequence {
    pub id: String,
    pub tokens: Vec<String>,
    pub frames: Vec<Pose>,
}

impl PoseSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self, skeleton: &Skeleton) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::invalid(format!("sequence `{}` has no frames", self.id)));
        }
        for (t, f) in self.frames.iter().enumerate() {
            if f.num_joints() != skeleton.num_joints() {
                return Err(Error::JointCount {
                    sequence: self.id.clone(),
                    frame: t,
                    expected: skeleton.num_joints(),
                    found: f.num_joints(),
                });
            }
            if !f.is_finite() {
                return Err(Error::NonFinite {
                    sequence: self.id.clone(),
                    frame: t,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub skeleton: Skeleton,
    pub sequences: Vec<PoseSequence>,
    pub split: Split,
}

impl Dataset {
    /// Builds a dataset, validating every sequence against the skeleton.
    pub fn new(skeleton: Skeleton, sequences: Vec<PoseSequence>, split: Split) -> Result<Self> {
        for s in &sequences {
            s.validate(&skeleton)?;
        }
        Ok(Dataset {
            skeleton,
            sequences,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn total_frames(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }

    /// Splits off the sequences from index `at` onward into a new dataset.
    pub fn split_off(&mut self, at: usize, split: Split) -> Dataset {
        Dataset {
            skeleton: self.skeleton.clone(),
            sequences: self.sequences.split_off(at.min(self.sequences.len())),
            split,
        }
    }

    /// Sorted, de-duplicated token vocabulary.
    pub fn vocabulary(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .sequences
            .iter()
            .flat_map(|s| s.tokens.iter().map(String::as_str))
            .collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.sequences {
            out.push_str(&serde_json::to_string(s).expect("sequence serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(
        reader: impl BufRead,
        skeleton: Skeleton,
        split: Split,
        path: &Path,
    ) -> Result<Self> {
        let mut sequences = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let seq: PoseSequence = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            sequences.push(seq);
        }
        Dataset::new(skeleton, sequences, split)
    }
}

/// Reads a JSON Lines dataset. Every sequence is validated against `skeleton`.
pub fn load_dataset(path: impl AsRef<Path>, skeleton: &Skeleton, split: Split) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    Dataset::from_jsonl(BufReader::new(file), skeleton.clone(), split, path)
}

/// Writes one sequence per line. Coordinates use the shortest decimal form
/// that parses back to the identical `f64`, so a reload is bit-exact.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    f.write_all(dataset.to_jsonl().as_bytes())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Uniformly rescales every frame about its root so that the mean ratio of
/// bone length to reference length is 1.
pub fn normalize_skeleton_scale(
    sequence: &PoseSequence,
    skeleton: &Skeleton,
    reference_lengths: &[f64],
) -> Result<PoseSequence> {
    if reference_lengths.len() != skeleton.num_bones() {
        return Err(Error::Shape {
            context: "reference bone lengths".into(),
            expected: skeleton.num_bones(),
            found: reference_lengths.len(),
        });
    }
    if let Some(bad) = reference_lengths.iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::invalid(format!(
            "reference lengths must be positive, got {bad}"
        )));
    }
    sequence.validate(skeleton)?;
    let root = skeleton.root();
    let nb = skeleton.num_bones() as f64;
    let mut frames = Vec::with_capacity(sequence.len());
    for (t, pose) in sequence.frames.iter().enumerate() {
        let lengths = bone_lengths(pose, skeleton);
        let mean_length = lengths.iter().sum::<f64>() / nb;
        if !(mean_length >= 1e-8) {
            return Err(Error::DegenerateFrame {
                frame: t,
                mean_length,
            });
        }
        let ratio = lengths
            .iter()
            .zip(reference_lengths)
            .map(|(l, r)| l / r)
            .sum::<f64>()
            / nb;
        let s = 1.0 / ratio;
        let r = pose.coords[root];
        frames.push(Pose::new(
            pose.coords
                .iter()
                .enumerate()
                .map(|(j, &c)| {
                    if j == root {
                        c
                    } else {
                        geom::add(r, geom::scale(geom::sub(c, r), s))
                    }
                })
                .collect(),
        ));
    }
    Ok(PoseSequence {
        id: sequence.id.clone(),
        tokens: sequence.tokens.clone(),
        frames,
    })
}

/// Perturbs every coordinate with independent zero-mean Gaussian noise.
pub fn add_gaussian_noise<R: Rng + ?Sized>(pose: &Pose, stddev: f64, rng: &mut R) -> Result<Pose> {
    if !(stddev >= 0.0) || !stddev.is_finite() {
        return Err(Error::invalid(format!(
            "noise stddev must be finite and >= 0, got {stddev}"
        )));
    }
    if stddev == 0.0 {
        return Ok(pose.clone());
    }
    let normal = Normal::new(0.0, stddev).expect("valid stddev");
    Ok(Pose::new(
        pose.coords
            .iter()
            .map(|c| {
                [
                    c[0] + normal.sample(rng),
                    c[1] + normal.sample(rng),
                    c[2] + normal.sample(rng),
                ]
            })
            .collect(),
    ))
}

// ---------------------------------------------------------------------------
// Synthetic sign-like motion
// ---------------------------------------------------------------------------

/// Joint-angle offsets `(azimuth, elevation)` in radians for one joint name.
type AngleOffset = (&'static str, f64, f64);

/// A motion primitive: a keyframe of angle offsets reached by cosine easing,
/// optionally overlaid with an oscillation that vanishes at both segment ends.
#[derive(Debug, Clone, Copy)]
pub struct Primitive {
    pub name: &'static str,
    pub duration: usize,
    keyframe: &'static [AngleOffset],
    oscillation: Option<Oscillation>,
}

#[derive(Debug, Clone, Copy)]
struct Oscillation {
    joint: &'static str,
    azimuth: f64,
    elevation: f64,
    cycles: f64,
}

const DEG: f64 = PI / 180.0;

/// The fixed primitive vocabulary. Durations lie in 20..=60 frames.
pub const PRIMITIVES: &[Primitive] = &[
    Primitive {
        name: "raise_left",
        duration: 30,
        keyframe: &[("left_elbow", 0.0, 70.0 * DEG), ("left_wrist", 0.0, 90.0 * DEG)],
        oscillation: None,
    },
    Primitive {
        name: "raise_right",
        duration: 30,
        keyframe: &[("right_elbow", 0.0, 70.0 * DEG), ("right_wrist", 0.0, 90.0 * DEG)],
        oscillation: None,
    },
    Primitive {
        name: "wave_left",
        duration: 48,
        keyframe: &[("left_elbow", 0.0, 55.0 * DEG), ("left_wrist", 20.0 * DEG, 110.0 * DEG)],
        oscillation: Some(Oscillation {
            joint: "left_wrist",
            azimuth: 30.0 * DEG,
            elevation: 0.0,
            cycles: 2.0,
        }),
    },
    Primitive {
        name: "wave_right",
        duration: 48,
        keyframe: &[("right_elbow", 0.0, 55.0 * DEG), ("right_wrist", -20.0 * DEG, 110.0 * DEG)],
        oscillation: Some(Oscillation {
            joint: "right_wrist",
            azimuth: 30.0 * DEG,
            elevation: 0.0,
            cycles: 2.0,
        }),
    },
    Primitive {
        name: "pinch_left",
        duration: 36,
        keyframe: &[
            ("left_elbow", 40.0 * DEG, 30.0 * DEG),
            ("left_wrist", 30.0 * DEG, 60.0 * DEG),
            ("left_palm", 0.0, 25.0 * DEG),
            ("left_finger1", 0.0, -45.0 * DEG),
            ("left_finger2", 0.0, -60.0 * DEG),
        ],
        oscillation: None,
    },
    Primitive {
        name: "pinch_right",
        duration: 36,
        keyframe: &[
            ("right_elbow", -40.0 * DEG, 30.0 * DEG),
            ("right_wrist", -30.0 * DEG, 60.0 * DEG),
            ("right_palm", 0.0, 25.0 * DEG),
            ("right_finger1", 0.0, -45.0 * DEG),
            ("right_finger2", 0.0, -60.0 * DEG),
        ],
        oscillation: None,
    },
    Primitive {
        name: "point_left",
        duration: 28,
        keyframe: &[
            ("left_elbow", 60.0 * DEG, 50.0 * DEG),
            ("left_wrist", 10.0 * DEG, 20.0 * DEG),
            ("left_finger1", 0.0, 30.0 * DEG),
        ],
        oscillation: None,
    },
    Primitive {
        name: "point_right",
        duration: 28,
        keyframe: &[
            ("right_elbow", -60.0 * DEG, 50.0 * DEG),
            ("right_wrist", -10.0 * DEG, 20.0 * DEG),
            ("right_finger1", 0.0, 30.0 * DEG),
        ],
        oscillation: None,
    },
    Primitive {
        name: "nod",
        duration: 24,
        keyframe: &[("head", 0.0, -15.0 * DEG)],
        oscillation: Some(Oscillation {
            joint: "head",
            azimuth: 0.0,
            elevation: 20.0 * DEG,
            cycles: 1.5,
        }),
    },
    Primitive {
        name: "shrug",
        duration: 22,
        keyframe: &[
            ("left_shoulder", 0.0, 20.0 * DEG),
            ("right_shoulder", 0.0, 20.0 * DEG),
            ("neck", 0.0, -5.0 * DEG),
        ],
        oscillation: None,
    },
];

pub fn primitive(name: &str) -> Option<&'static Primitive> {
    PRIMITIVES.iter().find(|p| p.name == name)
}

/// Rest-pose bone angles `(azimuth, elevation)` and lengths for the default
/// skeleton, keyed by child joint name. x points to the signer's left, y up,
/// z towards the viewer.
const REST: &[(&str, f64, f64, f64)] = &[
    ("neck", 0.0, 90.0, 0.10),
    ("head", 0.0, 80.0, 0.12),
    ("left_shoulder", 0.0, -5.0, 0.18),
    ("left_elbow", 10.0, -80.0, 0.28),
    ("left_wrist", 40.0, -50.0, 0.25),
    ("left_palm", 50.0, -40.0, 0.08),
    ("left_finger1", 50.0, -30.0, 0.045),
    ("left_finger2", 50.0, -30.0, 0.035),
    ("right_shoulder", 180.0, -5.0, 0.18),
    ("right_elbow", 170.0, -80.0, 0.28),
    ("right_wrist", 140.0, -50.0, 0.25),
    ("right_palm", 130.0, -40.0, 0.08),
    ("right_finger1", 130.0, -30.0, 0.045),
    ("right_finger2", 130.0, -30.0, 0.035),
];

fn direction(azimuth: f64, elevation: f64) -> Vec3 {
    [
        elevation.cos() * azimuth.cos(),
        elevation.sin(),
        elevation.cos() * azimuth.sin(),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Primitive names to draw tokens from.
    #[serde(default = "default_vocabulary")]
    pub vocabulary: Vec<String>,
    #[serde(default = "default_num_sequences")]
    pub num_sequences: usize,
    /// Each primitive's duration is jittered uniformly by up to this many frames.
    #[serde(default = "default_jitter")]
    pub frame_jitter: usize,
    /// Per-bone lengths in canonical bone order; rest lengths when absent.
    #[serde(default)]
    pub bone_lengths: Option<Vec<f64>>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
}

fn default_vocabulary() -> Vec<String> {
    PRIMITIVES.iter().map(|p| p.name.to_string()).collect()
}

fn default_num_sequences() -> usize {
    250
}

fn default_jitter() -> usize {
    3
}

fn default_max_tokens() -> usize {
    3
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocabulary: default_vocabulary(),
            num_sequences: default_num_sequences(),
            frame_jitter: default_jitter(),
            bone_lengths: None,
            max_tokens: default_max_tokens(),
        }
    }
}

impl SynthConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
        }
    }
}

/// Rest bone lengths of the default skeleton in canonical bone order.
pub fn rest_bone_lengths(skeleton: &Skeleton) -> Vec<f64> {
    skeleton
        .bones()
        .iter()
        .map(|&b| {
            REST.iter()
                .find(|r| r.0 == skeleton.joint_name(b))
                .map_or(0.1, |r| r.3)
        })
        .collect()
}

struct Rig<'a> {
    skeleton: &'a Skeleton,
    rest: Vec<(f64, f64)>,
    lengths: Vec<f64>,
}

impl Rig<'_> {
    fn joint(&self, name: &str) -> Option<usize> {
        (0..self.skeleton.num_joints()).find(|&j| self.skeleton.joint_name(j) == name)
    }

    fn offsets(&self, keys: &[AngleOffset]) -> Vec<(f64, f64)> {
        let mut o = vec![(0.0, 0.0); self.skeleton.num_joints()];
        for &(name, az, el) in keys {
            if let Some(j) = self.joint(name) {
                o[j] = (az, el);
            }
        }
        o
    }

    /// Offsets accumulate down the tree, so moving a bone carries its children.
    fn pose(&self, local: &[(f64, f64)]) -> Pose {
        let n = self.skeleton.num_joints();
        let mut acc = vec![(0.0, 0.0); n];
        for &j in self.skeleton.traversal_order() {
            let up = self.skeleton.parent(j).map_or((0.0, 0.0), |p| acc[p]);
            acc[j] = (up.0 + local[j].0, up.1 + local[j].1);
        }
        let links = self
            .skeleton
            .bones()
            .iter()
            .enumerate()
            .map(|(k, &b)| {
                let (az, el) = (self.rest[k].0 + acc[b].0, self.rest[k].1 + acc[b].1);
                geom::scale(direction(az, el), self.lengths[k])
            })
            .collect();
        reconstruct_pose(
            &LinkSet {
                root_position: [0.0; 3],
                links,
            },
            self.skeleton,
        )
        .expect("rig links sized for skeleton")
    }
}

/// Renders the trajectory for a token list with the given per-primitive durations.
fn render(rig: &Rig<'_>, prims: &[&Primitive], durations: &[usize]) -> Vec<Pose> {
    let n = rig.skeleton.num_joints();
    let mut from = vec![(0.0, 0.0); n];
    let mut frames = Vec::new();
    for (p, &d) in prims.iter().zip(durations) {
        let to = rig.offsets(p.keyframe);
        let osc = p.oscillation.and_then(|o| rig.joint(o.joint).map(|j| (j, o)));
        for step in 0..d {
            let s = (step + 1) as f64 / d as f64;
            let ease = 0.5 * (1.0 - (PI * s).cos());
            let mut local: Vec<(f64, f64)> = from
                .iter()
                .zip(&to)
                .map(|(a, b)| (a.0 + (b.0 - a.0) * ease, a.1 + (b.1 - a.1) * ease))
                .collect();
            if let Some((j, o)) = osc {
                let w = (2.0 * PI * o.cycles * s).sin() * (PI * s).sin();
                local[j].0 += o.azimuth * w;
                local[j].1 += o.elevation * w;
            }
            frames.push(rig.pose(&local));
        }
        from = to;
    }
    frames
}

fn make_rig<'a>(skeleton: &'a Skeleton, config: &SynthConfig) -> Result<Rig<'a>> {
    let lengths = match &config.bone_lengths {
        Some(l) => {
            if l.len() != skeleton.num_bones() {
                return Err(Error::Shape {
                    context: "synth bone_lengths".into(),
                    expected: skeleton.num_bones(),
                    found: l.len(),
                });
            }
            if l.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(Error::Config("bone_lengths must be positive".into()));
            }
            l.clone()
        }
        None => rest_bone_lengths(skeleton),
    };
    let rest = skeleton
        .bones()
        .iter()
        .map(|&b| {
            REST.iter()
                .find(|r| r.0 == skeleton.joint_name(b))
                .map_or((0.0, 90.0 * DEG), |r| (r.1 * DEG, r.2 * DEG))
        })
        .collect();
    Ok(Rig {
        skeleton,
        rest,
        lengths,
    })
}

/// Trajectory for a token list at the primitives' nominal durations.
pub fn render_tokens(skeleton: &Skeleton, config: &SynthConfig, tokens: &[String]) -> Result<Vec<Pose>> {
    let rig = make_rig(skeleton, config)?;
    let prims = tokens
        .iter()
        .map(|t| primitive(t).ok_or_else(|| Error::UnknownToken(t.clone())))
        .collect::<Result<Vec<_>>>()?;
    let durations: Vec<usize> = prims.iter().map(|p| p.duration).collect();
    Ok(render(&rig, &prims, &durations))
}

/// Generates a dataset of sign-like sequences over the default skeleton.
/// Output depends only on `(config, seed)`.
pub fn synthesize_dataset(config: &SynthConfig, seed: u64) -> Result<Dataset> {
    synthesize_with_skeleton(crate::skeleton::default_skeleton(), config, seed)
}

pub fn synthesize_with_skeleton(skeleton: Skeleton, config: &SynthConfig, seed: u64) -> Result<Dataset> {
    if config.vocabulary.is_empty() {
        return Err(Error::Config("empty vocabulary".into()));
    }
    if config.num_sequences == 0 {
        return Err(Error::Config("num_sequences must be at least 1".into()));
    }
    if config.max_tokens == 0 {
        return Err(Error::Config("max_tokens must be at least 1".into()));
    }
    let prims = config
        .vocabulary
        .iter()
        .map(|t| primitive(t).ok_or_else(|| Error::Config(format!("unknown primitive `{t}`"))))
        .collect::<Result<Vec<_>>>()?;
    let rig = make_rig(&skeleton, config)?;
    let mut rng = SeededRng::seed_from_u64(seed);
    let jitter = config.frame_jitter as i64;
    let mut sequences = Vec::with_capacity(config.num_sequences);
    for i in 0..config.num_sequences {
        let count = rng.random_range(1..=config.max_tokens);
        let chosen: Vec<&Primitive> = (0..count)
            .map(|_| prims[rng.random_range(0..prims.len())])
            .collect();
        let durations: Vec<usize> = chosen
            .iter()
            .map(|p| {
                let j = rng.random_range(-jitter..=jitter);
                (p.duration as i64 + j).max(2) as usize
            })
            .collect();
        sequences.push(PoseSequence {
            id: format!("seq{i:05}"),
            tokens: chosen.iter().map(|p| p.name.to_string()).collect(),
            frames: render(&rig, &chosen, &durations),
        });
    }
    Dataset::new(skeleton, sequences, Split::Train)
}
