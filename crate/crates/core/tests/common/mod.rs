#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use signkit::posedata::{Dataset, PoseSequence, Split};
use signkit::skeleton::{BoneGroup, Pose, Skeleton, SkeletonDef};

/// Random tree on `n >= 2` joints rooted at joint 0, every bone labeled with
/// a random group.
pub fn random_skeleton<R: Rng>(rng: &mut R, n: usize) -> Skeleton {
    let mut parents = vec![-1i64];
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for j in 1..n {
        parents.push(rng.random_range(0..j) as i64);
        let g = BoneGroup::ALL[rng.random_range(0..6)];
        groups.entry(g.name().to_string()).or_default().push(j);
    }
    Skeleton::new(SkeletonDef {
        joint_names: (0..n).map(|j| format!("j{j}")).collect(),
        parents,
        groups,
    })
    .unwrap()
}

pub fn random_pose<R: Rng>(rng: &mut R, n: usize, spread: f64) -> Pose {
    Pose::new(
        (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(-spread..spread)))
            .collect(),
    )
}

pub fn random_frames<R: Rng>(rng: &mut R, n: usize, frames: usize) -> Vec<Pose> {
    (0..frames).map(|_| random_pose(rng, n, 1.0)).collect()
}

pub fn dataset(skeleton: &Skeleton, seqs: Vec<Vec<Pose>>) -> Dataset {
    let sequences = seqs
        .into_iter()
        .enumerate()
        .map(|(i, frames)| PoseSequence {
            id: format!("s{i}"),
            tokens: vec!["tok".into()],
            frames,
        })
        .collect();
    Dataset::new(skeleton.clone(), sequences, Split::Test).unwrap()
}

pub fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
