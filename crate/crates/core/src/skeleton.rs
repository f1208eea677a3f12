//! Skeletal topology, link decomposition and the six-way bone-group taxonomy.
//!
//! A bone is identified by its child joint: bone `i` is the link from
//! `parent(i)` to joint `i`, and a joint's group label names that bone.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoneGroup {
    Neck,
    Shoulder,
    UpperArm,
    LowerArm,
    Palm,
    Finger,
}

impl BoneGroup {
    /// Top-to-bottom order used by every report.
    pub const ALL: [BoneGroup; 6] = [
        BoneGroup::Neck,
        BoneGroup::Shoulder,
        BoneGroup::UpperArm,
        BoneGroup::LowerArm,
        BoneGroup::Palm,
        BoneGroup::Finger,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoneGroup::Neck => "neck",
            BoneGroup::Shoulder => "shoulder",
            BoneGroup::UpperArm => "upper_arm",
            BoneGroup::LowerArm => "lower_arm",
            BoneGroup::Palm => "palm",
            BoneGroup::Finger => "finger",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for BoneGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoneGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BoneGroup::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown bone group `{s}`")))
    }
}

/// One problem found by [`validate_topology`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopologyViolation {
    Empty,
    LengthMismatch { names: usize, parents: usize },
    DuplicateName(String),
    NoRoot,
    MultipleRoots(Vec<usize>),
    ParentOutOfRange { joint: usize, parent: i64 },
    /// Joints that never reach a root when following parent links.
    Cycle(Vec<usize>),
    UnknownGroup(String),
    GroupIndexOutOfRange { group: String, joint: usize },
    RootLabeled { group: String, joint: usize },
    UnlabeledBone(usize),
    MultiplyLabeled { joint: usize, groups: Vec<String> },
}

impl fmt::Display for TopologyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use TopologyViolation::*;
        match self {
            Empty => write!(f, "skeleton has no joints"),
            LengthMismatch { names, parents } => {
                write!(f, "{names} joint names but {parents} parent entries")
            }
            DuplicateName(n) => write!(f, "duplicate joint name `{n}`"),
            NoRoot => write!(f, "no root (no joint has parent -1)"),
            MultipleRoots(r) => write!(f, "multiple roots: joints {r:?}"),
            ParentOutOfRange { joint, parent } => {
                write!(f, "joint {joint} has out-of-range parent {parent}")
            }
            Cycle(j) => write!(f, "cycle: joints {j:?} never reach the root"),
            UnknownGroup(g) => write!(f, "unknown bone group `{g}`"),
            GroupIndexOutOfRange { group, joint } => {
                write!(f, "group `{group}` references missing joint {joint}")
            }
            RootLabeled { group, joint } => {
                write!(f, "root joint {joint} is labeled with group `{group}`")
            }
            UnlabeledBone(j) => write!(f, "unlabeled bone: joint {j} belongs to no group"),
            MultiplyLabeled { joint, groups } => {
                write!(f, "joint {joint} belongs to several groups {groups:?}")
            }
        }
    }
}

/// Skeleton as stored on disk. May be malformed; see [`validate_topology`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonDef {
    pub joint_names: Vec<String>,
    pub parents: Vec<i64>,
    pub groups: BTreeMap<String, Vec<usize>>,
}

/// Checks every structural invariant and returns all violations found.
/// An empty list means the skeleton is well formed.
pub fn validate_topology(def: &SkeletonDef) -> Vec<TopologyViolation> {
    use TopologyViolation::*;
    let mut out = Vec::new();
    let n = def.parents.len();
    if n == 0 {
        out.push(Empty);
        return out;
    }
    if def.joint_names.len() != n {
        out.push(LengthMismatch {
            names: def.joint_names.len(),
            parents: n,
        });
    }
    let mut seen = std::collections::BTreeSet::new();
    for name in &def.joint_names {
        if !seen.insert(name.as_str()) {
            out.push(DuplicateName(name.clone()));
        }
    }

    let roots: Vec<usize> = (0..n).filter(|&i| def.parents[i] == -1).collect();
    match roots.len() {
        0 => out.push(NoRoot),
        1 => {}
        _ => out.push(MultipleRoots(roots.clone())),
    }
    let mut parent_ok = true;
    for (i, &p) in def.parents.iter().enumerate() {
        if p != -1 && (p < 0 || p as usize >= n) {
            out.push(ParentOutOfRange { joint: i, parent: p });
            parent_ok = false;
        }
    }
    if parent_ok {
        // A joint is acyclic iff walking up its parents hits -1 within n steps.
        let stuck: Vec<usize> = (0..n)
            .filter(|&i| {
                let mut cur = i as i64;
                for _ in 0..=n {
                    if cur == -1 {
                        return false;
                    }
                    cur = def.parents[cur as usize];
                }
                cur != -1
            })
            .collect();
        if !stuck.is_empty() {
            out.push(Cycle(stuck));
        }
    }

    let mut labels: Vec<Vec<String>> = vec![Vec::new(); n];
    for (group, members) in &def.groups {
        if group.parse::<BoneGroup>().is_err() {
            out.push(UnknownGroup(group.clone()));
            continue;
        }
        for &j in members {
            if j >= n {
                out.push(GroupIndexOutOfRange {
                    group: group.clone(),
                    joint: j,
                });
            } else if def.parents[j] == -1 {
                out.push(RootLabeled {
                    group: group.clone(),
                    joint: j,
                });
            } else {
                labels[j].push(group.clone());
            }
        }
    }
    for (j, l) in labels.into_iter().enumerate() {
        if def.parents[j] == -1 {
            continue;
        }
        match l.len() {
            0 => out.push(UnlabeledBone(j)),
            1 => {}
            _ => out.push(MultiplyLabeled { joint: j, groups: l }),
        }
    }
    out
}

/// A validated skeleton. Construct with [`Skeleton::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    def: SkeletonDef,
    root: usize,
    /// Parent-before-child traversal order starting at the root.
    order: Vec<usize>,
    /// Non-root joints in canonical order; bone `k` ends at `bones[k]`.
    bones: Vec<usize>,
    group_of: Vec<Option<BoneGroup>>,
}

impl Skeleton {
    pub fn new(def: SkeletonDef) -> Result<Self> {
        let violations = validate_topology(&def);
        if !violations.is_empty() {
            return Err(Error::Topology(violations));
        }
        let n = def.parents.len();
        let root = def.parents.iter().position(|&p| p == -1).unwrap();
        let mut children = vec![Vec::new(); n];
        for (i, &p) in def.parents.iter().enumerate() {
            if p >= 0 {
                children[p as usize].push(i);
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![root];
        while let Some(j) = stack.pop() {
            order.push(j);
            stack.extend(children[j].iter().rev());
        }
        let bones = (0..n).filter(|&i| i != root).collect();
        let mut group_of = vec![None; n];
        for (g, members) in &def.groups {
            let g: BoneGroup = g.parse()?;
            for &j in members {
                group_of[j] = Some(g);
            }
        }
        Ok(Skeleton {
            def,
            root,
            order,
            bones,
            group_of,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let def: SkeletonDef =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("skeleton: {e}")))?;
        Skeleton::new(def)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let def: SkeletonDef = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Skeleton::new(def)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.def).expect("skeleton serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n")
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn def(&self) -> &SkeletonDef {
        &self.def
    }

    pub fn num_joints(&self) -> usize {
        self.def.parents.len()
    }

    pub fn num_bones(&self) -> usize {
        self.bones.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn joint_name(&self, j: usize) -> &str {
        &self.def.joint_names[j]
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        let p = self.def.parents[j];
        (p >= 0).then_some(p as usize)
    }

    /// Child joint of every bone, in canonical joint order.
    pub fn bones(&self) -> &[usize] {
        &self.bones
    }

    /// `(child, parent)` pairs in canonical bone order.
    pub fn bone_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bones
            .iter()
            .map(move |&c| (c, self.def.parents[c] as usize))
    }

    pub fn group_of(&self, joint: usize) -> Option<BoneGroup> {
        self.group_of[joint]
    }

    pub fn traversal_order(&self) -> &[usize] {
        &self.order
    }
}

/// Joint positions of one frame, in the skeleton's canonical joint order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pose {
    pub coords: Vec<Vec3>,
}

impl Pose {
    pub fn new(coords: Vec<Vec3>) -> Self {
        Pose { coords }
    }

    pub fn zeros(n: usize) -> Self {
        Pose {
            coords: vec![[0.0; 3]; n],
        }
    }

    pub fn num_joints(&self) -> usize {
        self.coords.len()
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|&c| geom::is_finite(c))
    }

    pub fn translated(&self, v: Vec3) -> Pose {
        Pose::new(self.coords.iter().map(|&c| geom::add(c, v)).collect())
    }

    pub fn scaled(&self, s: f64) -> Pose {
        Pose::new(self.coords.iter().map(|&c| geom::scale(c, s)).collect())
    }

    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.coords.iter().flatten().copied()
    }
}

/// Root position plus one parent-relative link per bone.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSet {
    pub root_position: Vec3,
    /// `links[k]` is the link ending at `skeleton.bones()[k]`.
    pub links: Vec<Vec3>,
}

fn check_joints(pose: &Pose, skeleton: &Skeleton, context: &str) -> Result<()> {
    if pose.num_joints() != skeleton.num_joints() {
        return Err(Error::Shape {
            context: context.into(),
            expected: skeleton.num_joints(),
            found: pose.num_joints(),
        });
    }
    Ok(())
}

pub fn compute_links(pose: &Pose, skeleton: &Skeleton) -> Result<LinkSet> {
    check_joints(pose, skeleton, "compute_links")?;
    Ok(LinkSet {
        root_position: pose.coords[skeleton.root()],
        links: skeleton
            .bone_pairs()
            .map(|(c, p)| geom::sub(pose.coords[c], pose.coords[p]))
            .collect(),
    })
}

pub fn reconstruct_pose(links: &LinkSet, skeleton: &Skeleton) -> Result<Pose> {
    if links.links.len() != skeleton.num_bones() {
        return Err(Error::Shape {
            context: "reconstruct_pose".into(),
            expected: skeleton.num_bones(),
            found: links.links.len(),
        });
    }
    let n = skeleton.num_joints();
    let mut link_of = vec![[0.0; 3]; n];
    for (k, &c) in skeleton.bones().iter().enumerate() {
        link_of[c] = links.links[k];
    }
    let mut coords = vec![[0.0; 3]; n];
    for &j in skeleton.traversal_order() {
        coords[j] = match skeleton.parent(j) {
            None => links.root_position,
            Some(p) => geom::add(coords[p], link_of[j]),
        };
    }
    Ok(Pose::new(coords))
}

/// Per-bone lengths of a pose, in canonical bone order.
pub fn bone_lengths(pose: &Pose, skeleton: &Skeleton) -> Vec<f64> {
    skeleton
        .bone_pairs()
        .map(|(c, p)| geom::norm(geom::sub(pose.coords[c], pose.coords[p])))
        .collect()
}

/// The 15-joint upper-body skeleton used by the synthetic generator: a neck
/// chain rooted at the lower neck, and on each side shoulder, elbow, wrist,
/// palm and two finger segments.
pub fn default_skeleton() -> Skeleton {
    let mut names: Vec<String> = vec!["lower_neck".into(), "neck".into(), "head".into()];
    let mut parents: Vec<i64> = vec![-1, 0, 1];
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    groups.insert("neck".into(), vec![1, 2]);
    for side in ["left", "right"] {
        let base = parents.len() as i64;
        let chain = [
            ("shoulder", 0, BoneGroup::Shoulder),
            ("elbow", base, BoneGroup::UpperArm),
            ("wrist", base + 1, BoneGroup::LowerArm),
            ("palm", base + 2, BoneGroup::Palm),
            ("finger1", base + 3, BoneGroup::Finger),
            ("finger2", base + 4, BoneGroup::Finger),
        ];
        for (name, parent, group) in chain {
            groups
                .entry(group.name().into())
                .or_default()
                .push(parents.len());
            names.push(format!("{side}_{name}"));
            parents.push(parent);
        }
    }
    Skeleton::new(SkeletonDef {
        joint_names: names,
        parents,
        groups,
    })
    .expect("default skeleton is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(parents: Vec<i64>, groups: &[(&str, Vec<usize>)]) -> SkeletonDef {
        SkeletonDef {
            joint_names: (0..parents.len()).map(|i| format!("j{i}")).collect(),
            parents,
            groups: groups
                .iter()
                .map(|(g, m)| (g.to_string(), m.clone()))
                .collect(),
        }
    }

    #[test]
    fn minimal_chain_is_valid() {
        let def = chain(vec![-1, 0, 1], &[("neck", vec![1]), ("finger", vec![2])]);
        assert!(validate_topology(&def).is_empty());
    }

    #[test]
    fn two_roots_rejected() {
        let def = chain(vec![-1, -1, 0], &[("neck", vec![2])]);
        let v = validate_topology(&def);
        assert!(v.contains(&TopologyViolation::MultipleRoots(vec![0, 1])));
        assert!(v.iter().any(|x| x.to_string().contains("multiple roots")));
    }

    #[test]
    fn cycle_without_root_rejected() {
        let def = chain(vec![2, 0, 1], &[("neck", vec![0, 1, 2])]);
        let v = validate_topology(&def);
        assert!(v.contains(&TopologyViolation::NoRoot));
        assert!(v.contains(&TopologyViolation::Cycle(vec![0, 1, 2])));
    }

    #[test]
    fn all_violations_reported() {
        let def = chain(
            vec![-1, 0, 7, 3, 3],
            &[("neck", vec![1, 9]), ("tail", vec![2])],
        );
        let v = validate_topology(&def);
        assert!(v.contains(&TopologyViolation::ParentOutOfRange { joint: 2, parent: 7 }));
        assert!(v.contains(&TopologyViolation::UnknownGroup("tail".into())));
        assert!(v.contains(&TopologyViolation::GroupIndexOutOfRange {
            group: "neck".into(),
            joint: 9
        }));
        assert!(v.contains(&TopologyViolation::UnlabeledBone(4)));
        assert!(matches!(Skeleton::new(def), Err(Error::Topology(_))));
    }

    #[test]
    fn self_parent_is_a_cycle() {
        let def = chain(vec![-1, 1], &[("neck", vec![1])]);
        assert_eq!(validate_topology(&def), vec![TopologyViolation::Cycle(vec![1])]);
    }

    #[test]
    fn default_skeleton_covers_all_groups() {
        let s = default_skeleton();
        assert_eq!(s.num_joints(), 15);
        assert_eq!(s.root(), 0);
        assert_eq!(s.joint_name(0), "lower_neck");
        for g in BoneGroup::ALL {
            assert!(s.bones().iter().any(|&b| s.group_of(b) == Some(g)), "{g}");
        }
        let back = Skeleton::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn links_of_simple_poses() {
        let s = Skeleton::new(chain(vec![-1, 0], &[("neck", vec![1])])).unwrap();
        let l = compute_links(&Pose::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]), &s).unwrap();
        assert_eq!(l.root_position, [0.0; 3]);
        assert_eq!(l.links, vec![[1.0, 0.0, 0.0]]);
        let l = compute_links(&Pose::new(vec![[1.0; 3], [1.0; 3]]), &s).unwrap();
        assert_eq!(l.links, vec![[0.0; 3]]);

        let back = reconstruct_pose(
            &LinkSet {
                root_position: [0.0; 3],
                links: vec![[1.0, 0.0, 0.0]],
            },
            &s,
        )
        .unwrap();
        assert_eq!(back.coords, vec![[0.0; 3], [1.0, 0.0, 0.0]]);

        let s3 = Skeleton::new(chain(vec![-1, 0, 1], &[("neck", vec![1, 2])])).unwrap();
        let l = compute_links(
            &Pose::new(vec![[0.0; 3], [0.0, 3.0, 4.0], [0.0, 3.0, 6.0]]),
            &s3,
        )
        .unwrap();
        assert_eq!(l.links, vec![[0.0, 3.0, 4.0], [0.0, 0.0, 2.0]]);
    }

    #[test]
    fn zero_links_collapse_to_root() {
        let s = default_skeleton();
        let p = reconstruct_pose(
            &LinkSet {
                root_position: [0.5, -1.0, 2.0],
                links: vec![[0.0; 3]; s.num_bones()],
            },
            &s,
        )
        .unwrap();
        assert!(p.coords.iter().all(|&c| c == [0.5, -1.0, 2.0]));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let s = default_skeleton();
        assert!(matches!(
            compute_links(&Pose::zeros(3), &s),
            Err(Error::Shape { .. })
        ));
        let bad = LinkSet {
            root_position: [0.0; 3],
            links: vec![[0.0; 3]; 2],
        };
        assert!(reconstruct_pose(&bad, &s).is_err());
    }
}
