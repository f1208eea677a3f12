mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use signkit::losses::{bone_length_loss, bone_pose_loss, weighted_mse_loss};
use signkit::metrics::{movement_variance, Mode};
use signkit::posedata::{Dataset, PoseSequence, Split};
use signkit::skeleton::{compute_links, reconstruct_pose, Pose};
use signkit::weighting::{joint_variances, parent_relative_weights, BoneLambdas, JointWeights};
use signkit::SeededRng;

use common::{dataset, random_frames, random_pose, random_skeleton};

fn coord() -> impl Strategy<Value = f64> {
    -100.0..100.0f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn links_invert_and_ignore_translation(seed in any::<u64>(), n in 2usize..12, shift in prop::array::uniform3(coord())) {
        let mut rng = SeededRng::seed_from_u64(seed);
        let skel = random_skeleton(&mut rng, n);
        let pose = random_pose(&mut rng, n, 10.0);
        let links = compute_links(&pose, &skel).unwrap();
        let back = reconstruct_pose(&links, &skel).unwrap();
        for (a, b) in pose.coords.iter().zip(&back.coords) {
            for k in 0..3 {
                prop_assert!((a[k] - b[k]).abs() <= 1e-12);
            }
        }
        let moved = compute_links(&pose.translated(shift), &skel).unwrap();
        for (a, b) in links.links.iter().zip(&moved.links) {
            for k in 0..3 {
                prop_assert!((a[k] - b[k]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn weights_sum_to_bones_and_stay_in_unit_interval(seed in any::<u64>(), n in 2usize..10, seqs in 1usize..4) {
        let mut rng = SeededRng::seed_from_u64(seed);
        let skel = random_skeleton(&mut rng, n);
        let data: Vec<Vec<Pose>> = (0..seqs).map(|_| random_frames(&mut rng, n, 6)).collect();
        let w = parent_relative_weights(&joint_variances(&dataset(&skel, data)).unwrap());
        prop_assert!((w.w.iter().sum::<f64>() - (n as f64 - 1.0)).abs() <= 1e-9);
        prop_assert!(w.w.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn bone_losses_ignore_scale_and_translation(
        seed in any::<u64>(),
        s in 0.1f64..20.0,
        tp in prop::array::uniform3(coord()),
        tr in prop::array::uniform3(coord()),
    ) {
        let mut rng = SeededRng::seed_from_u64(seed);
        let skel = random_skeleton(&mut rng, 6);
        let pred = random_frames(&mut rng, 6, 3);
        let reference = random_frames(&mut rng, 6, 3);
        let lambdas = BoneLambdas::uniform(5);
        let l0 = bone_length_loss(&pred, &reference, &skel, &lambdas).unwrap().value;
        let p0 = bone_pose_loss(&pred, &reference, &skel).unwrap().value;
        let pred2: Vec<Pose> = pred.iter().map(|p| p.scaled(s).translated(tp)).collect();
        let ref2: Vec<Pose> = reference.iter().map(|p| p.scaled(s).translated(tr)).collect();
        let l1 = bone_length_loss(&pred2, &ref2, &skel, &lambdas).unwrap().value;
        let p1 = bone_pose_loss(&pred2, &ref2, &skel).unwrap().value;
        prop_assert!((l0 - l1).abs() <= 1e-9 * l0.max(1.0));
        prop_assert!((p0 - p1).abs() <= 1e-9 * p0.max(1.0));
    }

    #[test]
    fn losses_vanish_at_identity(seed in any::<u64>(), n in 2usize..8, t in 1usize..5) {
        let mut rng = SeededRng::seed_from_u64(seed);
        let skel = random_skeleton(&mut rng, n);
        let frames = random_frames(&mut rng, n, t);
        prop_assert_eq!(weighted_mse_loss(&frames, &frames, &JointWeights::uniform(n)).unwrap().value, 0.0);
        prop_assert_eq!(bone_length_loss(&frames, &frames, &skel, &BoneLambdas::uniform(n - 1)).unwrap().value, 0.0);
        prop_assert_eq!(bone_pose_loss(&frames, &frames, &skel).unwrap().value, 0.0);
    }

    #[test]
    fn local_variance_ignores_per_frame_translation(seed in any::<u64>(), n in 2usize..8) {
        let mut rng = SeededRng::seed_from_u64(seed);
        let skel = random_skeleton(&mut rng, n);
        let frames = random_frames(&mut rng, n, 5);
        let shifted: Vec<Pose> = frames
            .iter()
            .enumerate()
            .map(|(i, f)| f.translated([i as f64, -2.0 * i as f64, 0.5]))
            .collect();
        let seq = |frames: Vec<Pose>| PoseSequence { id: "s".into(), tokens: vec!["t".into()], frames };
        let a = movement_variance(&seq(frames), &skel, Mode::Local);
        let b = movement_variance(&seq(shifted), &skel, Mode::Local);
        // The root keeps its absolute position, so only bones are invariant.
        for j in skel.bones() {
            prop_assert!((a[*j] - b[*j]).abs() <= 1e-9);
        }
    }

    #[test]
    fn jsonl_round_trip_is_bit_exact(seed in any::<u64>(), values in prop::collection::vec(any::<f64>(), 6)) {
        let mut rng = SeededRng::seed_from_u64(seed);
        let skel = random_skeleton(&mut rng, 2);
        // Finite values drawn from the whole f64 range, including subnormals.
        let clean: Vec<f64> = values.iter().map(|v| if v.is_finite() { *v } else { 0.5 }).collect();
        let pose = Pose::new(vec![[clean[0], clean[1], clean[2]], [clean[3], clean[4], clean[5]]]);
        let ds = dataset(&skel, vec![vec![pose]]);
        let text = ds.to_jsonl();
        let back = Dataset::from_jsonl(text.as_bytes(), skel, Split::Test, "mem".as_ref()).unwrap();
        let bits = |d: &Dataset| d.sequences[0].frames[0].flat().map(f64::to_bits).collect::<Vec<_>>();
        prop_assert_eq!(bits(&ds), bits(&back));
        prop_assert_eq!(back.to_jsonl(), text);
    }
}
