//! Central finite-difference verification of analytic gradients.

use rand::Rng;

use crate::error::Result;
use crate::geom;
use crate::losses::LossValue;
use crate::skeleton::{Pose, Skeleton};

pub const DEFAULT_STEP: f64 = 1e-6;

/// Minimum distance from a kink for a sampled instance.
pub const KINK_MARGIN: f64 = 1e-3;

/// Max over coordinates of `|analytic − numeric| / max(1, |numeric|)` for a
/// function of a flat parameter vector returning `(value, gradient)`.
pub fn check_flat<F>(mut f: F, x: &[f64], step: f64) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(x);
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for k in 0..x.len() {
        probe[k] = x[k] + step;
        let (plus, _) = f(&probe);
        probe[k] = x[k] - step;
        let (minus, _) = f(&probe);
        probe[k] = x[k];
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max((analytic[k] - numeric).abs() / numeric.abs().max(1.0));
    }
    worst
}

fn flatten(frames: &[Pose]) -> Vec<f64> {
    frames.iter().flat_map(|f| f.flat()).collect()
}

fn unflatten(x: &[f64], joints: usize) -> Vec<Pose> {
    x.chunks(joints * 3)
        .map(|c| Pose::new(c.chunks(3).map(|v| [v[0], v[1], v[2]]).collect()))
        .collect()
}

/// Compares a pose loss's analytic gradient with central differences taken
/// around `pred`.
pub fn gradient_check<F>(loss: F, pred: &[Pose], step: f64) -> Result<f64>
where
    F: Fn(&[Pose]) -> Result<LossValue>,
{
    let joints = pred.first().map_or(0, |p| p.num_joints());
    // Surface errors from the unperturbed evaluation before probing.
    loss(pred)?;
    let x = flatten(pred);
    Ok(check_flat(
        |x| {
            let l = loss(&unflatten(x, joints)).expect("loss defined near a valid instance");
            (l.value, flatten(&l.grad))
        },
        &x,
        step,
    ))
}

/// True when every bone of `pred` is at least [`KINK_MARGIN`] away from zero
/// length, from the reference length, and from the reference link.
pub fn is_away_from_kinks(pred: &[Pose], reference: &[Pose], skeleton: &Skeleton) -> bool {
    pred.iter().zip(reference).all(|(p, r)| {
        skeleton.bone_pairs().all(|(c, par)| {
            let bh = geom::sub(p.coords[c], p.coords[par]);
            let b = geom::sub(r.coords[c], r.coords[par]);
            let (q, l) = (geom::norm(bh), geom::norm(b));
            q >= KINK_MARGIN && (q - l).abs() >= KINK_MARGIN && geom::norm(geom::sub(bh, b)) >= KINK_MARGIN
        })
    })
}

/// Random `(pred, reference)` pair of `frames` frames, resampled until it is
/// away from every kink. Coordinates lie in `[-1, 1]`; predictions are
/// reference plus a perturbation in `[-0.3, 0.3]`.
pub fn sample_instance<R: Rng + ?Sized>(
    rng: &mut R,
    skeleton: &Skeleton,
    frames: usize,
) -> (Vec<Pose>, Vec<Pose>) {
    let n = skeleton.num_joints();
    loop {
        let reference: Vec<Pose> = (0..frames)
            .map(|_| {
                Pose::new(
                    (0..n)
                        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
                        .collect(),
                )
            })
            .collect();
        let pred: Vec<Pose> = reference
            .iter()
            .map(|r| {
                Pose::new(
                    r.coords
                        .iter()
                        .map(|c| std::array::from_fn(|k| c[k] + rng.random_range(-0.3..0.3)))
                        .collect(),
                )
            })
            .collect();
        if is_away_from_kinks(&pred, &reference, skeleton) {
            return (pred, reference);
        }
    }
}
