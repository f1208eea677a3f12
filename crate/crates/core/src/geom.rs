//! Small fixed-size vector helpers shared by every module.

pub type Vec3 = [f64; 3];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn is_finite(a: Vec3) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Trace of the population covariance of a set of 3-vectors: the sum of the
/// three per-component population variances. Zero for fewer than two samples.
///
/// Samples are shifted by the first one before the two-pass accumulation, so
/// constant data gives exactly zero.
pub fn trace_variance<I>(samples: I) -> f64
where
    I: IntoIterator<Item = Vec3>,
    I::IntoIter: Clone,
{
    let it = samples.into_iter();
    let Some(origin) = it.clone().next() else {
        return 0.0;
    };
    let mut n = 0usize;
    let mut mean = [0.0; 3];
    for v in it.clone() {
        n += 1;
        mean = add(mean, sub(v, origin));
    }
    mean = scale(mean, 1.0 / n as f64);
    let mut acc = 0.0;
    for v in it {
        let d = sub(sub(v, origin), mean);
        acc += dot(d, d);
    }
    acc / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_variance_two_points() {
        assert_eq!(trace_variance([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]), 1.0);
        assert_eq!(trace_variance(std::iter::empty::<Vec3>()), 0.0);
        assert_eq!(trace_variance([[3.0, 1.0, 2.0]; 4]), 0.0);
    }
}
