//! Evaluation metrics: per-joint error, PCF, MDPC and bone-length clustering.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::Vec3;
use crate::{Error, Result, NUM_JOINTS};

fn check_subset(subset: &[usize]) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::validation("subset", "must name at least one joint"));
    }
    if let Some(j) = subset.iter().find(|j| **j >= NUM_JOINTS) {
        return Err(Error::validation("subset", alloc::format!("joint {j} out of range")));
    }
    Ok(())
}

fn check_frames(pred: &[[Vec3; NUM_JOINTS]], gt: &[[Vec3; NUM_JOINTS]]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::validation(
            "frames",
            alloc::format!("{} predictions but {} ground-truth frames", pred.len(), gt.len()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::validation("frames", "no frames to evaluate"));
    }
    Ok(())
}

/// Mean Euclidean distance over the `subset` joints of every frame.
pub fn mean_per_joint_error(pred: &[[Vec3; NUM_JOINTS]], gt: &[[Vec3; NUM_JOINTS]], subset: &[usize]) -> Result<f64> {
    check_frames(pred, gt)?;
    check_subset(subset)?;
    let mut sum = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        for &j in subset {
            sum += (p[j] - g[j]).norm();
        }
    }
    Ok(sum / (pred.len() * subset.len()) as f64)
}

/// Largest per-joint error of each frame over `subset`.
pub fn per_frame_max_error(
    pred: &[[Vec3; NUM_JOINTS]],
    gt: &[[Vec3; NUM_JOINTS]],
    subset: &[usize],
) -> Result<Vec<f64>> {
    check_frames(pred, gt)?;
    check_subset(subset)?;
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| subset.iter().map(|&j| (p[j] - g[j]).norm()).fold(0.0, f64::max))
        .collect())
}

/// Fraction of frames whose maximum error is at most each threshold.
pub fn pcf_curve(max_errors: &[f64], thresholds: &[f64]) -> Result<Vec<f64>> {
    if max_errors.is_empty() {
        return Err(Error::validation("frames", "no frames to evaluate"));
    }
    if thresholds.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::validation("thresholds", "must be sorted ascending"));
    }
    let n = max_errors.len() as f64;
    Ok(thresholds
        .iter()
        .map(|t| max_errors.iter().filter(|e| **e <= *t).count() as f64 / n)
        .collect())
}

/// Per-joint distance to the nearest cloud point.
pub fn mdpc(joints: &[Vec3], cloud: &[Vec3]) -> Result<Vec<f64>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(joints
        .iter()
        .map(|j| {
            let d2 = cloud
                .iter()
                .map(|p| (p - j).norm_squared())
                .fold(f64::INFINITY, f64::min);
            libm::sqrt(d2)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub mean: f64,
}

/// Median (mean of the middle pair for even counts) and mean.
pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::validation("values", "nothing to summarize"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Ok(Summary {
        median,
        mean: values.iter().sum::<f64>() / n as f64,
    })
}

/// Number of k-means restarts, the farthest-pair start included.
pub const KMEANS_RESTARTS: usize = 50;
const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterF1 {
    /// The two subject labels, ascending.
    pub labels: [usize; 2],
    /// F1 score of each subject, in `labels` order.
    pub f1: [f64; 2],
    /// Cluster (0 or 1) of each vector after matching clusters to subjects.
    pub assignment: Vec<usize>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lloyd(points: &[Vec<f64>], mut centers: [Vec<f64>; 2]) -> (Vec<usize>, f64) {
    let dim = points[0].len();
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(points) {
            let c = usize::from(dist2(p, &centers[1]) < dist2(p, &centers[0]));
            changed |= *a != c;
            *a = c;
        }
        if !changed {
            break;
        }
        for (k, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&assign)
                .filter(|(_, a)| **a == k)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                continue;
            }
            for d in 0..dim {
                center[d] = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    let inertia = points.iter().zip(&assign).map(|(p, &a)| dist2(p, &centers[a])).sum();
    (assign, inertia)
}

fn farthest_from(points: &[Vec<f64>], from: usize) -> usize {
    let mut best = from;
    let mut best_d = -1.0;
    for (i, p) in points.iter().enumerate() {
        let d = dist2(p, &points[from]);
        if d > best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Two-means clustering: one start from the farthest pair, then
/// `KMEANS_RESTARTS − 1` starts from evenly strided points and their
/// farthest partner. The lowest inertia wins; ties keep the earlier start.
pub fn kmeans2(points: &[Vec<f64>]) -> Result<Vec<usize>> {
    if points.len() < 2 {
        return Err(Error::validation("vectors", "need at least two vectors"));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::validation("vectors", "vectors must share a nonzero dimension"));
    }
    if points.iter().all(|p| p == &points[0]) {
        return Err(Error::DegenerateClusters);
    }

    let mut starts = Vec::with_capacity(KMEANS_RESTARTS);
    let (mut fa, mut fb, mut fd) = (0, 0, -1.0);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = dist2(&points[i], &points[j]);
            if d > fd {
                (fa, fb, fd) = (i, j, d);
            }
        }
    }
    starts.push((fa, fb));
    let stride = (points.len() / (KMEANS_RESTARTS - 1)).max(1);
    for r in 0..KMEANS_RESTARTS - 1 {
        let a = (r * stride) % points.len();
        starts.push((a, farthest_from(points, a)));
    }

    let mut best: Option<(Vec<usize>, f64)> = None;
    for (a, b) in starts {
        if points[a] == points[b] {
            continue;
        }
        let (assign, inertia) = lloyd(points, [points[a].clone(), points[b].clone()]);
        if best.as_ref().map_or(true, |(_, bi)| inertia < *bi) {
            best = Some((assign, inertia));
        }
    }
    best.map(|(a, _)| a).ok_or(Error::DegenerateClusters)
}

/// Cluster bone-length vectors into two groups and score each subject.
pub fn bone_cluster_f1(vectors: &[Vec<f64>], labels: &[usize]) -> Result<ClusterF1> {
    if vectors.len() != labels.len() {
        return Err(Error::validation("labels", "one label per vector required"));
    }
    subject_pair(labels)?;
    let clusters = kmeans2(vectors)?;
    score_clusters(&clusters, labels)
}

fn subject_pair(labels: &[usize]) -> Result<[usize; 2]> {
    let mut distinct: Vec<usize> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() != 2 {
        return Err(Error::validation("labels", "exactly two subjects required"));
    }
    Ok([distinct[0], distinct[1]])
}

fn f1_scores(assign: &[usize], subject: &[usize]) -> [f64; 2] {
    let mut f1 = [0.0; 2];
    for (s, f) in f1.iter_mut().enumerate() {
        let tp = assign.iter().zip(subject).filter(|(a, t)| **a == s && **t == s).count() as f64;
        let predicted = assign.iter().filter(|a| **a == s).count() as f64;
        let actual = subject.iter().filter(|t| **t == s).count() as f64;
        let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let r = tp / actual;
        *f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    f1
}

/// Match a two-cluster assignment to the two subjects and score each.
///
/// The matching with more agreeing vectors wins; ties go to the higher F1
/// sum, then the lexicographically larger score pair, so the result never
/// depends on how the clusters are numbered.
pub fn score_clusters(clusters: &[usize], labels: &[usize]) -> Result<ClusterF1> {
    if clusters.len() != labels.len() {
        return Err(Error::validation("labels", "one label per vector required"));
    }
    if clusters.iter().any(|c| *c > 1) {
        return Err(Error::validation("clusters", "cluster ids must be 0 or 1"));
    }
    let pair = subject_pair(labels)?;
    let subject: Vec<usize> = labels.iter().map(|l| usize::from(*l == pair[1])).collect();
    let flipped: Vec<usize> = clusters.iter().map(|c| 1 - c).collect();
    let rank = |assign: &[usize]| {
        let agree = assign.iter().zip(&subject).filter(|(a, s)| a == s).count();
        let f1 = f1_scores(assign, &subject);
        (agree, f1[0] + f1[1], f1)
    };
    let (ka, sa, fa) = rank(clusters);
    let (kb, sb, fb) = rank(&flipped);
    let keep = (ka, sa, fa[0], fa[1]) >= (kb, sb, fb[0], fb[1]);
    let (assignment, f1) = if keep { (clusters.to_vec(), fa) } else { (flipped, fb) };
    Ok(ClusterF1 {
        labels: pair,
        f1,
        assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(f: impl FnMut(usize) -> Vec3) -> [Vec3; NUM_JOINTS] {
        core::array::from_fn(f)
    }

    const ALL: [usize; NUM_JOINTS] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20];

    #[test]
    fn mpje_closed_form_cases() {
        let gt = [frame(|j| Vec3::new(j as f64, 2.0 * j as f64, 400.0))];
        assert_eq!(mean_per_joint_error(&gt, &gt, &ALL).unwrap(), 0.0);
        let mut pred = gt;
        pred[0][7] += Vec3::new(3.0, 4.0, 0.0);
        assert_eq!(mean_per_joint_error(&pred, &gt, &[7]).unwrap(), 5.0);
        assert!(mean_per_joint_error(&pred, &gt, &[21]).is_err());
    }

    #[test]
    fn mpje_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut rnd = || {
            Vec3::new(
                rng.random_range(-99.0..99.0),
                rng.random_range(-99.0..99.0),
                rng.random_range(300.0..600.0),
            )
        };
        let pred: Vec<_> = (0..7).map(|_| frame(|_| rnd())).collect();
        let gt: Vec<_> = (0..7).map(|_| frame(|_| rnd())).collect();
        let subset = [0usize, 4, 8, 12, 16, 20];
        let mut sum = 0.0;
        let mut count = 0.0;
        for f in 0..7 {
            for &j in &subset {
                let (a, b) = (pred[f][j], gt[f][j]);
                sum += ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt();
                count += 1.0;
            }
        }
        let got = mean_per_joint_error(&pred, &gt, &subset).unwrap();
        assert!((got - sum / count).abs() < 1e-12);
    }

    #[test]
    fn pcf_closed_form_cases() {
        assert_eq!(pcf_curve(&[0.0, 0.0], &[0.0, 5.0, 80.0]).unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(pcf_curve(&[10.0, 30.0], &[20.0]).unwrap(), vec![0.5]);
        assert!(pcf_curve(&[1.0], &[5.0, 2.0]).is_err());
    }

    #[test]
    fn pcf_matches_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let errors: Vec<f64> = (0..300).map(|_| rng.random_range(0.0..80.0)).collect();
        let thresholds: Vec<f64> = (0..=80).map(|t| t as f64).collect();
        let curve = pcf_curve(&errors, &thresholds).unwrap();
        for (t, c) in thresholds.iter().zip(&curve) {
            let mut count = 0;
            for e in &errors {
                if e <= t {
                    count += 1;
                }
            }
            assert_eq!(*c, count as f64 / 300.0);
        }
    }

    #[test]
    fn mdpc_closed_form_cases() {
        let cloud = [Vec3::new(0.0, 0.0, 500.0)];
        assert_eq!(mdpc(&[Vec3::new(0.0, 0.0, 510.0)], &cloud).unwrap(), vec![10.0]);
        assert_eq!(mdpc(&cloud, &cloud).unwrap(), vec![0.0]);
        assert_eq!(mdpc(&cloud, &[]), Err(Error::EmptyCloud));
    }

    #[test]
    fn mdpc_aggregates_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let cloud: Vec<Vec3> = (0..500)
                .map(|_| {
                    Vec3::new(
                        rng.random_range(-80.0..80.0),
                        rng.random_range(-80.0..80.0),
                        rng.random_range(380.0..520.0),
                    )
                })
                .collect();
            let joints: Vec<Vec3> = (0..21)
                .map(|_| {
                    Vec3::new(
                        rng.random_range(-90.0..90.0),
                        rng.random_range(-90.0..90.0),
                        rng.random_range(370.0..530.0),
                    )
                })
                .collect();
            let mut oracle = std::vec::Vec::new();
            for j in &joints {
                let mut best = f64::INFINITY;
                for p in &cloud {
                    let d = ((j.x - p.x).powi(2) + (j.y - p.y).powi(2) + (j.z - p.z).powi(2)).sqrt();
                    if d < best {
                        best = d;
                    }
                }
                oracle.push(best);
            }
            let got = mdpc(&joints, &cloud).unwrap();
            let s = summarize(&got).unwrap();
            let mut sorted = oracle.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mean: f64 = oracle.iter().sum::<f64>() / 21.0;
            assert!((s.median - sorted[10]).abs() < 1e-12);
            assert!((s.mean - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn summary_of_even_count_averages_middle_pair() {
        assert_eq!(
            summarize(&[4.0, 1.0, 3.0, 2.0]).unwrap(),
            Summary { median: 2.5, mean: 2.5 }
        );
    }

    fn shape_groups(rng: &mut ChaCha8Rng, n: usize, sep: f64, noise: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut vectors = Vec::new();
        let mut labels = Vec::new();
        for i in 0..2 * n {
            let s = i % 2;
            let mut v: Vec<f64> = (0..20).map(|_| 30.0 + rng.random_range(-noise..noise)).collect();
            v[0] += if s == 0 { sep } else { -sep };
            vectors.push(v);
            labels.push(s + 3);
        }
        (vectors, labels)
    }

    #[test]
    fn separable_groups_score_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (v, l) = shape_groups(&mut rng, 30, 10.0, 1.0);
        let r = bone_cluster_f1(&v, &l).unwrap();
        assert_eq!(r.f1, [1.0, 1.0]);
        assert_eq!(r.labels, [3, 4]);
    }

    #[test]
    fn identical_vectors_per_subject_score_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let labels: Vec<usize> = (0..40).map(|_| rng.random_range(0..2)).collect();
        let mut labels = labels;
        labels[0] = 0;
        labels[1] = 1;
        let vectors: Vec<Vec<f64>> = labels.iter().map(|l| vec![30.0 + 7.0 * *l as f64; 20]).collect();
        assert_eq!(bone_cluster_f1(&vectors, &labels).unwrap().f1, [1.0, 1.0]);
    }

    #[test]
    fn identical_vectors_are_degenerate() {
        let v = vec![vec![1.0, 2.0]; 6];
        assert_eq!(bone_cluster_f1(&v, &[0, 1, 0, 1, 0, 1]), Err(Error::DegenerateClusters));
    }

    #[test]
    fn kmeans_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (v, _) = shape_groups(&mut rng, 25, 2.0, 3.0);
        assert_eq!(kmeans2(&v).unwrap(), kmeans2(&v).unwrap());
    }

    proptest! {
        #[test]
        fn pcf_is_monotone_and_bounded(
            errors in proptest::collection::vec(0.0f64..100.0, 1..40),
            mut thresholds in proptest::collection::vec(0.0f64..120.0, 1..20),
        ) {
            thresholds.sort_by(f64::total_cmp);
            let curve = pcf_curve(&errors, &thresholds).unwrap();
            for w in curve.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            prop_assert!(curve.iter().all(|c| (0.0..=1.0).contains(c)));
        }

        #[test]
        fn mdpc_is_rigidly_invariant(
            seed in 0u64..1000,
            angle in -3.0f64..3.0,
            shift in proptest::array::uniform3(-200.0f64..200.0),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rnd = || Vec3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(400.0..500.0));
            let cloud: Vec<Vec3> = (0..60).map(|_| rnd()).collect();
            let joints: Vec<Vec3> = (0..21).map(|_| rnd()).collect();
            let r = crate::math::axis_angle(&Vec3::new(1.0, 2.0, -0.5).normalize(), angle);
            let t = Vec3::from(shift);
            let moved = |v: &Vec<Vec3>| v.iter().map(|p| r * p + t).collect::<Vec<_>>();
            let a = mdpc(&joints, &cloud).unwrap();
            let b = mdpc(&moved(&joints), &moved(&cloud)).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn f1_is_bounded(seed in 0u64..500, sep in 0.0f64..6.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (v, l) = shape_groups(&mut rng, 10, sep, 4.0);
            let a = bone_cluster_f1(&v, &l).unwrap();
            prop_assert!(a.f1.iter().all(|f| (0.0..=1.0).contains(f)));
        }

        #[test]
        fn f1_ignores_cluster_numbering(
            pairs in proptest::collection::vec((0usize..2, 0usize..2), 2..40),
        ) {
            let clusters: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let mut labels: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            labels[0] = 0;
            labels[1] = 1;
            let flipped: Vec<usize> = clusters.iter().map(|c| 1 - c).collect();
            let a = score_clusters(&clusters, &labels).unwrap();
            let b = score_clusters(&flipped, &labels).unwrap();
            prop_assert_eq!(a.f1, b.f1);
            prop_assert!(a.f1.iter().all(|f| (0.0..=1.0).contains(f)));
        }
    }
}
