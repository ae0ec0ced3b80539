//! Visual vocabulary with a shared/specific split, k-means initialization and
//! the three vocabulary losses.

use std::collections::HashSet;

use rand::Rng;

use crate::aggregation::{nearest_word, LocalFeatureSet};
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::numkernel::{derived_rng, l2_normalize_backward, l2_normalize_in_place, Matrix, NORM_EPS};
use crate::scalar::{axpy, dot, Scalar};

/// Default vocabulary size and specific-word count.
pub const DEFAULT_K: usize = 32;
pub const DEFAULT_K_SPECIFIC: usize = 4;

/// K visual words; rows `[0, K₁)` are shared and rows `[K₁, K)` specific.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary<T> {
    words: Matrix<T>,
    k_shared: usize,
}

impl<T: Scalar> Vocabulary<T> {
    pub fn new(words: Matrix<T>, k_shared: usize) -> Result<Self> {
        if k_shared == 0 || k_shared > words.rows() {
            return Err(Error::InvalidArgument(format!(
                "shared word count must be in [1, {}], got {k_shared}",
                words.rows()
            )));
        }
        if words.cols() == 0 {
            return Err(Error::InvalidArgument("vocabulary words must have width >= 1".into()));
        }
        if !words.is_finite() {
            return Err(Error::InvalidArgument("non-finite vocabulary word".into()));
        }
        Ok(Self { words, k_shared })
    }

    #[inline]
    pub fn words(&self) -> &Matrix<T> {
        &self.words
    }

    #[inline]
    pub fn words_mut(&mut self) -> &mut Matrix<T> {
        &mut self.words
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.words.rows()
    }

    #[inline]
    pub fn k_shared(&self) -> usize {
        self.k_shared
    }

    #[inline]
    pub fn k_specific(&self) -> usize {
        self.words.rows() - self.k_shared
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.words.cols()
    }

    #[inline]
    pub fn is_specific(&self, k: usize) -> bool {
        k >= self.k_shared
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Random,
    KMeans,
}

/// Builds a vocabulary of `k` words of width `d`, the last `k_specific` of
/// which are specific words.
///
/// `Random` draws rows from N(0, 1/d); `KMeans` runs [`kmeans`] on `pool`.
pub fn init_vocabulary<T: Scalar>(
    mode: InitMode,
    k: usize,
    k_specific: usize,
    d: usize,
    seed: u64,
    pool: Option<&Matrix<T>>,
    iters: usize,
) -> Result<Vocabulary<T>> {
    if k_specific >= k {
        return Err(Error::InvalidArgument(format!(
            "specific word count {k_specific} must be below vocabulary size {k}"
        )));
    }
    let words = match mode {
        InitMode::Random => {
            let mut rng = derived_rng(seed, 0);
            Matrix::random_normal(k, d, T::one() / T::from_count(d).sqrt(), &mut rng)
        }
        InitMode::KMeans => {
            let pool = pool.ok_or_else(|| Error::InvalidArgument("k-means init needs a feature pool".into()))?;
            if pool.cols() != d {
                return Err(Error::Length {
                    what: "k-means pool width",
                    expected: d,
                    actual: pool.cols(),
                });
            }
            kmeans(pool, k, iters, seed)?.centroids
        }
    };
    Vocabulary::new(words, k - k_specific)
}

/// Result of Lloyd's algorithm.
#[derive(Debug, Clone)]
pub struct KMeansFit<T> {
    pub centroids: Matrix<T>,
    pub assignments: Vec<usize>,
    /// Inertia after seeding and after every Lloyd iteration.
    pub inertia_history: Vec<T>,
    pub converged: bool,
}

impl<T: Scalar> KMeansFit<T> {
    pub fn inertia(&self) -> T {
        *self.inertia_history.last().expect("history is never empty")
    }
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn nearest_centroid<T: Scalar>(x: &[T], centroids: &Matrix<T>) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (k, c) in centroids.row_iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn assign_all<T: Scalar>(pool: &Matrix<T>, centroids: &Matrix<T>) -> (Vec<usize>, T) {
    let mut inertia = T::zero();
    let assignments = pool
        .row_iter()
        .map(|x| {
            let (k, d) = nearest_centroid(x, centroids);
            inertia += d;
            k
        })
        .collect();
    (assignments, inertia)
}

fn count_distinct_rows<T: Scalar>(pool: &Matrix<T>) -> usize {
    pool.row_iter()
        .map(|r| r.iter().map(|v| v.as_f64().to_bits()).collect::<Vec<u64>>())
        .collect::<HashSet<_>>()
        .len()
}

/// Draws an index with probability proportional to `weights`.
fn weighted_pick<T: Scalar, R: Rng>(weights: &[T], total: T, rng: &mut R) -> usize {
    let mut target = T::lit(rng.random::<f64>()) * total;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > T::zero() {
            last_positive = i;
            if target < w {
                return i;
            }
            target -= w;
        }
    }
    last_positive
}

/// Greedy k-means++ seeding: each new center is the best of several
/// D²-weighted candidates.
fn kmeans_pp_seed<T: Scalar, R: Rng>(pool: &Matrix<T>, k: usize, rng: &mut R) -> Matrix<T> {
    let n = pool.rows();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centers = vec![rng.random_range(0..n)];
    let mut closest: Vec<T> = pool.row_iter().map(|x| sq_dist(x, pool.row(centers[0]))).collect();
    while centers.len() < k {
        let total: T = closest.iter().copied().sum();
        let mut best: Option<(usize, T, Vec<T>)> = None;
        for _ in 0..trials {
            let cand = weighted_pick(&closest, total, rng);
            let updated: Vec<T> = pool
                .row_iter()
                .zip(&closest)
                .map(|(x, &c)| c.min(sq_dist(x, pool.row(cand))))
                .collect();
            let potential: T = updated.iter().copied().sum();
            if best.as_ref().is_none_or(|b| potential < b.1) {
                best = Some((cand, potential, updated));
            }
        }
        let (cand, _, updated) = best.expect("at least one trial");
        centers.push(cand);
        closest = updated;
    }
    pool.select_rows(&centers)
}

/// Lloyd's algorithm with greedy k-means++ seeding. Stops after `max_iters`
/// iterations or once no centroid moves by more than 1e-9.
pub fn kmeans<T: Scalar>(pool: &Matrix<T>, k: usize, max_iters: usize, seed: u64) -> Result<KMeansFit<T>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k-means needs k >= 1".into()));
    }
    let distinct = count_distinct_rows(pool);
    if distinct < k {
        return Err(Error::InsufficientSamples(format!(
            "k-means pool has {distinct} distinct rows, fewer than k = {k}"
        )));
    }
    let mut rng = derived_rng(seed, 1);
    let mut centroids = kmeans_pp_seed(pool, k, &mut rng);
    let (mut assignments, inertia) = assign_all(pool, &centroids);
    let mut inertia_history = vec![inertia];
    let mut converged = false;
    let tol = T::lit(1e-9);

    for _ in 0..max_iters {
        let mut sums = Matrix::zeros(k, pool.cols());
        let mut counts = vec![0usize; k];
        for (x, &a) in pool.row_iter().zip(&assignments) {
            axpy(T::one(), x, sums.row_mut(a));
            counts[a] += 1;
        }
        let mut shift = T::zero();
        for c in 0..k {
            // empty clusters keep their centroid
            if counts[c] == 0 {
                continue;
            }
            let n = T::from_count(counts[c]);
            let new: Vec<T> = sums.row(c).iter().map(|&s| s / n).collect();
            shift = shift.max(sq_dist(&new, centroids.row(c)).sqrt());
            centroids.row_mut(c).copy_from_slice(&new);
        }
        let (a, inertia) = assign_all(pool, &centroids);
        assignments = a;
        inertia_history.push(inertia);
        if shift < tol {
            converged = true;
            break;
        }
    }
    Ok(KMeansFit {
        centroids,
        assignments,
        inertia_history,
        converged,
    })
}

/// `‖V_sh V_spᵀ‖²_F` and its gradient with respect to every word.
pub fn ortho_loss_and_grad<T: Scalar>(vocab: &Vocabulary<T>) -> (T, Matrix<T>) {
    let (k, d) = vocab.words().shape();
    let mut grad = Matrix::zeros(k, d);
    if vocab.k_specific() == 0 {
        return (T::zero(), grad);
    }
    let w = vocab.words();
    let k1 = vocab.k_shared();
    let mut loss = T::zero();
    for i in 0..k1 {
        for j in k1..k {
            let s = dot(w.row(i), w.row(j));
            loss += s * s;
            let two_s = s + s;
            axpy(two_s, w.row(j), grad.row_mut(i));
            axpy(two_s, w.row(i), grad.row_mut(j));
        }
    }
    (loss, grad)
}

/// Per-word membership summary under hard assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterEntry<T> {
    pub count: usize,
    pub real_count: usize,
    pub fake_count: usize,
    /// Mean of the assigned features; zero when the cluster is empty.
    pub feature_center: Vec<T>,
    /// Mean residual of real members; zero when there are none.
    pub real_residual_center: Vec<T>,
    pub fake_residual_center: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStats<T> {
    /// Word index of every feature row.
    pub assignment: Vec<usize>,
    pub clusters: Vec<ClusterEntry<T>>,
}

impl<T: Scalar> ClusterStats<T> {
    pub fn total(&self) -> usize {
        self.clusters.iter().map(|c| c.count).sum()
    }
}

/// Nearest word (largest dot product) of every feature row.
pub fn hard_assign<T: Scalar>(features: &Matrix<T>, vocab: &Vocabulary<T>) -> Vec<usize> {
    features.row_iter().map(|f| nearest_word(f, vocab.words())).collect()
}

/// Hard-assigns every row and summarizes each word's members.
pub fn cluster_stats<T: Scalar>(
    features: &LocalFeatureSet<T>,
    labels: &[ClassLabel],
    vocab: &Vocabulary<T>,
) -> Result<ClusterStats<T>> {
    let assignment = hard_assign(features.features(), vocab);
    cluster_stats_with_assignment(features, labels, vocab, assignment)
}

pub fn cluster_stats_with_assignment<T: Scalar>(
    features: &LocalFeatureSet<T>,
    labels: &[ClassLabel],
    vocab: &Vocabulary<T>,
    assignment: Vec<usize>,
) -> Result<ClusterStats<T>> {
    check_rows(features, labels, vocab)?;
    if assignment.len() != features.len() || assignment.iter().any(|&a| a >= vocab.k()) {
        return Err(Error::InvalidArgument("assignment does not match features and vocabulary".into()));
    }
    let d = vocab.dim();
    let mut sums = vec![[vec![T::zero(); d], vec![T::zero(); d]]; vocab.k()];
    let mut counts = vec![[0usize; 2]; vocab.k()];
    for ((f, &k), &label) in features.features().row_iter().zip(&assignment).zip(labels) {
        axpy(T::one(), f, &mut sums[k][label.index()]);
        counts[k][label.index()] += 1;
    }
    let clusters = (0..vocab.k())
        .map(|k| {
            let c = vocab.words().row(k);
            let [real_n, fake_n] = counts[k];
            let count = real_n + fake_n;
            let mean = |sum: &[T], n: usize| -> Vec<T> {
                if n == 0 {
                    vec![T::zero(); d]
                } else {
                    sum.iter().map(|&s| s / T::from_count(n)).collect()
                }
            };
            let residual = |sum: &[T], n: usize| -> Vec<T> {
                if n == 0 {
                    vec![T::zero(); d]
                } else {
                    mean(sum, n).iter().zip(c).map(|(&m, &ck)| m - ck).collect()
                }
            };
            let total: Vec<T> = sums[k][0].iter().zip(&sums[k][1]).map(|(&a, &b)| a + b).collect();
            ClusterEntry {
                count,
                real_count: real_n,
                fake_count: fake_n,
                feature_center: mean(&total, count),
                real_residual_center: residual(&sums[k][0], real_n),
                fake_residual_center: residual(&sums[k][1], fake_n),
            }
        })
        .collect();
    Ok(ClusterStats { assignment, clusters })
}

fn check_rows<T: Scalar>(features: &LocalFeatureSet<T>, labels: &[ClassLabel], vocab: &Vocabulary<T>) -> Result<()> {
    if labels.len() != features.len() {
        return Err(Error::Length {
            what: "feature labels",
            expected: features.len(),
            actual: labels.len(),
        });
    }
    if features.dim() != vocab.dim() {
        return Err(Error::Length {
            what: "feature width",
            expected: vocab.dim(),
            actual: features.dim(),
        });
    }
    Ok(())
}

/// `Σₖ ‖Lₖᶜ − cₖ‖²` over non-empty words, with assignments and feature
/// centers held constant.
pub fn centroid_adapt_loss_and_grad<T: Scalar>(
    features: &LocalFeatureSet<T>,
    labels: &[ClassLabel],
    vocab: &Vocabulary<T>,
) -> Result<(T, Matrix<T>, ClusterStats<T>)> {
    let stats = cluster_stats(features, labels, vocab)?;
    let (loss, grad) = centroid_adapt_from_stats(&stats, vocab);
    Ok((loss, grad, stats))
}

/// Centroid-adaptation loss for precomputed (frozen) cluster centers.
pub fn centroid_adapt_from_stats<T: Scalar>(stats: &ClusterStats<T>, vocab: &Vocabulary<T>) -> (T, Matrix<T>) {
    let mut grad = Matrix::zeros(vocab.k(), vocab.dim());
    let mut loss = T::zero();
    for (k, entry) in stats.clusters.iter().enumerate() {
        if entry.count == 0 {
            continue;
        }
        let g = grad.row_mut(k);
        for ((gj, &center), &c) in g.iter_mut().zip(&entry.feature_center).zip(vocab.words().row(k)) {
            let diff = center - c;
            loss += diff * diff;
            *gj = T::lit(-2.0) * diff;
        }
    }
    (loss, grad)
}

/// Intra-cluster discriminative loss `Σₖ (1 − ‖r̂ₖʳᵉᵃˡ − r̂ₖᶠᵃᵏᵉ‖²)` and its
/// gradients.
#[derive(Debug, Clone)]
pub struct IntraLoss<T> {
    pub loss: T,
    /// Gradient with respect to each feature row, which equals the gradient
    /// with respect to its residual fᵢ − cₖ.
    pub grad_features: Matrix<T>,
    pub grad_words: Matrix<T>,
    /// Number of words holding both classes.
    pub contributing: usize,
}

pub fn intra_cluster_loss_and_grad<T: Scalar>(
    features: &LocalFeatureSet<T>,
    labels: &[ClassLabel],
    vocab: &Vocabulary<T>,
    normalize: bool,
) -> Result<IntraLoss<T>> {
    let assignment = hard_assign(features.features(), vocab);
    intra_cluster_with_assignment(features, labels, vocab, &assignment, normalize)
}

/// Intra-cluster loss under a fixed assignment. Words lacking either class
/// contribute nothing.
pub fn intra_cluster_with_assignment<T: Scalar>(
    features: &LocalFeatureSet<T>,
    labels: &[ClassLabel],
    vocab: &Vocabulary<T>,
    assignment: &[usize],
    normalize: bool,
) -> Result<IntraLoss<T>> {
    let stats = cluster_stats_with_assignment(features, labels, vocab, assignment.to_vec())?;
    let (k, d) = vocab.words().shape();
    let eps = T::lit(NORM_EPS);
    let mut loss = T::zero();
    let mut contributing = 0;
    // gradient per (cluster, class) with respect to the residual mean
    let mut d_center = vec![[vec![T::zero(); d], vec![T::zero(); d]]; k];
    for (kk, entry) in stats.clusters.iter().enumerate() {
        if entry.real_count == 0 || entry.fake_count == 0 {
            continue;
        }
        contributing += 1;
        let mut real = entry.real_residual_center.clone();
        let mut fake = entry.fake_residual_center.clone();
        let (real_norm, fake_norm) = if normalize {
            (l2_normalize_in_place(&mut real, eps), l2_normalize_in_place(&mut fake, eps))
        } else {
            (T::zero(), T::zero())
        };
        let diff: Vec<T> = real.iter().zip(&fake).map(|(&a, &b)| a - b).collect();
        loss += T::one() - dot(&diff, &diff);
        let g_real: Vec<T> = diff.iter().map(|&x| T::lit(-2.0) * x).collect();
        let g_fake: Vec<T> = diff.iter().map(|&x| T::lit(2.0) * x).collect();
        if normalize {
            d_center[kk][0] = l2_normalize_backward(&real, real_norm, eps, &g_real);
            d_center[kk][1] = l2_normalize_backward(&fake, fake_norm, eps, &g_fake);
        } else {
            d_center[kk][0] = g_real;
            d_center[kk][1] = g_fake;
        }
    }

    let mut grad_features = Matrix::zeros(features.len(), d);
    let mut grad_words = Matrix::zeros(k, d);
    for (i, (&kk, &label)) in assignment.iter().zip(labels).enumerate() {
        let entry = &stats.clusters[kk];
        if entry.real_count == 0 || entry.fake_count == 0 {
            continue;
        }
        let n = match label {
            ClassLabel::Real => entry.real_count,
            ClassLabel::Fake => entry.fake_count,
        };
        axpy(T::one() / T::from_count(n), &d_center[kk][label.index()], grad_features.row_mut(i));
    }
    for kk in 0..k {
        let [real, fake] = &d_center[kk];
        let g = grad_words.row_mut(kk);
        axpy(-T::one(), real, g);
        axpy(-T::one(), fake, g);
    }
    Ok(IntraLoss {
        loss,
        grad_features,
        grad_words,
        contributing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::{check_gradient, seeded_rng};

    #[test]
    fn vocabulary_rejects_bad_split() {
        let w = Matrix::<f64>::zeros(3, 2);
        assert!(Vocabulary::new(w.clone(), 0).is_err());
        assert!(Vocabulary::new(w.clone(), 4).is_err());
        let v = Vocabulary::new(w, 2).unwrap();
        assert_eq!((v.k_shared(), v.k_specific()), (2, 1));
        assert!(v.is_specific(2) && !v.is_specific(1));
    }

    #[test]
    fn random_init_is_seeded() {
        let a = init_vocabulary::<f64>(InitMode::Random, 8, 1, 4, 9, None, 0).unwrap();
        let b = init_vocabulary::<f64>(InitMode::Random, 8, 1, 4, 9, None, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.k_shared(), 7);
        assert!(init_vocabulary::<f64>(InitMode::Random, 4, 4, 4, 9, None, 0).is_err());
    }

    #[test]
    fn kmeans_needs_enough_distinct_rows() {
        let pool = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0], [2.0, 0.0]]).unwrap();
        assert!(matches!(kmeans(&pool, 3, 10, 0), Err(Error::InsufficientSamples(_))));
        assert!(kmeans(&pool, 2, 10, 0).is_ok());
        assert!(init_vocabulary::<f64>(InitMode::KMeans, 2, 0, 2, 0, None, 5).is_err());
    }

    #[test]
    fn kmeans_single_cluster_is_pool_mean() {
        let mut rng = seeded_rng(2);
        let pool = Matrix::<f64>::random_normal(13, 3, 2.0, &mut rng);
        let fit = kmeans(&pool, 1, 10, 4).unwrap();
        let mut mean = [0.0; 3];
        for r in 0..13 {
            for j in 0..3 {
                mean[j] += pool[(r, j)];
            }
        }
        for (j, m) in mean.iter().enumerate() {
            assert_eq!(fit.centroids[(0, j)], m / 13.0);
        }
    }

    #[test]
    fn ortho_hand_cases() {
        let v = Vocabulary::new(Matrix::from_rows(&[[1.0, 0.0], [0.0, 3.0]]).unwrap(), 1).unwrap();
        let (loss, grad) = ortho_loss_and_grad(&v);
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|&x| x == 0.0));

        let v = Vocabulary::new(Matrix::<f64>::from_rows(&[[0.6, 0.8], [0.6, 0.8]]).unwrap(), 1).unwrap();
        let (loss, _) = ortho_loss_and_grad(&v);
        assert!((loss - 1.0).abs() < 1e-15);

        let v = Vocabulary::new(Matrix::<f64>::from_rows(&[[0.6, 0.8], [0.6, 0.8]]).unwrap(), 2).unwrap();
        assert_eq!(ortho_loss_and_grad(&v).0, 0.0);
    }

    #[test]
    fn ortho_matches_double_loop_and_fd() {
        let mut rng = seeded_rng(17);
        let w = Matrix::<f64>::random_normal(5, 2, 1.0, &mut rng);
        let v = Vocabulary::new(w.clone(), 3).unwrap();
        let (loss, grad) = ortho_loss_and_grad(&v);
        let mut oracle = 0.0;
        for i in 0..3 {
            for j in 3..5 {
                let s = w[(i, 0)] * w[(j, 0)] + w[(i, 1)] * w[(j, 1)];
                oracle += s * s;
            }
        }
        assert!((loss - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
        let f = |x: &[f64]| ortho_loss_and_grad(&Vocabulary::new(Matrix::new(5, 2, x.to_vec()).unwrap(), 3).unwrap()).0;
        let r = check_gradient(f, w.as_slice(), grad.as_slice(), 1e-5).unwrap();
        assert!(r.passes(1e-6), "{r}");
    }

    #[test]
    fn centroid_adapt_fixed_point_and_empty_cluster() {
        // two tight groups along orthogonal axes, third word far away and unused
        let feats = LocalFeatureSet::from_rows(&[[5.0, 0.2], [5.0, -0.2], [0.2, 5.0], [-0.2, 5.0]]).unwrap();
        let labels = [ClassLabel::Real, ClassLabel::Fake, ClassLabel::Real, ClassLabel::Fake];
        let words = Matrix::from_rows(&[[5.0, 0.0], [0.0, 5.0], [-1.0, -1.0]]).unwrap();
        let v = Vocabulary::new(words, 2).unwrap();
        let (loss, grad, stats) = centroid_adapt_loss_and_grad(&feats, &labels, &v).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|&x| x == 0.0));
        assert_eq!(stats.clusters[2].count, 0);
        assert_eq!(stats.total(), 4);
        assert_eq!(stats.clusters[0].real_count + stats.clusters[0].fake_count, stats.clusters[0].count);
    }

    #[test]
    fn intra_identical_and_antipodal_centers() {
        let words = Matrix::<f64>::from_rows(&[[0.0, 0.0]]).unwrap();
        let v = Vocabulary::new(words, 1).unwrap();
        let same = LocalFeatureSet::from_rows(&[[1.0, 0.0], [2.0, 0.0]]).unwrap();
        let labels = [ClassLabel::Real, ClassLabel::Fake];
        let out = intra_cluster_loss_and_grad(&same, &labels, &v, true).unwrap();
        assert!((out.loss - 1.0).abs() < 1e-15);
        let anti = LocalFeatureSet::from_rows(&[[1.0, 0.0], [-3.0, 0.0]]).unwrap();
        let out = intra_cluster_loss_and_grad(&anti, &labels, &v, true).unwrap();
        assert!((out.loss + 3.0).abs() < 1e-15);
        assert_eq!(out.contributing, 1);
    }

    #[test]
    fn intra_skips_single_class_clusters() {
        let words = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let v = Vocabulary::new(words, 2).unwrap();
        let f = LocalFeatureSet::from_rows(&[[2.0, 0.1], [3.0, 0.0], [0.0, 2.0]]).unwrap();
        let labels = [ClassLabel::Real, ClassLabel::Real, ClassLabel::Fake];
        let out = intra_cluster_loss_and_grad(&f, &labels, &v, true).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.contributing, 0);
        assert!(out.grad_features.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn intra_unnormalized_switch() {
        let words = Matrix::<f64>::from_rows(&[[0.0, 0.0]]).unwrap();
        let v = Vocabulary::new(words, 1).unwrap();
        let f = LocalFeatureSet::from_rows(&[[1.0, 0.0], [-3.0, 0.0]]).unwrap();
        let labels = [ClassLabel::Real, ClassLabel::Fake];
        let out = intra_cluster_loss_and_grad(&f, &labels, &v, false).unwrap();
        assert_eq!(out.loss, 1.0 - 16.0);
    }

    #[test]
    fn label_length_mismatch_rejected() {
        let v = Vocabulary::new(Matrix::from_rows(&[[0.0, 1.0]]).unwrap(), 1).unwrap();
        let f = LocalFeatureSet::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(cluster_stats(&f, &[], &v).is_err());
    }
}
