//! Global average pooling and NetVLAD aggregation, with the exact backward
//! pass of the soft-assignment variant.

use crate::error::{Error, Result};
use crate::numkernel::{l2_normalize_backward, l2_normalize_in_place, Matrix, NORM_EPS};
use crate::scalar::{axpy, dot, Scalar};
use crate::vocabulary::Vocabulary;

/// Default soft-assignment temperature.
pub const DEFAULT_TEMPERATURE: f64 = 3.0;

/// The N×d local descriptors of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFeatureSet<T> {
    features: Matrix<T>,
}

impl<T: Scalar> LocalFeatureSet<T> {
    pub fn new(features: Matrix<T>) -> Result<Self> {
        if features.rows() == 0 || features.cols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "local feature set must be non-empty, got {}x{}",
                features.rows(),
                features.cols()
            )));
        }
        if !features.is_finite() {
            return Err(Error::InvalidArgument("non-finite local feature".into()));
        }
        Ok(Self { features })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    #[inline]
    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.features
    }

    /// Number of local descriptors N.
    #[inline]
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    /// Descriptor width d.
    #[inline]
    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignMode {
    Soft,
    Hard,
}

/// N×K assignment weights of local descriptors to visual words.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix<T> {
    pub scores: Matrix<T>,
    pub mode: AssignMode,
}

/// Index of the word with the largest dot product; ties resolve to the lowest index.
pub fn nearest_word<T: Scalar>(feature: &[T], words: &Matrix<T>) -> usize {
    let mut best = 0;
    let mut best_score = T::neg_infinity();
    for (k, word) in words.row_iter().enumerate() {
        let s = dot(feature, word);
        if s > best_score {
            best = k;
            best_score = s;
        }
    }
    best
}

/// Soft (`softmax_k t·fᵢ·cₖ`) or hard (one-hot argmax) assignment of every descriptor.
pub fn compute_assignment<T: Scalar>(
    local: &LocalFeatureSet<T>,
    vocab: &Vocabulary<T>,
    temperature: T,
    mode: AssignMode,
) -> Result<AssignmentMatrix<T>> {
    let words = vocab.words();
    if local.dim() != words.cols() {
        return Err(Error::Shape {
            op: "compute_assignment",
            left_rows: local.len(),
            left_cols: local.dim(),
            right_rows: words.rows(),
            right_cols: words.cols(),
        });
    }
    let k = words.rows();
    let mut scores = match mode {
        AssignMode::Soft => {
            if !(temperature > T::zero()) {
                return Err(Error::InvalidArgument(format!(
                    "temperature must be positive, got {temperature}"
                )));
            }
            local.features().matmul_t(words)?
        }
        AssignMode::Hard => Matrix::zeros(local.len(), k),
    };
    match mode {
        AssignMode::Soft => {
            for i in 0..scores.rows() {
                softmax_in_place(scores.row_mut(i), temperature);
            }
        }
        AssignMode::Hard => {
            for (i, f) in local.features().row_iter().enumerate() {
                scores[(i, nearest_word(f, words))] = T::one();
            }
        }
    }
    Ok(AssignmentMatrix { scores, mode })
}

/// `row ← softmax(temperature · row)` with max subtraction.
fn softmax_in_place<T: Scalar>(row: &mut [T], temperature: T) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (temperature * (*v - max)).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

/// Mean-pooled global descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct GapDescriptor<T> {
    pub flat: Vec<T>,
}

pub fn gap_pool<T: Scalar>(local: &LocalFeatureSet<T>) -> GapDescriptor<T> {
    GapDescriptor {
        flat: local.features().column_mean(),
    }
}

/// NetVLAD output: raw per-word residual sums and the normalized flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VladDescriptor<T> {
    /// K×d raw residual sums Σᵢ aᵢₖ(fᵢ − cₖ).
    pub per_cluster: Matrix<T>,
    /// Intra-normalized, flattened and L2-normalized vector of length K·d.
    pub flat: Vec<T>,
    pub k_shared: usize,
}

impl<T: Scalar> VladDescriptor<T> {
    #[inline]
    pub fn dim(&self) -> usize {
        self.per_cluster.cols()
    }

    /// Entries produced by the shared words, the first K₁·d of `flat`.
    pub fn shared_slice(&self) -> &[T] {
        &self.flat[..self.k_shared * self.dim()]
    }

    /// Entries produced by the specific words, the last K₂·d of `flat`.
    pub fn specific_slice(&self) -> &[T] {
        &self.flat[self.k_shared * self.dim()..]
    }
}

/// Intermediate values of one [`vlad_forward`] call.
#[derive(Debug, Clone)]
pub struct VladCache<T> {
    assignment: AssignmentMatrix<T>,
    features: Matrix<T>,
    words: Matrix<T>,
    temperature: T,
    /// ‖Fₖ‖ before intra-normalization.
    block_norms: Vec<T>,
    /// Intra-normalized blocks, flattened (pre global normalization).
    intra: Vec<T>,
    global_norm: T,
    flat: Vec<T>,
}

impl<T: Scalar> VladCache<T> {
    pub fn assignment(&self) -> &AssignmentMatrix<T> {
        &self.assignment
    }
}

/// Aggregates local descriptors into a VLAD descriptor.
pub fn vlad_forward<T: Scalar>(
    local: &LocalFeatureSet<T>,
    vocab: &Vocabulary<T>,
    temperature: T,
    mode: AssignMode,
) -> Result<(VladDescriptor<T>, VladCache<T>)> {
    let assignment = compute_assignment(local, vocab, temperature, mode)?;
    let words = vocab.words();
    let (k, d) = words.shape();
    let features = local.features();

    // Fₖ = Σᵢ aᵢₖ fᵢ − (Σᵢ aᵢₖ) cₖ
    let mut per_cluster = assignment.scores.t_matmul(features)?;
    for kk in 0..k {
        let mass: T = (0..features.rows()).map(|i| assignment.scores[(i, kk)]).sum();
        axpy(-mass, words.row(kk), per_cluster.row_mut(kk));
    }

    let eps = T::lit(NORM_EPS);
    let mut intra = per_cluster.as_slice().to_vec();
    let block_norms: Vec<T> = intra
        .chunks_mut(d)
        .map(|block| l2_normalize_in_place(block, eps))
        .collect();
    let mut flat = intra.clone();
    let global_norm = l2_normalize_in_place(&mut flat, eps);

    let descriptor = VladDescriptor {
        per_cluster,
        flat: flat.clone(),
        k_shared: vocab.k_shared(),
    };
    let cache = VladCache {
        assignment,
        features: features.clone(),
        words: words.clone(),
        temperature,
        block_norms,
        intra,
        global_norm,
        flat,
    };
    Ok((descriptor, cache))
}

/// Gradients of `⟨upstream, flat⟩` with respect to the local features (N×d)
/// and the vocabulary (K×d).
pub fn vlad_backward<T: Scalar>(cache: &VladCache<T>, upstream: &[T]) -> Result<(Matrix<T>, Matrix<T>)> {
    if cache.assignment.mode != AssignMode::Soft {
        return Err(Error::HardAssignmentBackward);
    }
    let (k, d) = cache.words.shape();
    if upstream.len() != k * d {
        return Err(Error::Length {
            what: "vlad upstream gradient",
            expected: k * d,
            actual: upstream.len(),
        });
    }
    let eps = T::lit(NORM_EPS);
    let n = cache.features.rows();
    let a = &cache.assignment.scores;

    let d_intra = l2_normalize_backward(&cache.flat, cache.global_norm, eps, upstream);
    // gradient w.r.t. the raw per-cluster sums
    let mut d_blocks = Matrix::zeros(k, d);
    for kk in 0..k {
        let span = kk * d..(kk + 1) * d;
        let g = l2_normalize_backward(&cache.intra[span.clone()], cache.block_norms[kk], eps, &d_intra[span]);
        d_blocks.row_mut(kk).copy_from_slice(&g);
    }

    let mut grad_features = Matrix::zeros(n, d);
    let mut grad_words = Matrix::zeros(k, d);
    // ∂/∂aᵢₖ = ⟨dFₖ, fᵢ − cₖ⟩ = ⟨dFₖ, fᵢ⟩ − ⟨dFₖ, cₖ⟩
    let df_dot_f = cache.features.matmul_t(&d_blocks)?;
    let df_dot_c: Vec<T> = (0..k).map(|kk| dot(d_blocks.row(kk), cache.words.row(kk))).collect();

    let mut d_scores = Matrix::zeros(n, k);
    for i in 0..n {
        let row_a = a.row(i);
        let da: Vec<T> = (0..k).map(|kk| df_dot_f[(i, kk)] - df_dot_c[kk]).collect();
        let weighted: T = row_a.iter().zip(&da).map(|(&p, &g)| p * g).sum();
        for kk in 0..k {
            d_scores[(i, kk)] = row_a[kk] * (da[kk] - weighted) * cache.temperature;
        }
    }

    for i in 0..n {
        let gf = grad_features.row_mut(i);
        for kk in 0..k {
            // residual path and assignment-logit path
            axpy(a[(i, kk)], d_blocks.row(kk), gf);
            axpy(d_scores[(i, kk)], cache.words.row(kk), gf);
        }
    }
    for kk in 0..k {
        let mass: T = (0..n).map(|i| a[(i, kk)]).sum();
        let gw = grad_words.row_mut(kk);
        axpy(-mass, d_blocks.row(kk), gw);
        for i in 0..n {
            axpy(d_scores[(i, kk)], cache.features.row(i), gw);
        }
    }
    Ok((grad_features, grad_words))
}

/// Brute-force local matching kernels of two descriptor sets, both with hard
/// assignment and no normalization.
///
/// Returns `(Σᵢ Σⱼ ⟨fᵢ, fⱼ⟩, Σₖ Σ_{i,j ∈ k} ⟨rᵢₖ, rⱼₖ⟩)`.
pub fn matching_kernel_oracle<T: Scalar>(
    x1: &LocalFeatureSet<T>,
    x2: &LocalFeatureSet<T>,
    vocab: &Vocabulary<T>,
) -> Result<(T, T)> {
    let words = vocab.words();
    if x1.dim() != x2.dim() || x1.dim() != words.cols() {
        return Err(Error::Shape {
            op: "matching_kernel_oracle",
            left_rows: x1.len(),
            left_cols: x1.dim(),
            right_rows: x2.len(),
            right_cols: x2.dim(),
        });
    }
    let f1 = x1.features();
    let f2 = x2.features();
    let mut gap_sim = T::zero();
    for fi in f1.row_iter() {
        for fj in f2.row_iter() {
            gap_sim += dot(fi, fj);
        }
    }
    let assign1: Vec<usize> = f1.row_iter().map(|f| nearest_word(f, words)).collect();
    let assign2: Vec<usize> = f2.row_iter().map(|f| nearest_word(f, words)).collect();
    let mut vlad_sim = T::zero();
    for (k, c) in words.row_iter().enumerate() {
        for (i, fi) in f1.row_iter().enumerate() {
            if assign1[i] != k {
                continue;
            }
            for (j, fj) in f2.row_iter().enumerate() {
                if assign2[j] != k {
                    continue;
                }
                vlad_sim += fi
                    .iter()
                    .zip(fj)
                    .zip(c)
                    .map(|((&a, &b), &ck)| (a - ck) * (b - ck))
                    .sum::<T>();
            }
        }
    }
    Ok((gap_sim, vlad_sim))
}
