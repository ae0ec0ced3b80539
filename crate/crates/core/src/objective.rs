//! Task losses (classification, triplet, adversarial domain alignment) and
//! the weighted training objective.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::model::{Mlp, MlpCache};
use crate::numkernel::Matrix;
use crate::scalar::{axpy, Scalar};

pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_MARGIN: f64 = 0.1;
pub const DEFAULT_GRL_COEFF: f64 = 1.0;

/// Scalar hyperparameters of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// λ₁
    pub triplet: f64,
    /// λ₂
    pub adversarial: f64,
    /// λ₃
    pub ortho: f64,
    /// λ₄
    pub c_adapt: f64,
    /// λ₅
    pub intra: f64,
    pub temperature: f64,
    pub margin: f64,
    pub grl_coeff: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            triplet: DEFAULT_LAMBDA,
            adversarial: DEFAULT_LAMBDA,
            ortho: DEFAULT_LAMBDA,
            c_adapt: DEFAULT_LAMBDA,
            intra: DEFAULT_LAMBDA,
            temperature: crate::aggregation::DEFAULT_TEMPERATURE,
            margin: DEFAULT_MARGIN,
            grl_coeff: DEFAULT_GRL_COEFF,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.triplet,
            self.adversarial,
            self.ortho,
            self.c_adapt,
            self.intra,
            self.temperature,
            self.margin,
            self.grl_coeff,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("loss weights must be finite".into()));
        }
        if self.temperature <= 0.0 {
            return Err(Error::InvalidArgument("temperature must be positive".into()));
        }
        if self.margin < 0.0 {
            return Err(Error::InvalidArgument("margin must be non-negative".into()));
        }
        Ok(())
    }

    /// Sets λ₁..λ₅ to the same value.
    pub fn with_uniform_lambda(mut self, lambda: f64) -> Self {
        self.triplet = lambda;
        self.adversarial = lambda;
        self.ortho = lambda;
        self.c_adapt = lambda;
        self.intra = lambda;
        self
    }

    pub fn weight(&self, term: Term) -> f64 {
        match term {
            Term::Cls => 1.0,
            Term::Triplet => self.triplet,
            Term::Adversarial => self.adversarial,
            Term::Ortho => self.ortho,
            Term::CAdapt => self.c_adapt,
            Term::Intra => self.intra,
        }
    }
}

/// The six terms of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Cls,
    Triplet,
    Adversarial,
    Ortho,
    CAdapt,
    Intra,
}

impl Term {
    pub const ALL: [Term; 6] = [
        Term::Cls,
        Term::Triplet,
        Term::Adversarial,
        Term::Ortho,
        Term::CAdapt,
        Term::Intra,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Term::Cls => "cls",
            Term::Triplet => "triplet",
            Term::Adversarial => "adv",
            Term::Ortho => "ortho",
            Term::CAdapt => "c_adapt",
            Term::Intra => "intra",
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Unweighted value of every term.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts<T> {
    pub cls: T,
    pub triplet: T,
    pub adversarial: T,
    pub ortho: T,
    pub c_adapt: T,
    pub intra: T,
}

impl<T: Scalar> LossParts<T> {
    pub fn get(&self, term: Term) -> T {
        match term {
            Term::Cls => self.cls,
            Term::Triplet => self.triplet,
            Term::Adversarial => self.adversarial,
            Term::Ortho => self.ortho,
            Term::CAdapt => self.c_adapt,
            Term::Intra => self.intra,
        }
    }
}

/// `L_cls + λ₁L_triplet + λ₂L_adv + λ₃L_ortho + λ₄L_c_adapt + λ₅L_intra`.
pub fn total_objective<T: Scalar>(parts: &LossParts<T>, weights: &LossWeights) -> Result<T> {
    let mut total = T::zero();
    for term in Term::ALL {
        let v = parts.get(term);
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { term: term.name() });
        }
        total += T::lit(weights.weight(term)) * v;
    }
    Ok(total)
}

/// Mean cross-entropy of `logits` (B×C) against class indices and its gradient.
pub fn cross_entropy_and_grad<T: Scalar>(logits: &Matrix<T>, labels: &[usize]) -> Result<(T, Matrix<T>)> {
    let (b, c) = logits.shape();
    if labels.len() != b {
        return Err(Error::Length {
            what: "cross-entropy labels",
            expected: b,
            actual: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange { label: bad, classes: c });
    }
    let inv_b = T::one() / T::from_count(b.max(1));
    let mut grad = Matrix::zeros(b, c);
    let mut loss = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let sum_exp: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        loss += log_z - row[label];
        let g = grad.row_mut(i);
        for (gj, &v) in g.iter_mut().zip(row) {
            *gj = (v - log_z).exp() * inv_b;
        }
        g[label] -= inv_b;
    }
    Ok((loss * inv_b, grad))
}

/// Embeddings of a batch with their class and domain labels.
#[derive(Debug, Clone)]
pub struct LabeledEmbeddingBatch<T> {
    pub embeddings: Matrix<T>,
    pub class_labels: Vec<ClassLabel>,
    /// Zero-based domain index of every row.
    pub domain_labels: Vec<usize>,
}

impl<T: Scalar> LabeledEmbeddingBatch<T> {
    pub fn new(embeddings: Matrix<T>, class_labels: Vec<ClassLabel>, domain_labels: Vec<usize>) -> Result<Self> {
        let b = embeddings.rows();
        if b < 2 {
            return Err(Error::InvalidArgument(format!("batch needs at least 2 rows, got {b}")));
        }
        if class_labels.len() != b || domain_labels.len() != b {
            return Err(Error::Length {
                what: "batch labels",
                expected: b,
                actual: class_labels.len().min(domain_labels.len()),
            });
        }
        Ok(Self {
            embeddings,
            class_labels,
            domain_labels,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TripletLoss<T> {
    pub loss: T,
    pub grad: Matrix<T>,
    pub valid_triplets: usize,
    pub active_triplets: usize,
}

impl<T> TripletLoss<T> {
    /// Set when the batch held no (anchor, positive, negative) combination.
    pub fn no_valid_triplets(&self) -> bool {
        self.valid_triplets == 0
    }
}

/// Batch-all triplet loss: the hinge `max(0, ‖a−p‖² − ‖a−n‖² + m)` averaged
/// over every valid triplet in the batch.
pub fn triplet_loss_and_grad<T: Scalar>(embeddings: &Matrix<T>, labels: &[ClassLabel], margin: T) -> Result<TripletLoss<T>> {
    let (b, dim) = embeddings.shape();
    if labels.len() != b {
        return Err(Error::Length {
            what: "triplet labels",
            expected: b,
            actual: labels.len(),
        });
    }
    let mut dist = Matrix::zeros(b, b);
    for i in 0..b {
        for j in (i + 1)..b {
            let d: T = embeddings
                .row(i)
                .iter()
                .zip(embeddings.row(j))
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum();
            dist[(i, j)] = d;
            dist[(j, i)] = d;
        }
    }
    // coef[(x, y)] accumulates the weight of ‖e_x − e_y‖² in the active sum
    let mut coef = Matrix::zeros(b, b);
    let mut loss = T::zero();
    let mut valid = 0usize;
    let mut active = 0usize;
    for a in 0..b {
        for p in 0..b {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for n in 0..b {
                if labels[n] == labels[a] {
                    continue;
                }
                valid += 1;
                let v = dist[(a, p)] - dist[(a, n)] + margin;
                if v > T::zero() {
                    active += 1;
                    loss += v;
                    coef[(a, p)] += T::one();
                    coef[(a, n)] -= T::one();
                }
            }
        }
    }
    let mut grad = Matrix::zeros(b, dim);
    if valid == 0 {
        log::warn!("triplet loss: batch contains no valid triplet");
        return Ok(TripletLoss {
            loss: T::zero(),
            grad,
            valid_triplets: 0,
            active_triplets: 0,
        });
    }
    let scale = T::one() / T::from_count(valid);
    for x in 0..b {
        for y in 0..b {
            let w = coef[(x, y)];
            if w == T::zero() {
                continue;
            }
            let diff: Vec<T> = embeddings
                .row(x)
                .iter()
                .zip(embeddings.row(y))
                .map(|(&u, &v)| u - v)
                .collect();
            let c = T::lit(2.0) * w * scale;
            axpy(c, &diff, grad.row_mut(x));
            axpy(-c, &diff, grad.row_mut(y));
        }
    }
    Ok(TripletLoss {
        loss: loss * scale,
        grad,
        valid_triplets: valid,
        active_triplets: active,
    })
}

/// Identity in the forward pass; scales the gradient by `−coeff` backward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReversal<T> {
    pub coeff: T,
}

impl<T: Scalar> GradientReversal<T> {
    pub fn forward<'a>(&self, x: &'a Matrix<T>) -> &'a Matrix<T> {
        x
    }

    pub fn backward(&self, upstream: &Matrix<T>) -> Matrix<T> {
        let mut g = upstream.clone();
        g.scale(-self.coeff);
        g
    }
}

#[derive(Debug, Clone)]
pub struct AdversarialLoss<T> {
    pub loss: T,
    pub logits: Matrix<T>,
    /// Gradient of the domain loss with respect to the discriminator input.
    pub grad_input: Matrix<T>,
    /// Gradient delivered to the generator through the reversal layer.
    pub grad_generator: Matrix<T>,
    /// Un-reversed gradient of the domain loss for the discriminator.
    pub grad_discriminator: Mlp<T>,
}

/// Domain classification of the shared representations through a gradient
/// reversal layer.
pub fn adversarial_grl<T: Scalar>(
    shared: &Matrix<T>,
    domain_labels: &[usize],
    discriminator: &Mlp<T>,
    grl_coeff: T,
) -> Result<AdversarialLoss<T>> {
    let distinct: BTreeSet<usize> = domain_labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::SingleDomain);
    }
    let grl = GradientReversal { coeff: grl_coeff };
    let (logits, cache): (Matrix<T>, MlpCache<T>) = discriminator.forward(grl.forward(shared))?;
    let (loss, d_logits) = cross_entropy_and_grad(&logits, domain_labels)?;
    let (grad_input, grad_discriminator) = discriminator.backward(&cache, &d_logits)?;
    let grad_generator = grl.backward(&grad_input);
    Ok(AdversarialLoss {
        loss,
        logits,
        grad_input,
        grad_generator,
        grad_discriminator,
    })
}
