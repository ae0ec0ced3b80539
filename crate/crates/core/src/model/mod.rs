//! Trainable state (encoder, vocabulary, classifier, domain discriminator),
//! the combined forward/backward pass over a batch, and SGD.

mod checkpoint;
mod layers;
mod sgd;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use layers::{Linear, Mlp, MlpCache};
pub use sgd::{OptimState, Sgd};

use crate::aggregation::{gap_pool, vlad_backward, vlad_forward, AssignMode, LocalFeatureSet, VladCache, VladDescriptor};
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::numkernel::{derived_rng, Matrix};
use crate::objective::{
    adversarial_grl, cross_entropy_and_grad, total_objective, triplet_loss_and_grad, LossParts, LossWeights,
};
use crate::scalar::{axpy, Scalar};
use crate::vocabulary::{
    centroid_adapt_from_stats, cluster_stats, init_vocabulary, intra_cluster_with_assignment, ortho_loss_and_grad,
    ClusterStats, InitMode, Vocabulary,
};

/// How local features become a global representation.
#[derive(Debug, Clone, PartialEq)]
pub enum Pooling<T> {
    /// Global average pooling; no vocabulary.
    Gap,
    Vlad(Vocabulary<T>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolingKind {
    Gap,
    Vlad,
}

/// Layer sizes of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub d_raw: usize,
    pub hidden: usize,
    /// Encoded local feature width d.
    pub d: usize,
    pub pooling: PoolingKind,
    pub k: usize,
    pub k_specific: usize,
    pub disc_hidden: usize,
    /// Number of source domains seen by the discriminator.
    pub domains: usize,
}

impl ModelShape {
    /// Width of the global representation.
    pub fn representation_dim(&self) -> usize {
        match self.pooling {
            PoolingKind::Gap => self.d,
            PoolingKind::Vlad => self.k * self.d,
        }
    }

    /// Width of the representation slice the discriminator reads.
    pub fn shared_dim(&self) -> usize {
        match self.pooling {
            PoolingKind::Gap => self.d,
            PoolingKind::Vlad => (self.k - self.k_specific) * self.d,
        }
    }
}

/// Full trainable state; the same type also holds gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub encoder: Mlp<T>,
    pub pooling: Pooling<T>,
    pub classifier: Linear<T>,
    pub discriminator: Mlp<T>,
}

/// Borrowed view of one named parameter tensor.
pub struct TensorRef<'a, T> {
    pub name: &'static str,
    pub dims: Vec<usize>,
    pub data: &'a [T],
}

impl<T: Scalar> ModelParams<T> {
    /// Random initialization: He-style dense layers and a N(0, 1/d) vocabulary.
    pub fn init(shape: &ModelShape, seed: u64) -> Result<Self> {
        if shape.d_raw == 0 || shape.hidden == 0 || shape.d == 0 || shape.disc_hidden == 0 || shape.domains < 2 {
            return Err(Error::InvalidArgument(format!("invalid model shape {shape:?}")));
        }
        let mut rng = derived_rng(seed, 10);
        let encoder = Mlp::random(shape.d_raw, shape.hidden, shape.d, &mut rng);
        let pooling = match shape.pooling {
            PoolingKind::Gap => Pooling::Gap,
            PoolingKind::Vlad => Pooling::Vlad(init_vocabulary(
                InitMode::Random,
                shape.k,
                shape.k_specific,
                shape.d,
                seed,
                None,
                0,
            )?),
        };
        let classifier = Linear::random(shape.representation_dim(), 2, &mut rng);
        let discriminator = Mlp::random(shape.shared_dim(), shape.disc_hidden, shape.domains, &mut rng);
        let params = Self {
            encoder,
            pooling,
            classifier,
            discriminator,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn vocabulary(&self) -> Option<&Vocabulary<T>> {
        match &self.pooling {
            Pooling::Gap => None,
            Pooling::Vlad(v) => Some(v),
        }
    }

    pub fn encoded_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn representation_dim(&self) -> usize {
        match &self.pooling {
            Pooling::Gap => self.encoded_dim(),
            Pooling::Vlad(v) => v.k() * v.dim(),
        }
    }

    pub fn shared_dim(&self) -> usize {
        match &self.pooling {
            Pooling::Gap => self.encoded_dim(),
            Pooling::Vlad(v) => v.k_shared() * v.dim(),
        }
    }

    /// Checks that the layer shapes agree with each other.
    pub fn validate(&self) -> Result<()> {
        let check = |what: &'static str, expected: usize, actual: usize| {
            if expected == actual {
                Ok(())
            } else {
                Err(Error::Length { what, expected, actual })
            }
        };
        check("encoder hidden/output", self.encoder.hidden.output_dim(), self.encoder.output.input_dim())?;
        if let Pooling::Vlad(v) = &self.pooling {
            check("vocabulary width", self.encoded_dim(), v.dim())?;
        }
        check("classifier input", self.representation_dim(), self.classifier.input_dim())?;
        check("classifier output", 2, self.classifier.output_dim())?;
        check("discriminator input", self.shared_dim(), self.discriminator.input_dim())?;
        check(
            "discriminator hidden/output",
            self.discriminator.hidden.output_dim(),
            self.discriminator.output.input_dim(),
        )?;
        if self.tensors().iter().any(|t| t.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Gradient container of matching shape, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, data) in z.tensors_mut() {
            data.iter_mut().for_each(|v| *v = T::zero());
        }
        z
    }

    /// Every parameter tensor in canonical order.
    pub fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut out = Vec::with_capacity(11);
        out.push(mat_ref("encoder.hidden.weight", &self.encoder.hidden.weight));
        out.push(vec_ref("encoder.hidden.bias", &self.encoder.hidden.bias));
        out.push(mat_ref("encoder.output.weight", &self.encoder.output.weight));
        out.push(vec_ref("encoder.output.bias", &self.encoder.output.bias));
        if let Pooling::Vlad(v) = &self.pooling {
            out.push(mat_ref("vocabulary.words", v.words()));
        }
        out.push(mat_ref("classifier.weight", &self.classifier.weight));
        out.push(vec_ref("classifier.bias", &self.classifier.bias));
        out.push(mat_ref("discriminator.hidden.weight", &self.discriminator.hidden.weight));
        out.push(vec_ref("discriminator.hidden.bias", &self.discriminator.hidden.bias));
        out.push(mat_ref("discriminator.output.weight", &self.discriminator.output.weight));
        out.push(vec_ref("discriminator.output.bias", &self.discriminator.output.bias));
        out
    }

    /// Mutable counterpart of [`ModelParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [T])> {
        let mut out: Vec<(&'static str, &mut [T])> = Vec::with_capacity(11);
        out.push(("encoder.hidden.weight", self.encoder.hidden.weight.as_mut_slice()));
        out.push(("encoder.hidden.bias", &mut self.encoder.hidden.bias));
        out.push(("encoder.output.weight", self.encoder.output.weight.as_mut_slice()));
        out.push(("encoder.output.bias", &mut self.encoder.output.bias));
        if let Pooling::Vlad(v) = &mut self.pooling {
            out.push(("vocabulary.words", v.words_mut().as_mut_slice()));
        }
        out.push(("classifier.weight", self.classifier.weight.as_mut_slice()));
        out.push(("classifier.bias", &mut self.classifier.bias));
        out.push(("discriminator.hidden.weight", self.discriminator.hidden.weight.as_mut_slice()));
        out.push(("discriminator.hidden.bias", &mut self.discriminator.hidden.bias));
        out.push(("discriminator.output.weight", self.discriminator.output.weight.as_mut_slice()));
        out.push(("discriminator.output.bias", &mut self.discriminator.output.bias));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }
}

fn mat_ref<'a, T: Scalar>(name: &'static str, m: &'a Matrix<T>) -> TensorRef<'a, T> {
    TensorRef {
        name,
        dims: vec![m.rows(), m.cols()],
        data: m.as_slice(),
    }
}

fn vec_ref<'a, T: Scalar>(name: &'static str, v: &'a [T]) -> TensorRef<'a, T> {
    TensorRef {
        name,
        dims: vec![v.len()],
        data: v,
    }
}

/// Applies the encoder to every local descriptor independently.
pub fn encoder_apply<T: Scalar>(
    raw: &LocalFeatureSet<T>,
    params: &ModelParams<T>,
) -> Result<(LocalFeatureSet<T>, MlpCache<T>)> {
    if raw.dim() != params.encoder.input_dim() {
        return Err(Error::Length {
            what: "raw descriptor width",
            expected: params.encoder.input_dim(),
            actual: raw.dim(),
        });
    }
    let (encoded, cache) = params.encoder.forward(raw.features())?;
    Ok((LocalFeatureSet::new(encoded)?, cache))
}

/// A pooled global representation whose first `shared_len` entries are the
/// part the discriminator may see.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation<T> {
    pub flat: Vec<T>,
    pub shared_len: usize,
}

impl<T: Scalar> From<&VladDescriptor<T>> for Representation<T> {
    fn from(d: &VladDescriptor<T>) -> Self {
        Self {
            flat: d.flat.clone(),
            shared_len: d.shared_slice().len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeadsOutput<T> {
    pub class_logits: Vec<T>,
    pub domain_logits: Vec<T>,
    pub discriminator_cache: MlpCache<T>,
}

/// Classifier over the whole representation, discriminator over the shared part only.
pub fn heads_apply<T: Scalar>(rep: &Representation<T>, params: &ModelParams<T>) -> Result<HeadsOutput<T>> {
    if rep.flat.len() != params.representation_dim() || rep.shared_len != params.shared_dim() {
        return Err(Error::Length {
            what: "representation width",
            expected: params.representation_dim(),
            actual: rep.flat.len(),
        });
    }
    let full = Matrix::new(1, rep.flat.len(), rep.flat.clone())?;
    let shared = Matrix::new(1, rep.shared_len, rep.flat[..rep.shared_len].to_vec())?;
    let class_logits = params.classifier.forward(&full)?.into_vec();
    let (domain, discriminator_cache) = params.discriminator.forward(&shared)?;
    Ok(HeadsOutput {
        class_logits,
        domain_logits: domain.into_vec(),
        discriminator_cache,
    })
}

/// Pools encoded local features into the model's global representation.
pub fn pool<T: Scalar>(encoded: &LocalFeatureSet<T>, params: &ModelParams<T>, temperature: T) -> Result<Vec<T>> {
    Ok(match &params.pooling {
        Pooling::Gap => gap_pool(encoded).flat,
        Pooling::Vlad(v) => vlad_forward(encoded, v, temperature, AssignMode::Soft)?.0.flat,
    })
}

/// Softmax probability of the "real" class for one raw sample.
pub fn real_score<T: Scalar>(raw: &LocalFeatureSet<T>, params: &ModelParams<T>, temperature: T) -> Result<T> {
    let (encoded, _) = encoder_apply(raw, params)?;
    let rep = pool(&encoded, params, temperature)?;
    let logits = params.classifier.forward(&Matrix::new(1, rep.len(), rep)?)?;
    let (r, f) = (logits[(0, ClassLabel::Real.index())], logits[(0, ClassLabel::Fake.index())]);
    // p_real = 1 / (1 + e^(f − r))
    Ok(T::one() / (T::one() + (f - r).exp()))
}

/// A labeled batch of raw samples, each N × d_raw.
#[derive(Debug, Clone, Copy)]
pub struct BatchRef<'a, T> {
    pub samples: &'a [&'a Matrix<T>],
    pub class_labels: &'a [ClassLabel],
    /// Zero-based source-domain index of each sample.
    pub domain_labels: &'a [usize],
}

/// Per-step options of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub weights: LossWeights,
    pub intra_normalize: bool,
}

/// Hard assignments and assigned-feature centers held fixed while
/// differentiating the vocabulary-adaptation losses.
#[derive(Debug, Clone, PartialEq)]
pub struct VaFreeze<T> {
    pub stats: ClusterStats<T>,
}

#[derive(Debug, Clone)]
pub struct StepOutput<T> {
    pub parts: LossParts<T>,
    pub total: T,
    /// Gradient of the objective, with the adversarial term reversed for the
    /// encoder and vocabulary.
    pub grads: ModelParams<T>,
    pub freeze: Option<VaFreeze<T>>,
}

/// Evaluates every loss term on a batch and back-propagates the weighted sum.
///
/// When `freeze` is given, the vocabulary-adaptation losses use its
/// assignments and centers instead of recomputing them.
pub fn forward_backward<T: Scalar>(
    params: &ModelParams<T>,
    batch: BatchRef<'_, T>,
    opts: &StepOptions,
    freeze: Option<&VaFreeze<T>>,
) -> Result<StepOutput<T>> {
    let b = batch.samples.len();
    if batch.class_labels.len() != b || batch.domain_labels.len() != b {
        return Err(Error::Length {
            what: "batch labels",
            expected: b,
            actual: batch.class_labels.len(),
        });
    }
    if b < 2 {
        return Err(Error::InvalidArgument("batch needs at least 2 samples".into()));
    }
    let w = &opts.weights;
    let temperature = T::lit(w.temperature);
    let n = batch.samples[0].rows();
    if batch.samples.iter().any(|s| s.rows() != n || s.rows() == 0) {
        return Err(Error::InvalidArgument("samples must share a non-zero local count".into()));
    }
    let d = params.encoded_dim();

    // encode all locals at once: rows [s·N, (s+1)·N) belong to sample s
    let mut raw_rows = Vec::with_capacity(b * n * params.encoder.input_dim());
    for s in batch.samples {
        if s.cols() != params.encoder.input_dim() {
            return Err(Error::Length {
                what: "raw descriptor width",
                expected: params.encoder.input_dim(),
                actual: s.cols(),
            });
        }
        raw_rows.extend_from_slice(s.as_slice());
    }
    let raw = Matrix::new(b * n, params.encoder.input_dim(), raw_rows)?;
    let (encoded, enc_cache) = params.encoder.forward(&raw)?;

    let rep_dim = params.representation_dim();
    let shared_dim = params.shared_dim();
    let mut embeddings = Matrix::zeros(b, rep_dim);
    let mut vlad_caches: Vec<VladCache<T>> = Vec::new();
    let mut sample_feats = Vec::with_capacity(b);
    for s in 0..b {
        let rows: Vec<usize> = (s * n..(s + 1) * n).collect();
        let local = LocalFeatureSet::new(encoded.select_rows(&rows))?;
        match &params.pooling {
            Pooling::Gap => embeddings.row_mut(s).copy_from_slice(&gap_pool(&local).flat),
            Pooling::Vlad(v) => {
                let (desc, cache) = vlad_forward(&local, v, temperature, AssignMode::Soft)?;
                embeddings.row_mut(s).copy_from_slice(&desc.flat);
                vlad_caches.push(cache);
            }
        }
        sample_feats.push(local);
    }

    let mut grads = params.zeros_like();
    let mut parts = LossParts::<T>::default();

    // classification
    let logits = params.classifier.forward(&embeddings)?;
    let cls_idx: Vec<usize> = batch.class_labels.iter().map(|c| c.index()).collect();
    let (cls, d_logits) = cross_entropy_and_grad(&logits, &cls_idx)?;
    parts.cls = cls;
    let (mut d_emb, g_cls) = params.classifier.backward(&embeddings, &d_logits)?;
    grads.classifier = g_cls;

    // triplet
    let tri = triplet_loss_and_grad(&embeddings, batch.class_labels, T::lit(w.margin))?;
    parts.triplet = tri.loss;
    d_emb.add_scaled(T::lit(w.triplet), &tri.grad)?;

    // adversarial on the shared slice
    let shared = Matrix::from_fn(b, shared_dim, |i, j| embeddings[(i, j)]);
    let adv = adversarial_grl(&shared, batch.domain_labels, &params.discriminator, T::lit(w.grl_coeff))?;
    parts.adversarial = adv.loss;
    let lambda_adv = T::lit(w.adversarial);
    for i in 0..b {
        axpy(lambda_adv, adv.grad_generator.row(i), &mut d_emb.row_mut(i)[..shared_dim]);
    }
    grads.discriminator = adv.grad_discriminator;
    for g in [&mut grads.discriminator.hidden, &mut grads.discriminator.output] {
        g.weight.scale(lambda_adv);
        g.bias.iter_mut().for_each(|v| *v *= lambda_adv);
    }

    // back through pooling
    let mut d_encoded = Matrix::zeros(b * n, d);
    let mut new_freeze = None;
    match &params.pooling {
        Pooling::Gap => {
            let inv_n = T::one() / T::from_count(n);
            for s in 0..b {
                for i in 0..n {
                    axpy(inv_n, d_emb.row(s), d_encoded.row_mut(s * n + i));
                }
            }
        }
        Pooling::Vlad(vocab) => {
            let mut d_words = Matrix::zeros(vocab.k(), d);
            for (s, cache) in vlad_caches.iter().enumerate() {
                let (g_local, g_words) = vlad_backward(cache, d_emb.row(s))?;
                for i in 0..n {
                    d_encoded.row_mut(s * n + i).copy_from_slice(g_local.row(i));
                }
                d_words.add_scaled(T::one(), &g_words)?;
            }

            let (ortho, g_ortho) = ortho_loss_and_grad(vocab);
            parts.ortho = ortho;
            d_words.add_scaled(T::lit(w.ortho), &g_ortho)?;

            let all_local = LocalFeatureSet::new(encoded.clone())?;
            let row_labels: Vec<ClassLabel> = batch
                .class_labels
                .iter()
                .flat_map(|&c| std::iter::repeat_n(c, n))
                .collect();
            let stats = match freeze {
                Some(f) => f.stats.clone(),
                None => cluster_stats(&all_local, &row_labels, vocab)?,
            };
            let (c_adapt, g_adapt) = centroid_adapt_from_stats(&stats, vocab);
            parts.c_adapt = c_adapt;
            d_words.add_scaled(T::lit(w.c_adapt), &g_adapt)?;

            let intra =
                intra_cluster_with_assignment(&all_local, &row_labels, vocab, &stats.assignment, opts.intra_normalize)?;
            parts.intra = intra.loss;
            d_words.add_scaled(T::lit(w.intra), &intra.grad_words)?;
            d_encoded.add_scaled(T::lit(w.intra), &intra.grad_features)?;

            if let Pooling::Vlad(gv) = &mut grads.pooling {
                *gv.words_mut() = d_words;
            }
            new_freeze = Some(VaFreeze { stats });
        }
    }

    let (_, g_enc) = params.encoder.backward(&enc_cache, &d_encoded)?;
    grads.encoder = g_enc;

    let total = total_objective(&parts, w)?;
    Ok(StepOutput {
        parts,
        total,
        grads,
        freeze: new_freeze,
    })
}
