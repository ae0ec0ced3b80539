//! Finite-difference verification of every analytic gradient in the crate.
//!
//! Each check draws seeded random instances and compares the analytic
//! gradient against central differences of the corresponding loss.

use rand::Rng;

use crate::aggregation::{vlad_backward, vlad_forward, AssignMode, LocalFeatureSet};
use crate::error::Result;
use crate::label::ClassLabel;
use crate::model::{forward_backward, BatchRef, Mlp, ModelParams, ModelShape, PoolingKind, StepOptions};
use crate::numkernel::{check_gradient, derived_rng, GradCheckReport, Matrix, SeedRng, FD_STEP};
use crate::objective::{adversarial_grl, total_objective, triplet_loss_and_grad, LossWeights};
use crate::scalar::dot;
use crate::vocabulary::{centroid_adapt_loss_and_grad, intra_cluster_loss_and_grad, ortho_loss_and_grad, Vocabulary};

/// Maximum relative error accepted by the suite.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_INSTANCES: usize = 20;

/// Worst-case result of one gradient family over all instances.
#[derive(Debug, Clone)]
pub struct SuiteLine {
    pub name: &'static str,
    pub instances: usize,
    pub report: GradCheckReport,
}

impl SuiteLine {
    pub fn passes(&self) -> bool {
        self.report.passes(GRADCHECK_TOLERANCE)
    }
}

fn random_labels(n: usize, rng: &mut SeedRng) -> Vec<ClassLabel> {
    // guarantee both classes
    let mut labels: Vec<ClassLabel> = (0..n)
        .map(|_| if rng.random_bool(0.5) { ClassLabel::Real } else { ClassLabel::Fake })
        .collect();
    labels[0] = ClassLabel::Real;
    labels[n - 1] = ClassLabel::Fake;
    labels
}

fn merge(acc: Option<GradCheckReport>, r: GradCheckReport) -> Option<GradCheckReport> {
    Some(match acc {
        None => r,
        Some(a) => a.merge(r),
    })
}

fn finish(name: &'static str, instances: usize, report: Option<GradCheckReport>) -> SuiteLine {
    SuiteLine {
        name,
        instances,
        report: report.expect("at least one instance"),
    }
}

/// NetVLAD backward against a scalar probe `⟨g, flat⟩`.
pub fn check_vlad(seed: u64, instances: usize) -> Result<SuiteLine> {
    let mut acc = None;
    for inst in 0..instances {
        let mut rng = derived_rng(seed, 1000 + inst as u64);
        let n = rng.random_range(3..7);
        let d = rng.random_range(2..5);
        let k = rng.random_range(2..5);
        let k_shared = rng.random_range(1..=k);
        let feats = Matrix::<f64>::random_normal(n, d, 1.0, &mut rng);
        let words = Matrix::<f64>::random_normal(k, d, 1.0, &mut rng);
        let probe = Matrix::<f64>::random_normal(1, k * d, 1.0, &mut rng).into_vec();
        let t = rng.random_range(0.5..4.0);

        let eval = |f: &[f64], w: &[f64]| -> f64 {
            let local = LocalFeatureSet::new(Matrix::new(n, d, f.to_vec()).unwrap()).unwrap();
            let vocab = Vocabulary::new(Matrix::new(k, d, w.to_vec()).unwrap(), k_shared).unwrap();
            let (desc, _) = vlad_forward(&local, &vocab, t, AssignMode::Soft).unwrap();
            dot(&desc.flat, &probe)
        };
        let local = LocalFeatureSet::new(feats.clone())?;
        let vocab = Vocabulary::new(words.clone(), k_shared)?;
        let (_, cache) = vlad_forward(&local, &vocab, t, AssignMode::Soft)?;
        let (gf, gw) = vlad_backward(&cache, &probe)?;
        let r1 = check_gradient(|x| eval(x, words.as_slice()), feats.as_slice(), gf.as_slice(), FD_STEP)?;
        let r2 = check_gradient(|x| eval(feats.as_slice(), x), words.as_slice(), gw.as_slice(), FD_STEP)?;
        acc = merge(acc, r1.merge(r2));
    }
    Ok(finish("vlad", instances, acc))
}

pub fn check_ortho(seed: u64, instances: usize) -> Result<SuiteLine> {
    let mut acc = None;
    for inst in 0..instances {
        let mut rng = derived_rng(seed, 2000 + inst as u64);
        let k = rng.random_range(2..7);
        let k_shared = rng.random_range(1..k);
        let d = rng.random_range(2..5);
        let words = Matrix::<f64>::random_normal(k, d, 1.0, &mut rng);
        let (_, grad) = ortho_loss_and_grad(&Vocabulary::new(words.clone(), k_shared)?);
        let f = |w: &[f64]| ortho_loss_and_grad(&Vocabulary::new(Matrix::new(k, d, w.to_vec()).unwrap(), k_shared).unwrap()).0;
        acc = merge(acc, check_gradient(f, words.as_slice(), grad.as_slice(), FD_STEP)?);
    }
    Ok(finish("ortho", instances, acc))
}

/// Centroid adaptation: gradient with respect to the words, assignments
/// recomputed at every probe.
pub fn check_c_adapt(seed: u64, instances: usize) -> Result<SuiteLine> {
    let mut acc = None;
    for inst in 0..instances {
        let mut rng = derived_rng(seed, 3000 + inst as u64);
        let (n, d, k) = (12, 3, 4);
        let feats = LocalFeatureSet::new(Matrix::<f64>::random_normal(n, d, 1.0, &mut rng))?;
        let labels = random_labels(n, &mut rng);
        let words = Matrix::<f64>::random_normal(k, d, 1.0, &mut rng);
        let vocab = Vocabulary::new(words.clone(), 3)?;
        let (_, grad, _) = centroid_adapt_loss_and_grad(&feats, &labels, &vocab)?;
        let f = |w: &[f64]| {
            let v = Vocabulary::new(Matrix::new(k, d, w.to_vec()).unwrap(), 3).unwrap();
            centroid_adapt_loss_and_grad(&feats, &labels, &v).unwrap().0
        };
        acc = merge(acc, check_gradient(f, words.as_slice(), grad.as_slice(), FD_STEP)?);
    }
    Ok(finish("c_adapt", instances, acc))
}

/// Intra-cluster loss: gradients with respect to features and words.
pub fn check_intra(seed: u64, instances: usize) -> Result<SuiteLine> {
    let mut acc = None;
    for inst in 0..instances {
        let mut rng = derived_rng(seed, 4000 + inst as u64);
        let (n, d, k) = (14, 3, 3);
        let feats = Matrix::<f64>::random_normal(n, d, 1.0, &mut rng);
        let labels = random_labels(n, &mut rng);
        let words = Matrix::<f64>::random_normal(k, d, 1.0, &mut rng);
        let out = intra_cluster_loss_and_grad(&LocalFeatureSet::new(feats.clone())?, &labels, &Vocabulary::new(words.clone(), k)?, true)?;
        let eval = |f: &[f64], w: &[f64]| {
            let l = LocalFeatureSet::new(Matrix::new(n, d, f.to_vec()).unwrap()).unwrap();
            let v = Vocabulary::new(Matrix::new(k, d, w.to_vec()).unwrap(), k).unwrap();
            intra_cluster_loss_and_grad(&l, &labels, &v, true).unwrap().loss
        };
        let r1 = check_gradient(|x| eval(x, words.as_slice()), feats.as_slice(), out.grad_features.as_slice(), FD_STEP)?;
        let r2 = check_gradient(|x| eval(feats.as_slice(), x), words.as_slice(), out.grad_words.as_slice(), FD_STEP)?;
        acc = merge(acc, r1.merge(r2));
    }
    Ok(finish("intra", instances, acc))
}

pub fn check_triplet(seed: u64, instances: usize) -> Result<SuiteLine> {
    let mut acc = None;
    for inst in 0..instances {
        let mut rng = derived_rng(seed, 5000 + inst as u64);
        let b = rng.random_range(4..9);
        let dim = rng.random_range(2..6);
        let emb = Matrix::<f64>::random_normal(b, dim, 0.5, &mut rng);
        let labels = random_labels(b, &mut rng);
        let margin = rng.random_range(0.5..2.0);
        let out = triplet_loss_and_grad(&emb, &labels, margin)?;
        let f = |e: &[f64]| triplet_loss_and_grad(&Matrix::new(b, dim, e.to_vec()).unwrap(), &labels, margin).unwrap().loss;
        acc = merge(acc, check_gradient(f, emb.as_slice(), out.grad.as_slice(), FD_STEP)?);
    }
    Ok(finish("triplet", instances, acc))
}

/// Adversarial loss through the reversal layer: the generator receives
/// `−coeff · ∂L/∂input`, the discriminator the un-reversed gradient.
pub fn check_adversarial(seed: u64, instances: usize) -> Result<SuiteLine> {
    let mut acc = None;
    for inst in 0..instances {
        let mut rng = derived_rng(seed, 6000 + inst as u64);
        let (b, dim, hidden, domains) = (9, 6, 5, 3);
        let shared = Matrix::<f64>::random_normal(b, dim, 1.0, &mut rng);
        let labels: Vec<usize> = (0..b).map(|i| i % domains).collect();
        let disc = Mlp::<f64>::random(dim, hidden, domains, &mut rng);
        let coeff = rng.random_range(0.1..2.0);
        let out = adversarial_grl(&shared, &labels, &disc, coeff)?;

        let f_in = |x: &[f64]| adversarial_grl(&Matrix::new(b, dim, x.to_vec()).unwrap(), &labels, &disc, coeff).unwrap().loss;
        // generator side: negate the reversed gradient to compare with ∂L/∂input
        let unreversed: Vec<f64> = out.grad_generator.as_slice().iter().map(|g| -g / coeff).collect();
        let mut report = check_gradient(f_in, shared.as_slice(), &unreversed, FD_STEP)?;

        let mut flat_disc: Vec<f64> = Vec::new();
        let mut flat_grad: Vec<f64> = Vec::new();
        for (l, g) in [(&disc.hidden, &out.grad_discriminator.hidden), (&disc.output, &out.grad_discriminator.output)] {
            flat_disc.extend_from_slice(l.weight.as_slice());
            flat_disc.extend_from_slice(&l.bias);
            flat_grad.extend_from_slice(g.weight.as_slice());
            flat_grad.extend_from_slice(&g.bias);
        }
        let f_disc = |p: &[f64]| {
            let mut m = disc.clone();
            let mut off = 0;
            for l in [&mut m.hidden, &mut m.output] {
                let w = l.weight.as_mut_slice();
                w.copy_from_slice(&p[off..off + w.len()]);
                off += w.len();
                let nb = l.bias.len();
                l.bias.copy_from_slice(&p[off..off + nb]);
                off += nb;
            }
            adversarial_grl(&shared, &labels, &m, coeff).unwrap().loss
        };
        report = report.merge(check_gradient(f_disc, &flat_disc, &flat_grad, FD_STEP)?);
        acc = merge(acc, report);
    }
    Ok(finish("adversarial", instances, acc))
}

/// Tiny configuration used by the end-to-end check.
pub fn tiny_shape() -> ModelShape {
    ModelShape {
        d_raw: 5,
        hidden: 6,
        d: 4,
        pooling: PoolingKind::Vlad,
        k: 4,
        k_specific: 1,
        disc_hidden: 5,
        domains: 3,
    }
}

fn flatten(params: &ModelParams<f64>, prefix: &str) -> Vec<f64> {
    params
        .tensors()
        .iter()
        .filter(|t| t.name.starts_with(prefix))
        .flat_map(|t| t.data.iter().copied())
        .collect()
}

fn unflatten(params: &mut ModelParams<f64>, prefix: &str, values: &[f64]) {
    let mut off = 0;
    for (name, data) in params.tensors_mut() {
        if name.starts_with(prefix) {
            data.copy_from_slice(&values[off..off + data.len()]);
            off += data.len();
        }
    }
}

pub const PARAM_GROUPS: [&str; 4] = ["encoder", "vocabulary", "classifier", "discriminator"];

/// Full objective gradient against finite differences, per parameter group.
///
/// Vocabulary-adaptation assignments and centers are frozen at the base
/// point. Encoder, vocabulary and classifier are checked against
/// `Σ λ·L − coeff·λ₂·L_adv` (the objective the reversal layer descends);
/// the discriminator against `λ₂·L_adv`.
pub fn check_end_to_end_groups(seed: u64, instance: usize) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = derived_rng(seed, 7000 + instance as u64);
    let shape = tiny_shape();
    let params = ModelParams::<f64>::init(&shape, rng.random())?;
    let (b, n) = (8, 6);
    let samples: Vec<Matrix<f64>> = (0..b).map(|_| Matrix::random_normal(n, shape.d_raw, 1.0, &mut rng)).collect();
    let refs: Vec<&Matrix<f64>> = samples.iter().collect();
    let class_labels = random_labels(b, &mut rng);
    let domain_labels: Vec<usize> = (0..b).map(|i| i % shape.domains).collect();
    let mut weights = LossWeights::default();
    weights.triplet = rng.random_range(0.2..1.0);
    weights.adversarial = rng.random_range(0.2..1.0);
    weights.ortho = rng.random_range(0.2..1.0);
    weights.c_adapt = rng.random_range(0.2..1.0);
    weights.intra = rng.random_range(0.2..1.0);
    weights.grl_coeff = rng.random_range(0.5..1.5);
    weights.margin = 0.5;
    let opts = StepOptions {
        weights,
        intra_normalize: true,
    };
    let batch = BatchRef {
        samples: &refs,
        class_labels: &class_labels,
        domain_labels: &domain_labels,
    };
    let base = forward_backward(&params, batch, &opts, None)?;
    let freeze = base.freeze.clone();

    let mut generator_weights = weights;
    generator_weights.adversarial = -weights.grl_coeff * weights.adversarial;

    let mut out = Vec::new();
    for group in PARAM_GROUPS {
        let x = flatten(&params, group);
        let analytic = flatten(&base.grads, group);
        let f = |v: &[f64]| {
            let mut p = params.clone();
            unflatten(&mut p, group, v);
            let step = forward_backward(&p, batch, &opts, freeze.as_ref()).unwrap();
            if group == "discriminator" {
                weights.adversarial * step.parts.adversarial
            } else {
                total_objective(&step.parts, &generator_weights).unwrap()
            }
        };
        out.push((group, check_gradient(f, &x, &analytic, FD_STEP)?));
    }
    Ok(out)
}

pub fn check_end_to_end(seed: u64, instances: usize) -> Result<SuiteLine> {
    let mut acc = None;
    for inst in 0..instances {
        for (_, r) in check_end_to_end_groups(seed, inst)? {
            acc = merge(acc, r);
        }
    }
    Ok(finish("end-to-end", instances, acc))
}

/// Runs every check with `instances` seeded instances each.
pub fn run_suite(seed: u64, instances: usize) -> Result<Vec<SuiteLine>> {
    Ok(vec![
        check_vlad(seed, instances)?,
        check_ortho(seed, instances)?,
        check_c_adapt(seed, instances)?,
        check_intra(seed, instances)?,
        check_triplet(seed, instances)?,
        check_adversarial(seed, instances)?,
        check_end_to_end(seed, instances)?,
    ])
}
