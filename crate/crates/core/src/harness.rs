//! Training loop, evaluation, leave-one-domain-out ablation and
//! assignment statistics over synthetic multi-domain data.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::index;
use rayon::prelude::*;

use crate::aggregation::LocalFeatureSet;
use crate::data::{generate_synthetic, Sample, SyntheticParams, SyntheticSpec};
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::metrics::{evaluate_scores, Metrics, ThresholdMode};
use crate::model::{
    encoder_apply, forward_backward, real_score, BatchRef, ModelParams, ModelShape, OptimState, Pooling, PoolingKind,
    Sgd, StepOptions,
};
use crate::numkernel::{derived_rng, Matrix, SeedRng};
use crate::objective::{LossParts, LossWeights, Term};
use crate::vocabulary::{hard_assign, init_vocabulary, InitMode, DEFAULT_K, DEFAULT_K_SPECIFIC};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub per_domain_real: usize,
    pub per_domain_fake: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Iteration from which `lr_dropped` replaces `learning_rate`.
    pub lr_drop_at: usize,
    pub lr_dropped: f64,
    pub weights: LossWeights,
    pub pooling: PoolingKind,
    pub k: usize,
    pub k_specific: usize,
    pub d: usize,
    pub hidden: usize,
    pub disc_hidden: usize,
    pub intra_normalize: bool,
    pub vocab_init: InitMode,
    pub kmeans_iters: usize,
    pub seed: u64,
    /// Evaluate on the target every this many iterations (0 disables).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            per_domain_real: 10,
            per_domain_fake: 10,
            iterations: 500,
            learning_rate: 0.01,
            momentum: 0.9,
            lr_drop_at: 300,
            lr_dropped: 0.001,
            weights: LossWeights::default(),
            pooling: PoolingKind::Vlad,
            k: DEFAULT_K,
            k_specific: DEFAULT_K_SPECIFIC,
            d: 8,
            hidden: 16,
            disc_hidden: 16,
            intra_normalize: true,
            vocab_init: InitMode::Random,
            kmeans_iters: 20,
            seed: 0,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.per_domain_real == 0 || self.per_domain_fake == 0 {
            return fail("per-domain real and fake counts must be positive");
        }
        if self.d == 0 || self.hidden == 0 || self.disc_hidden == 0 {
            return fail("layer widths must be positive");
        }
        if self.pooling == PoolingKind::Vlad && self.k_specific >= self.k {
            return fail("need k > k2 (at least one shared word)");
        }
        if !(self.lr_dropped > 0.0) {
            return fail("dropped learning rate must be positive");
        }
        self.weights.validate()?;
        OptimState::new(self.learning_rate, self.momentum, None)?;
        Ok(())
    }

    pub fn step_options(&self) -> StepOptions {
        StepOptions {
            weights: self.weights,
            intra_normalize: self.intra_normalize,
        }
    }

    /// Batch size for `source_domains` training domains.
    pub fn batch_size(&self, source_domains: usize) -> usize {
        source_domains * (self.per_domain_real + self.per_domain_fake)
    }

    fn shape(&self, d_raw: usize, domains: usize) -> ModelShape {
        ModelShape {
            d_raw,
            hidden: self.hidden,
            d: self.d,
            pooling: self.pooling,
            k: self.k,
            k_specific: self.k_specific,
            disc_hidden: self.disc_hidden,
            domains,
        }
    }
}

/// Per-domain, per-class index lists for drawing balanced batches.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    reals: Vec<Vec<usize>>,
    fakes: Vec<Vec<usize>>,
    per_real: usize,
    per_fake: usize,
}

impl BatchSampler {
    pub fn new(sources: &[&[Sample]], per_real: usize, per_fake: usize) -> Result<Self> {
        let mut reals = Vec::with_capacity(sources.len());
        let mut fakes = Vec::with_capacity(sources.len());
        for (s, dom) in sources.iter().enumerate() {
            let pick = |c: ClassLabel| -> Vec<usize> { (0..dom.len()).filter(|&i| dom[i].class_label == c).collect() };
            let (r, f) = (pick(ClassLabel::Real), pick(ClassLabel::Fake));
            if r.len() < per_real || f.len() < per_fake {
                return Err(Error::InsufficientSamples(format!(
                    "source {} has {} real / {} fake samples, batch needs {per_real} / {per_fake}",
                    s + 1,
                    r.len(),
                    f.len()
                )));
            }
            reals.push(r);
            fakes.push(f);
        }
        Ok(Self {
            reals,
            fakes,
            per_real,
            per_fake,
        })
    }

    /// `(source, sample)` index pairs: for every source, its reals then its
    /// fakes, each drawn without replacement.
    pub fn draw(&self, rng: &mut SeedRng) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.reals.len() * (self.per_real + self.per_fake));
        for (s, (r, f)) in self.reals.iter().zip(&self.fakes).enumerate() {
            for (pool, count) in [(r, self.per_real), (f, self.per_fake)] {
                out.extend(index::sample(rng, pool.len(), count).into_iter().map(|i| (s, pool[i])));
            }
        }
        out
    }
}

pub fn sample_batch(sources: &[&[Sample]], cfg: &TrainConfig, rng: &mut SeedRng) -> Result<Vec<(usize, usize)>> {
    Ok(BatchSampler::new(sources, cfg.per_domain_real, cfg.per_domain_fake)?.draw(rng))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub learning_rate: f64,
    pub parts: LossParts<f64>,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams<f64>,
    pub trace: Vec<TraceRow>,
    /// `(iteration, metrics)` on the evaluation target, when one was given.
    pub evals: Vec<(usize, Metrics)>,
}

fn common_dims<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Result<(usize, usize)> {
    let mut dims = None;
    for s in samples {
        let shape = s.raw_features.shape();
        match dims {
            None => dims = Some(shape),
            Some(d) if d != shape => {
                return Err(Error::InvalidArgument(format!(
                    "samples disagree on N x d_raw: {}x{} vs {}x{}",
                    d.0, d.1, shape.0, shape.1
                )))
            }
            _ => {}
        }
    }
    dims.ok_or_else(|| Error::InsufficientSamples("no samples".into()))
}

/// Initial parameters for training on `sources`.
pub fn initial_params(sources: &[&[Sample]], cfg: &TrainConfig) -> Result<ModelParams<f64>> {
    let (_, d_raw) = common_dims(sources.iter().flat_map(|s| s.iter()))?;
    let mut params = ModelParams::init(&cfg.shape(d_raw, sources.len()), cfg.seed)?;
    if cfg.vocab_init == InitMode::KMeans && cfg.pooling == PoolingKind::Vlad {
        // pool: encoded locals of up to 32 samples per source
        let mut rows = Vec::new();
        let mut count = 0;
        for dom in sources {
            for s in dom.iter().take(32) {
                let (enc, _) = encoder_apply(&LocalFeatureSet::new(s.raw_features.clone())?, &params)?;
                rows.extend_from_slice(enc.features().as_slice());
                count += s.raw_features.rows();
            }
        }
        let pool = Matrix::new(count, cfg.d, rows)?;
        let vocab = init_vocabulary(
            InitMode::KMeans,
            cfg.k,
            cfg.k_specific,
            cfg.d,
            cfg.seed,
            Some(&pool),
            cfg.kmeans_iters,
        )?;
        params.pooling = Pooling::Vlad(vocab);
    }
    Ok(params)
}

fn diverged(iteration: usize, e: Error) -> Error {
    match e {
        Error::NonFiniteLoss { .. } | Error::NonFiniteGradient { .. } => Error::Diverged {
            iteration,
            detail: e.to_string(),
        },
        other => other,
    }
}

/// Trains on `sources` (at least two domains); domain labels are positions
/// in `sources`. With `target`, evaluates every `cfg.eval_every` iterations.
pub fn run_training(sources: &[&[Sample]], cfg: &TrainConfig, target: Option<&[Sample]>) -> Result<TrainOutput> {
    cfg.validate()?;
    if sources.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "training needs at least 2 source domains, got {}",
            sources.len()
        )));
    }
    let mut params = initial_params(sources, cfg)?;
    let sampler = BatchSampler::new(sources, cfg.per_domain_real, cfg.per_domain_fake)?;
    let mut rng = derived_rng(cfg.seed, 20);
    let mut sgd = Sgd::new(OptimState::new(
        cfg.learning_rate,
        cfg.momentum,
        Some((cfg.lr_drop_at, cfg.lr_dropped)),
    )?);
    let opts = cfg.step_options();
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut evals = Vec::new();

    for it in 0..cfg.iterations {
        let picks = sampler.draw(&mut rng);
        let samples: Vec<&Matrix<f64>> = picks.iter().map(|&(s, i)| &sources[s][i].raw_features).collect();
        let class_labels: Vec<ClassLabel> = picks.iter().map(|&(s, i)| sources[s][i].class_label).collect();
        let domain_labels: Vec<usize> = picks.iter().map(|&(s, _)| s).collect();
        let batch = BatchRef {
            samples: &samples,
            class_labels: &class_labels,
            domain_labels: &domain_labels,
        };
        let step = forward_backward(&params, batch, &opts, None).map_err(|e| diverged(it, e))?;
        let row = TraceRow {
            iteration: it,
            learning_rate: sgd.state.current_lr(),
            parts: step.parts,
            total: step.total,
        };
        log::debug!("iteration {it}: total {:.6} cls {:.6}", step.total, step.parts.cls);
        trace.push(row);
        sgd.step(&mut params, &step.grads).map_err(|e| diverged(it, e))?;
        if params.tensors().iter().any(|t| t.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::Diverged {
                iteration: it,
                detail: format!("parameters became non-finite; losses {}", breakdown(&step.parts)),
            });
        }
        if let Some(t) = target {
            if cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0 {
                evals.push((it + 1, evaluate_metrics(&params, t, cfg.weights.temperature, ThresholdMode::Eer)?));
            }
        }
    }
    Ok(TrainOutput { params, trace, evals })
}

fn breakdown(parts: &LossParts<f64>) -> String {
    Term::ALL
        .iter()
        .map(|&t| format!("{t}={}", parts.get(t)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// P(real) for every sample, in order.
pub fn score_samples(params: &ModelParams<f64>, samples: &[Sample], temperature: f64) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|s| real_score(&LocalFeatureSet::new(s.raw_features.clone())?, params, temperature))
        .collect()
}

/// AUC and HTER of the classifier's P(real) on `target`.
pub fn evaluate_metrics(
    params: &ModelParams<f64>,
    target: &[Sample],
    temperature: f64,
    mode: ThresholdMode,
) -> Result<Metrics> {
    let scores = score_samples(params, target, temperature)?;
    let (mut real, mut fake) = (Vec::new(), Vec::new());
    for (s, score) in target.iter().zip(scores) {
        match s.class_label {
            ClassLabel::Real => real.push(score),
            ClassLabel::Fake => fake.push(score),
        }
    }
    if real.is_empty() || fake.is_empty() {
        return Err(Error::InsufficientSamples("evaluation target must contain both classes".into()));
    }
    evaluate_scores(&real, &fake, mode)
}

/// Splits per-domain datasets into sources and the held-out target.
/// `holdout` is 1-based.
pub fn leave_one_out(domains: &[Vec<Sample>], holdout: usize) -> Result<(Vec<&[Sample]>, &[Sample])> {
    if holdout == 0 || holdout > domains.len() {
        return Err(Error::InvalidArgument(format!(
            "holdout {holdout} outside 1..={}",
            domains.len()
        )));
    }
    let sources = domains
        .iter()
        .enumerate()
        .filter(|&(i, _)| i + 1 != holdout)
        .map(|(_, d)| d.as_slice())
        .collect();
    Ok((sources, &domains[holdout - 1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Gap,
    Vlad,
    VladVs,
    VladVa,
    VladVsa,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Gap, Variant::Vlad, Variant::VladVs, Variant::VladVa, Variant::VladVsa];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Gap => "gap",
            Variant::Vlad => "vlad",
            Variant::VladVs => "vlad_vs",
            Variant::VladVa => "vlad_va",
            Variant::VladVsa => "vlad_vsa",
        }
    }

    /// The full configuration with this variant's components switched off.
    pub fn configure(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        let (separation, adaptation) = match self {
            Variant::Gap => {
                cfg.pooling = PoolingKind::Gap;
                (false, false)
            }
            Variant::Vlad => (false, false),
            Variant::VladVs => (true, false),
            Variant::VladVa => (false, true),
            Variant::VladVsa => (true, true),
        };
        if self != Variant::Gap {
            cfg.pooling = PoolingKind::Vlad;
        }
        if !separation {
            cfg.k_specific = 0;
            cfg.weights.ortho = 0.0;
        }
        if !adaptation {
            cfg.weights.c_adapt = 0.0;
            cfg.weights.intra = 0.0;
        }
        cfg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub holdout: usize,
    pub seed: u64,
    pub metrics: Metrics,
}

/// Trains and evaluates each variant on every held-out domain for every
/// seed. Seed `s` regenerates the data with seed `s` and initializes the
/// model with seed `s`. Rows are ordered by variant, holdout, seed.
pub fn run_ablation(
    data: &SyntheticParams,
    base: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one seed".into()));
    }
    let datasets: Vec<Vec<Vec<Sample>>> = seeds
        .iter()
        .map(|&seed| generate_synthetic(&SyntheticSpec::from_params(&SyntheticParams { seed, ..*data })?))
        .collect::<Result<_>>()?;
    let holdouts = data.domains;
    let mut jobs = Vec::new();
    for &v in variants {
        for h in 1..=holdouts {
            for (si, &seed) in seeds.iter().enumerate() {
                jobs.push((v, h, si, seed));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(variant, holdout, si, seed)| {
            let cfg = TrainConfig {
                seed,
                ..variant.configure(base)
            };
            let (sources, target) = leave_one_out(&datasets[si], holdout)?;
            let out = run_training(&sources, &cfg, None)?;
            let metrics = evaluate_metrics(&out.params, target, cfg.weights.temperature, ThresholdMode::Eer)?;
            log::info!("{variant} holdout {holdout} seed {seed}: auc {:.4} hter {:.4}", metrics.auc, metrics.hter);
            Ok(AblationRow {
                variant,
                holdout,
                seed,
                metrics,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub variant: Variant,
    /// `None` aggregates over every held-out domain.
    pub holdout: Option<usize>,
    pub runs: usize,
    pub hter_mean: f64,
    pub hter_std: f64,
    pub auc_mean: f64,
    pub auc_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and sample standard deviation per variant and holdout, followed by
/// one all-holdout row per variant.
pub fn summarize(rows: &[AblationRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Variant, Option<usize>)> = Vec::new();
    for r in rows {
        for key in [(r.variant, Some(r.holdout)), (r.variant, None)] {
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
    }
    keys.sort_by_key(|&(v, h)| (v, h.is_none(), h));
    keys.into_iter()
        .map(|(variant, holdout)| {
            let sel: Vec<&AblationRow> = rows
                .iter()
                .filter(|r| r.variant == variant && holdout.is_none_or(|h| r.holdout == h))
                .collect();
            let hter: Vec<f64> = sel.iter().map(|r| r.metrics.hter).collect();
            let auc: Vec<f64> = sel.iter().map(|r| r.metrics.auc).collect();
            let (hter_mean, hter_std) = mean_std(&hter);
            let (auc_mean, auc_std) = mean_std(&auc);
            SummaryRow {
                variant,
                holdout,
                runs: sel.len(),
                hter_mean,
                hter_std,
                auc_mean,
                auc_std,
            }
        })
        .collect()
}

/// Mean held-out AUC of one variant over all rows.
pub fn mean_auc(rows: &[AblationRow], variant: Variant) -> Option<f64> {
    let auc: Vec<f64> = rows.iter().filter(|r| r.variant == variant).map(|r| r.metrics.auc).collect();
    (!auc.is_empty()).then(|| auc.iter().sum::<f64>() / auc.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterRow {
    pub cluster: usize,
    pub is_specific: bool,
    pub total: usize,
    pub real: usize,
    pub fake: usize,
    /// Counts for domains 1..=S.
    pub per_domain: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentTable {
    pub rows: Vec<ClusterRow>,
    pub domains: usize,
    pub locals: usize,
}

impl AssignmentTable {
    pub fn total(&self) -> usize {
        self.rows.iter().map(|r| r.total).sum()
    }
}

fn encoded_assignment(params: &ModelParams<f64>, sample: &Sample) -> Result<(LocalFeatureSet<f64>, Vec<usize>)> {
    let vocab = params
        .vocabulary()
        .ok_or_else(|| Error::InvalidArgument("model has no vocabulary (GAP pooling)".into()))?;
    let (enc, _) = encoder_apply(&LocalFeatureSet::new(sample.raw_features.clone())?, params)?;
    let assign = hard_assign(enc.features(), vocab);
    Ok((enc, assign))
}

/// Hard-assigns every encoded local of the first `sample_count` samples
/// and counts them per cluster, class and domain.
pub fn assignment_stats(params: &ModelParams<f64>, samples: &[Sample], sample_count: usize) -> Result<AssignmentTable> {
    if sample_count > samples.len() {
        return Err(Error::InsufficientSamples(format!(
            "requested {sample_count} samples, dataset has {}",
            samples.len()
        )));
    }
    let vocab = params
        .vocabulary()
        .ok_or_else(|| Error::InvalidArgument("model has no vocabulary (GAP pooling)".into()))?;
    let selected = &samples[..sample_count];
    let domains = selected.iter().map(|s| s.domain as usize).max().unwrap_or(0);
    let mut rows: Vec<ClusterRow> = (0..vocab.k())
        .map(|k| ClusterRow {
            cluster: k,
            is_specific: vocab.is_specific(k),
            total: 0,
            real: 0,
            fake: 0,
            per_domain: vec![0; domains],
        })
        .collect();
    let mut locals = 0;
    for s in selected {
        let (_, assign) = encoded_assignment(params, s)?;
        locals += assign.len();
        for k in assign {
            let row = &mut rows[k];
            row.total += 1;
            match s.class_label {
                ClassLabel::Real => row.real += 1,
                ClassLabel::Fake => row.fake += 1,
            }
            if s.domain >= 1 {
                row.per_domain[s.domain as usize - 1] += 1;
            }
        }
    }
    Ok(AssignmentTable { rows, domains, locals })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRow {
    pub cluster: usize,
    pub class_label: ClassLabel,
    pub residual: Vec<f64>,
}

/// Residual `f − c_k` of every encoded local of the first `sample_count`
/// samples to its hard-assigned word.
pub fn residual_dump(params: &ModelParams<f64>, samples: &[Sample], sample_count: usize) -> Result<Vec<ResidualRow>> {
    let vocab = params
        .vocabulary()
        .ok_or_else(|| Error::InvalidArgument("model has no vocabulary (GAP pooling)".into()))?;
    let mut out = Vec::new();
    for s in samples.iter().take(sample_count) {
        let (enc, assign) = encoded_assignment(params, s)?;
        for (f, &k) in enc.features().row_iter().zip(&assign) {
            out.push(ResidualRow {
                cluster: k,
                class_label: s.class_label,
                residual: f.iter().zip(vocab.words().row(k)).map(|(a, c)| a - c).collect(),
            });
        }
    }
    Ok(out)
}

fn comment_line<W: Write>(w: &mut W, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    Ok(())
}

pub fn write_trace_csv<W: Write>(w: &mut W, trace: &[TraceRow], comment: Option<&str>) -> Result<()> {
    comment_line(w, comment)?;
    let names: Vec<&str> = Term::ALL.iter().map(|t| t.name()).collect();
    writeln!(w, "iteration,lr,{},total", names.join(","))?;
    for r in trace {
        write!(w, "{},{}", r.iteration, r.learning_rate)?;
        for t in Term::ALL {
            write!(w, ",{}", r.parts.get(t))?;
        }
        writeln!(w, ",{}", r.total)?;
    }
    Ok(())
}

pub fn write_metrics_csv<W: Write>(w: &mut W, m: &Metrics, comment: Option<&str>) -> Result<()> {
    comment_line(w, comment)?;
    writeln!(w, "auc,hter,eer_threshold,far,frr")?;
    writeln!(w, "{},{},{},{},{}", m.auc, m.hter, m.eer_threshold, m.far, m.frr)?;
    Ok(())
}

pub fn write_ablation_csv<W: Write>(w: &mut W, rows: &[AblationRow], comment: Option<&str>) -> Result<()> {
    comment_line(w, comment)?;
    writeln!(w, "variant,holdout,seed,hter,auc")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.variant, r.holdout, r.seed, r.metrics.hter, r.metrics.auc)?;
    }
    Ok(())
}

/// Holdout column is `all` on the per-variant aggregate rows.
pub fn write_summary_csv<W: Write>(w: &mut W, rows: &[SummaryRow], comment: Option<&str>) -> Result<()> {
    comment_line(w, comment)?;
    writeln!(w, "variant,holdout,runs,hter_mean,hter_std,auc_mean,auc_std")?;
    for r in rows {
        let h = r.holdout.map_or_else(|| "all".to_string(), |h| h.to_string());
        writeln!(
            w,
            "{},{h},{},{},{},{},{}",
            r.variant, r.runs, r.hter_mean, r.hter_std, r.auc_mean, r.auc_std
        )?;
    }
    Ok(())
}

pub fn write_assignment_csv<W: Write>(w: &mut W, table: &AssignmentTable, comment: Option<&str>) -> Result<()> {
    comment_line(w, comment)?;
    write!(w, "cluster,is_specific,total,real,fake")?;
    for s in 1..=table.domains {
        write!(w, ",domain_{s}")?;
    }
    writeln!(w)?;
    for r in &table.rows {
        write!(w, "{},{},{},{},{}", r.cluster, u8::from(r.is_specific), r.total, r.real, r.fake)?;
        for c in &r.per_domain {
            write!(w, ",{c}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_residual_csv<W: Write>(w: &mut W, rows: &[ResidualRow], comment: Option<&str>) -> Result<()> {
    comment_line(w, comment)?;
    let d = rows.first().map_or(0, |r| r.residual.len());
    write!(w, "cluster,class")?;
    for j in 0..d {
        write!(w, ",r_{j}")?;
    }
    writeln!(w)?;
    for r in rows {
        write!(w, "{},{}", r.cluster, r.class_label.index())?;
        for v in &r.residual {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
