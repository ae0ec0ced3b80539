use std::collections::HashSet;

use vlad_vsa::aggregation::{vlad_backward, vlad_forward, AssignMode, LocalFeatureSet};
use vlad_vsa::data::{generate_synthetic, Sample, SyntheticParams, SyntheticSpec};
use vlad_vsa::harness::{
    assignment_stats, evaluate_metrics, initial_params, leave_one_out, run_ablation, run_training, sample_batch,
    summarize, write_trace_csv, BatchSampler, TrainConfig, Variant,
};
use vlad_vsa::metrics::ThresholdMode;
use vlad_vsa::model::{ModelParams, OptimState, Pooling, PoolingKind, Sgd};
use vlad_vsa::numkernel::{derived_rng, Matrix};
use vlad_vsa::objective::cross_entropy_and_grad;
use vlad_vsa::{ClassLabel, Error};

fn domains(per_class: usize, seed: u64) -> Vec<Vec<Sample>> {
    let p = SyntheticParams {
        samples_per_domain_per_class: per_class,
        seed,
        ..Default::default()
    };
    generate_synthetic(&SyntheticSpec::from_params(&p).unwrap()).unwrap()
}

fn quick(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        k: 8,
        k_specific: 1,
        ..Default::default()
    }
}

#[test]
fn three_domains_of_ten_plus_ten_give_sixty() {
    let d = domains(30, 0);
    let (sources, _) = leave_one_out(&d, 4).unwrap();
    let cfg = TrainConfig::default();
    let picks = sample_batch(&sources, &cfg, &mut derived_rng(0, 0)).unwrap();
    assert_eq!(picks.len(), 60);
    assert_eq!(cfg.batch_size(sources.len()), 60);
    for s in 0..3 {
        let mine: Vec<usize> = picks.iter().filter(|p| p.0 == s).map(|p| p.1).collect();
        assert_eq!(mine.len(), 20);
        let unique: HashSet<usize> = mine.iter().copied().collect();
        assert_eq!(unique.len(), 20, "drawn with replacement");
        let reals = mine.iter().filter(|&&i| sources[s][i].class_label == ClassLabel::Real).count();
        assert_eq!(reals, 10);
    }
}

#[test]
fn exhaustive_draw_takes_every_sample_once() {
    let d = domains(5, 1);
    let sources: Vec<&[Sample]> = d.iter().map(Vec::as_slice).collect();
    let picks = BatchSampler::new(&sources, 5, 5).unwrap().draw(&mut derived_rng(1, 0));
    let set: HashSet<(usize, usize)> = picks.iter().copied().collect();
    assert_eq!(set.len(), 40);
    assert_eq!(picks.len(), 40);
}

#[test]
fn same_rng_state_same_batch() {
    let d = domains(20, 2);
    let sources: Vec<&[Sample]> = d.iter().map(Vec::as_slice).collect();
    let sampler = BatchSampler::new(&sources, 3, 4).unwrap();
    assert_eq!(sampler.draw(&mut derived_rng(5, 5)), sampler.draw(&mut derived_rng(5, 5)));
    assert!(matches!(BatchSampler::new(&sources, 21, 1), Err(Error::InsufficientSamples(_))));
}

#[test]
fn zero_iterations_returns_initial_params() {
    let d = domains(10, 3);
    let (sources, _) = leave_one_out(&d, 1).unwrap();
    let cfg = quick(0);
    let out = run_training(&sources, &cfg, None).unwrap();
    assert!(out.trace.is_empty());
    let init = initial_params(&sources, &cfg).unwrap();
    let same = out
        .params
        .tensors()
        .iter()
        .zip(init.tensors())
        .all(|(a, b)| a.data == b.data);
    assert!(same);
}

#[test]
fn training_needs_two_sources() {
    let d = domains(10, 3);
    let err = run_training(&[d[0].as_slice()], &quick(5), None).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
}

/// Classification-only training written directly against the layers.
fn cls_only_reference(sources: &[&[Sample]], cfg: &TrainConfig) -> (Vec<f64>, ModelParams<f64>) {
    let mut params = initial_params(sources, cfg).unwrap();
    let sampler = BatchSampler::new(sources, cfg.per_domain_real, cfg.per_domain_fake).unwrap();
    let mut rng = derived_rng(cfg.seed, 20);
    let schedule = Some((cfg.lr_drop_at, cfg.lr_dropped));
    let mut sgd = Sgd::new(OptimState::new(cfg.learning_rate, cfg.momentum, schedule).unwrap());
    let t = cfg.weights.temperature;
    let mut losses = Vec::new();
    for _ in 0..cfg.iterations {
        let picks = sampler.draw(&mut rng);
        let vocab = params.vocabulary().unwrap().clone();
        let n = sources[0][0].raw_features.rows();
        let raw: Vec<f64> = picks
            .iter()
            .flat_map(|&(s, i)| sources[s][i].raw_features.as_slice().to_vec())
            .collect();
        let raw = Matrix::new(picks.len() * n, params.encoder.input_dim(), raw).unwrap();
        let (enc, enc_cache) = params.encoder.forward(&raw).unwrap();

        let mut reps = Vec::new();
        let mut caches = Vec::new();
        for row in 0..picks.len() {
            let idx: Vec<usize> = (row * n..(row + 1) * n).collect();
            let local = LocalFeatureSet::new(enc.select_rows(&idx)).unwrap();
            let (desc, cache) = vlad_forward(&local, &vocab, t, AssignMode::Soft).unwrap();
            reps.extend(desc.flat);
            caches.push(cache);
        }
        let emb = Matrix::new(picks.len(), vocab.k() * vocab.dim(), reps).unwrap();
        let logits = params.classifier.forward(&emb).unwrap();
        let labels: Vec<usize> = picks.iter().map(|&(s, i)| sources[s][i].class_label.index()).collect();
        let (loss, dlogits) = cross_entropy_and_grad(&logits, &labels).unwrap();
        losses.push(loss);

        let mut grads = params.zeros_like();
        let (demb, gcls) = params.classifier.backward(&emb, &dlogits).unwrap();
        grads.classifier = gcls;
        let mut dwords = Matrix::zeros(vocab.k(), vocab.dim());
        let mut denc = Matrix::zeros(enc.rows(), enc.cols());
        for (row, cache) in caches.iter().enumerate() {
            let (dloc, dw) = vlad_backward(cache, demb.row(row)).unwrap();
            dwords.add_scaled(1.0, &dw).unwrap();
            for i in 0..n {
                denc.row_mut(row * n + i).copy_from_slice(dloc.row(i));
            }
        }
        grads.encoder = params.encoder.backward(&enc_cache, &denc).unwrap().1;
        if let Pooling::Vlad(v) = &mut grads.pooling {
            *v.words_mut() = dwords;
        }
        sgd.step(&mut params, &grads).unwrap();
    }
    (losses, params)
}

#[test]
fn zero_lambdas_match_a_classification_only_loop() {
    let d = domains(15, 4);
    let (sources, _) = leave_one_out(&d, 2).unwrap();
    let mut cfg = quick(8);
    cfg.weights = cfg.weights.with_uniform_lambda(0.0);
    let out = run_training(&sources, &cfg, None).unwrap();
    let (ref_losses, ref_params) = cls_only_reference(&sources, &cfg);
    for (row, want) in out.trace.iter().zip(&ref_losses) {
        assert!((row.parts.cls - want).abs() < 1e-10, "{} vs {want}", row.parts.cls);
        assert_eq!(row.total, row.parts.cls);
    }
    for (a, b) in out.params.tensors().iter().zip(ref_params.tensors()) {
        for (x, y) in a.data.iter().zip(b.data) {
            assert!((x - y).abs() < 1e-10, "{}: {x} vs {y}", a.name);
        }
    }
}

#[test]
fn default_training_reduces_classification_loss() {
    let d = domains(200, 5);
    let (sources, _) = leave_one_out(&d, 4).unwrap();
    let out = run_training(&sources, &TrainConfig::default(), None).unwrap();
    let mean = |r: std::ops::Range<usize>| {
        let n = r.len() as f64;
        out.trace[r].iter().map(|t| t.parts.cls).sum::<f64>() / n
    };
    let (first, last) = (mean(0..20), mean(480..500));
    assert!(last < first, "cls {first} -> {last}");
    assert!(out.trace.iter().all(|t| t.total.is_finite()));
}

#[test]
fn evaluation_target_is_tracked_and_single_class_rejected() {
    let d = domains(15, 6);
    let (sources, target) = leave_one_out(&d, 3).unwrap();
    let cfg = TrainConfig {
        eval_every: 5,
        ..quick(10)
    };
    let out = run_training(&sources, &cfg, Some(target)).unwrap();
    assert_eq!(out.evals.iter().map(|e| e.0).collect::<Vec<_>>(), vec![5, 10]);
    let m = evaluate_metrics(&out.params, target, 3.0, ThresholdMode::Eer).unwrap();
    assert_eq!(m, out.evals[1].1);
    assert!((m.hter - (m.far + m.frr) / 2.0).abs() < 1e-15);
    let reals: Vec<Sample> = target.iter().filter(|s| s.class_label == ClassLabel::Real).cloned().collect();
    assert!(evaluate_metrics(&out.params, &reals, 3.0, ThresholdMode::Eer).is_err());
}

#[test]
fn identical_configs_give_identical_metrics() {
    let d = domains(15, 7);
    let (sources, target) = leave_one_out(&d, 1).unwrap();
    let run = || {
        let out = run_training(&sources, &quick(15), None).unwrap();
        evaluate_metrics(&out.params, target, 3.0, ThresholdMode::Eer).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn variants_switch_the_right_components() {
    let base = TrainConfig::default();
    let gap = Variant::Gap.configure(&base);
    assert_eq!(gap.pooling, PoolingKind::Gap);
    let vlad = Variant::Vlad.configure(&base);
    assert_eq!((vlad.k_specific, vlad.weights.ortho, vlad.weights.c_adapt, vlad.weights.intra), (0, 0.0, 0.0, 0.0));
    let vs = Variant::VladVs.configure(&base);
    assert_eq!((vs.k_specific, vs.weights.c_adapt), (base.k_specific, 0.0));
    let va = Variant::VladVa.configure(&base);
    assert_eq!((va.k_specific, va.weights.intra), (0, base.weights.intra));
    assert_eq!(Variant::VladVsa.configure(&base), base);
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
    }

    let d = domains(10, 8);
    let (sources, _) = leave_one_out(&d, 1).unwrap();
    let params = initial_params(&sources, &gap).unwrap();
    assert!(params.vocabulary().is_none());
    assert_eq!(params.classifier.input_dim(), base.d);
}

#[test]
fn ablation_row_count_and_summary() {
    let data = SyntheticParams {
        samples_per_domain_per_class: 12,
        domains: 3,
        ..Default::default()
    };
    let base = quick(3);
    let rows = run_ablation(&data, &base, &Variant::ALL, &[1, 2]).unwrap();
    assert_eq!(rows.len(), 5 * 3 * 2);
    let summary = summarize(&rows);
    assert_eq!(summary.len(), 5 * (3 + 1));
    assert!(summary.iter().all(|s| s.runs == if s.holdout.is_some() { 2 } else { 6 }));
    assert!(run_ablation(&data, &base, &Variant::ALL, &[]).is_err());
}

#[test]
fn assignment_stats_conserve_locals() {
    let d = domains(10, 9);
    let (sources, _) = leave_one_out(&d, 2).unwrap();
    let out = run_training(&sources, &quick(5), None).unwrap();
    let all: Vec<Sample> = d.iter().flatten().cloned().collect();
    let one = assignment_stats(&out.params, &all, 1).unwrap();
    assert_eq!(one.total(), 16);
    assert_eq!(one.rows.last().map(|r| r.is_specific), Some(true));
    assert!(assignment_stats(&out.params, &all, all.len() + 1).is_err());
}

#[test]
fn trace_csv_has_header_and_one_row_per_iteration() {
    let d = domains(10, 10);
    let (sources, _) = leave_one_out(&d, 2).unwrap();
    let out = run_training(&sources, &quick(4), None).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, &out.trace, Some("k=8")).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# k=8");
    assert_eq!(lines[1], "iteration,lr,cls,triplet,adv,ortho,c_adapt,intra,total");
    assert_eq!(lines.len(), 6);
}
