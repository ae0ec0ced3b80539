//! Acceptance suite. Runs without the libtest harness so that the single
//! PASS/FAIL line per criterion is always printed; exits non-zero if any
//! criterion fails.
//!
//! The synthetic benchmark writes its per-seed table to
//! `$CARGO_TARGET_TMPDIR/acceptance/ablation.csv`.

use std::fs;
use std::time::{Duration, Instant};

use rand::Rng;
use vlad_vsa::aggregation::{gap_pool, matching_kernel_oracle, vlad_forward, AssignMode, LocalFeatureSet};
use vlad_vsa::data::{generate_synthetic, write_samples, Sample, SyntheticParams, SyntheticSpec};
use vlad_vsa::gradcheck::{run_suite, GRADCHECK_TOLERANCE};
use vlad_vsa::harness::{
    assignment_stats, evaluate_metrics, leave_one_out, mean_auc, run_ablation, run_training, summarize,
    write_ablation_csv, write_assignment_csv, write_metrics_csv, write_summary_csv, TrainConfig, Variant,
};
use vlad_vsa::metrics::{roc_auc, ThresholdMode};
use vlad_vsa::model::{heads_apply, write_checkpoint, Checkpoint, ModelParams, ModelShape, PoolingKind, Representation};
use vlad_vsa::numkernel::{derived_rng, Matrix};
use vlad_vsa::vocabulary::{kmeans, Vocabulary};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_set(n: usize, d: usize, rng: &mut vlad_vsa::numkernel::SeedRng) -> LocalFeatureSet<f64> {
    LocalFeatureSet::new(Matrix::random_normal(n, d, 1.0, rng)).unwrap()
}

fn criterion_1_gradients() -> Outcome {
    let start = Instant::now();
    let lines = run_suite(0, 20).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let mut worst: f64 = 0.0;
    for l in &lines {
        ensure(l.instances >= 20, || format!("{} ran only {} instances", l.name, l.instances))?;
        ensure(l.passes(), || format!("{}: {}", l.name, l.report))?;
        worst = worst.max(l.report.max_rel_err);
    }
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    let names: Vec<&str> = lines.iter().map(|l| l.name).collect();
    Ok(format!(
        "{} families ({}), worst rel err {worst:.2e} < {GRADCHECK_TOLERANCE:e}, {elapsed:.2?}",
        lines.len(),
        names.join(", ")
    ))
}

fn criterion_2_matching_kernels() -> Outcome {
    let mut worst: f64 = 0.0;
    for inst in 0..50u64 {
        let mut rng = derived_rng(2, inst);
        let (n1, n2, d, k) = (rng.random_range(1..8), rng.random_range(1..8), rng.random_range(1..5), rng.random_range(1..6));
        let x1 = random_set(n1, d, &mut rng);
        let x2 = random_set(n2, d, &mut rng);
        let vocab = Vocabulary::new(Matrix::random_normal(k, d, 1.0, &mut rng), k).unwrap();
        let (gap_oracle, vlad_oracle) = matching_kernel_oracle(&x1, &x2, &vocab).unwrap();

        // sum pooling = N · mean pooling
        let g1: Vec<f64> = gap_pool(&x1).flat.iter().map(|v| v * n1 as f64).collect();
        let g2: Vec<f64> = gap_pool(&x2).flat.iter().map(|v| v * n2 as f64).collect();
        let gap: f64 = g1.iter().zip(&g2).map(|(a, b)| a * b).sum();
        let (v1, _) = vlad_forward(&x1, &vocab, 1.0, AssignMode::Hard).unwrap();
        let (v2, _) = vlad_forward(&x2, &vocab, 1.0, AssignMode::Hard).unwrap();
        let vlad: f64 = v1.per_cluster.as_slice().iter().zip(v2.per_cluster.as_slice()).map(|(a, b)| a * b).sum();

        // independent double loop for the all-to-all kernel
        let mut gap_loop = 0.0;
        for a in x1.features().row_iter() {
            for b in x2.features().row_iter() {
                gap_loop += a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
            }
        }
        for (lhs, rhs) in [(gap, gap_oracle), (gap, gap_loop), (vlad, vlad_oracle)] {
            worst = worst.max((lhs - rhs).abs());
        }
    }
    ensure(worst <= 1e-10, || format!("max deviation {worst:e}"))?;
    Ok(format!("50 pairs, max deviation {worst:.1e} <= 1e-10"))
}

fn criterion_3_hard_limit() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut inst = 0u64;
    let mut accepted = 0;
    while accepted < 50 {
        let mut rng = derived_rng(3, inst);
        inst += 1;
        let (n, d, k) = (rng.random_range(2..8), rng.random_range(2..5), rng.random_range(2..6));
        let x = random_set(n, d, &mut rng);
        let words = Matrix::random_normal(k, d, 1.0, &mut rng);
        // unique nearest word: top two dot products separated by at least 2e-3
        let unique = x.features().row_iter().all(|f| {
            let mut s: Vec<f64> = words.row_iter().map(|c| c.iter().zip(f).map(|(a, b)| a * b).sum()).collect();
            s.sort_by(|a, b| b.total_cmp(a));
            s[0] - s[1] >= 2e-3
        });
        if !unique {
            continue;
        }
        accepted += 1;
        let vocab = Vocabulary::new(words, k).unwrap();
        let (soft, _) = vlad_forward(&x, &vocab, 1e4, AssignMode::Soft).unwrap();
        let (hard, _) = vlad_forward(&x, &vocab, 1e4, AssignMode::Hard).unwrap();
        for (a, b) in soft
            .flat
            .iter()
            .zip(&hard.flat)
            .chain(soft.per_cluster.as_slice().iter().zip(hard.per_cluster.as_slice()))
        {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("max deviation {worst:e}"))?;
    Ok(format!("50 instances ({} drawn), max deviation {worst:.1e} <= 1e-6", inst))
}

fn criterion_4_kmeans() -> Outcome {
    let mut iterations = 0;
    for run in 0..30u64 {
        let mut rng = derived_rng(4, run);
        let n = rng.random_range(10..60);
        let k = rng.random_range(1..6);
        let pool = Matrix::<f64>::random_normal(n, 3, 1.0, &mut rng);
        let fit = kmeans(&pool, k, 50, run).map_err(|e| e.to_string())?;
        for w in fit.inertia_history.windows(2) {
            ensure(w[1] <= w[0], || format!("run {run}: inertia rose {} -> {}", w[0], w[1]))?;
        }
        iterations += fit.inertia_history.len();
    }

    let points = Matrix::from_rows(&[[0.0, 0.0], [5.0, 1.0], [-2.0, 3.0], [1.0, -4.0]]).unwrap();
    let cover = kmeans(&points, 4, 10, 0).map_err(|e| e.to_string())?;
    ensure(cover.inertia() == 0.0, || format!("exact cover inertia {}", cover.inertia()))?;
    let mut got: Vec<Vec<f64>> = cover.centroids.row_iter().map(<[f64]>::to_vec).collect();
    let mut want: Vec<Vec<f64>> = points.row_iter().map(<[f64]>::to_vec).collect();
    got.sort_by(|a, b| a.partial_cmp(b).unwrap());
    want.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ensure(got == want, || format!("exact cover centroids {got:?}"))?;

    let single = kmeans(&points, 1, 10, 0).map_err(|e| e.to_string())?;
    // mean of the four points: (4/4, 0/4)
    ensure(single.centroids.row(0) == [1.0, 0.0], || {
        format!("K=1 centroid {:?}", single.centroids.row(0))
    })?;
    Ok(format!("30 runs / {iterations} recorded inertias non-increasing; exact cover and K=1 exact"))
}

fn criterion_5_metric_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for inst in 0..50u64 {
        let mut rng = derived_rng(5, inst);
        // coarse grid so ties are frequent
        let draw = |rng: &mut vlad_vsa::numkernel::SeedRng, n: usize| -> Vec<f64> {
            (0..n).map(|_| f64::from(rng.random_range(0..12u8)) / 11.0).collect()
        };
        let pos = draw(&mut rng, 1 + inst as usize % 9);
        let neg = draw(&mut rng, 1 + (inst as usize * 7) % 11);
        let auc = roc_auc(&pos, &neg).map_err(|e| e.to_string())?;
        let mut wins = 0.0;
        for p in &pos {
            for q in &neg {
                wins += if p > q {
                    1.0
                } else if p == q {
                    0.5
                } else {
                    0.0
                };
            }
        }
        worst = worst.max((auc - wins / (pos.len() * neg.len()) as f64).abs());
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    // real {0.1, 0.6}, fake {0.9, 0.4}, scores measure fake-ness
    let hand = roc_auc(&[0.9, 0.4], &[0.1, 0.6]).map_err(|e| e.to_string())?;
    ensure(hand == 0.75, || format!("hand example gave {hand}"))?;
    Ok(format!("50 score sets, max deviation {worst:.1e} <= 1e-9; hand example = 3/4"))
}

fn criterion_6_benchmark() -> Outcome {
    let start = Instant::now();
    let seeds = [0, 1, 2, 3, 4];
    let rows = run_ablation(&SyntheticParams::default(), &TrainConfig::default(), &Variant::ALL, &seeds)
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let mut table = Vec::new();
    write_ablation_csv(&mut table, &rows, Some("synthetic benchmark, default desk config")).map_err(|e| e.to_string())?;
    fs::write(dir.join("ablation.csv"), &table).map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    write_summary_csv(&mut summary, &summarize(&rows), None).map_err(|e| e.to_string())?;
    fs::write(dir.join("ablation_summary.csv"), &summary).map_err(|e| e.to_string())?;

    ensure(rows.len() == 5 * 4 * seeds.len(), || format!("{} rows", rows.len()))?;
    let auc = |v| mean_auc(&rows, v).unwrap();
    let (gap, vlad, vsa) = (auc(Variant::Gap), auc(Variant::Vlad), auc(Variant::VladVsa));
    let report = format!(
        "mean held-out AUC gap {gap:.4}, vlad {vlad:.4}, vlad_vs {:.4}, vlad_va {:.4}, vlad_vsa {vsa:.4}; {elapsed:.1?}",
        auc(Variant::VladVs),
        auc(Variant::VladVa)
    );
    ensure(elapsed < Duration::from_secs(600), || format!("too slow: {report}"))?;
    let verdict = |ok: bool| if ok { "holds" } else { "violated" };
    let report = format!(
        "(a) vlad > gap {}, (b) vlad_vsa >= vlad {}; {report}",
        verdict(vlad > gap),
        verdict(vsa >= vlad)
    );
    ensure(vlad > gap && vsa >= vlad, || report.clone())?;
    Ok(report)
}

fn small_domains(per_class: usize, seed: u64) -> Vec<Vec<Sample>> {
    let params = SyntheticParams {
        samples_per_domain_per_class: per_class,
        seed,
        ..Default::default()
    };
    generate_synthetic(&SyntheticSpec::from_params(&params).unwrap()).unwrap()
}

fn checkpoint_bytes(params: ModelParams<f64>, temperature: f64) -> Vec<u8> {
    let mut out = Vec::new();
    write_checkpoint(&mut out, &Checkpoint { params, temperature }).unwrap();
    out
}

fn criterion_7_k2_zero() -> Outcome {
    let domains = small_domains(40, 7);
    let (sources, _) = leave_one_out(&domains, 2).unwrap();
    let mut base = TrainConfig {
        iterations: 10,
        seed: 7,
        ..Default::default()
    };
    base.k_specific = 0;
    let vlad = Variant::Vlad.configure(&base);
    let mut vs = Variant::VladVs.configure(&base);
    vs.k_specific = 0;
    ensure(vs.weights.ortho > 0.0, || "VS path must keep its orthogonality weight".into())?;
    let a = run_training(&sources, &vlad, None).map_err(|e| e.to_string())?;
    let b = run_training(&sources, &vs, None).map_err(|e| e.to_string())?;
    let same_trace = a.trace.iter().zip(&b.trace).all(|(x, y)| {
        x.total.to_bits() == y.total.to_bits() && x.parts.cls.to_bits() == y.parts.cls.to_bits()
    });
    ensure(a.trace.len() == 10 && same_trace, || "loss traces differ".into())?;
    let (ca, cb) = (checkpoint_bytes(a.params, 3.0), checkpoint_bytes(b.params, 3.0));
    ensure(ca == cb, || "checkpoints differ".into())?;
    Ok(format!("10 iterations, identical loss traces and {}-byte checkpoints", ca.len()))
}

fn criterion_8_slice_isolation() -> Outcome {
    let mut checked = 0;
    for inst in 0..10u64 {
        let mut rng = derived_rng(8, inst);
        let shape = ModelShape {
            d_raw: 5,
            hidden: 6,
            d: 4,
            pooling: PoolingKind::Vlad,
            k: 6,
            k_specific: 2,
            disc_hidden: 5,
            domains: 3,
        };
        let params = ModelParams::<f64>::init(&shape, inst).unwrap();
        let rep = Representation {
            flat: (0..24).map(|_| rng.random_range(-1.0..1.0)).collect(),
            shared_len: 16,
        };
        let base = heads_apply(&rep, &params).unwrap().domain_logits;
        for j in 16..24 {
            for delta in [1e-3, 1.0, -7.5] {
                let mut p = rep.clone();
                p.flat[j] += delta;
                let logits = heads_apply(&p, &params).unwrap().domain_logits;
                ensure(logits == base, || format!("entry {j} moved the domain logits"))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} specific-entry perturbations, domain logits bit-identical"))
}

fn trained_artifacts(domains: &[Vec<Sample>]) -> (Vec<u8>, Vec<u8>) {
    let (sources, target) = leave_one_out(domains, 3).unwrap();
    let cfg = TrainConfig {
        iterations: 60,
        seed: 9,
        ..Default::default()
    };
    let out = run_training(&sources, &cfg, None).unwrap();
    let metrics = evaluate_metrics(&out.params, target, cfg.weights.temperature, ThresholdMode::Eer).unwrap();
    let mut csv = Vec::new();
    write_metrics_csv(&mut csv, &metrics, Some("determinism check")).unwrap();
    (checkpoint_bytes(out.params, cfg.weights.temperature), csv)
}

fn criterion_9_determinism() -> Outcome {
    let (d1, d2) = (small_domains(40, 9), small_domains(40, 9));
    let (mut f1, mut f2) = (Vec::new(), Vec::new());
    for (a, b) in d1.iter().zip(&d2) {
        write_samples(&mut f1, a).unwrap();
        write_samples(&mut f2, b).unwrap();
    }
    ensure(f1 == f2, || "generated datasets differ".into())?;
    let (c1, m1) = trained_artifacts(&d1);
    let (c2, m2) = trained_artifacts(&d2);
    ensure(c1 == c2, || "checkpoints differ".into())?;
    ensure(m1 == m2, || "metrics CSVs differ".into())?;
    Ok(format!("data, {}-byte checkpoint and metrics CSV byte-identical", c1.len()))
}

fn criterion_10_assignment_stats() -> Outcome {
    let domains = small_domains(60, 10);
    let (sources, _) = leave_one_out(&domains, 4).unwrap();
    let cfg = TrainConfig {
        k: 8,
        k_specific: 1,
        iterations: 100,
        seed: 10,
        ..Default::default()
    };
    let out = run_training(&sources, &cfg, None).map_err(|e| e.to_string())?;
    let all: Vec<Sample> = domains.iter().flatten().cloned().collect();
    let n = all[0].raw_features.rows();
    for count in [1, 37, all.len()] {
        let t = assignment_stats(&out.params, &all, count).map_err(|e| e.to_string())?;
        ensure(t.total() == count * n, || format!("{count} samples: {} locals assigned", t.total()))?;
        for r in &t.rows {
            ensure(r.real + r.fake == r.total, || format!("cluster {} class split", r.cluster))?;
            ensure(r.per_domain.iter().sum::<usize>() == r.total, || format!("cluster {} domain split", r.cluster))?;
        }
    }
    let t = assignment_stats(&out.params, &all, all.len()).unwrap();
    let specific: Vec<usize> = t.rows.iter().filter(|r| r.is_specific).map(|r| r.cluster).collect();
    ensure(t.rows.len() == 8 && specific == [7], || format!("specific words {specific:?}"))?;
    ensure(t.domains == 4, || format!("{} domain columns", t.domains))?;
    let mut csv = Vec::new();
    write_assignment_csv(&mut csv, &t, None).unwrap();
    let text = String::from_utf8(csv).unwrap();
    ensure(
        text.starts_with("cluster,is_specific,total,real,fake,domain_1,domain_2,domain_3,domain_4\n"),
        || "unexpected CSV header".into(),
    )?;
    ensure(text.lines().count() == 9, || "CSV row count".into())?;
    Ok(format!("conservation exact for 1, 37 and {} samples; K=8/K2=1 table with specific word 7", all.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient suite", criterion_1_gradients),
        ("matching-kernel identities", criterion_2_matching_kernels),
        ("hard-assignment limit", criterion_3_hard_limit),
        ("k-means", criterion_4_kmeans),
        ("metric oracle", criterion_5_metric_oracle),
        ("synthetic cross-domain benchmark", criterion_6_benchmark),
        ("K2 = 0 equivalence", criterion_7_k2_zero),
        ("slice isolation", criterion_8_slice_isolation),
        ("determinism", criterion_9_determinism),
        ("assignment statistics", criterion_10_assignment_stats),
    ];
    let mut failures = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                println!("criterion {:>2} FAIL {name}: {detail}", i + 1);
                failures.push(i + 1);
            }
        }
    }
    if !failures.is_empty() {
        eprintln!("failed criteria: {failures:?}");
        std::process::exit(1);
    }
}
