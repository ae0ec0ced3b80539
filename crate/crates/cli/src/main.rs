mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use config::{normalize_key, Config, KEYS};
use vlad_vsa::data::{generate_synthetic, read_dataset, write_csv, write_dataset, Sample, SyntheticSpec};
use vlad_vsa::gradcheck::run_suite;
use vlad_vsa::harness::{
    assignment_stats, evaluate_metrics, leave_one_out, residual_dump, run_ablation, run_training, summarize,
    write_ablation_csv, write_assignment_csv, write_metrics_csv, write_residual_csv, write_summary_csv,
    write_trace_csv, AssignmentTable,
};
use vlad_vsa::model::{read_checkpoint, write_checkpoint};
use vlad_vsa::{Checkpoint, Error};

const SUBCOMMANDS: [&str; 6] = ["gen-data", "train", "eval", "ablate", "gradcheck", "stats"];

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Diverged { .. }
            | Error::NonFiniteLoss { .. }
            | Error::NonFiniteGradient { .. }
            | Error::NonFiniteEval { .. } => CliError::Numerical(e.to_string()),
            Error::Io(_) | Error::Format(_) => CliError::Io(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn with_path(path: &Path) -> impl FnOnce(Error) -> CliError + '_ {
    move |e| match CliError::from(e) {
        CliError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn usage() -> String {
    let mut s = String::from(
        "usage: vlad-vsa <command> [--config FILE] [--key value | --key=value]...\n\n\
         commands:\n  \
         gen-data   write synthetic domain_<s>.feat files to data_dir\n  \
         train      train on every domain except holdout; writes checkpoint and loss.csv\n  \
         eval       evaluate checkpoint on the holdout domain; writes metrics.csv\n  \
         ablate     leave-one-domain-out ablation over variants and seeds\n  \
         gradcheck  finite-difference check of every gradient\n  \
         stats      per-cluster assignment statistics and residual dump\n\n\
         precedence: flags > config file > defaults; --lambda sets lambda1..lambda5\n\nkeys (default):\n",
    );
    let defaults = Config::default();
    for (k, help) in KEYS {
        s.push_str(&format!("  {k:<30} {help} ({})\n", defaults.get(k).unwrap_or_default()));
    }
    s
}

struct Invocation {
    command: String,
    config: Config,
}

fn parse_args(args: &[String]) -> Result<Invocation, CliError> {
    let command = args
        .first()
        .ok_or_else(|| CliError::Usage("missing command".into()))?
        .clone();
    if !SUBCOMMANDS.contains(&command.as_str()) {
        return Err(CliError::Usage(format!("unknown command `{command}`")));
    }
    let mut config_file: Option<PathBuf> = None;
    let mut flags: Vec<(usize, String, String)> = Vec::new();
    let mut i = 1;
    while i < args.len() {
        let (pos, arg) = (i, &args[i]);
        let body = arg
            .strip_prefix("--")
            .ok_or_else(|| CliError::Usage(format!("argument {i} (`{arg}`): expected --key value")))?;
        let (key, value) = match body.split_once('=') {
            Some((k, v)) => (normalize_key(k), v.to_string()),
            None => {
                let v = args
                    .get(i + 1)
                    .ok_or_else(|| CliError::Usage(format!("argument {i} (`{arg}`): missing value")))?;
                i += 1;
                (normalize_key(body), v.clone())
            }
        };
        if key == "config" {
            config_file = Some(PathBuf::from(value));
        } else {
            flags.push((pos, key, value));
        }
        i += 1;
    }

    let mut config = Config::default();
    if let Some(path) = config_file {
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        config
            .apply_file(&text)
            .map_err(|(line, msg)| CliError::Usage(format!("{}:{line}: {msg}", path.display())))?;
    }
    for (pos, key, value) in flags {
        config
            .set(&key, &value)
            .map_err(|e| CliError::Usage(format!("argument {pos} (--{key}): {e}")))?;
    }
    Ok(Invocation { command, config })
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(io_err(path))
}

fn domain_path(dir: &Path, s: usize) -> PathBuf {
    dir.join(format!("domain_{s}.feat"))
}

/// Reads `domain_1.feat`, `domain_2.feat`, ... until the first gap.
fn read_domains(dir: &Path) -> Result<Vec<Vec<Sample>>, CliError> {
    let mut out = Vec::new();
    loop {
        let path = domain_path(dir, out.len() + 1);
        if !path.exists() {
            break;
        }
        out.push(read_dataset(&path).map_err(with_path(&path))?);
    }
    if out.is_empty() {
        return Err(CliError::Io(format!(
            "{}: no domain files found",
            domain_path(dir, 1).display()
        )));
    }
    Ok(out)
}

fn header(command: &str, cfg: &Config) -> String {
    format!("vlad-vsa {command} {}", cfg.render_inline())
}

fn gen_data(cfg: &Config) -> Result<(), CliError> {
    let spec = SyntheticSpec::from_params(&cfg.data)?;
    let domains = generate_synthetic(&spec)?;
    fs::create_dir_all(&cfg.data_dir).map_err(io_err(&cfg.data_dir))?;
    for (s, samples) in domains.iter().enumerate() {
        let path = domain_path(&cfg.data_dir, s + 1);
        write_dataset(&path, samples).map_err(with_path(&path))?;
        if cfg.export_csv {
            let csv = path.with_extension("csv");
            let mut w = create(&csv)?;
            write_csv(&mut w, samples, Some(&header("gen-data", cfg))).map_err(with_path(&csv))?;
            finish(w, &csv)?;
        }
        println!("{}: {} samples", path.display(), samples.len());
    }
    let cfg_path = cfg.data_dir.join("gen-data.cfg");
    let mut w = create(&cfg_path)?;
    write!(w, "# {}\n{}", header("gen-data", cfg), cfg.render()).map_err(io_err(&cfg_path))?;
    finish(w, &cfg_path)
}

fn train(cfg: &Config) -> Result<(), CliError> {
    let domains = read_domains(&cfg.data_dir)?;
    let (sources, target) = if cfg.holdout == 0 {
        (domains.iter().map(Vec::as_slice).collect(), None)
    } else {
        let (s, t) = leave_one_out(&domains, cfg.holdout)?;
        (s, Some(t))
    };
    let out = run_training(&sources, &cfg.train, target)?;
    if let (Some(first), Some(last)) = (out.trace.first(), out.trace.last()) {
        println!(
            "iterations={} cls {:.6} -> {:.6}, total {:.6} -> {:.6}",
            out.trace.len(),
            first.parts.cls,
            last.parts.cls,
            first.total,
            last.total
        );
    }
    let ckpt = Checkpoint {
        params: out.params,
        temperature: cfg.train.weights.temperature,
    };
    let mut w = create(&cfg.checkpoint)?;
    write_checkpoint(&mut w, &ckpt).map_err(with_path(&cfg.checkpoint))?;
    finish(w, &cfg.checkpoint)?;
    println!("checkpoint: {}", cfg.checkpoint.display());

    let trace_path = cfg.out_dir.join("loss.csv");
    let mut w = create(&trace_path)?;
    write_trace_csv(&mut w, &out.trace, Some(&header("train", cfg))).map_err(with_path(&trace_path))?;
    finish(w, &trace_path)?;

    if !out.evals.is_empty() {
        let path = cfg.out_dir.join("eval_trace.csv");
        let mut w = create(&path)?;
        let io = io_err(&path);
        (|| -> std::io::Result<()> {
            writeln!(w, "# {}", header("train", cfg))?;
            writeln!(w, "iteration,auc,hter,eer_threshold,far,frr")?;
            for (it, m) in &out.evals {
                writeln!(w, "{it},{},{},{},{},{}", m.auc, m.hter, m.eer_threshold, m.far, m.frr)?;
            }
            Ok(())
        })()
        .map_err(io)?;
        finish(w, &path)?;
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_checkpoint(&mut std::io::BufReader::new(file)).map_err(with_path(path))
}

fn eval(cfg: &Config) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&cfg.checkpoint)?;
    let path = domain_path(&cfg.data_dir, cfg.holdout);
    let target = read_dataset(&path).map_err(with_path(&path))?;
    let m = evaluate_metrics(&ckpt.params, &target, ckpt.temperature, cfg.threshold)?;
    println!(
        "auc={} hter={} eer_threshold={} far={} frr={}",
        m.auc, m.hter, m.eer_threshold, m.far, m.frr
    );
    let out = cfg.out_dir.join("metrics.csv");
    let mut w = create(&out)?;
    write_metrics_csv(&mut w, &m, Some(&header("eval", cfg))).map_err(with_path(&out))?;
    finish(w, &out)
}

fn ablate(cfg: &Config) -> Result<(), CliError> {
    let rows = run_ablation(&cfg.data, &cfg.train, &cfg.variants, &cfg.seeds)?;
    let summary = summarize(&rows);
    let table = cfg.out_dir.join("ablation.csv");
    let mut w = create(&table)?;
    write_ablation_csv(&mut w, &rows, Some(&header("ablate", cfg))).map_err(with_path(&table))?;
    finish(w, &table)?;
    let sum_path = cfg.out_dir.join("ablation_summary.csv");
    let mut w = create(&sum_path)?;
    write_summary_csv(&mut w, &summary, Some(&header("ablate", cfg))).map_err(with_path(&sum_path))?;
    finish(w, &sum_path)?;
    println!("{:<10} {:>7} {:>17} {:>17}", "variant", "holdout", "hter", "auc");
    for r in &summary {
        let h = r.holdout.map_or_else(|| "all".to_string(), |h| h.to_string());
        println!(
            "{:<10} {:>7} {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4}",
            r.variant.name(),
            h,
            r.hter_mean,
            r.hter_std,
            r.auc_mean,
            r.auc_std
        );
    }
    Ok(())
}

fn gradcheck(cfg: &Config) -> Result<(), CliError> {
    let lines = run_suite(cfg.train.seed, cfg.instances)?;
    let mut failed = Vec::new();
    for l in &lines {
        let verdict = if l.passes() { "PASS" } else { "FAIL" };
        println!("{verdict} {:<12} instances={} {}", l.name, l.instances, l.report);
        if !l.passes() {
            failed.push(l.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("gradient check failed for {}", failed.join(", "))))
    }
}

/// Interleaves domains so that a prefix covers every domain evenly.
fn interleave(domains: Vec<Vec<Sample>>) -> Vec<Sample> {
    let longest = domains.iter().map(Vec::len).max().unwrap_or(0);
    let mut iters: Vec<_> = domains.into_iter().map(Vec::into_iter).collect();
    let mut out = Vec::new();
    for _ in 0..longest {
        for it in &mut iters {
            out.extend(it.next());
        }
    }
    out
}

fn print_table(t: &AssignmentTable) {
    println!("per-class view");
    println!("{:>7} {:>8} {:>8} {:>8} {:>8}", "cluster", "specific", "total", "real", "fake");
    for r in &t.rows {
        println!("{:>7} {:>8} {:>8} {:>8} {:>8}", r.cluster, r.is_specific, r.total, r.real, r.fake);
    }
    println!("per-domain view");
    let mut head = format!("{:>7}", "cluster");
    for s in 1..=t.domains {
        head.push_str(&format!(" {:>8}", format!("domain_{s}")));
    }
    println!("{head}");
    for r in &t.rows {
        let mut line = format!("{:>7}", r.cluster);
        for c in &r.per_domain {
            line.push_str(&format!(" {c:>8}"));
        }
        println!("{line}");
    }
}

fn stats(cfg: &Config) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&cfg.checkpoint)?;
    let samples = interleave(read_domains(&cfg.data_dir)?);
    let count = if cfg.sample_count == 0 { samples.len() } else { cfg.sample_count };
    let table = assignment_stats(&ckpt.params, &samples, count)?;
    print_table(&table);
    println!("locals={} assigned={}", table.locals, table.total());
    let path = cfg.out_dir.join("assignment_stats.csv");
    let mut w = create(&path)?;
    write_assignment_csv(&mut w, &table, Some(&header("stats", cfg))).map_err(with_path(&path))?;
    finish(w, &path)?;
    let residuals = residual_dump(&ckpt.params, &samples, count)?;
    let path = cfg.out_dir.join("residuals.csv");
    let mut w = create(&path)?;
    write_residual_csv(&mut w, &residuals, Some(&header("stats", cfg))).map_err(with_path(&path))?;
    finish(w, &path)
}

fn run(args: &[String]) -> Result<(), CliError> {
    let inv = parse_args(args)?;
    let cfg = &inv.config;
    match inv.command.as_str() {
        "gen-data" => gen_data(cfg),
        "train" => train(cfg),
        "eval" => eval(cfg),
        "ablate" => ablate(cfg),
        "gradcheck" => gradcheck(cfg),
        "stats" => stats(cfg),
        _ => unreachable!("command validated by parse_args"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() || args.iter().any(|a| a == "--help" || a == "-h") {
        print!("{}", usage());
        return if args.is_empty() { ExitCode::from(1) } else { ExitCode::SUCCESS };
    }
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("run `vlad-vsa --help` for the list of commands and keys");
            }
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn flags_override_and_lambda_alias() {
        let inv = parse_args(&args(&["train", "--k", "8", "--k2=1", "--lambda", "0.5", "--data-dir", "x"])).unwrap();
        assert_eq!(inv.config.train.k, 8);
        assert_eq!(inv.config.train.k_specific, 1);
        assert_eq!(inv.config.train.weights.intra, 0.5);
        assert_eq!(inv.config.data_dir, PathBuf::from("x"));
    }

    #[test]
    fn rejects_unknown_command_and_key() {
        assert_eq!(parse_args(&args(&["fly"])).err().unwrap().exit_code(), 1);
        let e = parse_args(&args(&["train", "--bogus", "1"])).err().unwrap();
        assert!(e.to_string().contains("unknown key `bogus`"), "{e}");
        assert!(parse_args(&args(&["train", "stray"])).is_err());
        assert!(parse_args(&args(&["train", "--k"])).is_err());
    }

    #[test]
    fn interleave_round_robin() {
        let mk = |d: u8| Sample {
            raw_features: vlad_vsa::Matrix::zeros(1, 1),
            class_label: vlad_vsa::ClassLabel::Real,
            domain: d,
        };
        let out = interleave(vec![vec![mk(1), mk(1)], vec![mk(2)]]);
        let doms: Vec<u8> = out.iter().map(|s| s.domain).collect();
        assert_eq!(doms, vec![1, 2, 1]);
    }
}
