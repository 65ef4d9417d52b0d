mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use durflow::data::{self, DurationCorpus};
use durflow::duration::{index_keys, predict_sentences, to_frames};
use durflow::eval::{
    bench_sampling, declared_modes, dist_stats, group_outputs, group_reference, residual_vs_nfe, write_report,
    BenchReport, DistReport, ResidualCurve, DEFAULT_NFE_GRID,
};
use durflow::{CorpusSpec, DurationModel, ModelKind};

use crate::config::{RunConfig, UsageError};

#[derive(Parser)]
#[command(name = "durflow", version, about = "Synthetic duration corpora, DET and flow-matching duration models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train.dur and valid.dur in the output directory.
    Gen {
        #[command(flatten)]
        flags: Flags,
    },
    /// Train a model on <out>/train.dur and write <model>.ckpt.
    Train {
        #[command(flatten)]
        flags: Flags,
        /// Training corpus (default <out>/train.dur).
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Sample frame durations for every sentence of a corpus.
    Sample {
        #[command(flatten)]
        flags: Flags,
        /// Checkpoint (default <out>/<model>.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Input corpus (default <out>/valid.dur).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Output file (default <out>/<model>.samples).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Residual, distribution and timing reports over trained run directories.
    Eval {
        #[command(flatten)]
        flags: Flags,
        /// Run directory holding valid.dur, det.ckpt and fm.ckpt. Repeatable.
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
    },
}

/// Settings shared by every command. Flags override the config file, which
/// overrides the defaults.
#[derive(Args)]
struct Flags {
    /// `key = value` file with any of the settings below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// read or spont
    #[arg(long)]
    style: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// det or fm
    #[arg(long)]
    model: Option<String>,
    /// desk or full
    #[arg(long)]
    scale: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    nfe: Option<String>,
    #[arg(long)]
    temperature: Option<String>,
    /// 0 or 1
    #[arg(long)]
    min_duration: Option<String>,
    /// Samples per sentence (0: 5 for fm, 1 for det).
    #[arg(long)]
    realisations: Option<String>,
    #[arg(long)]
    bench_reps: Option<String>,
    /// Run or report directory.
    #[arg(long)]
    out: Option<String>,
}

struct Resolved {
    cfg: RunConfig,
    /// Whether the model kind was given on the command line or in the file.
    model_given: bool,
}

impl Flags {
    fn resolve(&self) -> Result<Resolved, UsageError> {
        let mut cfg = RunConfig::default();
        let mut model_given = self.model.is_some();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply_text(&text, path)?;
            model_given |= text
                .lines()
                .filter_map(|l| l.split('#').next()?.split_once('='))
                .any(|(k, _)| k.trim() == "model");
        }
        let pairs = [
            ("style", &self.style),
            ("seed", &self.seed),
            ("model", &self.model),
            ("scale", &self.scale),
            ("steps", &self.steps),
            ("batch", &self.batch),
            ("lr", &self.lr),
            ("nfe", &self.nfe),
            ("temperature", &self.temperature),
            ("min_duration", &self.min_duration),
            ("realisations", &self.realisations),
            ("bench_reps", &self.bench_reps),
            ("out", &self.out),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, v).map_err(|e| UsageError(format!("--{}: {e}", key.replace('_', "-"))))?;
            }
        }
        cfg.validate()?;
        Ok(Resolved { cfg, model_given })
    }
}

/// A file the command needs is absent.
#[derive(Debug)]
struct MissingInput(String);

impl std::fmt::Display for MissingInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for MissingInput {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.render().to_string();
            let mut lines = text.lines();
            let first = lines.next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            for l in lines {
                eprintln!("{l}");
            }
            return ExitCode::from(1);
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error[usage]: {e}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            eprintln!("error[{kind}]: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn init_threads() -> Result<(), UsageError> {
    let Ok(v) = std::env::var("DURFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| UsageError(format!("DURFLOW_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| UsageError(format!("cannot start thread pool: {e}")))
}

fn classify(e: &anyhow::Error) -> (&'static str, u8) {
    if e.downcast_ref::<UsageError>().is_some() {
        return ("usage", 1);
    }
    if e.downcast_ref::<MissingInput>().is_some() {
        return ("missing-checkpoint", 2);
    }
    let kind = match e.downcast_ref::<durflow::Error>() {
        Some(durflow::Error::ModelKindMismatch { .. }) => "model-kind",
        Some(durflow::Error::Untrained) => "untrained",
        Some(durflow::Error::NonFiniteLoss { .. } | durflow::Error::NonFiniteGradient { .. }) => "diverged",
        Some(durflow::Error::Parse { .. }) => "parse",
        Some(durflow::Error::Io(_)) => "io",
        _ => "runtime",
    };
    (kind, 2)
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Gen { flags } => gen(flags.resolve()?.cfg),
        Command::Train { flags, corpus } => train(flags.resolve()?.cfg, corpus),
        Command::Sample {
            flags,
            checkpoint,
            corpus,
            output,
        } => sample(flags.resolve()?, checkpoint, corpus, output),
        Command::Eval { flags, runs } => eval(flags.resolve()?.cfg, &runs),
    }
}

fn echo_config(cfg: &RunConfig, name: &str) -> anyhow::Result<()> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let path = cfg.out.join(format!("{name}.config"));
    fs::write(&path, cfg.to_text()).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn require(path: &Path, what: &str) -> anyhow::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(MissingInput(format!("{what} not found: {}", path.display())).into())
    }
}

fn gen(cfg: RunConfig) -> anyhow::Result<()> {
    echo_config(&cfg, "gen")?;
    let spec = CorpusSpec::default_for(cfg.style, cfg.seed);
    let pair = data::generate(&spec)?;
    for corpus in [&pair.train, &pair.validation] {
        let path = cfg.out.join(format!("{}.dur", corpus.split));
        data::io::save(corpus, &path)?;
        let s = corpus.summary();
        println!(
            "{} style={} sentences={} positions={} phones={} pauses={} fillers={} frames={} pooled_std={:.4} path={}",
            corpus.split,
            spec.style,
            s.sentences,
            s.positions,
            s.phones,
            s.pauses,
            s.fillers,
            s.total_frames,
            s.pooled_std,
            path.display()
        );
    }
    Ok(())
}

fn train(cfg: RunConfig, corpus: Option<PathBuf>) -> anyhow::Result<()> {
    let corpus_path = corpus.unwrap_or_else(|| cfg.out.join("train.dur"));
    require(&corpus_path, "training corpus")?;
    echo_config(&cfg, &format!("train-{}", cfg.model))?;
    let corpus = data::io::load(&corpus_path)?;
    let mut model = DurationModel::new(cfg.model_config(corpus.spec.num_phones))?;
    let tc = cfg.train_config();
    let every = (tc.steps / 20).max(1);
    let log = durflow::train(&mut model, &corpus, &tc, |step, loss| {
        if (step + 1) % every == 0 || step + 1 == tc.steps {
            eprintln!("step {}/{} loss {loss:.5}", step + 1, tc.steps);
        }
    })?;

    let ckpt = cfg.out.join(format!("{}.ckpt", cfg.model));
    model.save(&ckpt)?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in log.losses.iter().enumerate() {
        writeln!(csv, "{},{l}", i + 1)?;
    }
    fs::write(cfg.out.join(format!("{}_loss.csv", cfg.model)), csv)?;

    let window = (tc.steps / 10).clamp(1, 100);
    let (start, end) = (log.head_mean(window), log.tail_mean(window));
    println!(
        "trained model={} scale={} params={} steps={} loss_start={start:.5} loss_end={end:.5} id={} checkpoint={}",
        cfg.model,
        cfg.scale,
        model.param_count(),
        tc.steps,
        model.fingerprint(),
        ckpt.display()
    );
    if end >= start {
        eprintln!("warning: loss did not decrease ({start:.5} -> {end:.5})");
    }
    Ok(())
}

fn sample(
    resolved: Resolved,
    checkpoint: Option<PathBuf>,
    corpus: Option<PathBuf>,
    output: Option<PathBuf>,
) -> anyhow::Result<()> {
    let Resolved { mut cfg, model_given } = resolved;
    let ckpt = checkpoint.unwrap_or_else(|| cfg.out.join(format!("{}.ckpt", cfg.model)));
    require(&ckpt, "checkpoint")?;
    let corpus_path = corpus.unwrap_or_else(|| cfg.out.join("valid.dur"));
    require(&corpus_path, "corpus")?;
    let model = DurationModel::load(&ckpt)?;
    if model_given {
        model.require_kind(cfg.model)?;
    } else {
        cfg.model = model.kind();
    }
    echo_config(&cfg, &format!("sample-{}", cfg.model))?;
    let corpus = data::io::load(&corpus_path)?;
    let seqs = corpus.phone_sequences();
    let keys = index_keys(seqs.len());
    let reals = cfg.realisations_for(model.kind());

    let mut out = format!(
        "#durations nfe={} temperature={} seed={} min_duration={} model={} kind={} realisations={}\n",
        cfg.nfe,
        cfg.temperature,
        cfg.seed,
        cfg.min_duration,
        model.fingerprint(),
        model.kind(),
        reals
    );
    let mut per_real = Vec::with_capacity(reals);
    for r in 0..reals {
        let mut opts = cfg.sample_options();
        opts.seed = cfg.seed.wrapping_add(r as u64);
        per_real.push(predict_sentences(&model, &seqs, &keys, &opts)?);
    }
    let mut frames_total = 0u64;
    for i in 0..seqs.len() {
        for outputs in &per_real {
            let frames = to_frames(&outputs[i], cfg.min_duration)?;
            frames_total += frames.iter().map(|&f| u64::from(f)).sum::<u64>();
            let line: Vec<String> = frames.iter().map(u32::to_string).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    let path = output.unwrap_or_else(|| cfg.out.join(format!("{}.samples", cfg.model)));
    fs::write(&path, out).with_context(|| format!("writing {}", path.display()))?;
    println!(
        "sampled model={} sentences={} realisations={reals} frames={frames_total} path={}",
        model.kind(),
        seqs.len(),
        path.display()
    );
    Ok(())
}

struct RunInputs {
    label: String,
    validation: DurationCorpus,
    det: DurationModel,
    fm: DurationModel,
}

fn load_runs(runs: &[PathBuf]) -> anyhow::Result<Vec<RunInputs>> {
    let missing: Vec<String> = runs
        .iter()
        .flat_map(|dir| {
            ["valid.dur", "det.ckpt", "fm.ckpt"]
                .into_iter()
                .map(move |f| dir.join(f))
        })
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(MissingInput(format!("missing run inputs: {}", missing.join(", "))).into());
    }
    runs.iter()
        .map(|dir| {
            let label = dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| dir.display().to_string());
            let det = DurationModel::load(dir.join("det.ckpt"))?;
            det.require_kind(ModelKind::Det)?;
            let fm = DurationModel::load(dir.join("fm.ckpt"))?;
            fm.require_kind(ModelKind::Fm)?;
            Ok(RunInputs {
                label,
                validation: data::io::load(dir.join("valid.dur"))?,
                det,
                fm,
            })
        })
        .collect()
}

fn eval(cfg: RunConfig, runs: &[PathBuf]) -> anyhow::Result<()> {
    let mut labels: Vec<&std::ffi::OsStr> = runs.iter().filter_map(|r| r.file_name()).collect();
    labels.sort();
    labels.dedup();
    if labels.len() != runs.len() {
        bail!(UsageError("run directories must have distinct names".into()));
    }
    let inputs = load_runs(runs)?;
    echo_config(&cfg, "eval")?;
    let opts = cfg.sample_options();

    let mut curve = ResidualCurve::new(DEFAULT_NFE_GRID.to_vec());
    let mut dist = Vec::new();
    for run in &inputs {
        let v = &run.validation;
        for model in [&run.det, &run.fm] {
            let r = residual_vs_nfe(model, v, &DEFAULT_NFE_GRID, &opts)?;
            curve.push(&model.kind().to_string(), &run.label, r)?;
        }

        let modes = declared_modes(&v.spec);
        let seqs = v.phone_sequences();
        let keys = index_keys(seqs.len());
        for model in [&run.det, &run.fm] {
            let mut pooled: BTreeMap<String, Vec<u32>> = BTreeMap::new();
            for r in 0..cfg.realisations_for(model.kind()) {
                let mut o = opts;
                o.seed = cfg.seed.wrapping_add(r as u64);
                let outputs = predict_sentences(model, &seqs, &keys, &o)?;
                for (k, d) in group_outputs(v, &outputs, cfg.min_duration)? {
                    pooled.entry(k).or_default().extend(d);
                }
            }
            dist.push(DistReport {
                model: model.kind().to_string(),
                corpus: run.label.clone(),
                stats: dist_stats(&pooled, &modes)?,
            });
        }
        dist.push(DistReport {
            model: "ref".into(),
            corpus: run.label.clone(),
            stats: dist_stats(&group_reference(v), &modes)?,
        });
    }

    let first = &inputs[0];
    let mut bench = Vec::new();
    for model in [&first.det, &first.fm] {
        bench.push(BenchReport {
            model: model.kind().to_string(),
            result: bench_sampling(model, &first.validation, &DEFAULT_NFE_GRID, cfg.bench_reps, &opts)?,
        });
    }
    write_report(&curve, &dist, &bench, &cfg.out)?;

    for row in &curve.rows {
        let cells: Vec<String> = curve
            .nfe
            .iter()
            .zip(&row.residuals)
            .map(|(n, r)| format!("{n}:{r:.4}"))
            .collect();
        println!("residual model={} corpus={} {}", row.model, row.corpus, cells.join(" "));
    }
    for b in &bench {
        println!(
            "bench model={} slope_ms_per_nfe={:.3} median_ms_at_nfe10={:.3}",
            b.model,
            b.result.slope_ms_per_nfe,
            b.result.median_at(10).unwrap_or(f64::NAN)
        );
    }
    println!("report dir={}", cfg.out.display());
    Ok(())
}
