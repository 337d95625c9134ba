use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use has_qoe::eval::synth::{synth_dataset, SynthConfig};
use has_qoe::eval::{self, EvalOptions, Sample};
use has_qoe::features::FeatureGroup;
use has_qoe::pipeline::{write_scores, write_timing, Pipeline, PipelineConfig};
use has_qoe::sampler::calibrate_weights;
use has_qoe::session::{load_manifest, DiskFrames};
use has_qoe::svr::{self, SvrModel};
use has_qoe::Error;
use log::info;
use serde_json::json;
use sha2::{Digest, Sha256};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Blind QoE assessment for HTTP adaptive streaming sessions.
#[derive(Debug, Parser)]
#[command(name = "has-qoe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score every playback window of a session.
    Assess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fail as soon as a segment takes longer to score than to play.
        #[arg(long)]
        realtime: bool,
        /// Scores CSV; cumulative time ratios go next to it as
        /// `<stem>.timing.csv`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, hide = true, default_value_t = 0)]
        debug_delay_ms: u64,
    },
    /// Train a regression model on a dataset index.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated content-disjoint 80/20 evaluation.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Zero a feature group before training (repeatable).
        #[arg(long = "drop-group", value_parser = parse_group)]
        drop_groups: Vec<FeatureGroup>,
        /// Report JSON; per-repetition rows go to `<stem>.csv` and the time
        /// ratio to `<stem>.timing.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Derive sampling weights from start/end-half quality scores.
    CalibrateWeights {
        /// CSV with columns session_id,q_start,q_end,mos.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a procedural dataset with known scores.
    Simulate {
        #[arg(long, default_value_t = 8)]
        contents: usize,
        #[arg(long, default_value_t = 6)]
        sessions_per_content: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        segments: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_group(s: &str) -> Result<FeatureGroup, String> {
    serde_json::from_value(json!(s)).map_err(|_| {
        "expected one of resolution, spatio_temporal, texture, buffering, switching".to_string()
    })
}

enum Failure {
    Usage(String),
    Engine(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Engine(e)
    }
}

type CmdResult = Result<(), Failure>;

fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn announce(seed: impl std::fmt::Display, canonical: &str) {
    eprintln!("seed={seed} config_sha256={}", digest(canonical));
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Error> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, Error> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn extract(dataset: &Path, pipeline: &Pipeline) -> Result<Vec<Sample>, Error> {
    let index = eval::load_index(dataset)?;
    info!("extracting features for {} sessions", index.sessions.len());
    eval::extract_samples(&index, pipeline, &DiskFrames)
}

fn fit(samples: &[Sample], cfg: &PipelineConfig) -> Result<SvrModel, Error> {
    let params = if cfg.grid_search {
        eval::select_params(samples, &cfg.svr)?
    } else {
        cfg.svr
    };
    let (x, y): (Vec<_>, Vec<_>) = samples.iter().map(|s| (s.features, s.mos)).unzip();
    svr::train(&x, &y, &params)
}

fn assess(
    manifest: &Path,
    model: &Path,
    config: Option<&Path>,
    realtime: bool,
    out: &Path,
    delay_ms: u64,
) -> CmdResult {
    let cfg = load_config(config)?;
    announce(format!("{}/{}", cfg.backbone_seed, cfg.gru_seed), &cfg.canonical_json());
    let mut pipeline = Pipeline::new(&cfg)?;
    pipeline.realtime |= realtime;
    pipeline.debug_delay = Duration::from_millis(delay_ms);
    let model = SvrModel::load(model)?;
    let manifest = load_manifest(manifest)?;
    let rows = pipeline.assess(&manifest, &model, &DiskFrames)?;
    write_scores(create(out)?, &rows)?;
    write_timing(create(&sibling(out, ".timing.csv"))?, &rows)?;
    if let Some(last) = rows.last() {
        eprintln!("segments={} time_ratio={:.4}", rows.len(), last.time_ratio);
    }
    Ok(())
}

fn train(dataset: &Path, config: Option<&Path>, out: &Path) -> CmdResult {
    let cfg = load_config(config)?;
    announce(format!("{}/{}", cfg.backbone_seed, cfg.gru_seed), &cfg.canonical_json());
    let pipeline = Pipeline::new(&cfg)?;
    let samples = extract(dataset, &pipeline)?;
    let model = fit(&samples, &cfg)?;
    model.save(out)?;
    eprintln!(
        "trained on {} sessions: {} support vectors, C={}, gamma={}",
        samples.len(),
        model.support_vectors.len(),
        model.c,
        model.gamma
    );
    Ok(())
}

fn evaluate(
    dataset: &Path,
    config: Option<&Path>,
    reps: usize,
    seed: u64,
    drop_groups: Vec<FeatureGroup>,
    out: &Path,
) -> CmdResult {
    let cfg = load_config(config)?;
    announce(seed, &cfg.canonical_json());
    let pipeline = Pipeline::new(&cfg)?;
    let samples = extract(dataset, &pipeline)?;
    let opts = EvalOptions {
        repetitions: reps,
        seed,
        svr: cfg.svr,
        grid_search: cfg.grid_search,
        drop_groups,
    };
    let report = eval::split_eval(&samples, &opts)?;
    write_file(out, report.to_json())?;
    report.write_csv(create(&sibling(out, ".csv"))?)?;

    // timing: score every window of the first session with a model fitted
    // on the whole dataset
    let index = eval::load_index(dataset)?;
    let first = load_manifest(&index.sessions[0].manifest)?;
    let model = fit(&samples, &cfg)?;
    let ratio = pipeline.time_ratio(&first, &model, &DiskFrames)?;
    let timing = json!({
        "session": index.sessions[0].manifest,
        "time_ratio": ratio,
    });
    write_file(
        &sibling(out, ".timing.json"),
        serde_json::to_string_pretty(&timing).expect("json"),
    )?;
    println!(
        "srocc mean={:.4} median={:.4}  krocc mean={:.4}  plcc mean={:.4}  time_ratio={ratio:.4}",
        report.srocc.mean, report.srocc.median, report.krocc.mean, report.plcc.mean
    );
    Ok(())
}

fn calibrate(input: &Path, out: &Path) -> CmdResult {
    let text = fs::read_to_string(input).map_err(|e| Error::Io {
        path: input.to_path_buf(),
        source: e,
    })?;
    announce("none", &text);
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let parse_err = |line: u64, msg: String| Error::Parse {
        context: format!("{}:{line}", input.display()),
        msg,
    };
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| parse_err(1, format!("missing column {name}")))
    };
    let (qs, qe, mos) = (col("q_start")?, col("q_end")?, col("mos")?);
    col("session_id")?;
    let mut halves = Vec::new();
    let mut scores = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let num = |k: usize| -> Result<f64, Error> {
            rec.get(k)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|e| parse_err(line, format!("column {}: {e}", headers.get(k).unwrap_or(""))))
        };
        halves.push((num(qs)?, num(qe)?));
        scores.push(num(mos)?);
    }
    let weights = calibrate_weights(&halves, &scores)?;
    write_file(out, serde_json::to_string_pretty(&weights).expect("json"))?;
    println!("w_s={} w_e={}", weights.w_s, weights.w_e);
    Ok(())
}

fn simulate(contents: usize, per: usize, seed: u64, segments: usize, out: &Path) -> CmdResult {
    let cfg = SynthConfig {
        segments,
        ..SynthConfig::new(contents, per, seed)
    };
    let params = json!({
        "contents": contents,
        "sessions_per_content": per,
        "seed": seed,
        "segments": segments,
    });
    announce(seed, &params.to_string());
    let data = synth_dataset(&cfg)?;
    let index = data.write(out)?;
    println!("wrote {} sessions, index {}", data.sessions.len(), index.display());
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Assess {
            manifest,
            model,
            config,
            realtime,
            out,
            debug_delay_ms,
        } => assess(&manifest, &model, config.as_deref(), realtime, &out, debug_delay_ms),
        Command::Train {
            dataset,
            config,
            out,
        } => train(&dataset, config.as_deref(), &out),
        Command::Eval {
            dataset,
            config,
            reps,
            seed,
            drop_groups,
            out,
        } => {
            if reps < 1 {
                return Err(Failure::Usage("--reps must be at least 1".into()));
            }
            evaluate(&dataset, config.as_deref(), reps, seed, drop_groups, &out)
        }
        Command::CalibrateWeights { input, out } => calibrate(&input, &out),
        Command::Simulate {
            contents,
            sessions_per_content,
            seed,
            segments,
            out,
        } => simulate(contents, sessions_per_content, seed, segments, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Engine(e)) => {
            eprintln!("error: {e}");
            match e.root() {
                Error::DeadlineExceeded { .. } => ExitCode::from(EXIT_RUNTIME),
                _ => ExitCode::from(EXIT_DATA),
            }
        }
    }
}
