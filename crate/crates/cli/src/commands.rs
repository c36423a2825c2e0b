use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use adplace_core::eval::IpsAccumulator;
use adplace_core::format::{read_sets, write_set, FormatError};
use adplace_core::policy::PolicyError;
use adplace_core::synth::SynthError;
use adplace_core::{
    open_input, split_assign, CandidateSet, Ensemble, EvalConfig, Example, FtrlModel, LoggingPolicy, ScoredSet,
    SynthConfig, TrainConfig,
};
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::args::{EvaluateArgs, GenSynthArgs, LoggingArg, PredictArgs, SplitArgs, TrainArgs};

const PROGRESS_EVERY: u64 = 100_000;

/// Exit code 1 for bad invocations, 2 for anything wrong with the data.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) | Self::Data(m) => f.write_str(m),
        }
    }
}

fn usage(e: impl fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn data(e: impl fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn io_at(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(|f| BufWriter::with_capacity(1 << 16, f))
        .map_err(io_at(path))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn part_path(prefix: &Path, part: usize) -> PathBuf {
    with_suffix(prefix, &format!(".part{part}"))
}

pub fn model_path(prefix: &Path, k: usize) -> PathBuf {
    with_suffix(prefix, &format!(".{k}"))
}

fn sets(path: &Path) -> Result<impl Iterator<Item = Result<CandidateSet, CliError>> + '_, CliError> {
    let reader = read_sets(path).map_err(io_at(path))?;
    Ok(reader.map(move |r| r.map_err(|e: FormatError| CliError::Data(format!("{}: {e}", path.display())))))
}

struct Progress {
    what: String,
    count: u64,
}

impl Progress {
    fn new(what: impl Into<String>) -> Self {
        Self {
            what: what.into(),
            count: 0,
        }
    }

    fn tick(&mut self) {
        self.count += 1;
        if self.count.is_multiple_of(PROGRESS_EVERY) {
            log::info!("{}: {} sets", self.what, self.count);
        }
    }
}

pub fn split(args: &SplitArgs) -> Result<(), CliError> {
    let paths: Vec<PathBuf> = (0..4).map(|p| part_path(&args.output_prefix, p)).collect();
    let mut outs = paths.iter().map(|p| create(p)).collect::<Result<Vec<_>, _>>()?;
    let mut counts = [0u64; 4];
    let mut progress = Progress::new("split");
    for set in sets(&args.input)? {
        let set = set?;
        let part = split_assign(set.id()).index();
        write_set(&mut outs[part], &set).map_err(io_at(&paths[part]))?;
        counts[part] += 1;
        progress.tick();
    }
    for (out, path) in outs.iter_mut().zip(&paths) {
        out.flush().map_err(io_at(path))?;
    }
    for (path, n) in paths.iter().zip(counts) {
        println!("{}\t{n}", path.display());
    }
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let features = args.features.config();
    features.validate().map_err(usage)?;
    let params = args.params();
    params.validate().map_err(usage)?;
    if args.k == 0 {
        return Err(usage("--K must be at least 1"));
    }
    if args.workers == 0 {
        return Err(usage("--workers must be at least 1"));
    }
    for input in &args.input {
        File::open(input).map_err(io_at(input))?;
    }

    // Every output is created before any training starts.
    let paths: Vec<PathBuf> = (0..args.k).map(|k| model_path(&args.model_prefix, k)).collect();
    let mut outs = paths.iter().map(|p| create(p)).collect::<Result<Vec<_>, _>>()?;

    let base = TrainConfig {
        params,
        workers: args.workers,
        epochs: args.epochs.max(1),
        shuffle_buffer: args.shuffle_buffer,
        seed: args.seed,
    };
    for (k, (out, path)) in outs.iter_mut().zip(&paths).enumerate() {
        let cfg = base.member(k, args.k);
        let (model, stats) = cfg.train(features.dimension(), |epoch| {
            let mut progress = Progress::new(format!("model {k} epoch {epoch}"));
            let mut streams = Vec::with_capacity(args.input.len());
            for input in &args.input {
                streams.push(sets(input)?);
            }
            Ok::<_, CliError>(streams.into_iter().flatten().map(move |set| {
                progress.tick();
                let set = set?;
                Example::from_set(&set, &features).map_err(data)
            }))
        })?;
        model.write_to(out).and_then(|_| out.flush()).map_err(io_at(path))?;
        println!(
            "model {k}\t{}\texamples={}\tclicks={}\tlog_loss={:.6}\tnonzero_weights={}",
            path.display(),
            stats.examples,
            stats.positives,
            stats.mean_log_loss(),
            model.nnz_weights()
        );
    }
    Ok(())
}

impl From<adplace_core::ftrl::ModelError> for CliError {
    fn from(e: adplace_core::ftrl::ModelError) -> Self {
        data(e)
    }
}

pub fn predict(args: &PredictArgs) -> Result<(), CliError> {
    let features = args.features.config();
    features.validate().map_err(usage)?;
    let policy = args.policy();
    policy.validate().map_err(usage)?;

    let model_paths: Vec<PathBuf> = match &args.model_prefix {
        Some(prefix) => (0..args.k).map(|k| model_path(prefix, k)).collect(),
        None => args.model.clone(),
    };
    let models = model_paths
        .iter()
        .map(|p| FtrlModel::load(p).map_err(|e| data(format!("{}: {e}", p.display()))))
        .collect::<Result<Vec<_>, _>>()?;
    let ensemble = Ensemble::new(models).map_err(data)?;
    if ensemble.dimension() != features.dimension() {
        return Err(data(format!(
            "models have dimension {} but the {} featurizer produces {}",
            ensemble.dimension(),
            features.mode,
            features.dimension()
        )));
    }

    let mut out = create(&args.output)?;
    let mut progress = Progress::new("predict");
    for set in sets(&args.input)? {
        let set = set?;
        let scored = ensemble.score_set(&set, &features, &policy).map_err(data)?;
        writeln!(out, "{scored}").map_err(io_at(&args.output))?;
        progress.tick();
    }
    out.flush().map_err(io_at(&args.output))
}

fn read_predictions(path: &Path) -> Result<impl Iterator<Item = Result<ScoredSet, CliError>> + '_, CliError> {
    let reader = open_input(path).map_err(io_at(path))?;
    Ok(reader
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(move |(i, line)| {
            let line = line.map_err(io_at(path))?;
            line.parse::<ScoredSet>()
                .map_err(|e: PolicyError| data(format!("{} line {}: {e}", path.display(), i + 1)))
        }))
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let config = EvalConfig {
        scale: args.scale,
        denominator: args.denominator.into(),
    };
    config.validate().map_err(usage)?;

    let mut acc = IpsAccumulator::new();
    let mut predictions = read_predictions(&args.predictions)?;
    let mut progress = Progress::new("evaluate");
    for gold in sets(&args.gold)? {
        let gold = gold?;
        let predicted = predictions
            .next()
            .ok_or_else(|| data(format!("predictions end before gold set {}", gold.id())))??;
        acc.add(&gold, &predicted).map_err(data)?;
        progress.tick();
    }
    if let Some(extra) = predictions.next() {
        let extra = extra?;
        return Err(data(format!("prediction for set {} has no gold set", extra.set_id)));
    }

    let report = acc.report(&config);
    println!("{report}");
    if let Some(path) = &args.output {
        std::fs::write(path, report.to_key_values()).map_err(io_at(path))?;
    }
    Ok(())
}

pub fn gen_synth(args: &GenSynthArgs) -> Result<(), CliError> {
    let mut config = SynthConfig::with_random_clicks(
        args.n_sets,
        args.candidates,
        args.fields,
        args.cardinality,
        args.spread,
        args.bias,
        args.seed,
    );
    if let LoggingArg::Softmax = args.logging {
        config.logging = LoggingPolicy::Softmax {
            weights: config.click_model.weights.clone(),
            temperature: args.temperature,
        };
    }
    config.validate().map_err(usage)?;
    if !(args.scale.is_finite() && args.scale > 0.0) {
        return Err(usage(format!("--scale must be > 0, got {}", args.scale)));
    }

    let file = File::create(&args.output).map_err(io_at(&args.output))?;
    let mut out: Box<dyn Write> = if args.gzip {
        Box::new(BufWriter::new(GzEncoder::new(file, Compression::default())))
    } else {
        Box::new(BufWriter::new(file))
    };
    let mut progress = Progress::new("gen-synth");
    for set in config.generate().map_err(usage)? {
        let set = set.map_err(data)?;
        write_set(&mut out, &set).map_err(io_at(&args.output))?;
        progress.tick();
    }
    out.flush().map_err(io_at(&args.output))?;
    drop(out);

    println!("n_sets={}", args.n_sets);
    println!("dimension={}", config.dimension());
    match config.argmax_policy_value() {
        Ok(v) => {
            println!("argmax_policy_value={v}");
            println!("expected_ips={}", v * args.scale);
        }
        Err(SynthError::TooManyCombinations(n)) => {
            log::warn!("{n} feature combinations: skipping the exact policy value");
        }
        Err(e) => return Err(usage(e)),
    }
    Ok(())
}
