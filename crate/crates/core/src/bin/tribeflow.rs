use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tribeflow::baselines::GeoTable;
use tribeflow::corpus::{dedup_revisits, parse_events, temporal_split, EventLog, Format};
use tribeflow::eval::{evaluate_baseline, evaluate_model, Baseline};
use tribeflow::model_io;
use tribeflow::predict::{rank_candidates, Query};
use tribeflow::sampler::{train_with_progress, Progress, TrainConfig};
use tribeflow::synth::{generate, SynthConfig};
use tribeflow::windows::build_windows;
use tribeflow::{Error, Hyperparams, Model};

#[derive(Parser)]
#[command(name = "tribeflow", version, about = "Latent-environment random walks over user trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a `user \t timestamp \t item` corpus.
    Train(TrainArgs),
    /// Evaluate a model, and optionally baselines, on a test corpus.
    Eval(EvalArgs),
    /// Rank next items for queries read as `user \t items \t taus`.
    Predict(PredictArgs),
    /// Generate a synthetic corpus with known user groups.
    Synth(SynthArgs),
    /// Split a corpus by time into train and test files.
    Split(SplitArgs),
}

#[derive(clap::Args)]
struct TrainArgs {
    corpus: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    k_init: usize,
    #[arg(long, default_value_t = 1)]
    b: usize,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long, default_value_t = 200)]
    adapt_every: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Read `user \t item` lines, or ignore the timestamps of a 3-column corpus.
    #[arg(long)]
    no_timestamps: bool,
    #[arg(long, default_value_t = 50.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.001)]
    beta: f64,
    /// Progress log; defaults to stderr.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    log_every: usize,
    /// Also write a readable JSON dump of the model.
    #[arg(long)]
    export_json: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Mcmle,
    Gravity,
    Popularity,
}

impl From<BaselineArg> for Baseline {
    fn from(b: BaselineArg) -> Self {
        match b {
            BaselineArg::Mcmle => Baseline::McMle,
            BaselineArg::Gravity => Baseline::Gravity,
            BaselineArg::Popularity => Baseline::Popularity,
        }
    }
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(short, long)]
    model: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Training corpus, needed for baselines and flow error.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long, value_enum)]
    baseline: Vec<BaselineArg>,
    /// `item \t lat \t lon` table.
    #[arg(long)]
    geo: Option<PathBuf>,
    /// Print only these metrics, as `key=value` lines.
    #[arg(long)]
    metric: Vec<String>,
    /// Print `key=value` lines instead of a table.
    #[arg(long)]
    kv: bool,
    #[arg(long)]
    no_timestamps: bool,
}

#[derive(clap::Args)]
struct PredictArgs {
    #[arg(short, long)]
    model: PathBuf,
    /// Query file; defaults to stdin.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 50)]
    users: usize,
    #[arg(long, default_value_t = 5)]
    groups: usize,
    #[arg(long, default_value_t = 20)]
    items_per_group: usize,
    #[arg(long, default_value_t = 100)]
    plays_per_day: usize,
    #[arg(long, default_value_t = 5)]
    days: usize,
    #[arg(long, default_value_t = 1)]
    stagger_days: usize,
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Give every group its own block of items.
    #[arg(long)]
    disjoint: bool,
    /// Also write `geo.tsv` with clustered item coordinates.
    #[arg(long)]
    geo: bool,
}

#[derive(clap::Args)]
struct SplitArgs {
    corpus: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 0.7)]
    fraction: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Synth(a) => synth(a),
        Command::Split(a) => split(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 1 })
        }
    }
}

/// Reads a corpus. With `no_timestamps` a 3-column file is still parsed by
/// time; the second value tells the caller to ignore its gaps.
fn read_corpus(path: &Path, no_timestamps: bool) -> Result<(EventLog, bool), Error> {
    let three_columns = || -> Result<bool, Error> {
        let reader = BufReader::new(File::open(path)?);
        for line in reader.lines() {
            let line = line?;
            if !line.trim().is_empty() && !line.starts_with('#') {
                return Ok(line.split('\t').count() == 3);
            }
        }
        Ok(false)
    };
    let timestamps = !no_timestamps || three_columns()?;
    let log = parse_events(BufReader::new(File::open(path)?), Format { timestamps })?;
    Ok((dedup_revisits(&log), no_timestamps && timestamps))
}

fn train(a: TrainArgs) -> Result<(), Error> {
    let config = TrainConfig {
        k_init: a.k_init,
        iterations: a.iters,
        adapt_every: a.adapt_every,
        seed: a.seed,
        workers: a.workers,
        nt_mode: a.no_timestamps,
        hyper: Hyperparams { alpha_mass: a.alpha, beta: a.beta },
        log_every: a.log_every,
    };
    config.validate()?;
    let (log, _) = read_corpus(&a.corpus, a.no_timestamps)?;
    let windows = build_windows(&log, a.b)?;
    let mut sink: Box<dyn Write> = match &a.log {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stderr()),
    };
    writeln!(
        sink,
        "users={} items={} events={} windows={} workers={}",
        log.n_users(),
        log.n_items(),
        log.n_events(),
        windows.len(),
        config.workers
    )?;
    let mut failed = None;
    let model = train_with_progress(&windows, &config, &mut |p| {
        let line = match p {
            Progress::Iteration { iter, k, log_posterior } => {
                format!("iter={iter} k={k} log_posterior={log_posterior:.6}")
            }
            Progress::Adapt { iter, report } => format!("iter={iter} {report}"),
        };
        if let Err(e) = writeln!(sink, "{line}") {
            failed.get_or_insert(e);
        }
    })?;
    if let Some(e) = failed {
        return Err(e.into());
    }
    sink.flush()?;
    let model = model.with_dictionaries(log.users.clone(), log.items.clone())?;
    model_io::save(&model, &a.out)?;
    if let Some(p) = &a.export_json {
        fs::write(p, model_io::to_json(&model)?)?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), Error> {
    let model = model_io::load(&a.model)?;
    let (test, _) = read_corpus(&a.test, a.no_timestamps)?;
    let train = a.train.as_deref().map(|p| read_corpus(p, a.no_timestamps)).transpose()?.map(|t| t.0);
    let geo_text = a.geo.as_deref().map(fs::read_to_string).transpose()?;
    let geo_for = |log_items: &tribeflow::corpus::Dictionary| -> Result<Option<GeoTable>, Error> {
        geo_text.as_deref().map(|t| GeoTable::parse(t.as_bytes(), log_items)).transpose()
    };
    let mut reports = vec![evaluate_model(&model, &test, train.as_ref(), geo_for(&model.items)?.as_ref())?];
    if !a.baseline.is_empty() {
        let train = train
            .as_ref()
            .ok_or_else(|| Error::Config("baselines need --train".into()))?;
        let geo = geo_for(&train.items)?;
        for &b in &a.baseline {
            let b = Baseline::from(b);
            if b == Baseline::Gravity && geo.is_none() {
                return Err(Error::Config("the gravity baseline needs --geo".into()));
            }
            let reference = reports[0].rr.clone();
            reports.push(evaluate_baseline(b, train, &test, geo.as_ref(), Some(&reference))?);
        }
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for (i, r) in reports.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        if a.kv || !a.metric.is_empty() {
            write!(out, "{}", r.key_values(&a.metric))?;
        } else {
            write!(out, "{r}")?;
        }
    }
    Ok(())
}

fn parse_query(model: &Model, line: &str, lineno: usize) -> Result<(String, Query), Error> {
    let bad = |m: String| Error::Parse { line: lineno, message: m };
    let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
    if !(2..=3).contains(&fields.len()) {
        return Err(bad(format!("expected 2 or 3 tab-separated fields, found {}", fields.len())));
    }
    let history = fields[1]
        .split(',')
        .map(|name| model.items.get(name.trim()).ok_or_else(|| Error::UnknownItem(name.trim().to_string())))
        .collect::<Result<Vec<u32>, Error>>()?;
    let taus = match fields.get(2) {
        Some(t) if !t.is_empty() => t
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|_| bad(format!("bad inter-event time `{x}`"))))
            .collect::<Result<Vec<f64>, Error>>()?,
        _ => Vec::new(),
    };
    let user = model.users.get(fields[0]);
    Ok((fields[0].to_string(), Query { user, history, taus, candidates: None }))
}

fn predict(a: PredictArgs) -> Result<(), Error> {
    let model = model_io::load(&a.model)?;
    let input: Box<dyn BufRead> = match &a.queries {
        Some(p) => Box::new(BufReader::new(File::open(p)?)),
        None => Box::new(io::stdin().lock()),
    };
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (user, query) = parse_query(&model, &line, idx + 1)?;
        let ranked = rank_candidates(&model, &query)?;
        for (rank, (item, score)) in ranked.iter().take(a.top).enumerate() {
            let name = model.items.name(*item).unwrap_or_default();
            writeln!(out, "{user}\t{}\t{name}\t{score:.6e}", rank + 1)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), Error> {
    let config = SynthConfig {
        users: a.users,
        groups: a.groups,
        items_per_group: a.items_per_group,
        plays_per_day: a.plays_per_day,
        days: a.days,
        stagger_days: a.stagger_days,
        noise: a.noise,
        seed: a.seed,
        disjoint: a.disjoint,
        geo: a.geo,
        ..SynthConfig::default()
    };
    let data = generate(&config)?;
    fs::create_dir_all(&a.out_dir)?;
    let create = |name: &str| -> Result<BufWriter<File>, Error> { Ok(BufWriter::new(File::create(a.out_dir.join(name))?)) };
    let mut corpus = create("corpus.tsv")?;
    data.log.write_tsv(&mut corpus)?;
    corpus.flush()?;
    let mut groups = create("groups.tsv")?;
    data.write_groups(&mut groups)?;
    groups.flush()?;
    if a.geo {
        let mut geo = create("geo.tsv")?;
        data.write_geo(&mut geo)?;
        geo.flush()?;
    }
    eprintln!("events={} users={} items={}", data.log.n_events(), data.log.n_users(), data.log.n_items());
    Ok(())
}

fn split(a: SplitArgs) -> Result<(), Error> {
    let (log, _) = read_corpus(&a.corpus, false)?;
    let (train, test) = temporal_split(&log, a.fraction)?;
    for (part, path) in [(&train, &a.train), (&test, &a.test)] {
        let mut out = BufWriter::new(File::create(path)?);
        part.write_tsv(&mut out)?;
        out.flush()?;
    }
    Ok(())
}
