mod args;

use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use divproto_core::bench::bench_policies;
use divproto_core::pool::{load_labeled_stats, load_pool};
use divproto_core::simloop::{class_balance_stddev, dispersion_by_class, generate, run_cycles_on, SimSpec};
use divproto_core::{run_policy, ClassCounts, Error, PolicyId, PolicyOptions, Pool};
use serde_json::json;

use args::{parse_policy, read_text, BenchArgs, Cli, Command, SelectArgs, SimulateArgs, StatsArgs, Tuning};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_io() => 1,
            _ => 2,
        }
    }

    fn line(&self) -> String {
        let (kind, msg) = match self {
            CliError::Usage(m) => ("usage", m.clone()),
            CliError::Core(e) => (e.kind(), e.to_string()),
        };
        format!("error: {kind}: {}", msg.replace('\n', " "))
    }
}

type CliResult = Result<(), CliError>;

/// Collapses clap's multi-line report into one line.
fn clap_line(err: &clap::Error) -> String {
    let rendered = err.render().to_string();
    let parts: Vec<&str> = rendered
        .lines()
        .take_while(|l| !l.starts_with("Usage:"))
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    let msg = parts.join(" ");
    msg.strip_prefix("error: ").unwrap_or(&msg).to_string()
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    let result = match out {
        Some(path) => std::fs::write(path, text).map_err(|e| (path.display().to_string(), e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| ("<stdout>".to_string(), e)),
    };
    result.map_err(|(path, source)| CliError::Core(Error::Io { path, source }))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn counts_or_zeros(path: Option<&Path>, pool: &Pool) -> Result<ClassCounts, CliError> {
    match path {
        Some(p) => {
            let counts = load_labeled_stats(p)?;
            if counts.num_classes() != pool.num_classes {
                return Err(Error::Stats(format!(
                    "{} declares {} classes, pool has {}",
                    p.display(),
                    counts.num_classes(),
                    pool.num_classes
                ))
                .into());
            }
            Ok(counts)
        }
        None => Ok(ClassCounts::zeros(pool.num_classes)),
    }
}

fn load(path: &Path, score_floor: f64) -> Result<Pool, CliError> {
    let loaded = load_pool(path, score_floor)?;
    if loaded.dropped_below_floor > 0 {
        eprintln!(
            "note: {} instances below score floor {score_floor} dropped",
            loaded.dropped_below_floor
        );
    }
    Ok(loaded.pool)
}

fn select(a: &SelectArgs) -> CliResult {
    let cfg = a.tuning.resolve(true)?;
    let policy = parse_policy(&a.policy)?;
    if policy == PolicyId::Divproto && a.labeled_stats.is_none() {
        return Err(CliError::Usage("--labeled-stats is required for policy divproto".into()));
    }
    let pool = load(&a.pool, cfg.score_floor)?;
    let counts = counts_or_zeros(a.labeled_stats.as_deref(), &pool)?;
    let opts = PolicyOptions {
        force: a.force,
        ..PolicyOptions::default()
    };
    let result = run_policy(policy, &pool, &counts, &cfg, &opts)?;
    if result.budget_truncated {
        eprintln!(
            "note: budget {} exceeds the {} selectable images",
            cfg.budget_b,
            result.selected.len()
        );
    }
    emit(a.out.as_deref(), &to_json(&result))
}

fn read_spec(path: &Path, seed: Option<u64>) -> Result<SimSpec, CliError> {
    let text = read_text(path)?;
    let mut spec: SimSpec = serde_json::from_str(&text)
        .map_err(|e| Error::InfeasibleSpec(format!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    Ok(spec)
}

fn simulate(a: &SimulateArgs) -> CliResult {
    let cfg = a.tuning.resolve(true)?;
    let policy = parse_policy(&a.policy)?;
    if a.cycles == 0 {
        return Err(Error::Config("--cycles must be at least 1".into()).into());
    }
    let spec = read_spec(&a.spec, a.tuning.seed)?;
    let data = generate(&spec)?;
    let report = run_cycles_on(&data, &spec, policy, &cfg, a.cycles)?;
    let csv = a
        .out
        .as_deref()
        .and_then(Path::extension)
        .is_some_and(|ext| ext.eq_ignore_ascii_case("csv"));
    let text = if csv { report.to_csv() } else { to_json(&report) };
    emit(a.out.as_deref(), &text)
}

fn bench(a: &BenchArgs) -> CliResult {
    let cfg = a.tuning.resolve(true)?;
    let policies = a
        .policies
        .iter()
        .filter(|p| !p.trim().is_empty())
        .map(|p| parse_policy(p))
        .collect::<Result<Vec<_>, _>>()?;
    if policies.is_empty() {
        return Err(CliError::Usage("--policies is empty".into()));
    }
    let pool = match (&a.pool, &a.spec) {
        (Some(path), _) => load(path, cfg.score_floor)?,
        (None, Some(spec)) => {
            let spec = read_spec(spec, a.tuning.seed)?;
            let data = generate(&spec)?;
            let all: Vec<usize> = (0..data.images.len()).collect();
            data.view(&all, 1.0, cfg.score_floor)?
        }
        (None, None) => return Err(CliError::Usage("one of --pool or --spec is required".into())),
    };
    let counts = counts_or_zeros(a.labeled_stats.as_deref(), &pool)?;
    let opts = PolicyOptions {
        force: a.force,
        ..PolicyOptions::default()
    };
    let report = bench_policies(&pool, &counts, &cfg, &policies, &opts)?;
    if let Some(out) = &a.out {
        emit(Some(out), &to_json(&report))?;
    }
    emit(None, &report.render_table())
}

/// Ids listed under `selected` in a result file, or a bare JSON array.
fn selection_ids(path: &Path) -> Result<Vec<String>, CliError> {
    let text = read_text(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Selection(format!("{}: {e}", path.display())))?;
    let list = match &value {
        serde_json::Value::Array(_) => &value,
        other => other
            .get("selected")
            .ok_or_else(|| Error::Selection(format!("{}: no 'selected' list", path.display())))?,
    };
    serde_json::from_value(list.clone())
        .map_err(|e| Error::Selection(format!("{}: {e}", path.display())).into())
}

fn stats(a: &StatsArgs) -> CliResult {
    let cfg = a.tuning.resolve(false)?;
    let pool = load(&a.pool, cfg.score_floor)?;
    let ids = selection_ids(&a.selection)?;

    let mut seen = std::collections::HashSet::new();
    let mut missing = Vec::new();
    let mut images = Vec::with_capacity(ids.len());
    for id in &ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::Selection(format!("image '{id}' listed twice")).into());
        }
        match pool.get(id) {
            Some(im) => images.push(im),
            None => missing.push(id.as_str()),
        }
    }
    if !missing.is_empty() {
        let shown: Vec<&str> = missing.iter().take(5).copied().collect();
        return Err(Error::Selection(format!(
            "{} selected ids not in pool: {}{}",
            missing.len(),
            shown.join(", "),
            if missing.len() > shown.len() { ", ..." } else { "" }
        ))
        .into());
    }

    let mut predicted = ClassCounts::zeros(pool.num_classes);
    for im in &images {
        for inst in &im.instances {
            predicted.0[inst.category] += 1;
        }
    }
    let truth = match &a.labeled_stats {
        Some(p) => Some(counts_or_zeros(Some(p), &pool)?),
        None => None,
    };
    let (source, basis) = match &truth {
        Some(t) => ("ground_truth", t),
        None => ("predicted", &predicted),
    };
    let dispersion: std::collections::BTreeMap<String, f64> = dispersion_by_class(&images)
        .into_iter()
        .map(|(c, s)| (c.to_string(), s))
        .collect();
    let doc = json!({
        "selected": ids.len(),
        "histogram_source": source,
        "class_balance_stddev": class_balance_stddev(basis),
        "predicted_histogram": predicted,
        "ground_truth_histogram": truth,
        "prototype_dispersion": dispersion,
        "config_echo": cfg,
    });
    emit(a.out.as_deref(), &to_json(&doc))
}

fn tuning(cmd: &Command) -> &Tuning {
    match cmd {
        Command::Select(a) => &a.tuning,
        Command::Simulate(a) => &a.tuning,
        Command::Bench(a) => &a.tuning,
        Command::Stats(a) => &a.tuning,
    }
}

fn dispatch(cmd: &Command) -> CliResult {
    match cmd {
        Command::Select(a) => select(a),
        Command::Simulate(a) => simulate(a),
        Command::Bench(a) => bench(a),
        Command::Stats(a) => stats(a),
    }
}

fn run(cli: &Cli) -> CliResult {
    match tuning(&cli.command).threads {
        None => dispatch(&cli.command),
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => {
            let workers = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(format!("cannot start {n} threads: {e}")))?;
            workers.install(|| dispatch(&cli.command))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("error: usage: {}", clap_line(&e));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code())
        }
    }
}
