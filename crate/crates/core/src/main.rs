use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command, value_parser};

use kcm_lab::Error;
use kcm_lab::experiment::{self, ExperimentConfig, ExperimentKind, keys_for};
use kcm_lab::sim::worker_count;
use kcm_lab::verify::{self, Suite, VerifyOptions};

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn kind_command(kind: ExperimentKind) -> Command {
    let mut cmd = Command::new(kind.name())
        .about(kind.about())
        .arg(Arg::new("config").long("config").value_name("FILE").help("Base configuration file; flags override it"));
    for k in keys_for(kind) {
        let arg = Arg::new(k.key).long(k.flag).help(k.help);
        cmd = cmd.arg(if k.switch {
            arg.action(ArgAction::SetTrue)
        } else {
            arg.value_name("VALUE").allow_hyphen_values(true)
        });
    }
    cmd.arg(workers_arg())
}

fn workers_arg() -> Arg {
    Arg::new("workers")
        .long("workers")
        .value_name("N")
        .value_parser(value_parser!(usize))
        .help("Worker threads (default: KCM_LAB_WORKERS or all cores)")
}

fn cli() -> Command {
    let mut cmd = Command::new("kcm-lab")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Kinetically constrained models: simulation, exact spectra and duality checks")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for kind in ExperimentKind::ALL {
        cmd = cmd.subcommand(kind_command(kind));
    }
    cmd.subcommand(
        Command::new("run")
            .about("Run the experiment described by a configuration file")
            .arg(Arg::new("config").long("config").value_name("FILE").required(true))
            .arg(
                Arg::new("set")
                    .long("set")
                    .value_name("KEY=VALUE")
                    .action(ArgAction::Append)
                    .allow_hyphen_values(true)
                    .help("Override one key"),
            )
            .arg(workers_arg()),
    )
    .subcommand(
        Command::new("verify")
            .about("Run the acceptance suite")
            .arg(
                Arg::new("suite")
                    .long("suite")
                    .value_parser(["quick", "full"])
                    .default_value("quick"),
            )
            .arg(Arg::new("ledger").long("ledger").value_name("FILE").help("Write one JSON line per criterion"))
            .arg(Arg::new("seed").long("seed").value_parser(value_parser!(u64)).default_value("2024"))
            .arg(
                Arg::new("only")
                    .long("only")
                    .value_name("IDS")
                    .value_delimiter(',')
                    .value_parser(value_parser!(usize))
                    .help("Run only these criteria"),
            )
            .arg(Arg::new("tamper").long("tamper").value_parser(value_parser!(f64)).hide(true))
            .arg(workers_arg()),
    )
}

fn init_pool(m: &ArgMatches) {
    let n = m.get_one::<usize>("workers").copied().or_else(worker_count);
    if let Some(n) = n {
        // a second initialization can only happen in tests; ignore it
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn report(e: &Error) -> ExitCode {
    match e {
        Error::Config { line: 0, message } => {
            eprintln!("error: {message}");
            ExitCode::from(EXIT_CONFIG)
        }
        Error::Config { .. } => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        _ => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn config_from_flags(kind: ExperimentKind, m: &ArgMatches) -> kcm_lab::Result<ExperimentConfig> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(p) => ExperimentConfig::load(&PathBuf::from(p))?,
        None => ExperimentConfig::default(),
    };
    for k in keys_for(kind) {
        if k.switch {
            if m.get_flag(k.key) {
                cfg.set(k.key, "true");
            }
        } else if let Some(v) = m.get_one::<String>(k.key) {
            cfg.set(k.key, v.clone());
        }
    }
    Ok(cfg)
}

fn run_experiment(kind: Option<ExperimentKind>, cfg: ExperimentConfig) -> ExitCode {
    let job = match kind {
        Some(k) => experiment::prepare(k, &cfg),
        None => experiment::prepare_from_file_config(&cfg),
    };
    match job.and_then(experiment::execute) {
        Ok(rec) => {
            println!("{}", serde_json::to_string(&rec).expect("run record serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => report(&e),
    }
}

fn run_verify(m: &ArgMatches) -> ExitCode {
    let suite: Suite = m.get_one::<String>("suite").expect("defaulted").parse().expect("validated by clap");
    let opts = VerifyOptions { suite, seed: *m.get_one::<u64>("seed").expect("defaulted"), tamper: m.get_one::<f64>("tamper").copied() };
    let ids: Vec<usize> = match m.get_many::<usize>("only") {
        Some(v) => v.copied().collect(),
        None => (1..=verify::CRITERIA).collect(),
    };
    if let Some(bad) = ids.iter().find(|&&i| i == 0 || i > verify::CRITERIA) {
        eprintln!("error: no criterion {bad}");
        return ExitCode::from(EXIT_CONFIG);
    }
    let mut outcomes = Vec::new();
    for id in ids {
        let o = verify::run_criterion(id, &opts);
        println!("{o}");
        outcomes.push(o);
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("{} passed, {failed} failed", outcomes.len() - failed);
    if let Some(path) = m.get_one::<String>("ledger") {
        if let Err(e) = experiment::write_atomic(&PathBuf::from(path), &verify::ledger_jsonl(&opts, &outcomes)) {
            return report(&e);
        }
    }
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(EXIT_RUNTIME) }
}

fn main() -> ExitCode {
    let m = cli().get_matches();
    let (name, sub) = m.subcommand().expect("subcommand required");
    init_pool(sub);
    match name {
        "verify" => run_verify(sub),
        "run" => {
            let path = PathBuf::from(sub.get_one::<String>("config").expect("required"));
            let mut cfg = match ExperimentConfig::load(&path) {
                Ok(c) => c,
                Err(e) => return report(&e),
            };
            for kv in sub.get_many::<String>("set").into_iter().flatten() {
                let Some((k, v)) = kv.split_once('=') else {
                    eprintln!("error: --set expects KEY=VALUE, got '{kv}'");
                    return ExitCode::from(EXIT_CONFIG);
                };
                cfg.set(k.trim(), v.trim());
            }
            run_experiment(None, cfg)
        }
        other => {
            let kind: ExperimentKind = other.parse().expect("subcommands mirror the kinds");
            match config_from_flags(kind, sub) {
                Ok(cfg) => run_experiment(Some(kind), cfg),
                Err(e) => report(&e),
            }
        }
    }
}
