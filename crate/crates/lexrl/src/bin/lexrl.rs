//! Command-line front end: environment generation, training, the exact
//! oracle, and the scaling/safety experiment protocols.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lexrl::config::{
    generator_to_document, parse_generator_config, parse_pblrl_config, parse_safety_config,
    parse_scaling_config, parse_vblrl_config, pblrl_to_document, safety_to_document,
    scaling_to_document, vblrl_to_document, ConfigDocument, GeneratorConfig,
};
use lexrl::harness::{
    read_runs_csv, run_safety_experiment, run_scaling_experiment, write_metrics_csv, RunRecord,
};
use lexrl::lexoracle::{evaluate_policy_exact, lex_value_iteration, min_action_gap, Policy};
use lexrl::momdp::{build_gridnav, generate_random_momdp, Momdp};
use lexrl::policy_based::{policy_distribution, run_pblrl};
use lexrl::value_based::run_vblrl;
use lexrl::seeded_rng;

#[derive(Parser)]
#[command(name = "lexrl", version, about = "Lexicographic multi-objective RL toolkit")]
struct Cli {
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for experiment sweeps.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a MOMDP from a config and write its text serialization.
    GenMomdp {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve a MOMDP exactly and export Q tables plus a summary.
    Oracle {
        #[arg(long)]
        momdp: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Tie tolerance for the nested action sets.
        #[arg(long, default_value_t = 1e-6)]
        tie_tol: f64,
    },
    /// Train a value-based learner on a MOMDP.
    TrainVb {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        momdp: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy-based learner on a MOMDP.
    TrainPb {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        momdp: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the episodes-to-convergence scaling sweep.
    Scaling {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the GridNav safety study.
    Safety {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate runs.csv into mean ± standard error per (algorithm, m).
    Plot {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    /// Malformed or invalid configuration / input documents → exit 2.
    Config(String),
    /// I/O or execution failures → exit 3.
    Runtime(String),
}

impl CliError {
    fn config(e: impl std::fmt::Display) -> Self {
        CliError::Config(e.to_string())
    }
    fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

fn g17(x: f64) -> String {
    format!("{x:.16e}")
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, content).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn load_config(path: &Path) -> Result<ConfigDocument, CliError> {
    let text = read_file(path)?;
    ConfigDocument::parse(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn load_momdp(path: &Path) -> Result<Momdp, CliError> {
    let text = read_file(path)?;
    let momdp = Momdp::from_text(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let violations = momdp.validate();
    if !violations.is_empty() {
        return Err(CliError::Config(format!(
            "{}: invalid MOMDP: {}",
            path.display(),
            violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ")
        )));
    }
    Ok(momdp)
}

fn write_effective_config(dir: &Path, doc: &ConfigDocument) -> Result<(), CliError> {
    write_file(&dir.join("effective_config"), &doc.serialize())
}

fn q_tables_csv(tables: &[Vec<Vec<f64>>]) -> String {
    let mut out = String::from("objective,state,action,q_value\n");
    for (i, per_state) in tables.iter().enumerate() {
        for (s, per_action) in per_state.iter().enumerate() {
            for (a, &q) in per_action.iter().enumerate() {
                let _ = writeln!(out, "{i},{s},{a},{}", g17(q));
            }
        }
    }
    out
}

fn gen_momdp(cli: &Cli, config: &Path, out: &Path) -> CliResult {
    let doc = load_config(config)?;
    let mut generator = parse_generator_config(&doc).map_err(CliError::config)?;
    if let Some(seed) = cli.seed {
        match &mut generator {
            GeneratorConfig::Random(c) => c.seed = seed,
            GeneratorConfig::GridNav(c) => c.seed = seed,
        }
    }
    let momdp = match &generator {
        GeneratorConfig::Random(c) => generate_random_momdp(c),
        GeneratorConfig::GridNav(c) => build_gridnav(c).map_err(CliError::runtime)?,
    };
    write_file(out, &momdp.to_text())?;
    let effective = generator_to_document(&generator);
    write_file(&out.with_extension("effective_config"), &effective.serialize())?;
    if !cli.quiet {
        println!(
            "wrote {} ({} states, {} actions, {} objectives)",
            out.display(),
            momdp.num_states,
            momdp.num_actions,
            momdp.num_objectives
        );
    }
    Ok(())
}

fn oracle(cli: &Cli, momdp_path: &Path, out: &Path, tie_tol: f64) -> CliResult {
    let momdp = load_momdp(momdp_path)?;
    let solution = lex_value_iteration(&momdp, tie_tol).map_err(CliError::runtime)?;
    let gap = min_action_gap(&solution).ok();
    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    write_file(&out.join("q_tables.csv"), &q_tables_csv(&solution.q_tables))?;

    let mut summary = String::from("{\n  \"policy\": [");
    for (s, &a) in solution.policy.iter().enumerate() {
        if s > 0 {
            summary.push_str(", ");
        }
        let _ = write!(summary, "\"a{}\"", a + 1);
    }
    summary.push_str("],\n  \"j\": [");
    for (i, &j) in solution.j_vector.iter().enumerate() {
        if i > 0 {
            summary.push_str(", ");
        }
        summary.push_str(&g17(j));
    }
    summary.push_str("],\n  \"min_gap\": ");
    match gap {
        Some(g) => summary.push_str(&g17(g)),
        None => summary.push_str("null"),
    }
    summary.push_str("\n}\n");
    write_file(&out.join("solution.txt"), &summary)?;
    if !cli.quiet {
        println!("oracle solution written to {}", out.display());
    }
    Ok(())
}

fn single_run_record(
    algorithm: &str,
    momdp: &Momdp,
    seed: u64,
    digest: &str,
    episodes_to_convergence: Option<usize>,
    wall_seconds: f64,
    final_j: Vec<f64>,
) -> RunRecord {
    RunRecord {
        algorithm: algorithm.to_string(),
        env: format!(
            "momdp-{}x{}-m{}",
            momdp.num_states, momdp.num_actions, momdp.num_objectives
        ),
        seed,
        config_digest: digest.to_string(),
        num_objectives: momdp.num_objectives,
        states: momdp.num_states,
        actions: momdp.num_actions,
        episodes_to_convergence,
        wall_seconds,
        final_j,
        error: None,
    }
}

fn train_vb(cli: &Cli, config: &Path, momdp_path: &Path, out: &Path) -> CliResult {
    let doc = load_config(config)?;
    let mut cfg = parse_vblrl_config(&doc).map_err(CliError::config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let momdp = load_momdp(momdp_path)?;
    let effective = vblrl_to_document(&cfg);
    let digest = effective.digest();

    let started = std::time::Instant::now();
    let mut rng = seeded_rng(cfg.seed);
    let outcome = run_vblrl(&momdp, &cfg, &mut rng).map_err(CliError::runtime)?;
    let wall = started.elapsed().as_secs_f64();

    let greedy: Vec<usize> = outcome
        .greedy_sets
        .iter()
        .map(|set| *set.first().expect("non-empty greedy set"))
        .collect();
    let policy = Policy::Deterministic(greedy);
    let final_j = evaluate_policy_exact(&momdp, &policy).map_err(CliError::runtime)?;

    let episodes = lexrl::harness::detect_convergence(&outcome.series, 50, 0.05);
    let record = single_run_record("train-vb", &momdp, cfg.seed, &digest, episodes, wall, final_j);
    write_metrics_csv(
        &[record],
        &[(digest.clone(), cfg.seed, outcome.series.clone())],
        out,
    )
    .map_err(CliError::runtime)?;
    write_file(&out.join("q_tables.csv"), &q_tables_csv(&outcome.q.tables))?;
    write_effective_config(out, &effective)?;
    if !cli.quiet {
        println!("trained {} steps; outputs in {}", outcome.steps, out.display());
    }
    Ok(())
}

fn train_pb(cli: &Cli, config: &Path, momdp_path: &Path, out: &Path) -> CliResult {
    let doc = load_config(config)?;
    let mut cfg = parse_pblrl_config(&doc).map_err(CliError::config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let momdp = load_momdp(momdp_path)?;
    if cfg.chain.num_objectives != momdp.num_objectives {
        return Err(CliError::Config(format!(
            "policy_based.objectives = {} but the MOMDP has {} objectives",
            cfg.chain.num_objectives, momdp.num_objectives
        )));
    }
    let effective = pblrl_to_document(&cfg);
    let digest = effective.digest();

    let started = std::time::Instant::now();
    let mut rng = seeded_rng(cfg.seed);
    let outcome = run_pblrl(&momdp, &cfg, &mut rng).map_err(CliError::runtime)?;
    let wall = started.elapsed().as_secs_f64();

    let dist: Vec<Vec<f64>> = (0..momdp.num_states)
        .map(|s| policy_distribution(&outcome.params, s))
        .collect();
    let policy = Policy::Stochastic(dist.clone());
    let final_j = evaluate_policy_exact(&momdp, &policy).map_err(CliError::runtime)?;

    let episodes = lexrl::harness::detect_convergence(&outcome.series, 50, 0.05);
    let record = single_run_record("train-pb", &momdp, cfg.seed, &digest, episodes, wall, final_j);
    write_metrics_csv(
        &[record],
        &[(digest.clone(), cfg.seed, outcome.series.clone())],
        out,
    )
    .map_err(CliError::runtime)?;

    let mut policy_csv = String::from("state,action,probability\n");
    for (s, row) in dist.iter().enumerate() {
        for (a, &p) in row.iter().enumerate() {
            let _ = writeln!(policy_csv, "{s},{a},{}", g17(p));
        }
    }
    write_file(&out.join("policy.csv"), &policy_csv)?;

    let mut trace_csv = String::from("t,i,lambda_i,c_i,beta_i,eta_active\n");
    for row in &outcome.trace {
        let _ = writeln!(
            trace_csv,
            "{},{},{},{},{},{}",
            row.t,
            row.objective,
            g17(row.lambda),
            g17(row.coefficient),
            g17(row.beta),
            row.eta_index
        );
    }
    write_file(&out.join("trace.csv"), &trace_csv)?;
    write_effective_config(out, &effective)?;
    if !cli.quiet {
        println!("trained {} steps; outputs in {}", outcome.steps, out.display());
    }
    Ok(())
}

fn scaling(cli: &Cli, config: &Path, out: &Path) -> CliResult {
    let doc = load_config(config)?;
    let mut cfg = parse_scaling_config(&doc).map_err(CliError::config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    let results = run_scaling_experiment(&cfg).map_err(CliError::runtime)?;
    let records: Vec<RunRecord> = results.iter().map(|(r, _)| r.clone()).collect();
    let series: Vec<(String, u64, lexrl::harness::MetricsSeries)> = results
        .iter()
        .map(|(r, s)| (r.config_digest.clone(), r.seed, s.clone()))
        .collect();
    write_metrics_csv(&records, &series, out).map_err(CliError::runtime)?;
    write_effective_config(out, &scaling_to_document(&cfg))?;
    if !cli.quiet {
        println!("{} runs written to {}", records.len(), out.display());
    }
    Ok(())
}

fn safety(cli: &Cli, config: &Path, out: &Path) -> CliResult {
    let doc = load_config(config)?;
    let mut cfg = parse_safety_config(&doc).map_err(CliError::config)?;
    if let Some(seed) = cli.seed {
        cfg.grid.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    let results = run_safety_experiment(&cfg.grid, &cfg.specs, cfg.seeds, cfg.eval_episodes, cfg.threads)
        .map_err(CliError::runtime)?;
    let records: Vec<RunRecord> = results.iter().map(|r| r.record.clone()).collect();
    let series: Vec<(String, u64, lexrl::harness::MetricsSeries)> = results
        .iter()
        .map(|r| (r.record.config_digest.clone(), r.record.seed, r.series.clone()))
        .collect();
    write_metrics_csv(&records, &series, out).map_err(CliError::runtime)?;

    let mut eval_csv = String::from("algorithm,seed,eval_mean_cost,eval_mean_reward\n");
    for r in &results {
        let _ = writeln!(
            eval_csv,
            "{},{},{},{}",
            r.record.algorithm,
            r.record.seed,
            g17(r.eval_mean_cost),
            g17(r.eval_mean_reward)
        );
    }
    write_file(&out.join("safety_eval.csv"), &eval_csv)?;
    write_effective_config(out, &safety_to_document(&cfg))?;
    if !cli.quiet {
        println!("{} runs written to {}", records.len(), out.display());
    }
    Ok(())
}

fn plot(cli: &Cli, runs: &Path, out: &Path) -> CliResult {
    let records = read_runs_csv(runs).map_err(CliError::config)?;
    // Group by (algorithm, m), preserving first-seen order.
    let mut groups: Vec<((String, usize), Vec<&RunRecord>)> = Vec::new();
    for r in &records {
        let key = (r.algorithm.clone(), r.num_objectives);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    let mut csv = String::from(
        "algorithm,m,runs,converged_runs,episodes_mean,episodes_se,wall_mean\n",
    );
    for ((algorithm, m), group) in &groups {
        let episodes: Vec<f64> = group
            .iter()
            .filter_map(|r| r.episodes_to_convergence.map(|e| e as f64))
            .collect();
        let (mean, se) = mean_and_se(&episodes);
        let walls: Vec<f64> = group.iter().map(|r| r.wall_seconds).collect();
        let (wall_mean, _) = mean_and_se(&walls);
        let _ = writeln!(
            csv,
            "{algorithm},{m},{},{},{},{},{}",
            group.len(),
            episodes.len(),
            mean.map_or_else(String::new, g17),
            se.map_or_else(String::new, g17),
            wall_mean.map_or_else(String::new, g17),
        );
    }
    write_file(out, &csv)?;
    if !cli.quiet {
        println!("aggregated {} runs into {}", records.len(), out.display());
    }
    Ok(())
}

fn mean_and_se(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (Some(mean), None);
    }
    let var = xs.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some((var / n).sqrt()))
}

fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::GenMomdp { config, out } => gen_momdp(cli, config, out),
        Command::Oracle { momdp, out, tie_tol } => oracle(cli, momdp, out, *tie_tol),
        Command::TrainVb { config, momdp, out } => train_vb(cli, config, momdp, out),
        Command::TrainPb { config, momdp, out } => train_pb(cli, config, momdp, out),
        Command::Scaling { config, out } => scaling(cli, config, out),
        Command::Safety { config, out } => safety(cli, config, out),
        Command::Plot { runs, out } => plot(cli, runs, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes; anything else is usage.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(message)) => {
            eprintln!("config error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(3)
        }
    }
}
