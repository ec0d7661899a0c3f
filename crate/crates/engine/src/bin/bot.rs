use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bot_core::batching::BatchStrategy;
use bot_core::metrics::PriceTable;
use bot_core::theory::{effectiveness_report, CostModelParams, EffectivenessThresholds, KsExperiment};
use bot_engine::dataset::{load_dataset, LoadOptions, Schema};
use bot_engine::harness::{plan_batches, run_eval, EvalOptions};
use bot_engine::lab;
use bot_engine::live::{LiveBackend, LiveConfig, DEFAULT_API_KEY_VAR};
use bot_engine::report::{compare_reports, EvalReport};
use bot_engine::tools::{HttpSearchTool, ToolRegistry};
use bot_engine::{ChatBackend, Method, RunConfig, ScriptedBackend};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bot", version, about = "Batch-aware reflection runs, reports and theory experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a method on a JSONL dataset and write a report.
    Run(RunArgs),
    /// Compare two reports (cost deltas per stage, metric deltas).
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Run a theory experiment and print or write CSV.
    Theory(TheoryArgs),
    /// Show the batch plan for a dataset without running anything.
    Plan(PlanArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Batching {
    None,
    Sequential,
    Semantic,
}

impl From<Batching> for BatchStrategy {
    fn from(b: Batching) -> Self {
        match b {
            Batching::None => BatchStrategy::None,
            Batching::Sequential => BatchStrategy::Sequential,
            Batching::Semantic => BatchStrategy::Semantic,
        }
    }
}

#[derive(Args)]
struct BackendArgs {
    /// `live`, or `scripted:<path>` for a JSON script.
    #[arg(long, default_value = "live")]
    backend: String,
    /// Environment variable holding the API key.
    #[arg(long, default_value = DEFAULT_API_KEY_VAR)]
    api_key_env: String,
    /// GET endpoint for the web search tool (live backend only).
    #[arg(long, env = "BOT_SEARCH_URL")]
    search_url: Option<String>,
    /// Header carrying the search credential, as NAME=VALUE.
    #[arg(long, env = "BOT_SEARCH_AUTH")]
    search_auth: Option<String>,
}

impl BackendArgs {
    fn build(&self) -> Result<(Box<dyn ChatBackend>, ToolRegistry)> {
        if let Some(path) = self.backend.strip_prefix("scripted:") {
            let b = ScriptedBackend::from_path(path).with_context(|| format!("loading script {path}"))?;
            let tools = ToolRegistry::from_tables(&b.script().tools);
            return Ok((Box::new(b), tools));
        }
        if self.backend != "live" {
            bail!("unknown backend {:?}; use live or scripted:<path>", self.backend);
        }
        let config = LiveConfig::from_env(&self.api_key_env);
        if config.api_key.is_none() {
            log::warn!("{} is not set; requests go out unauthenticated", self.api_key_env);
        }
        let mut tools = ToolRegistry::new();
        if let Some(url) = &self.search_url {
            let mut search = HttpSearchTool::new("web_search", url.clone());
            if let Some(auth) = &self.search_auth {
                let (k, v) = auth.split_once('=').context("--search-auth must be NAME=VALUE")?;
                search.auth_header = Some((k.to_string(), v.to_string()));
            }
            tools.register(search)?;
        }
        Ok((Box::new(LiveBackend::new(config)), tools))
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    schema: Schema,
    #[arg(long, value_enum, default_value = "bot")]
    method: Method,
    /// Items per joint reflection (bot only; defaults to 4).
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_enum, default_value = "sequential")]
    batching: Batching,
    /// Cluster count for semantic batching.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 5)]
    max_rounds: u32,
    #[arg(long, default_value_t = 5)]
    max_tool_calls: usize,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2.5)]
    price_in: f64,
    #[arg(long, default_value_t = 10.0)]
    price_out: f64,
    #[arg(long, default_value_t = 10)]
    ece_bins: usize,
    /// Batches in flight.
    #[arg(long, default_value_t = 4)]
    parallel: usize,
    /// Actor calls in flight per batch.
    #[arg(long, default_value_t = 4)]
    actor_parallel: usize,
    /// Accept records without a gold label.
    #[arg(long)]
    lenient: bool,
    /// Report to compare against when the run completes.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
}

impl RunArgs {
    fn config(&self) -> RunConfig {
        let base = RunConfig::for_method(self.method);
        RunConfig {
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            batching: if self.method == Method::Bot {
                self.batching.into()
            } else {
                BatchStrategy::None
            },
            kmeans_k: self.k,
            max_rounds: self.max_rounds,
            max_tool_calls: self.max_tool_calls,
            temperature: self.temperature,
            seed: self.seed,
            prices: PriceTable {
                input_per_million: self.price_in,
                output_per_million: self.price_out,
            },
            ece_bins: self.ece_bins,
            ..base
        }
    }
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    schema: Schema,
    #[arg(long, value_enum, default_value = "semantic")]
    batching: Batching,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    NEff,
    Variance,
    ScoringGain,
    Ks,
    Cost,
    Effectiveness,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(value_enum)]
    experiment: Experiment,
    #[arg(long, value_delimiter = ',', default_values_t = [0.3, 0.5, 0.8])]
    p: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.3, 0.7])]
    rho: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [4, 8])]
    n: Vec<usize>,
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Consensus weight of the KS confidence model.
    #[arg(long)]
    weight: Option<f64>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long, default_value_t = 1000.0)]
    t_inst: f64,
    #[arg(long, default_value_t = 500.0)]
    t_ctx: f64,
    #[arg(long, default_value_t = 800.0)]
    t_out: f64,
    #[arg(long, default_value_t = 800.0)]
    s_coeff: f64,
    #[arg(long, default_value_t = 0.7)]
    beta: f64,
    #[arg(long, default_value_t = 16)]
    max_n: usize,
    /// Estimated coherence, for the effectiveness check.
    #[arg(long, default_value_t = 0.6)]
    kappa: f64,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit<T: serde::Serialize>(rows: &[T], out: &Option<PathBuf>) -> Result<()> {
    match out {
        Some(path) => lab::write_csv(path, rows),
        None => {
            print!("{}", lab::to_csv(rows)?);
            Ok(())
        }
    }
}

fn theory(a: &TheoryArgs) -> Result<()> {
    match a.experiment {
        Experiment::NEff => emit(&lab::n_eff_table(&a.n, &a.rho)?, &a.out),
        Experiment::Variance => emit(&lab::variance_grid(&lab::grid(&a.p, &a.rho, &a.n, a.trials, a.seed))?, &a.out),
        Experiment::ScoringGain => emit(&lab::scoring_grid(&lab::grid(&a.p, &a.rho, &a.n, a.trials, a.seed))?, &a.out),
        Experiment::Ks => {
            let p = *a.p.first().context("--p needs a value")?;
            let mut exp = KsExperiment::new(p, a.rho.clone(), a.n.clone(), a.trials, a.seed);
            if let Some(w) = a.weight {
                exp.model.consensus_weight = w;
            }
            if let Some(b) = a.bootstrap {
                exp.bootstrap = b;
            }
            emit(&lab::ks_grid(&exp)?, &a.out)
        }
        Experiment::Cost => {
            let params = CostModelParams {
                t_inst: a.t_inst,
                t_ctx: a.t_ctx,
                t_out: a.t_out,
                s_coeff: a.s_coeff,
                s_exponent: a.beta,
            };
            emit(&lab::cost_curve(&params, 1..=a.max_n)?, &a.out)
        }
        Experiment::Effectiveness => {
            let th = EffectivenessThresholds::default();
            for &n in &a.n {
                for &rho in &a.rho {
                    let r = effectiveness_report(a.kappa, rho, n, &th)?;
                    println!("N={n} rho={rho} N_eff={:.3}", r.n_eff);
                    for c in &r.conditions {
                        println!("  ({}) {:<22} {:?}  {}", c.condition, c.name, c.status, c.detail);
                    }
                }
            }
            Ok(())
        }
    }
}

fn run(a: &RunArgs) -> Result<()> {
    let config = a.config();
    let (backend, tools) = a.backend.build()?;
    let mut options = EvalOptions::new(a.schema);
    options.strict = !a.lenient;
    options.batch_parallelism = a.parallel;
    options.actor_parallelism = a.actor_parallel;
    if let Some(path) = &a.baseline {
        options.baseline = Some(EvalReport::load(path).with_context(|| format!("loading {}", path.display()))?);
    }
    let report = run_eval(&config, &a.dataset, &a.out, &options, backend.as_ref(), &tools)?;
    let ag = &report.aggregates;
    let show = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "{} on {} items: accuracy {} ks {} ece {} cost ${:.4} (actor ${:.4}, reflector ${:.4})",
        report.label,
        ag.items,
        show(ag.accuracy),
        show(ag.ks),
        show(ag.ece),
        ag.costs.total,
        ag.costs.actor,
        ag.costs.reflector
    );
    if let Some(c) = &report.comparison {
        print!("{}", c.to_table());
    }
    Ok(())
}

fn plan(a: &PlanArgs) -> Result<()> {
    let queries = load_dataset(&a.dataset, a.schema, LoadOptions { strict: false })?;
    let (backend, _) = a.backend.build()?;
    let config = RunConfig {
        batch_size: a.batch_size,
        batching: a.batching.into(),
        kmeans_k: a.k,
        seed: a.seed,
        ..RunConfig::default()
    };
    config.validate()?;
    let plan = plan_batches(&queries, &config, backend.as_ref())?;
    println!("{}", serde_json::to_string_pretty(&plan)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Compare {
            baseline,
            candidate,
            json,
        } => (|| {
            let b = EvalReport::load(baseline).with_context(|| format!("loading {}", baseline.display()))?;
            let c = EvalReport::load(candidate).with_context(|| format!("loading {}", candidate.display()))?;
            let cmp = compare_reports(&b, &c)?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&cmp)?);
            } else {
                print!("{}", cmp.to_table());
            }
            Ok(())
        })(),
        Command::Theory(a) => theory(a),
        Command::Plan(a) => plan(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
