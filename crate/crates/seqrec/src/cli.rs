//! Batch command-line driver: ingest → train → solve → evaluate →
//! recommend → simulate, with JSON artifact persistence. The `seqrec`
//! binary is a thin wrapper over [`run`].

use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::domain::ItemCatalog;
use crate::error::{Error, Result};
use crate::eval::{self, MdpRanker, Ranker};
use crate::ingest::{self, EventFormat, SessionSet, SplitTag};
use crate::mc::{self, rank_row, ModelConfig};
use crate::mdp::{MdpModel, MdpParams};
use crate::persist;
use crate::seeds::stream_seed;
use crate::sim::{self, GroundTruth};

/// Exit code for a soft non-convergence warning.
pub const EXIT_NONCONVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "seqrec",
    version,
    about = "Sequential recommender: Markov-chain models, profit-maximizing MDP policies, offline metrics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse an event log, filter it, and write train/test session files
    Ingest(IngestArgs),
    /// Train a Markov-chain mixture model from sessions or raw events
    Train(TrainArgs),
    /// Lift a model into an MDP and solve it with policy iteration
    Solve(SolveArgs),
    /// Score a ranker on test sessions with RC@m and exponential decay
    Evaluate(EvaluateArgs),
    /// Print the top recommendations for an item history
    Recommend(RecommendArgs),
    /// Compare policies on a ground-truth user simulator
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RawFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainFormat {
    Csv,
    Jsonl,
    /// A session JSONL file produced by `ingest` (no filtering or split)
    Sessions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RankerKind {
    Mc,
    Mdp,
}

#[derive(Debug, Args, Clone)]
pub struct FilterOpts {
    /// Cut a user's stream into sessions at inactivity gaps
    #[arg(long)]
    pub sessionize: bool,
    /// Inactivity gap starting a new session
    #[arg(long, default_value_t = 2.0)]
    pub session_gap_hours: f64,
    /// Remove items occurring fewer times than this
    #[arg(long, default_value_t = 100)]
    pub min_item_count: usize,
    /// Drop sequences shorter than this
    #[arg(long, default_value_t = 2)]
    pub min_seq_len: usize,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Raw event log (CSV `user,ts,item` or JSONL)
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = RawFormat::Csv)]
    pub format: RawFormat,
    #[command(flatten)]
    pub filter: FilterOpts,
    /// Fraction of users assigned to the training side
    #[arg(long, default_value_t = 0.9)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "train.jsonl")]
    pub out_train: PathBuf,
    #[arg(long, default_value = "test.jsonl")]
    pub out_test: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Raw event log or session file, per --format
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = TrainFormat::Sessions)]
    pub format: TrainFormat,
    #[command(flatten)]
    pub filter: FilterOpts,
    /// Fraction of users trained on when ingesting raw events
    #[arg(long, default_value_t = 0.9)]
    pub train_fraction: f64,
    /// Chain order (state length)
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Mixture component orders, e.g. `1,2,3`; defaults to 1..=k
    #[arg(long, value_delimiter = ',')]
    pub mixture: Option<Vec<usize>>,
    /// Add exponentially decaying fractional counts for skipped positions
    #[arg(long)]
    pub skip: bool,
    /// Blend rows of positionwise-similar states
    #[arg(long)]
    pub cluster: bool,
    /// Key rows by the unordered bag of recent items
    #[arg(long)]
    pub unordered: bool,
    /// Profit CSV (`item,reward`) baked into the model's catalog
    #[arg(long)]
    pub profit: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Trained model file
    pub model: PathBuf,
    /// Profit CSV overriding the model's rewards
    #[arg(long)]
    pub profit: Option<PathBuf>,
    /// Recommendation acceptance boost (> 1)
    #[arg(long, default_value_t = 1.5)]
    pub alpha: f64,
    /// Discount factor
    #[arg(long, default_value_t = 0.95)]
    pub gamma: f64,
    /// Pseudo-count weight of the initialized rows under online updates
    #[arg(long, default_value_t = 10.0)]
    pub prior_strength: f64,
    /// Policy-evaluation convergence threshold
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    /// Improvement-round budget
    #[arg(long, default_value_t = 100)]
    pub max_iterations: usize,
    /// Damp state values by estimated session-end probabilities
    #[arg(long)]
    pub end_state: bool,
    /// Q-list length stored per state in the policy file
    #[arg(long, default_value_t = 10)]
    pub top_m: usize,
    /// Treat non-convergence as a hard error
    #[arg(long)]
    pub strict: bool,
    #[arg(long, default_value = "policy.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Trained model file
    pub model: PathBuf,
    /// Test session file (JSONL)
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_enum, default_value_t = RankerKind::Mc)]
    pub ranker: RankerKind,
    /// Solved policy file (required for --ranker mdp)
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Metrics to print: rc, ed
    #[arg(long, value_delimiter = ',', default_values_t = vec![String::from("rc"), String::from("ed")])]
    pub metrics: Vec<String>,
    /// RC list lengths
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 3, 5, 10])]
    pub m: Vec<usize>,
    /// ED half-life
    #[arg(long, default_value_t = 5.0)]
    pub half_life: f64,
    /// Also write the report as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    /// Trained model file
    pub model: PathBuf,
    /// Comma-separated item history, oldest first
    #[arg(long, value_delimiter = ',', default_value = "")]
    pub history: Vec<String>,
    /// List length
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    #[arg(long, value_enum, default_value_t = RankerKind::Mc)]
    pub ranker: RankerKind,
    /// Solved policy file (required for --ranker mdp)
    #[arg(long)]
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Ground-truth behavior file (JSON)
    #[arg(long)]
    pub ground_truth: PathBuf,
    /// Policies to compare: mdp, myopic, mc
    #[arg(long, value_delimiter = ',', default_values_t = vec![String::from("mdp"), String::from("myopic")])]
    pub policies: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    pub episodes: usize,
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    /// Simulated users in the training corpus
    #[arg(long, default_value_t = 2000)]
    pub users: usize,
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,
    /// Chain order; defaults to the ground truth's order
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub skip: bool,
    #[arg(long)]
    pub cluster: bool,
    /// Occurrence filter for the generated corpus
    #[arg(long, default_value_t = 1)]
    pub min_item_count: usize,
    #[arg(long, default_value_t = 1.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.95)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iterations: usize,
    #[arg(long)]
    pub strict: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the comparison as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Dispatches a parsed command; returns the process exit code for
/// successful runs (0, or 3 for a soft non-convergence warning).
pub fn run(command: &Command) -> Result<i32> {
    match command {
        Command::Ingest(args) => cmd_ingest(args).map(|_| 0),
        Command::Train(args) => cmd_train(args).map(|_| 0),
        Command::Solve(args) => cmd_solve(args),
        Command::Evaluate(args) => cmd_evaluate(args).map(|_| 0),
        Command::Recommend(args) => cmd_recommend(args).map(|_| 0),
        Command::Simulate(args) => cmd_simulate(args),
    }
}

fn gap_seconds(hours: f64) -> Result<i64> {
    let secs = (hours * 3600.0).round();
    if !(secs > 0.0) {
        return Err(Error::InvalidConfig("session gap must be positive".into()));
    }
    Ok(secs as i64)
}

fn ingest_pipeline(
    input: &PathBuf,
    format: EventFormat,
    filter: &FilterOpts,
) -> Result<(ItemCatalog, Vec<ingest::Session>)> {
    let events = ingest::load_events(input, format)?;
    let raw = if filter.sessionize {
        ingest::sessionize(&events, gap_seconds(filter.session_gap_hours)?)
    } else {
        ingest::user_sequences(&events)
    };
    let mut catalog = ItemCatalog::new();
    let sessions = ingest::intern_sequences(&raw, &mut catalog);
    let kept = ingest::filter(sessions, filter.min_item_count.max(1), filter.min_seq_len.max(2))?;
    Ok((catalog, kept))
}

fn corpus_stats(set: &SessionSet) -> String {
    let items: BTreeSet<_> = set
        .sequences
        .iter()
        .flat_map(|s| s.items.iter().copied())
        .collect();
    let transitions: usize = set
        .sequences
        .iter()
        .map(|s| s.items.len().saturating_sub(1))
        .sum();
    format!(
        "items {}  users {}  sequences {}  transitions {}",
        items.len(),
        set.user_count(),
        set.len(),
        transitions
    )
}

pub fn cmd_ingest(args: &IngestArgs) -> Result<()> {
    let format = match args.format {
        RawFormat::Csv => EventFormat::Csv,
        RawFormat::Jsonl => EventFormat::Jsonl,
    };
    let (catalog, kept) = ingest_pipeline(&args.input, format, &args.filter)?;
    let (train, test) = ingest::split(kept, args.train_fraction, args.seed)?;
    ingest::write_sessions(&args.out_train, &train, &catalog)?;
    ingest::write_sessions(&args.out_test, &test, &catalog)?;
    println!("train: {}", corpus_stats(&train));
    println!("test:  {}", corpus_stats(&test));
    println!(
        "wrote {} and {}",
        args.out_train.display(),
        args.out_test.display()
    );
    Ok(())
}

fn model_config(args: &TrainArgs) -> ModelConfig {
    let mut config = ModelConfig::new(args.k)
        .with_skipping(args.skip)
        .with_clustering(args.cluster)
        .with_unordered(args.unordered);
    if let Some(orders) = &args.mixture {
        config = config.with_orders(orders.clone());
    }
    config
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let (mut catalog, train) = match args.format {
        TrainFormat::Sessions => {
            let mut catalog = ItemCatalog::new();
            let set = ingest::read_sessions(&args.input, &mut catalog, SplitTag::Train)?;
            (catalog, set)
        }
        TrainFormat::Csv | TrainFormat::Jsonl => {
            let format = if args.format == TrainFormat::Csv {
                EventFormat::Csv
            } else {
                EventFormat::Jsonl
            };
            let (catalog, kept) = ingest_pipeline(&args.input, format, &args.filter)?;
            let (train, _test) = ingest::split(kept, args.train_fraction, args.seed)?;
            println!(
                "ingested raw events; training on the {:.0}% train side (seed {})",
                args.train_fraction * 100.0,
                args.seed
            );
            (catalog, train)
        }
    };
    if let Some(profit) = &args.profit {
        let assigned = catalog.load_rewards_csv(profit)?;
        println!("assigned rewards to {assigned} items from {}", profit.display());
    }
    let config = model_config(args);
    config.validate()?;
    let label = config.label();
    let model = mc::build(&train, catalog, config)?;
    println!("{label}: {}", corpus_stats(&train));
    for component in model.components() {
        println!("  order {}: {} states", component.order(), component.len());
    }
    persist::save_model(&args.out, &model)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn cmd_solve(args: &SolveArgs) -> Result<i32> {
    let mut model = persist::load_model(&args.model)?;
    if let Some(profit) = &args.profit {
        let assigned = model.catalog_mut().load_rewards_csv(profit)?;
        println!("assigned rewards to {assigned} items from {}", profit.display());
    }
    let params = MdpParams {
        alpha: args.alpha,
        gamma: args.gamma,
        prior_strength: args.prior_strength,
        end_state: args.end_state,
    };
    if args.tolerance <= 0.0 || args.max_iterations == 0 {
        return Err(Error::InvalidConfig(
            "tolerance must be positive and max-iterations at least 1".into(),
        ));
    }
    let mdp = MdpModel::from_model(model, params)?;
    let policy = mdp.solve(args.tolerance, args.max_iterations);
    println!(
        "policy iteration: {} states, {} rounds, converged: {}",
        mdp.states().len(),
        policy.improvement_rounds,
        policy.converged
    );
    for (round, residual) in policy.eval_residuals.iter().enumerate() {
        println!("  round {}: residual {residual:.3e}", round + 1);
    }
    persist::save_policy(&args.out, &mdp, &policy, args.tolerance, args.top_m)?;
    println!("wrote {}", args.out.display());
    if !policy.converged {
        eprintln!("warning: policy not stable after {} rounds", args.max_iterations);
        if args.strict {
            return Err(Error::NonConvergence);
        }
        return Ok(EXIT_NONCONVERGED);
    }
    Ok(0)
}

/// Loads the model plus (for the MDP ranker) the policy artifact, wiring
/// the stored rewards and parameters back into an in-memory MDP.
fn build_mdp_for_serving(
    model_path: &PathBuf,
    policy_path: Option<&PathBuf>,
) -> Result<(crate::mc::MixtureModel, Option<(MdpModel, crate::mdp::Policy)>)> {
    let mut model = persist::load_model(model_path)?;
    let Some(policy_path) = policy_path else {
        return Ok((model, None));
    };
    let artifact = persist::load_policy(policy_path)?;
    if artifact.k != model.config().k {
        return Err(Error::BadArtifact {
            path: policy_path.clone(),
            msg: format!(
                "policy order {} does not match model order {}",
                artifact.k,
                model.config().k
            ),
        });
    }
    for id in artifact.catalog.ids() {
        let key = artifact.catalog.key_of(id);
        if let Some(model_id) = model.catalog().id_of(key) {
            model.catalog_mut().set_reward(model_id, artifact.catalog.reward(id));
        }
    }
    let mdp = MdpModel::from_model(model.clone(), artifact.params)?;
    Ok((model, Some((mdp, artifact.policy))))
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    for metric in &args.metrics {
        if metric != "rc" && metric != "ed" {
            return Err(Error::InvalidConfig(format!("unknown metric `{metric}`")));
        }
    }
    if args.ranker == RankerKind::Mdp && args.policy.is_none() {
        return Err(Error::InvalidConfig("--ranker mdp requires --policy".into()));
    }
    let (model, solved) = build_mdp_for_serving(&args.model, args.policy.as_ref())?;
    let mut catalog = model.catalog().clone();
    let test = ingest::read_sessions(&args.test, &mut catalog, SplitTag::Test)?;
    let k = model.config().k;

    let mdp_ranker;
    let ranker: &dyn Ranker = match (args.ranker, &solved) {
        (RankerKind::Mc, _) => &model,
        (RankerKind::Mdp, Some((mdp, policy))) => {
            mdp_ranker = MdpRanker { mdp, policy };
            &mdp_ranker
        }
        (RankerKind::Mdp, None) => unreachable!("checked above"),
    };
    let report = eval::evaluate(ranker, &test, k, &args.m, args.half_life)?;

    println!("cases: {}", report.case_count);
    if args.metrics.iter().any(|m| m == "rc") {
        for (&m, &score) in &report.rc_at_m {
            println!("RC@{m}: {score:.4}");
        }
    }
    if args.metrics.iter().any(|m| m == "ed") {
        println!("ED(hl={}): {:.4}", report.half_life, report.ed_score);
    }
    if let Some(out) = &args.out {
        let name = match args.ranker {
            RankerKind::Mc => "mc",
            RankerKind::Mdp => "mdp",
        };
        persist::save_report(out, name, &report)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

pub fn cmd_recommend(args: &RecommendArgs) -> Result<()> {
    if args.m < 1 {
        return Err(Error::InvalidConfig("list length must be at least 1".into()));
    }
    if args.ranker == RankerKind::Mdp && args.policy.is_none() {
        return Err(Error::InvalidConfig("--ranker mdp requires --policy".into()));
    }
    let (model, solved) = build_mdp_for_serving(&args.model, args.policy.as_ref())?;
    let mut history = Vec::new();
    for key in args.history.iter().filter(|k| !k.is_empty()) {
        match model.catalog().id_of(key) {
            Some(id) => history.push(id),
            None => eprintln!("warning: unknown item `{key}` skipped"),
        }
    }

    let scored: Vec<(crate::domain::ItemId, f64, &str)> = match (args.ranker, &solved) {
        (RankerKind::Mdp, Some((mdp, policy))) => {
            let state = mdp.context_state(&history);
            match mdp.q_row(&state, &policy.values) {
                Ok(q) => {
                    let ranked = rank_row(&q);
                    ranked
                        .into_iter()
                        .map(|item| {
                            let value = q.iter().find(|&&(a, _)| a == item).unwrap().1;
                            (item, value, "Q")
                        })
                        .collect()
                }
                Err(_) => {
                    eprintln!("note: unencountered state, ranking by the predictive model");
                    scored_predictions(&model, &history)
                }
            }
        }
        _ => scored_predictions(&model, &history),
    };
    for (item, score, kind) in scored.into_iter().take(args.m) {
        println!("{}\t{kind}={score:.6}", model.catalog().key_of(item));
    }
    Ok(())
}

fn scored_predictions<'a>(
    model: &crate::mc::MixtureModel,
    history: &[crate::domain::ItemId],
) -> Vec<(crate::domain::ItemId, f64, &'a str)> {
    let row = model.predict(history);
    rank_row(&row)
        .into_iter()
        .map(|item| {
            let p = crate::mc::row_prob(&row, item);
            (item, p, "p")
        })
        .collect()
}

#[derive(serde::Serialize)]
struct SimulationDoc<'a> {
    format: &'a str,
    version: u32,
    label: String,
    episodes: usize,
    steps: usize,
    seed: u64,
    stats: &'a [sim::PolicyStats],
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    let gt = GroundTruth::load(&args.ground_truth)?;
    let k = args.k.unwrap_or_else(|| gt.order());
    let corpus = sim::generate_corpus(&gt, args.users, args.max_len, stream_seed(args.seed, "corpus"));
    let kept = ingest::filter(corpus.sequences, args.min_item_count.max(1), 2)?;
    let train = SessionSet::new(kept, SplitTag::Train);

    let config = ModelConfig::new(k)
        .with_skipping(args.skip)
        .with_clustering(args.cluster);
    config.validate()?;
    let label = config.label();
    let model = mc::build(&train, gt.catalog().clone(), config)?;
    println!("{label} trained: {}", corpus_stats(&train));

    let params = MdpParams {
        alpha: args.alpha,
        gamma: args.gamma,
        ..Default::default()
    };
    let mdp = MdpModel::from_model(model.clone(), params)?;
    let policy = mdp.solve(args.tolerance, args.max_iterations);
    let myopic_mdp = MdpModel::from_model(model.clone(), MdpParams { gamma: 0.0, ..params })?;
    let myopic_policy = myopic_mdp.solve(args.tolerance, args.max_iterations);
    let converged = policy.converged && myopic_policy.converged;
    println!(
        "solved: mdp {} rounds, myopic {} rounds",
        policy.improvement_rounds, myopic_policy.improvement_rounds
    );

    let mdp_ranker = MdpRanker { mdp: &mdp, policy: &policy };
    let myopic_ranker = MdpRanker { mdp: &myopic_mdp, policy: &myopic_policy };
    let mut pairs: Vec<(String, &dyn Ranker)> = Vec::new();
    for name in &args.policies {
        match name.as_str() {
            "mdp" => pairs.push((name.clone(), &mdp_ranker)),
            "myopic" => pairs.push((name.clone(), &myopic_ranker)),
            "mc" => pairs.push((name.clone(), &model)),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown policy `{other}` (expected mdp, myopic or mc)"
                )))
            }
        }
    }
    let stats = sim::compare_policies(
        &gt,
        &pairs,
        args.episodes,
        args.steps,
        args.gamma,
        stream_seed(args.seed, "compare"),
    );
    print!("{}", sim::comparison_table(&stats));
    if let Some(out) = &args.out {
        let doc = SimulationDoc {
            format: "seqrec-simulation",
            version: persist::FORMAT_VERSION,
            label,
            episodes: args.episodes,
            steps: args.steps,
            seed: args.seed,
            stats: &stats,
        };
        let text = serde_json::to_string_pretty(&doc)?;
        std::fs::write(out, text + "\n").map_err(|e| Error::io(out, e))?;
        println!("wrote {}", out.display());
    }
    if !converged {
        eprintln!("warning: a policy did not stabilize within the iteration budget");
        if args.strict {
            return Err(Error::NonConvergence);
        }
        return Ok(EXIT_NONCONVERGED);
    }
    Ok(0)
}
