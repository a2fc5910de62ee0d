use std::path::PathBuf;

use clap::{ArgAction, ArgGroup, Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "envaware", version, about = "Environment-aware active learning experiments")]
pub struct Cli {
    /// TOML file of option values, keyed by long flag name. A table named
    /// after the subcommand overrides top-level keys.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic task and write its dataset files.
    GenTask(GenTaskArgs),
    /// Run strategies over a grid of budget and time conditions.
    Run(RunArgs),
    /// Run one condition and print a comparison table.
    Compare(CompareArgs),
    /// Learn utility weights from demonstrations.
    TrainIrl(TrainIrlArgs),
    /// Serve the session API.
    Serve(ServeArgs),
    /// Drive a session on a running server.
    Session(SessionArgs),
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "camelCase")]
pub struct GenTaskArgs {
    #[arg(long, env = "ENVAWARE_CONCEPTS")]
    pub concepts: usize,
    /// Feature dimension.
    #[arg(long, env = "ENVAWARE_DIM")]
    pub dim: usize,
    /// Number of discriminative features.
    #[arg(long, env = "ENVAWARE_RELEVANT")]
    pub relevant: usize,
    #[arg(long, env = "ENVAWARE_PHASES")]
    pub phases: usize,
    #[arg(long, env = "ENVAWARE_INSTANCES_PER_PHASE", default_value_t = 40)]
    pub instances_per_phase: usize,
    #[arg(long, env = "ENVAWARE_TEST_PER_PHASE", default_value_t = 10)]
    pub test_per_phase: usize,
    #[arg(long, env = "ENVAWARE_NOISE", default_value_t = 0.2)]
    pub noise: f64,
    #[arg(long, env = "ENVAWARE_SEED")]
    pub seed: u64,
    /// Output directory.
    #[arg(long, env = "ENVAWARE_OUT")]
    pub out: PathBuf,
    /// Write into a non-empty directory.
    #[arg(long)]
    pub force: bool,
}

/// Options shared by `run` and `compare`.
#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ExperimentArgs {
    /// Task directory written by gen-task.
    #[arg(long, env = "ENVAWARE_TASK")]
    pub task: PathBuf,
    #[arg(long, env = "ENVAWARE_CHANGE_PERIOD", default_value_t = 10)]
    pub change_period: u32,
    /// Episodes per strategy and condition.
    #[arg(long, env = "ENVAWARE_SEEDS", default_value_t = 20)]
    pub seeds: usize,
    /// Base seed; episode seeds are split from it.
    #[arg(long, env = "ENVAWARE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Strategy ids, or `all`.
    #[arg(long, env = "ENVAWARE_STRATEGIES", value_delimiter = ',', num_args = 1.., action = ArgAction::Set, default_value = "all")]
    pub strategies: Vec<String>,
    /// Weights file for dt-task-env; uniform weights otherwise.
    #[arg(long, env = "ENVAWARE_WEIGHTS")]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "camelCase")]
pub struct RunArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: ExperimentArgs,
    #[arg(long, env = "ENVAWARE_BUDGETS", value_delimiter = ',', num_args = 1.., action = ArgAction::Set, default_value = "25,500")]
    pub budgets: Vec<u32>,
    #[arg(long, env = "ENVAWARE_TIMES", value_delimiter = ',', num_args = 1.., action = ArgAction::Set, default_value = "40,150")]
    pub times: Vec<u32>,
    /// Output directory.
    #[arg(long, env = "ENVAWARE_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "camelCase")]
pub struct CompareArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: ExperimentArgs,
    #[arg(long, env = "ENVAWARE_BUDGET", default_value_t = 25)]
    pub budget: u32,
    #[arg(long, env = "ENVAWARE_TIME", default_value_t = 40)]
    pub time: u32,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
#[command(group(ArgGroup::new("source").required(true).args(["demos", "synthetic_expert"])))]
#[serde(rename_all = "camelCase")]
pub struct TrainIrlArgs {
    #[arg(long, env = "ENVAWARE_TASK")]
    pub task: PathBuf,
    /// Demonstration files.
    #[arg(long, value_delimiter = ',', num_args = 1.., action = ArgAction::Set)]
    pub demos: Vec<PathBuf>,
    /// Generate demonstrations with the scripted expert first.
    #[arg(long)]
    pub synthetic_expert: bool,
    /// Number of scripted demonstrations.
    #[arg(long, env = "ENVAWARE_EXPERT_DEMOS", default_value_t = 3)]
    pub expert_demos: usize,
    /// Where to write the scripted demonstrations.
    #[arg(long, env = "ENVAWARE_SAVE_DEMOS")]
    pub save_demos: Option<PathBuf>,
    #[arg(long, env = "ENVAWARE_BUDGET", default_value_t = 15)]
    pub budget: u32,
    #[arg(long, env = "ENVAWARE_TIME", default_value_t = 30)]
    pub time: u32,
    #[arg(long, env = "ENVAWARE_CHANGE_PERIOD", default_value_t = 10)]
    pub change_period: u32,
    #[arg(long, env = "ENVAWARE_MAX_ITERS", default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, env = "ENVAWARE_LEARNING_RATE", default_value_t = 0.05)]
    pub learning_rate: f64,
    /// Rollouts per gradient step; default from the trainer.
    #[arg(long, env = "ENVAWARE_ROLLOUTS")]
    pub rollouts: Option<usize>,
    /// Inverse temperature of the rollout policy; default from the trainer.
    #[arg(long, env = "ENVAWARE_TEMPERATURE")]
    pub temperature: Option<f64>,
    #[arg(long, env = "ENVAWARE_VALIDATION_EPISODES")]
    pub validation_episodes: Option<usize>,
    #[arg(long, env = "ENVAWARE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Weights file to write.
    #[arg(long, env = "ENVAWARE_OUT")]
    pub out: PathBuf,
    /// Iteration log; defaults to `<out>.iterations.jsonl`.
    #[arg(long, env = "ENVAWARE_LOG")]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "camelCase")]
pub struct ServeArgs {
    /// Directory of task directories.
    #[arg(long, env = "ENVAWARE_TASKS")]
    pub tasks: PathBuf,
    /// Session store directory.
    #[arg(long, env = "ENVAWARE_STORE")]
    pub store: PathBuf,
    #[arg(long, env = "ENVAWARE_ADDR", default_value = "127.0.0.1:8080")]
    pub addr: String,
}

#[derive(Debug, Args)]
pub struct SessionArgs {
    /// Service root URL.
    #[arg(long, global = true, env = "ENVAWARE_URL", default_value = "http://127.0.0.1:8080")]
    pub url: String,

    #[command(subcommand)]
    pub command: SessionCommand,
}

#[derive(Debug, Subcommand)]
pub enum SessionCommand {
    /// Start a session.
    Create {
        #[arg(long)]
        task: String,
        /// demonstrate, teach or observe.
        #[arg(long, default_value = "demonstrate")]
        mode: String,
        #[arg(long, default_value_t = 15)]
        budget: u32,
        #[arg(long, default_value_t = 30)]
        time: u32,
        #[arg(long, default_value_t = 10)]
        change_period: u32,
        #[arg(long, default_value = "dt-task-env")]
        strategy: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Weights file for the strategy.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        idempotency_key: Option<String>,
    },
    /// Print a session.
    Show { id: String },
    /// Print the candidate actions with their utility preview.
    Candidates { id: String },
    /// Choose the learner's action: NQ, FSQ, LQ:<instance>, DQ:<concept index>.
    Demonstrate {
        id: String,
        #[arg(long)]
        token: u64,
        #[arg(long)]
        action: String,
    },
    /// Answer the pending query.
    #[command(group(ArgGroup::new("answer").required(true).args(["label", "demo", "features"])))]
    Teach {
        id: String,
        #[arg(long)]
        token: u64,
        /// Concept id.
        #[arg(long)]
        label: Option<String>,
        /// Instance id from the current scene.
        #[arg(long)]
        demo: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        features: Option<Vec<usize>>,
    },
    /// Let the strategy and simulated teacher play one turn.
    Observe {
        id: String,
        #[arg(long)]
        token: u64,
    },
    /// Download a finished session's trajectory.
    Export {
        id: String,
        /// Output file; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}
