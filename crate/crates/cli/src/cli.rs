use std::ffi::OsString;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use reward_lens::counterfactual::{reward_timeseries, timeseries_csv, Scenario};
use reward_lens::gridworld::{generate_dataset, read_dataset, write_dataset, EnvKind, EnvSpec, Transition};
use reward_lens::interpret::{render_heatmap, HeatmapFormat, OcclusionConfig, OcclusionMetric};
use reward_lens::learning::{make_quirk_oracle, make_score_oracle, save_checkpoint, train_reward_model, TrainConfig};
use reward_lens::planning::{
    evaluate_policy, evaluate_random_policy, transfer_experiment, value_iteration, PlanConfig, RewardSource,
    StateSpace, TabularPolicy, TransferConfig, DEFAULT_GAMMA,
};
use reward_lens::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::model::{self, GridPair, LoadedModel, OcclusionOverrides, SaliencyResponse};
use crate::paths::resolve;
use crate::service::{self, AppState};

#[derive(Debug, Parser)]
#[command(name = "reward-lens", version, about = "Train and audit learned reward models on gridworlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Roll expert episodes and write transitions as JSON lines.
    GenData {
        #[arg(long, value_parser = parse_env)]
        env: EnvKind,
        #[arg(long, default_value_t = 2000)]
        episodes: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = reward_lens::gridworld::DEFAULT_EPISODE_CAP)]
        cap: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a reward model to a transition dataset.
    Train(TrainArgs),
    /// Write a hand-built oracle network as a checkpoint.
    Oracle {
        #[arg(long, value_enum)]
        kind: OracleKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Saliency maps for one transition.
    #[command(subcommand)]
    Saliency(SaliencyCommand),
    /// Evaluate a counterfactual scenario file.
    Counterfactual {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Predicted and true reward along one expert episode, as CSV.
    Timeseries {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_parser = parse_env)]
        env: EnvKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plan a greedy policy by value iteration.
    Plan {
        #[arg(long, value_parser = parse_env)]
        env: EnvKind,
        /// Reward checkpoint; omit with --true-reward.
        #[arg(long, required_unless_present = "true_reward", conflicts_with = "true_reward")]
        model: Option<PathBuf>,
        #[arg(long)]
        true_reward: bool,
        /// Multiply every reward by this factor before planning.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean true return of a planned policy, or of random actions.
    Eval {
        #[arg(long, required_unless_present = "random", conflicts_with = "random")]
        policy: Option<PathBuf>,
        /// Uniformly random actions; needs --env.
        #[arg(long, requires = "env")]
        random: bool,
        #[arg(long, value_parser = parse_env)]
        env: Option<EnvKind>,
        #[arg(long, default_value_t = 1000)]
        episodes: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare a model's outputs and planned returns across two variants.
    Transfer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_parser = parse_env)]
        train_env: EnvKind,
        #[arg(long, value_parser = parse_env)]
        eval_env: EnvKind,
        #[arg(long, default_value_t = 200)]
        stat_episodes: u64,
        #[arg(long, default_value_t = 1000)]
        eval_episodes: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the JSON API used by the audit UI.
    Serve {
        /// Checkpoint to load at startup.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        bind: IpAddr,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON training config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the full training report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OracleKind {
    Quirk,
    Score,
}

#[derive(Debug, Subcommand)]
enum SaliencyCommand {
    /// Input-gradient magnitudes.
    Grad {
        #[command(flatten)]
        io: SaliencyIo,
        /// Keep gradient signs (heatmap files still show magnitudes).
        #[arg(long)]
        signed: bool,
    },
    /// Gaussian-blur occlusion.
    Occlude {
        #[command(flatten)]
        io: SaliencyIo,
        #[arg(long)]
        sigma_blur: Option<f64>,
        #[arg(long)]
        sigma_mask: Option<f64>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long, value_enum)]
        metric: Option<MetricArg>,
    },
}

#[derive(Debug, Args)]
struct SaliencyIo {
    #[arg(long)]
    model: PathBuf,
    /// JSON transition with `s` and `sp` grids.
    #[arg(long)]
    transition: PathBuf,
    /// Writes `<prefix>_s.pgm`, `<prefix>_sprime.pgm` and `<prefix>.json`.
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    Absolute,
    Squared,
}

fn parse_env(s: &str) -> std::result::Result<EnvKind, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = EnvKind::ALL.iter().map(|k| k.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 for usage errors, 2 for bad data.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("reward-lens: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_usage() {
        1
    } else {
        2
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        location: path.display().to_string(),
        message: e.to_string(),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
}

fn load_model(path: &Path) -> Result<LoadedModel> {
    LoadedModel::load(&resolve(path))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            env,
            episodes,
            seed,
            cap,
            out,
        } => {
            let data = generate_dataset(EnvSpec::with_cap(env, cap)?, episodes, seed)?;
            write_dataset(&resolve(&out), &data)?;
            let positives = data.iter().filter(|t| t.reward > 0.5).count();
            eprintln!("wrote {} transitions ({positives} rewarded) to {}", data.len(), out.display());
            Ok(())
        }
        Command::Train(args) => train(args),
        Command::Oracle { kind, out } => {
            let net = match kind {
                OracleKind::Quirk => make_quirk_oracle(),
                OracleKind::Score => make_score_oracle(),
            };
            save_checkpoint(&net, &resolve(&out))?;
            println!("{}", model::checkpoint_id(&net));
            Ok(())
        }
        Command::Saliency(cmd) => saliency(cmd),
        Command::Counterfactual { model, scenario } => {
            let m = load_model(&model)?;
            let sc: Scenario = read_json(&resolve(&scenario))?;
            print_json(&model::scenario(&m, &sc)?);
            Ok(())
        }
        Command::Timeseries { model, env, seed, out } => {
            let m = load_model(&model)?;
            let csv = timeseries_csv(&reward_timeseries(&m.net, EnvSpec::new(env), seed)?);
            match out {
                Some(path) => write_text(&resolve(&path), &csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Plan {
            env,
            model,
            true_reward,
            scale,
            gamma,
            out,
        } => {
            let loaded = model.as_deref().map(load_model).transpose()?;
            let source = match (&loaded, true_reward) {
                (Some(m), false) => RewardSource::model(&m.net, m.checkpoint.clone()),
                _ => RewardSource::True,
            };
            let source = if scale == 1.0 { source } else { source.scaled(scale) };
            let space = StateSpace::enumerate(EnvSpec::new(env));
            let cfg = PlanConfig {
                gamma,
                ..PlanConfig::default()
            };
            let policy = value_iteration(&space, &source, &cfg)?;
            write_text(&resolve(&out), &policy.to_json())?;
            print_json(&serde_json::json!({
                "env": env,
                "reward_source": policy.reward_source,
                "states": space.len(),
                "sweeps": policy.sweeps,
                "bellman_residual": policy.bellman_residual,
            }));
            Ok(())
        }
        Command::Eval {
            policy,
            random,
            env,
            episodes,
            seed,
        } => {
            let stats = if random {
                let env = env.ok_or_else(|| Error::Usage("--random needs --env".into()))?;
                evaluate_random_policy(EnvSpec::new(env), episodes, seed)?
            } else {
                let path = resolve(policy.as_deref().expect("clap requires --policy"));
                let text = std::fs::read_to_string(&path).map_err(|source| Error::Io {
                    path: path.clone(),
                    source,
                })?;
                let policy = TabularPolicy::from_json(&text).map_err(|e| match e {
                    Error::Format { message, .. } => Error::Format {
                        location: path.display().to_string(),
                        message,
                    },
                    other => other,
                })?;
                let spec = EnvSpec::new(env.unwrap_or(policy.env));
                evaluate_policy(&policy, spec, episodes, seed)?
            };
            print_json(&stats);
            Ok(())
        }
        Command::Transfer {
            model,
            train_env,
            eval_env,
            stat_episodes,
            eval_episodes,
            seed,
            out,
        } => {
            let m = load_model(&model)?;
            let cfg = TransferConfig {
                stat_episodes,
                eval_episodes,
                seed,
                plan: PlanConfig::default(),
            };
            let report =
                transfer_experiment(&m.net, &m.checkpoint, EnvSpec::new(train_env), EnvSpec::new(eval_env), &cfg)?;
            if let Some(path) = out {
                write_text(&resolve(&path), &serde_json::to_string_pretty(&report).expect("report serializes"))?;
            }
            print_json(&report);
            Ok(())
        }
        Command::Serve { model, port, bind } => {
            let state = match model {
                Some(path) => AppState::with_model(load_model(&path)?),
                None => AppState::default(),
            };
            let runtime = tokio::runtime::Runtime::new().map_err(|source| Error::Io {
                path: PathBuf::from("<tokio runtime>"),
                source,
            })?;
            let addr = SocketAddr::new(bind, port);
            runtime.block_on(service::serve(state, addr)).map_err(|source| Error::Io {
                path: PathBuf::from(addr.to_string()),
                source,
            })
        }
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = match &args.config {
        Some(path) => read_json(&resolve(path))?,
        None => TrainConfig::default(),
    };
    if let Some(h) = args.hidden {
        cfg.hidden = h;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = args.lr {
        cfg.learning_rate = lr;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let data = read_dataset(&resolve(&args.data))?;
    let (net, report) = train_reward_model(&data, &cfg)?;
    save_checkpoint(&net, &resolve(&args.out))?;
    if let Some(path) = &args.report {
        write_text(&resolve(path), &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    print_json(&serde_json::json!({
        "checkpoint": model::checkpoint_id(&net),
        "validation_mse": report.validation_mse,
        "validation_accuracy": report.validation_accuracy,
        "final_train_mse": report.epoch_train_mse.last(),
    }));
    Ok(())
}

fn saliency(cmd: SaliencyCommand) -> Result<()> {
    let (io, compute): (SaliencyIo, Box<dyn Fn(&LoadedModel, &GridPair) -> Result<SaliencyResponse>>) = match cmd {
        SaliencyCommand::Grad { io, signed } => (io, Box::new(move |m, p| model::gradient(m, p, signed))),
        SaliencyCommand::Occlude {
            io,
            sigma_blur,
            sigma_mask,
            stride,
            metric,
        } => {
            let cfg = OcclusionOverrides {
                sigma_blur,
                sigma_mask,
                stride,
                metric: metric.map(|m| match m {
                    MetricArg::Absolute => OcclusionMetric::Absolute,
                    MetricArg::Squared => OcclusionMetric::Squared,
                }),
            }
            .apply(OcclusionConfig::default());
            (io, Box::new(move |m, p| model::occlusion(m, p, &cfg)))
        }
    };
    let m = load_model(&io.model)?;
    let t: Transition = read_json(&resolve(&io.transition))?;
    let out = compute(&m, &GridPair::from(&t))?;
    write_saliency(&resolve(&io.out_prefix), &out)?;
    println!("mass_ratio {}", out.saliency.mass_ratio);
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.file_name().map(OsString::from).unwrap_or_default();
    name.push(suffix);
    prefix.with_file_name(name)
}

fn write_saliency(prefix: &Path, out: &SaliencyResponse) -> Result<()> {
    let abs = |map: &reward_lens::interpret::Heatmap| map.map(|row| row.map(f64::abs));
    render_heatmap(&abs(&out.saliency.map_s), &with_suffix(prefix, "_s.pgm"), HeatmapFormat::Pgm)?;
    render_heatmap(&abs(&out.saliency.map_sprime), &with_suffix(prefix, "_sprime.pgm"), HeatmapFormat::Pgm)?;
    write_text(
        &with_suffix(prefix, ".json"),
        &serde_json::to_string(out).expect("saliency serializes"),
    )
}
