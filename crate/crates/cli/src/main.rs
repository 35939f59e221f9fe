use std::fs;
use std::io::{self, BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hitl_music::agent::{continue_training, RewardError, RewardProvider};
use hitl_music::persist::{load_model, save_model, ModelFile, TrainingSummary};
use hitl_music::rater::{LineRater, SimulatedRater};
use hitl_music::theory::{NoteName, ScaleType};
use hitl_music::track::Degree;
use hitl_music::{compose, export_midi, state_space_size, to_wire, GenConfig, HyperParams, QTable, TrackArray};
use hitl_music_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "hitl-music", version, about = "Rating-driven music composition with tabular Q-learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a Q-table with the simulated rater or ratings piped on stdin.
    Train(TrainArgs),
    /// Write the greedy composition of a model (or of an untrained agent) as MIDI.
    Export(ExportArgs),
    /// Print the exact size of a track state space.
    Space(SpaceArgs),
    /// Show Q-table statistics and configuration of a model file.
    Inspect { model: PathBuf },
    /// Run the HTTP/WebSocket training service.
    Serve(ServeArgs),
}

#[derive(Args, Default)]
struct ConfigFlags {
    #[arg(long)]
    base_note: Option<NoteName>,
    /// major, minor or diminished
    #[arg(long)]
    scale: Option<ScaleType>,
    #[arg(long)]
    track_length: Option<usize>,
    /// Beats per minute
    #[arg(long)]
    tempo: Option<u32>,
    #[arg(long)]
    volume: Option<u8>,
    /// Seed for the initial track (and the agent unless --agent-seed is set)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Default)]
struct AgentFlags {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Steps per episode; defaults to the track length
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    agent_seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigFlags,
    #[command(flatten)]
    agent: AgentFlags,
    /// Continue training this model; config flags are then ignored
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value = "model.hitlrl.json")]
    out: PathBuf,
    #[arg(long, default_value = "training_log.csv")]
    log: PathBuf,
    /// Read one rating (1-10) per line from stdin instead of simulating
    #[arg(long)]
    rate_stdin: bool,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long, conflicts_with_all = ["base_note", "scale", "track_length", "tempo", "volume", "seed"])]
    model: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigFlags,
    #[arg(long, default_value = "track.mid")]
    out: PathBuf,
    /// Also write the track in its JSON wire form
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct SpaceArgs {
    #[arg(long, default_value_t = 7)]
    scale_size: u32,
    #[arg(long, default_value_t = 8)]
    melody_len: u32,
    #[arg(long, default_value_t = 1)]
    rhythm_factor: u32,
    #[arg(long, default_value_t = 1)]
    perc_pitches: u32,
    #[arg(long, default_value_t = 0)]
    perc_slots: u32,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value = "models")]
    models_dir: PathBuf,
    #[arg(long, default_value = "evaluations.jsonl")]
    eval_store: PathBuf,
    /// Save every session here after each completed episode
    #[arg(long)]
    snapshot_dir: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

type CmdResult = Result<(), Failure>;

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn write_file(path: &Path, bytes: &[u8]) -> CmdResult {
    fs::write(path, bytes).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

impl ConfigFlags {
    fn apply(&self, mut config: GenConfig) -> Result<GenConfig, Failure> {
        if let Some(v) = self.base_note {
            config.base_note = v;
        }
        if let Some(v) = self.scale {
            config.scale_type = v;
        }
        if let Some(v) = self.track_length {
            config.track_length = v;
        }
        if let Some(v) = self.tempo {
            config.tempo_bpm = v;
        }
        if let Some(v) = self.volume {
            config.volume = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(config)
    }
}

impl AgentFlags {
    fn apply(&self, mut hp: HyperParams) -> Result<HyperParams, Failure> {
        if let Some(v) = self.alpha {
            hp.alpha = v;
        }
        if let Some(v) = self.gamma {
            hp.gamma = v;
        }
        if let Some(v) = self.epsilon {
            hp.epsilon = v;
        }
        if let Some(v) = self.episodes {
            hp.episodes = v;
        }
        if let Some(v) = self.steps {
            hp.steps_per_episode = v;
        }
        if let Some(v) = self.agent_seed {
            hp.seed = v;
        }
        hp.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(hp)
    }
}

/// Shows each track on stderr before reading its rating from stdin.
struct Prompting<R>(LineRater<R>);

impl<R: BufRead> RewardProvider for Prompting<R> {
    fn rate(&mut self, track: &TrackArray, episode: usize, step: usize) -> Result<u8, RewardError> {
        let notes: Vec<String> = track
            .melody()
            .iter()
            .map(|n| match n.degree {
                Degree::Note(d) => format!("{}:{}", d, n.duration.quarters()),
                Degree::Rest => format!("r:{}", n.duration.quarters()),
            })
            .collect();
        let perc: String = track.percussion().iter().map(|p| p.to_string()).collect();
        eprint!(
            "episode {} step {}  melody [{}]  drums {}  rating> ",
            episode + 1,
            step + 1,
            notes.join(" "),
            perc
        );
        let _ = io::stderr().flush();
        self.0.rate(track, episode, step)
    }
}

fn train(args: TrainArgs) -> CmdResult {
    let (config, hp, q, prior) = match &args.resume {
        Some(path) => {
            let model = load_model(path).map_err(runtime)?;
            let hp = args.agent.apply(model.hyperparams)?;
            (model.config, hp, model.qtable, model.summary)
        }
        None => {
            let config = args.config.apply(GenConfig::default())?;
            let base = HyperParams { seed: config.seed, ..HyperParams::for_config(&config) };
            let hp = args.agent.apply(base)?;
            (config, hp, QTable::new(), TrainingSummary::default())
        }
    };

    let result = if args.rate_stdin {
        let stdin = io::stdin();
        continue_training(&config, &hp, q, &mut Prompting(LineRater::new(stdin.lock())))
    } else {
        continue_training(&config, &hp, q, &mut SimulatedRater)
    };
    let (q, log, failure) = match result {
        Ok((q, log)) => (q, log, None),
        Err(e) => {
            let e = *e;
            (e.q, e.log, Some(e.error))
        }
    };

    for (i, mean) in log.episode_means.iter().enumerate() {
        println!("episode {:>3}  mean rating {mean:.3}", i + 1);
    }
    if let Some(f) = log.exploration_fraction() {
        println!("explored {} of {} steps ({f:.3})", log.explored_count(), log.records.len());
    }

    let model = ModelFile {
        config,
        hyperparams: hp,
        summary: TrainingSummary {
            episodes_completed: prior.episodes_completed + log.episode_means.len() as u64,
            total_steps: prior.total_steps + log.records.len() as u64,
        },
        qtable: q,
    };
    save_model(&args.out, &model).map_err(runtime)?;
    write_file(&args.log, log.to_csv().as_bytes())?;
    println!("wrote {} and {}", args.out.display(), args.log.display());
    match failure {
        None => Ok(()),
        Some(e) => Err(Failure::Runtime(format!(
            "training stopped after {} complete episodes: {e}",
            log.episode_means.len()
        ))),
    }
}

fn export(args: ExportArgs) -> CmdResult {
    let (config, hp, q) = match &args.model {
        Some(path) => {
            let model = load_model(path).map_err(runtime)?;
            (model.config, model.hyperparams, model.qtable)
        }
        None => {
            let config = args.config.apply(GenConfig::default())?;
            let hp = HyperParams { seed: config.seed, ..HyperParams::for_config(&config) };
            (config, hp, QTable::new())
        }
    };
    let track = compose(&config, &hp, &q).map_err(runtime)?;
    write_file(&args.out, export_midi(&track, &config).bytes())?;
    println!("wrote {}", args.out.display());
    if let Some(path) = &args.json {
        let wire = serde_json::to_string_pretty(&to_wire(&track, &config)).map_err(runtime)?;
        write_file(path, wire.as_bytes())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn space(args: SpaceArgs) -> CmdResult {
    let n = state_space_size(
        args.scale_size,
        args.melody_len,
        args.rhythm_factor,
        args.perc_pitches,
        args.perc_slots,
    );
    println!("{n}");
    Ok(())
}

fn inspect(path: &Path) -> CmdResult {
    let model = load_model(path).map_err(runtime)?;
    let stats = model.qtable.stats();
    let c = &model.config;
    let hp = &model.hyperparams;
    println!("model               {}", path.display());
    println!("base_note           {}", c.base_note);
    println!("scale_type          {}", c.scale_type);
    println!("track_length        {}", c.track_length);
    println!("tempo_bpm           {}", c.tempo_bpm);
    println!("volume              {}", c.volume);
    println!("seed                {}", c.seed);
    println!(
        "hyperparams         alpha={} gamma={} epsilon={} episodes={} steps={} seed={}",
        hp.alpha, hp.gamma, hp.epsilon, hp.episodes, hp.steps_per_episode, hp.seed
    );
    println!("episodes_completed  {}", model.summary.episodes_completed);
    println!("total_steps         {}", model.summary.total_steps);
    println!("visited_states      {}", stats.visited_states);
    println!("nonzero_entries     {}", stats.nonzero_entries);
    println!("max_q               {}", stats.max_q);
    println!("min_q               {}", stats.min_q);
    Ok(())
}

fn serve(args: ServeArgs) -> CmdResult {
    let config = ServiceConfig {
        models_dir: args.models_dir,
        evaluations: args.eval_store,
        snapshot_dir: args.snapshot_dir,
    };
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(hitl_music_service::serve(args.addr, config)).map_err(runtime)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Export(a) => export(a),
        Command::Space(a) => space(a),
        Command::Inspect { model } => inspect(&model),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
