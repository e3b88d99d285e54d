use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use hybrid_avoid::harness::{
    aggregate_and_emit, directional_checks, gradcheck_suite, output_dir, run_episode, run_evaluation, Config,
    ControllerSpec, EpisodeOptions, Networks, Pipeline, OUTPUT_DIR_VAR,
};
use hybrid_avoid::record::EpisodeRecord;

/// Hybrid RL / contingency obstacle avoidance on a simulated course.
#[derive(Parser)]
#[command(name = "hybrid-avoid", version)]
struct Cli {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory. Overrides the environment variable.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Rebuild artifacts even when cached ones match the configuration.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Gate {
    Policy,
    Straight,
    Both,
}

impl Gate {
    fn variants(self) -> &'static [bool] {
        match self {
            Gate::Policy => &[false],
            Gate::Straight => &[true],
            Gate::Both => &[false, true],
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render RGB / depth training pairs.
    CollectDepthData,
    /// Train the depth network and report validation metrics.
    TrainDepth,
    /// Train the avoidance policy with DQN.
    TrainPolicy,
    /// Log labeled frames for the collision networks.
    CollectCollisionData {
        #[arg(long, value_enum, default_value = "both")]
        gate: Gate,
    },
    /// Train the collision networks and report validation metrics.
    TrainCollision {
        #[arg(long, value_enum, default_value = "both")]
        gate: Gate,
    },
    /// Run seeded evaluation episodes for one controller or `all`.
    Evaluate {
        #[arg(long, default_value = "all")]
        controller: String,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-run a recorded episode and compare it step for step.
    Replay {
        #[arg(long)]
        record: PathBuf,
    },
    /// Finite-difference gradient checks on every network family.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn progress(msg: &str) {
    eprintln!("{msg}");
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn verdict(name: &str, ok: bool, detail: &str) -> bool {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn run(cli: Cli) -> Result<bool> {
    let config = match &cli.config {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Config::default(),
    };
    let out = cli.out.clone().unwrap_or_else(output_dir);
    let pipe = Pipeline { config: &config, out: out.clone(), force: cli.force, progress: &progress };
    match cli.command {
        Command::Config => {
            print!("{}", config.to_toml()?);
            Ok(true)
        }
        Command::CollectDepthData => {
            let ds = pipe.depth_data()?;
            println!("{} depth pairs in {}", ds.len(), out.join(&config.paths.depth_data).display());
            Ok(true)
        }
        Command::TrainDepth => {
            let (net, log) = pipe.depth_net()?;
            let m = pipe.depth_validation(&net)?;
            let dir = out.join(&config.paths.depth_checkpoint).with_file_name("validation.json");
            write_json(&dir, &m)?;
            println!("validation mae {:.4} mse {:.4} rmsle {:.4} huber {:.4}", m.mae.mean, m.mse.mean, m.rmsle.mean, m.huber.mean);
            let mut ok = verdict("depth huber", m.huber.mean <= 0.06, &format!("{:.4} (limit 0.06)", m.huber.mean));
            if let Some(log) = log {
                let first: Vec<f64> = log.epochs.iter().take(5).map(|e| e.val_huber).collect();
                let dec = first.len() == 5 && first.windows(2).all(|w| w[1] < w[0]);
                ok &= verdict("depth early epochs decreasing", dec, &format!("{first:.4?}"));
            }
            Ok(ok)
        }
        Command::TrainPolicy => {
            let (_, log) = pipe.policy()?;
            if let Some(log) = log {
                let n = log.episodes.len();
                let done = log.episodes.iter().filter(|e| e.outcome == hybrid_avoid::world::Outcome::Completed).count();
                println!("{n} training episodes, {done} completed, {} updates", log.updates);
                if let Some(at) = log.selected_step {
                    println!("kept parameters from step {at}");
                }
            }
            Ok(true)
        }
        Command::CollectCollisionData { gate } => {
            for &straight in gate.variants() {
                let ds = pipe.collision_data(straight)?;
                println!("{}: {} frames, {} positive", ds.provenance, ds.samples.len(), ds.positives());
            }
            Ok(true)
        }
        Command::TrainCollision { gate } => {
            let mut ok = true;
            for &straight in gate.variants() {
                let (_, s) = pipe.collision_net(straight)?;
                let v = &s.validation;
                let name = if straight { "straight-line collision net" } else { "policy collision net" };
                println!(
                    "{name}: {} frames ({} positive), accuracy {:.3} precision {:.3} recall {:.3} f1 {:.3}",
                    s.frames, s.positives, v.accuracy, v.precision, v.recall, v.f1
                );
                if let Some(at) = s.selected_step {
                    println!("kept parameters from step {at}");
                }
                ok &= verdict(&format!("{name} accuracy"), v.accuracy >= 0.90, &format!("{:.3} (limit 0.90)", v.accuracy));
                ok &= verdict(
                    &format!("{name} frames"),
                    s.frames >= config.collision.min_frames,
                    &format!("{} (minimum {})", s.frames, config.collision.min_frames),
                );
            }
            Ok(ok)
        }
        Command::Evaluate { controller, episodes, seed } => {
            let specs: Vec<ControllerSpec> = if controller == "all" {
                ControllerSpec::ALL.to_vec()
            } else {
                controller.split(',').map(str::parse).collect::<hybrid_avoid::Result<_>>()?
            };
            let n = episodes.unwrap_or(config.evaluation.episodes);
            let base = seed.unwrap_or(config.evaluation.base_seed);
            let (mut reports, mut eps, mut recs) = (Vec::new(), Vec::new(), Vec::new());
            for spec in &specs {
                let nets = Networks::load_for(*spec, &config, &out)?;
                progress(&format!("evaluating {spec} on {n} episodes"));
                let ev = run_evaluation(*spec, n, base, &config, &nets)?;
                let r = &ev.report;
                println!(
                    "{spec}: completed {:.3} collision {:.3} out-of-bounds {:.3} timeout {:.3} mean length {}",
                    r.completion_rate,
                    r.collision_rate,
                    r.out_of_bounds_rate,
                    r.timeout_rate,
                    r.mean_completed_length.map_or("--".into(), |m| format!("{m:.1}"))
                );
                reports.push(ev.report);
                eps.push(ev.episodes);
                recs.push(ev.records);
            }
            let dir = out.join("evaluation");
            aggregate_and_emit(&dir, &reports, &eps, &recs)?;
            println!("results in {}", dir.display());
            let needed = [ControllerSpec::HybridExpert, ControllerSpec::RlOnly, ControllerSpec::ExpertOnly];
            if needed.iter().all(|c| specs.contains(c)) {
                let checks = directional_checks(&reports, 2.0)?;
                write_json(&dir.join("ordering.json"), &checks)?;
                let mut ok = true;
                for c in &checks {
                    ok &= verdict(&c.name, c.passed, &c.detail);
                }
                return Ok(ok);
            }
            Ok(true)
        }
        Command::Replay { record } => {
            let text = fs::read_to_string(&record).with_context(|| format!("reading {}", record.display()))?;
            let rec = EpisodeRecord::from_json(&text)?;
            let spec: ControllerSpec = rec.controller.parse()?;
            let nets = Networks::load_for(spec, &config, &out)?;
            let again = run_episode(spec, rec.seed, &config, &nets, EpisodeOptions::default())?;
            if again.course != rec.course {
                bail!("record was made under a different course configuration");
            }
            let first = rec.steps.iter().zip(&again.steps).position(|(a, b)| a != b);
            let same = again == rec;
            println!("{spec} seed {}: {} after {} steps", rec.seed, again.outcome.label(), again.step_count);
            let detail = match first {
                Some(k) => format!("first divergence at step {}", rec.steps[k].step),
                None if same => format!("hash {}", rec.hash()?),
                None => format!("{} recorded steps vs {} replayed", rec.steps.len(), again.steps.len()),
            };
            Ok(verdict("replay identical", same, &detail))
        }
        Command::Gradcheck { seed } => {
            let entries = gradcheck_suite(seed)?;
            let mut ok = true;
            for e in &entries {
                ok &= verdict(
                    &e.network,
                    e.passed(),
                    &format!(
                        "max relative error {:.2e} (limit {:.0e}), {} coordinates, {} skipped at kinks",
                        e.max_relative_error, e.tolerance, e.checked, e.skipped_kinks
                    ),
                );
            }
            write_json(&out.join("gradcheck.json"), &entries)?;
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            if std::env::var_os(OUTPUT_DIR_VAR).is_none() {
                eprintln!("(outputs default to ./out; set {OUTPUT_DIR_VAR} to change)");
            }
            ExitCode::FAILURE
        }
    }
}
