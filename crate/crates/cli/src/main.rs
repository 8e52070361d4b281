use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use tubeplan::bench::{
    cmd_build_primitives, cmd_compare, cmd_contour_dump, cmd_run, cmd_tube_check, scenario_library, write_batch, BuildConfig, GridSpec,
};
use tubeplan::dynamics::ModelKind;
use tubeplan::scenario::Scenario;
use tubeplan::sos::CheckMode;
use tubeplan::tubes::{Library, VerifierKind};

const EXIT_STUCK: u8 = 2;
const EXIT_BUDGET: u8 = 3;
const EXIT_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(
    name = "tubeplan",
    version,
    about = "Risk-bounded planning with uncertainty tubes and SOS certificates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Underwater,
    GroundVehicle,
}

#[derive(Clone, Copy, ValueEnum)]
enum Verifier {
    Analytical,
    Sampling,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    Outer,
    Cascade,
}

#[derive(clap::Args)]
struct ScenarioArgs {
    /// Built-in scenario name or path to a TOML file.
    #[arg(long, default_value = "underwater_clustered")]
    scenario: String,
    /// Primitive library JSON; built analytically when omitted.
    #[arg(long)]
    library: Option<PathBuf>,
    /// Batch seed; defaults to the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of runs; defaults to the scenario's scene count or 1.
    #[arg(long)]
    runs: Option<usize>,
    /// Override the replan stride.
    #[arg(long)]
    stride: Option<usize>,
    /// Override the mission risk bound.
    #[arg(long)]
    risk: Option<f64>,
    /// Override the certification mode.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

#[derive(Subcommand)]
enum Command {
    /// Build and size a primitive library.
    BuildPrimitives {
        #[arg(long, value_enum, default_value = "underwater")]
        model: Model,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long, default_value_t = 0.001)]
        delta_tube: f64,
        #[arg(long, value_enum, default_value = "analytical")]
        verifier: Verifier,
        /// Monte Carlo samples for the sampling verifier.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Batch of planner runs on a scenario.
    Run {
        #[command(flatten)]
        sc: ScenarioArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Planner against the CC-RRT baseline on paired seeds.
    Compare {
        #[command(flatten)]
        sc: ScenarioArgs,
        #[arg(long)]
        no_baseline: bool,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Risk-contour boundary segments and outer ellipses on a grid.
    ContourDump {
        #[arg(long, default_value = "underwater_clustered")]
        scenario: String,
        /// Scene index for generated obstacles.
        #[arg(long, default_value_t = 0)]
        run: usize,
        /// Contour risk level; defaults to the allocated obstacle risk.
        #[arg(long)]
        delta: Option<f64>,
        /// Grid bounds `xmin,xmax,ymin,ymax`.
        #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = [-1.0, 7.0, -1.0, 6.0])]
        bounds: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        resolution: usize,
        #[arg(long, default_value_t = 0.0)]
        time: f64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Re-simulate a library and report per-step tube containment.
    TubeCheck {
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "underwater")]
        model: Model,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

/// Failure class used for the exit code.
enum Failure {
    Config(anyhow::Error),
    Other(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Other(e.into())
    }
}

fn config<T>(r: Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Config)
}

fn model_kind(m: Model) -> ModelKind {
    match m {
        Model::Underwater => ModelKind::Underwater,
        Model::GroundVehicle => ModelKind::GroundVehicle,
    }
}

fn load_scenario(args: &ScenarioArgs) -> Result<Scenario> {
    let mut sc = match Scenario::builtin(&args.scenario) {
        Some(sc) => sc,
        None => {
            let text = fs::read_to_string(&args.scenario).with_context(|| format!("reading scenario {}", args.scenario))?;
            Scenario::from_toml(&text)?
        }
    };
    if let Some(s) = args.stride {
        sc.planner.stride = s;
    }
    if let Some(r) = args.risk {
        sc.risk.delta = r;
    }
    if let Some(m) = args.mode {
        sc.planner.mode = match m {
            Mode::Full => CheckMode::Full,
            Mode::Outer => CheckMode::Outer,
            Mode::Cascade => CheckMode::Cascade,
        };
    }
    sc.validate()?;
    sc.budget()?;
    Ok(sc)
}

fn load_library(path: &Option<PathBuf>, sc: &Scenario) -> Result<Library> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading library {}", p.display()))?;
            Ok(Library::from_json(&text)?)
        }
        None => Ok(scenario_library(sc)?),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn batch_exit(report: &tubeplan::bench::RunReport) -> u8 {
    let a = &report.aggregate;
    if a.budget_violations > 0 {
        EXIT_BUDGET
    } else if a.planner_stuck > 0 || a.cap_exceeded > 0 || a.errors > 0 {
        EXIT_STUCK
    } else {
        0
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::BuildPrimitives {
            model,
            speed,
            delta_tube,
            verifier,
            samples,
            seed,
            out,
        } => {
            let mut cfg = BuildConfig::for_model(model_kind(model));
            cfg.speed = speed;
            cfg.library.delta_tube = delta_tube;
            cfg.library.samples = samples;
            cfg.library.seed = seed;
            cfg.library.verifier = match verifier {
                Verifier::Analytical => VerifierKind::Analytical,
                Verifier::Sampling => VerifierKind::Sampling,
            };
            let lib = config(cmd_build_primitives(&cfg).map_err(Into::into))?;
            fs::write(&out, lib.to_json()? + "\n")?;
            for p in &lib.primitives {
                println!("{:>2} {:<12} radius {:.4}", p.index, p.label, p.tube.radius);
            }
            Ok(0)
        }
        Command::Run { sc, out } => {
            let scenario = config(load_scenario(&sc))?;
            let lib = config(load_library(&sc.library, &scenario))?;
            let runs = sc.runs.unwrap_or_else(|| scenario.default_runs());
            let batch = cmd_run(&scenario, &lib, runs, sc.seed.unwrap_or(scenario.seed))?;
            write_batch(&batch, &out)?;
            let a = &batch.report.aggregate;
            println!(
                "{}: {}/{} reached goal, mean cycles {:.1}, max {}, stuck {}, cap {}, errors {}",
                scenario.name, a.goal_reached, a.runs, a.mean_cycles, a.max_cycles, a.planner_stuck, a.cap_exceeded, a.errors
            );
            Ok(batch_exit(&batch.report))
        }
        Command::Compare { sc, no_baseline, out } => {
            let scenario = config(load_scenario(&sc))?;
            let lib = config(load_library(&sc.library, &scenario))?;
            let runs = sc.runs.unwrap_or_else(|| scenario.default_runs());
            let (batch, report) = cmd_compare(&scenario, &lib, runs, sc.seed.unwrap_or(scenario.seed), !no_baseline)?;
            write_batch(&batch, &out)?;
            write_json(&out.join("compare.json"), &report)?;
            println!(
                "planner success {:.2} collision rate {:.4}",
                report.primary.aggregate.success_rate, report.primary.aggregate.collision_rate
            );
            if let (Some(s), Some(c)) = (report.baseline_success_rate, report.baseline_collision_rate) {
                println!("baseline success {s:.2} collision rate {c:.4}");
            }
            Ok(batch_exit(&batch.report))
        }
        Command::ContourDump {
            scenario,
            run,
            delta,
            bounds,
            resolution,
            time,
            out,
        } => {
            let args = ScenarioArgs {
                scenario,
                library: None,
                seed: None,
                runs: None,
                stride: None,
                risk: None,
                mode: None,
            };
            let sc = config(load_scenario(&args))?;
            if resolution < 2 {
                return Err(Failure::Config(anyhow!("resolution must be at least 2")));
            }
            let grid = GridSpec {
                x: [bounds[0], bounds[1]],
                y: [bounds[2], bounds[3]],
                nx: resolution,
                ny: resolution,
                t: time,
            };
            let dump = config(cmd_contour_dump(&sc, run, &grid, delta).map_err(Into::into))?;
            write_json(&out, &dump)?;
            println!("{} boundary segments, {} outer ellipses", dump.segments.len(), dump.outer.len());
            Ok(0)
        }
        Command::TubeCheck {
            library,
            model,
            samples,
            seed,
            out,
        } => {
            let lib = match library {
                Some(p) => config(fs::read_to_string(&p).map_err(Into::into).and_then(|t| Ok(Library::from_json(&t)?)))?,
                None => config(cmd_build_primitives(&BuildConfig::for_model(model_kind(model))).map_err(Into::into))?,
            };
            let checks = cmd_tube_check(&lib, samples, seed)?;
            for c in &checks {
                println!(
                    "{:>2} {:<12} radius {:.4} min containment {:.5} {}",
                    c.index,
                    c.label,
                    c.radius,
                    c.min_fraction,
                    if c.pass { "ok" } else { "FAIL" }
                );
            }
            if let Some(out) = out {
                write_json(&out, &checks)?;
            }
            if checks.iter().all(|c| c.pass) {
                Ok(0)
            } else {
                Err(Failure::Other(anyhow!("tube containment below 1 - delta_tube")))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
