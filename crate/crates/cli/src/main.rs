//! `dercoord` command-line interface.
//!
//! Exit codes: 0 on success (including runs with unresolved slots, which are
//! reported in `summary.json`), 1 on domain errors, 2 on usage errors.

// Negated comparisons below reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod overrides;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dercoord::grid::Grid;
use dercoord::io;
use dercoord::operation::{Mode, Simulator};
use dercoord::report::{self, RunSummary};
use dercoord::scenario::{self, FeederTemplate, Scenario, ScenarioConfig};

use overrides::{Override, UsageError};

#[derive(Parser)]
#[command(name = "dercoord", version, about = "Coordinate EVs, heat pumps and PV on radial LV feeders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario and write it as a bundle directory.
    Generate {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate one horizon and write the reports.
    Run {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value = "coordinated")]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run uncontrolled and coordinated side by side.
    Compare {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a grid file and/or a scenario.
    Validate {
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        grid: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Input {
    /// Preset name (`acceptance`, `benign`), scenario config JSON, or bundle directory.
    #[arg(long, default_value = "acceptance")]
    scenario: String,
    /// Grid file (JSON or CSV) replacing the scenario's feeder.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override a setting; see the README for the allowed keys.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = overrides::parse)]
    overrides: Vec<Override>,
}

enum Source {
    Config(Box<ScenarioConfig>),
    Bundle(PathBuf),
}

fn resolve(name: &str) -> Result<Source> {
    if let Some(config) = scenario::preset(name) {
        return Ok(Source::Config(Box::new(config)));
    }
    let path = Path::new(name);
    if path.is_dir() {
        return Ok(Source::Bundle(path.to_path_buf()));
    }
    if path.is_file() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: ScenarioConfig = serde_json::from_str(&text)
            .with_context(|| format!("{}: invalid scenario config", path.display()))?;
        return Ok(Source::Config(Box::new(config)));
    }
    Err(UsageError(format!("`{name}` is neither a preset, a config file nor a bundle directory")).into())
}

impl Input {
    fn load(&self) -> Result<Scenario> {
        match resolve(&self.scenario)? {
            Source::Config(mut config) => {
                if let Some(seed) = self.seed {
                    config.seed = seed;
                }
                overrides::apply_scenario(&mut config, &self.overrides)?;
                if let Some(path) = &self.grid {
                    let grid = io::read_grid(path)?;
                    config.n_households = grid.n_households();
                    config.feeder = FeederTemplate::File { path: path.clone() };
                }
                Ok(scenario::generate(&config)?)
            }
            Source::Bundle(dir) => {
                let fixed = overrides::scenario_only(&self.overrides);
                if !fixed.is_empty() {
                    bail!(UsageError(format!(
                        "{} cannot be changed on a stored bundle",
                        fixed.join(", ")
                    )));
                }
                if self.seed.is_some() || self.grid.is_some() {
                    bail!(UsageError("--seed and --grid do not apply to a stored bundle".into()));
                }
                let sc = io::read_bundle(&dir)?;
                sc.check()?;
                Ok(sc)
            }
        }
    }

    fn simulate(&self, sc: &Scenario, mode: Mode) -> Result<(Vec<dercoord::SlotRecord>, RunSummary)> {
        let mut config = sc.sim_config(mode);
        overrides::apply_sim(&mut config, &self.overrides)?;
        let sim = Simulator::new(&sc.grid, &sc.households, config);
        let records = sim.run_horizon(&sc.initial_states, &sc.schedule())?;
        let summary = report::summarize(&records, &sc.grid, &sc.households)?;
        Ok((records, summary))
    }
}

fn print_summary(label: &str, s: &RunSummary) {
    println!(
        "{label}: min voltage {:.4} pu, max loading {:.1}%, {} violation slots, {} coordinated, {} unresolved",
        s.min_voltage_pu, s.max_loading_pct, s.violation_slots, s.coordinated_slots, s.unresolved_slots
    );
}

fn run_mode(input: &Input, sc: &Scenario, mode: Mode, out: &Path) -> Result<RunSummary> {
    let (records, summary) = input.simulate(sc, mode)?;
    report::emit(&summary, &records, &sc.grid, out)?;
    Ok(summary)
}

fn validate_grid(grid: &Grid, label: &str) -> Result<()> {
    let violations = grid.validate();
    if violations.is_empty() {
        println!("{label}: ok ({} buses, {} lines)", grid.buses.len(), grid.lines.len());
        return Ok(());
    }
    for v in &violations {
        eprintln!("{label}: {v}");
    }
    bail!("{label}: {} topology problem(s)", violations.len())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { input, out } => {
            let sc = input.load()?;
            io::write_bundle(&out, &sc)?;
            println!("wrote scenario bundle to {}", out.display());
        }
        Command::Run { input, mode, out } => {
            let sc = input.load()?;
            let summary = run_mode(&input, &sc, mode, &out)?;
            print_summary(&format!("{mode:?}").to_lowercase(), &summary);
        }
        Command::Compare { input, out } => {
            let sc = input.load()?;
            let (unc, coo) = std::thread::scope(|s| {
                let u = s.spawn(|| run_mode(&input, &sc, Mode::Uncontrolled, &out.join("uncontrolled")));
                let c = run_mode(&input, &sc, Mode::Coordinated, &out.join("coordinated"));
                (u.join().expect("uncontrolled run panicked"), c)
            });
            let (unc, coo) = (unc?, coo?);
            print_summary("uncontrolled", &unc);
            print_summary("coordinated", &coo);
            let path = out.join("compare.json");
            fs::write(&path, report::to_json(&report::compare(&unc, &coo)))
                .with_context(|| format!("writing {}", path.display()))?;
        }
        Command::Validate { scenario, grid } => {
            if scenario.is_none() && grid.is_none() {
                bail!(UsageError("validate needs --grid and/or --scenario".into()));
            }
            if let Some(path) = grid {
                let g = io::read_grid(&path)?;
                validate_grid(&g, &path.display().to_string())?;
            }
            if let Some(name) = scenario {
                let input = Input { scenario: name.clone(), grid: None, seed: None, overrides: Vec::new() };
                let sc = input.load()?;
                validate_grid(&sc.grid, &name)?;
                println!("{name}: ok ({} households, {} slots)", sc.households.len(), sc.slots);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DERCOORD_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
