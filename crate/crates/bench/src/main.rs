use std::path::PathBuf;
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use phd_bench::experiment::{DEFAULT_OUTPUT, DEFAULT_RUNS};
use phd_bench::output::{read_trajectory, write_simulation};
use phd_bench::{
    parse_experiment_file, parse_scenario_file, run_and_write, BenchError, ExperimentSpec,
    FilterKind, ScenarioSource,
};
use phd_core::metrics::ospa_sequence;
use phd_core::sim::simulate;
use phd_core::OspaParams;

/// Multi-target DOA tracking with SMC-PHD, NPF and IPF filters.
///
/// Exit status: 0 success, 2 configuration or I/O error, 3 numerical failure.
#[derive(Parser)]
#[command(name = "phdtrack", version)]
struct Cli {
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario; writes measurements.csv and truth.csv.
    Simulate {
        /// Scenario file (TOML).
        #[arg(long)]
        scenario: PathBuf,
        /// Seed override [default: the scenario's seed].
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = DEFAULT_OUTPUT)]
        out: PathBuf,
    },
    /// Track one scenario with one filter; writes trajectories and scores.
    Track {
        /// Scenario file (TOML).
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = FilterKind::Ipf)]
        filter: FilterKind,
        /// Simulator and tracker seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = DEFAULT_OUTPUT)]
        out: PathBuf,
        /// Write seconds_per_frame as 0 so reruns are byte-identical.
        #[arg(long)]
        no_timing: bool,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Monte Carlo sweep over filters; flags override the experiment file.
    Bench {
        /// Experiment file (TOML).
        #[arg(long, required_unless_present = "scenario", conflicts_with = "scenario")]
        experiment: Option<PathBuf>,
        /// Scenario file, for a sweep without an experiment file.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = FilterKind::ALL)]
        filters: Vec<FilterKind>,
        #[arg(long, default_value_t = DEFAULT_RUNS)]
        runs: usize,
        /// Base seed; run r uses seed + r.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = DEFAULT_OUTPUT)]
        out: PathBuf,
        /// Worker threads; 0 uses one per core.
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Write seconds_per_frame as 0 so reruns are byte-identical.
        #[arg(long)]
        no_timing: bool,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// OSPA between an estimated and a true trajectory file.
    Ospa {
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = OspaParams::default().cutoff)]
        cutoff: f64,
        #[arg(long, default_value_t = OspaParams::default().order)]
        order: f64,
        /// Sequence length; frames missing from both files count as empty [default: last frame + 1].
        #[arg(long)]
        frames: Option<usize>,
        /// Print frame,ospa rows after the mean.
        #[arg(long)]
        per_frame: bool,
    },
}

#[derive(Args)]
struct Tuning {
    /// OSPA cutoff in degrees.
    #[arg(long, default_value_t = 20.0)]
    cutoff: f64,
    /// OSPA order.
    #[arg(long, default_value_t = 1.0)]
    order: f64,
    /// Identity gate in degrees.
    #[arg(long, default_value_t = 10.0)]
    identity_gate: f64,
    /// Pseudo-time steps of the flows.
    #[arg(long, default_value_t = 20)]
    n_lambda_steps: usize,
    /// NPF diffusion coefficient.
    #[arg(long, default_value_t = 0.0)]
    diffusion: f64,
    #[arg(long, default_value_t = 50)]
    particles_per_target: usize,
    #[arg(long, default_value_t = 50)]
    births_per_measurement: usize,
    #[arg(long, default_value_t = 0.99)]
    survival_probability: f64,
    /// Birth intensity per square degree.
    #[arg(long, default_value_t = 3e-6)]
    birth_weight: f64,
    /// Filter detection probability [default: the scenario's].
    #[arg(long)]
    detection_probability: Option<f64>,
    /// Clutter intensity per square degree [default: scenario clutter_rate / 64800].
    #[arg(long)]
    clutter_intensity: Option<f64>,
}

impl Tuning {
    /// Copies flags onto `spec`; with `only_explicit`, flags left at their default are skipped.
    fn apply(&self, spec: &mut ExperimentSpec, m: &ArgMatches, only_explicit: bool) {
        let set = |id: &str| {
            !only_explicit || m.value_source(id) == Some(ValueSource::CommandLine)
        };
        if set("cutoff") {
            spec.ospa.cutoff = self.cutoff;
        }
        if set("order") {
            spec.ospa.order = self.order;
        }
        if set("identity_gate") {
            spec.identity_gate = self.identity_gate;
        }
        if set("n_lambda_steps") {
            spec.flow.n_lambda_steps = self.n_lambda_steps;
        }
        if set("diffusion") {
            spec.flow.diffusion = self.diffusion;
        }
        if set("particles_per_target") {
            spec.filter.particles_per_target = Some(self.particles_per_target);
        }
        if set("births_per_measurement") {
            spec.filter.births_per_measurement = Some(self.births_per_measurement);
        }
        if set("survival_probability") {
            spec.filter.survival_probability = Some(self.survival_probability);
        }
        if set("birth_weight") {
            spec.filter.birth_weight = Some(self.birth_weight);
        }
        if self.detection_probability.is_some() {
            spec.filter.detection_probability = self.detection_probability;
        }
        if self.clutter_intensity.is_some() {
            spec.filter.clutter_intensity = self.clutter_intensity;
        }
    }
}

fn print_summary(result: &phd_bench::ExperimentResult) {
    println!("filter  runs  mean_ospa  std_ospa  label_switches  seconds_per_frame");
    for s in result.summary() {
        println!(
            "{:<6}  {:>4}  {:>9.4}  {:>8.4}  {:>14.2}  {:>17.5}",
            s.filter.to_string(),
            s.runs,
            s.mean_ospa,
            s.std_ospa,
            s.mean_label_switches,
            s.seconds_per_frame
        );
    }
}

fn run(cli: Cli, matches: &ArgMatches) -> Result<(), BenchError> {
    match cli.command {
        Command::Simulate { scenario, seed, out } => {
            let mut config = parse_scenario_file(&scenario)?;
            if let Some(s) = seed {
                config.seed = s;
            }
            let records = simulate(&config).map_err(|source| BenchError::Numerical {
                filter: "simulate".into(),
                run: 0,
                source,
            })?;
            write_simulation(&out, &records)?;
            println!("wrote {} frames to {}", records.len(), out.display());
        }
        Command::Track {
            scenario,
            filter,
            seed,
            out,
            no_timing,
            tuning,
        } => {
            let mut spec = ExperimentSpec::new(ScenarioSource::File(scenario));
            spec.filters = vec![filter];
            spec.runs = 1;
            spec.seed = seed;
            spec.output = out;
            spec.record_timing = !no_timing;
            tuning.apply(&mut spec, matches, false);
            let result = run_and_write(&spec)?;
            print_summary(&result);
        }
        Command::Bench {
            experiment,
            scenario,
            filters,
            runs,
            seed,
            out,
            workers,
            no_timing,
            tuning,
        } => {
            let (mut spec, only_explicit) = match (experiment, scenario) {
                (Some(path), _) => (parse_experiment_file(&path)?, true),
                (None, Some(path)) => (ExperimentSpec::new(ScenarioSource::File(path)), false),
                (None, None) => unreachable!("clap requires one of them"),
            };
            let set = |id: &str| {
                !only_explicit || matches.value_source(id) == Some(ValueSource::CommandLine)
            };
            if set("filters") {
                spec.filters = filters;
            }
            if set("runs") {
                spec.runs = runs;
            }
            if set("seed") {
                spec.seed = seed;
            }
            if set("out") {
                spec.output = out;
            }
            if set("workers") {
                spec.workers = workers;
            }
            if no_timing {
                spec.record_timing = false;
            }
            tuning.apply(&mut spec, matches, only_explicit);
            let result = run_and_write(&spec)?;
            print_summary(&result);
            println!("outputs in {}", spec.output.display());
        }
        Command::Ospa {
            estimates,
            truth,
            cutoff,
            order,
            frames,
            per_frame,
        } => {
            let params = OspaParams { cutoff, order };
            params
                .validate()
                .map_err(|e| phd_bench::ConfigError::new(None, e.to_string()))?;
            let mut est = read_trajectory(&estimates, frames.unwrap_or(0))?;
            let mut tru = read_trajectory(&truth, frames.unwrap_or(0))?;
            let n = est.len().max(tru.len());
            est.resize(n, Vec::new());
            tru.resize(n, Vec::new());
            let (mean, per) = ospa_sequence(&est, &tru, &params).expect("equal lengths");
            println!("mean_ospa {mean}");
            if per_frame {
                println!("frame,ospa");
                for (k, v) in per.iter().enumerate() {
                    println!("{k},{v}");
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let sub = matches.subcommand().map(|(_, m)| m.clone()).expect("subcommand required");
    match run(cli, &sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("phdtrack: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
