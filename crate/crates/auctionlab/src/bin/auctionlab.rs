//! Command-line laboratory for procurement-auction analysis: bound reports,
//! seeded Hedge simulations, equilibrium enumeration, and instance files.

use auctionlab::equilibrium::{
    bounds_summary, construct_pc_pure_ne, enumerate_mixed_ne_2p, enumerate_pure_ne,
    expected_unit_price, is_mixed_ne, is_pure_ne, SupportEnumOptions, DEFAULT_EXPECTATION_BUDGET,
    DEFAULT_PROFILE_BUDGET,
};
use auctionlab::harness::{
    atomic_write, bounds_to_json, decimal_to_rational, gen_builtin, mixed_profile_to_json,
    ne_report_to_json, parse_mixed_profile_json, parse_profile_json, rational_string,
    resolve_instance, save_instance, write_trajectory_csv, HarnessError,
    RunManifest, BUILTIN_NAMES,
};
use auctionlab::learning::{run_simulation, FeedbackMode, SimConfig};
use auctionlab::market::{validate_instance, MarketInstance, Rational};
use auctionlab::mechanism::{run_mechanism, Mechanism};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "auctionlab",
    version,
    about = "Single-demand procurement auction laboratory",
    after_help = format!(
        "Instances are registry names ({}), parametric families (vcg:K,D or bestpc:D), \
         or paths to instance JSON files.",
        BUILTIN_NAMES.join(", ")
    )
)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the bound report of an instance.
    Analyze {
        instance: String,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run Hedge bidding dynamics and write the price trajectory.
    Simulate(SimulateArgs),
    /// List pure equilibria, or mixed equilibria of two-producer markets.
    Enumerate {
        instance: String,
        #[arg(long, value_parser = Mechanism::parse)]
        mech: Mechanism,
        /// Exhaustive pure-equilibrium search over all profiles.
        #[arg(long)]
        pure: bool,
        /// Support enumeration over the induced two-player game.
        #[arg(long)]
        mixed2p: bool,
        /// Profile budget (pure) or support-pair budget (mixed).
        #[arg(long)]
        budget: Option<u64>,
        /// Largest support size per player in mixed enumeration.
        #[arg(long)]
        max_support: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rerun a figure's instance under both PB and PC and write paired CSVs.
    Reproduce {
        /// One of fig2, fig3, fig4, fig5, fig7, fig8, fig9.
        figure: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        iters: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        snapshot_every: u64,
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Write a registry or parametric instance to a file.
    Gen {
        /// Registry name, `vcg:K,D`, or `bestpc:D`.
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a bid profile (pure or mixed) for equilibrium under a mechanism.
    Verify {
        instance: String,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, value_parser = Mechanism::parse)]
        mech: Mechanism,
        /// Accept deviations gaining at most this much (exact decimal).
        #[arg(long, default_value = "0")]
        tolerance: String,
    },
}

#[derive(Args)]
struct SimulateArgs {
    instance: String,
    #[arg(long, value_parser = Mechanism::parse)]
    mech: Mechanism,
    #[arg(long)]
    iters: u64,
    #[arg(long)]
    seed: u64,
    /// Learning rate; defaults to sqrt(8·ln(M+1)/T).
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 1)]
    snapshot_every: u64,
    /// Gain feedback: `sampled` or `exact`.
    #[arg(long, default_value = "sampled")]
    feedback: String,
    /// Trajectory CSV path (default `<instance>-<mech>-seed<S>.csv`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Manifest path (default: CSV path with `.manifest.json`).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    App(HarnessError),
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        CliError::App(e)
    }
}

impl From<auctionlab::market::Error> for CliError {
    fn from(e: auctionlab::market::Error) -> Self {
        CliError::App(HarnessError::Core(e))
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::App(e) => e.exit_code(),
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::App(e) => e.to_string(),
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Some(workers) = cli.workers {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    if let Err(err) = run(cli.command) {
        eprintln!("error: {}", err.message());
        std::process::exit(err.exit_code());
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Analyze { instance, out } => analyze(&instance, out.as_deref()),
        Command::Simulate(args) => simulate(&args),
        Command::Enumerate {
            instance,
            mech,
            pure,
            mixed2p,
            budget,
            max_support,
            out,
        } => enumerate(&instance, mech, pure, mixed2p, budget, max_support, out.as_deref()),
        Command::Reproduce {
            figure,
            out,
            iters,
            seed,
            snapshot_every,
            eta,
        } => reproduce(&figure, &out, iters, seed, snapshot_every, eta),
        Command::Gen { spec, out } => {
            let inst = gen_builtin(&spec)?;
            save_instance(&inst, &out)?;
            println!("wrote {} ({} producers, ceiling {})", out.display(), inst.len(), inst.max_bid);
            Ok(())
        }
        Command::Verify {
            instance,
            profile,
            mech,
            tolerance,
        } => verify(&instance, &profile, mech, &tolerance),
    }
}

fn load(instance: &str) -> Result<MarketInstance, CliError> {
    let inst = resolve_instance(instance)?;
    let report = validate_instance(&inst);
    if !report.is_valid() {
        return Err(CliError::App(HarnessError::Validation(
            report.problems.join("; "),
        )));
    }
    Ok(inst)
}

fn analyze(instance: &str, out: Option<&Path>) -> Result<(), CliError> {
    let inst = load(instance)?;
    let report = bounds_summary(&inst)?;
    println!("instance {} ({} producers, ceiling {})", inst.name, inst.len(), inst.max_bid);
    println!("  b_high        {:?}", report.b_high);
    println!("  b_low         {:?}", report.b_low);
    println!("  eligible      {:?}", report.eligible);
    println!("  pc_pure_price {}", report.pc_pure_price);
    println!("  pc_floor      {}", report.pc_floor);
    println!(
        "  pb_interval   [{}, {}]",
        report.pb_interval.0, report.pb_interval.1
    );
    match &report.refined_pb_bound {
        Some(bound) => println!("  refined_pb    {}", rational_string(bound)),
        None => println!("  refined_pb    (hypotheses not met)"),
    }
    let constructed = construct_pc_pure_ne(&inst)?;
    println!("  pc_pure_ne    {constructed:?}");
    if let Some(path) = out {
        let mut value = bounds_to_json(&inst, &report);
        value["pc_pure_ne"] = serde_json::json!(constructed);
        atomic_write(path, format!("{:#}\n", value).as_bytes())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn parse_feedback(text: &str) -> Result<FeedbackMode, CliError> {
    match text {
        "sampled" => Ok(FeedbackMode::Sampled),
        "exact" | "exact-expectation" => Ok(FeedbackMode::ExactExpectation),
        other => Err(CliError::Usage(format!(
            "feedback must be `sampled` or `exact`, got `{other}`"
        ))),
    }
}

fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let inst = load(&args.instance)?;
    let mut config = SimConfig::new(args.mech, args.iters, args.seed);
    config.learning_rate = args.eta;
    config.snapshot_every = args.snapshot_every;
    config.feedback = parse_feedback(&args.feedback)?;
    let started = chrono::Utc::now();
    let trajectory = run_simulation(&inst, &config)?;

    let csv_path = args.out.clone().unwrap_or_else(|| {
        PathBuf::from(format!(
            "{}-{}-seed{}.csv",
            inst.name,
            args.mech.label(),
            args.seed
        ))
    });
    let manifest_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| manifest_path_for(&csv_path));
    write_trajectory_csv(&trajectory, &csv_path)?;
    let manifest = RunManifest::new(
        &inst,
        &config,
        started,
        vec![csv_path.display().to_string()],
    )?;
    manifest.write(&manifest_path)?;

    let last = trajectory.snapshots.last().expect("at least one snapshot");
    println!(
        "{} under {}: {} iterations, time-average unit price {:.4}",
        inst.name,
        args.mech.label(),
        args.iters,
        last.time_avg_unit_price
    );
    println!("wrote {} and {}", csv_path.display(), manifest_path.display());
    Ok(())
}

fn manifest_path_for(csv_path: &Path) -> PathBuf {
    let mut name = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    name.push_str(".manifest.json");
    csv_path.with_file_name(name)
}

fn enumerate(
    instance: &str,
    mech: Mechanism,
    pure: bool,
    mixed2p: bool,
    budget: Option<u64>,
    max_support: Option<usize>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if pure == mixed2p {
        return Err(CliError::Usage(
            "pass exactly one of --pure or --mixed2p".into(),
        ));
    }
    let inst = load(instance)?;
    let value = if pure {
        let found = enumerate_pure_ne(mech, &inst, budget.unwrap_or(DEFAULT_PROFILE_BUDGET))?;
        println!(
            "{} pure equilibria of {} under {}",
            found.len(),
            inst.name,
            mech.label()
        );
        for profile in &found {
            let outcome = run_mechanism(mech, &inst, profile)?;
            println!("  {profile:?} unit price {}", rational_string(&outcome.unit_price));
        }
        serde_json::json!({
            "instance": inst.name,
            "mechanism": mech.label(),
            "pure_equilibria": found,
        })
    } else {
        let options = SupportEnumOptions {
            max_support,
            pair_budget: budget.unwrap_or(SupportEnumOptions::default().pair_budget),
        };
        let found = enumerate_mixed_ne_2p(mech, &inst, &options)?;
        println!(
            "{} mixed equilibria of {} under {}",
            found.len(),
            inst.name,
            mech.label()
        );
        let mut entries = Vec::with_capacity(found.len());
        for profile in &found {
            let price = expected_unit_price(mech, &inst, profile, DEFAULT_EXPECTATION_BUDGET)?;
            println!(
                "  supports {:?} expected unit price {}",
                profile.supports(),
                rational_string(&price)
            );
            let mut entry = mixed_profile_to_json(profile);
            entry["expected_unit_price"] = serde_json::json!(rational_string(&price));
            entries.push(entry);
        }
        serde_json::json!({
            "instance": inst.name,
            "mechanism": mech.label(),
            "mixed_equilibria": entries,
        })
    };
    if let Some(path) = out {
        atomic_write(path, format!("{:#}\n", value).as_bytes())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn reproduce(
    figure: &str,
    out_dir: &Path,
    iters: u64,
    seed: u64,
    snapshot_every: u64,
    eta: Option<f64>,
) -> Result<(), CliError> {
    const FIGURES: [&str; 7] = ["fig2", "fig3", "fig4", "fig5", "fig7", "fig8", "fig9"];
    if !FIGURES.contains(&figure) {
        return Err(CliError::Usage(format!(
            "figure must be one of {FIGURES:?}, got `{figure}`"
        )));
    }
    let inst = load(figure)?;
    std::fs::create_dir_all(out_dir).map_err(HarnessError::Io)?;
    for mech in [Mechanism::PayAsBid, Mechanism::PayAsClear] {
        let mut config = SimConfig::new(mech, iters, seed);
        config.snapshot_every = snapshot_every;
        config.learning_rate = eta;
        let started = chrono::Utc::now();
        let trajectory = run_simulation(&inst, &config)?;
        let csv_path = out_dir.join(format!("{}-{}.csv", figure, mech.label()));
        write_trajectory_csv(&trajectory, &csv_path)?;
        let manifest = RunManifest::new(
            &inst,
            &config,
            started,
            vec![csv_path.display().to_string()],
        )?;
        manifest.write(manifest_path_for(&csv_path))?;
        let last = trajectory.snapshots.last().expect("non-empty");
        println!(
            "{figure} {}: time-average unit price {:.4} over {iters} iterations",
            mech.label(),
            last.time_avg_unit_price
        );
    }
    println!("wrote paired CSVs under {}", out_dir.display());
    Ok(())
}

fn verify(
    instance: &str,
    profile_path: &Path,
    mech: Mechanism,
    tolerance: &str,
) -> Result<(), CliError> {
    let inst = load(instance)?;
    let text = std::fs::read_to_string(profile_path).map_err(HarnessError::Io)?;
    let tolerance: Rational = decimal_to_rational(tolerance.trim())
        .map_err(|e| CliError::Usage(format!("bad tolerance: {e}")))?;
    let report = match parse_profile_json(&text) {
        Ok(bids) => {
            let report = is_pure_ne(mech, &inst, &bids)?;
            let outcome = run_mechanism(mech, &inst, &bids)?;
            println!(
                "pure profile {bids:?}: unit price {}",
                rational_string(&outcome.unit_price)
            );
            report
        }
        Err(_) => {
            let sigma = parse_mixed_profile_json(&text)?;
            let report = is_mixed_ne(mech, &inst, &sigma, &tolerance, DEFAULT_EXPECTATION_BUDGET)?;
            let price = expected_unit_price(mech, &inst, &sigma, DEFAULT_EXPECTATION_BUDGET)?;
            println!(
                "mixed profile with supports {:?}: expected unit price {}",
                sigma.supports(),
                rational_string(&price)
            );
            report
        }
    };
    let verdict = if report.is_equilibrium {
        "equilibrium"
    } else {
        "not an equilibrium"
    };
    println!(
        "{verdict} under {} (max deviation gain {})",
        mech.label(),
        rational_string(&report.epsilon)
    );
    println!("{:#}", ne_report_to_json(&report));
    Ok(())
}
