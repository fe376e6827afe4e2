use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dodem::attack::AttackMethod;
use dodem::experiment::{evaluation_csv, CellPurpose, ExperimentManifest, Run, OUTPUT_ROOT_ENV};
use dodem::Error;

/// Attack, detect and defend remaining-useful-life regressors.
///
/// Every subcommand reads one manifest, reuses whatever earlier stages
/// already wrote to the run directory and computes the rest.
#[derive(Parser)]
#[command(
    name = "dodem",
    version,
    after_help = "Output root: $DODEM_OUTPUT_ROOT, else the manifest's output_dir, else ./dodem-out."
)]
struct Cli {
    /// Experiment manifest (TOML).
    #[arg(short, long, global = true, default_value = "dodem.toml")]
    manifest: PathBuf,
    /// Override a manifest key, e.g. `--set data.train_stride=3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true, value_parser = parse_override)]
    overrides: Vec<(String, String)>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the desk manifest to a file.
    Init {
        #[arg(long, default_value = "dodem.toml")]
        out: PathBuf,
        /// Directory holding the C-MAPSS text files; synthetic fleets otherwise.
        #[arg(long)]
        cmapss: Option<PathBuf>,
    },
    /// Parse, normalise and window every dataset.
    Ingest,
    /// Train the substitute and the target set of every dataset.
    Train,
    /// Craft perturbed test sets.
    Attack {
        #[arg(long)]
        method: Option<AttackMethod>,
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long, value_enum, default_value_t = Purpose::Eval)]
        purpose: Purpose,
    },
    /// Sweep detectors and fit the routing detector.
    Detect,
    /// Transferability matrix and substitute ranking.
    Transfer,
    /// Adversarially retrain the target set.
    Retrain,
    /// Evaluate standard, adversarial and selective inference.
    Dodem,
    /// Collect every result into report.{csv,json}.
    Report,
}

#[derive(Clone, Copy, ValueEnum)]
enum Purpose {
    Eval,
    Detect,
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))
}

fn run(cli: Cli) -> dodem::Result<()> {
    if let Command::Init { out, cmapss } = &cli.command {
        let m = ExperimentManifest::desk_default(cmapss.as_deref());
        dodem::io::write_atomic(out, m.to_toml()?.as_bytes())?;
        println!("{}", out.display());
        return Ok(());
    }
    let manifest = ExperimentManifest::load_with_overrides(&cli.manifest, &cli.overrides)?;
    let run = Run::open(manifest)?;
    log::info!("run directory {} ({OUTPUT_ROOT_ENV} overrides the root)", run.dir.display());
    match cli.command {
        Command::Init { .. } => unreachable!(),
        Command::Ingest => {
            for s in run.ingest()? {
                println!(
                    "{}\ttrain_units={}\ttest_units={}\twindows={}/{}/{}",
                    s.id, s.train_units, s.test_units, s.train_windows, s.val_windows, s.test_windows
                );
            }
        }
        Command::Train => {
            run.train_all()?;
            println!("{}", run.dir.join("models").display());
        }
        Command::Attack { method, ratio, purpose } => {
            let purpose = match purpose {
                Purpose::Eval => CellPurpose::Eval,
                Purpose::Detect => CellPurpose::Detect,
            };
            let grid = &run.manifest.attack;
            let methods = method.map_or_else(|| grid.methods.clone(), |m| vec![m]);
            let ratios = ratio.map_or_else(|| grid.ratios.clone(), |r| vec![r]);
            for &m in &methods {
                for &r in &ratios {
                    if !(0.0..=1.0).contains(&r) {
                        return Err(Error::Config(format!("ratio {r} outside [0, 1]")));
                    }
                    let c = run.attack_cell(purpose, m, r)?;
                    println!("{m}\t{r}\tattacked={}/{}", c.data.attacked_count(), c.data.samples.len());
                }
            }
        }
        Command::Detect => {
            let d = run.detection()?;
            for s in &d.sweeps {
                let b = s.sweep.best_entry();
                println!("{}\t{}\t{}\tbest_f2={:.4}\tparam={}", s.sweep.kind, s.method, s.ratio, b.f2, b.param);
            }
            println!("routing\t{}\tparam={}", d.detector.kind(), d.routing_param);
        }
        Command::Transfer => {
            let t = run.transfer()?;
            print!("{}", t.matrix.to_csv());
            println!("ranking\t{}", t.ranking.join(","));
        }
        Command::Retrain => {
            let r = run.retrain()?.robustness;
            println!("clean\tstandard={:.4}\tretrained={:.4}", r.standard_clean, r.retrained_clean);
            println!("fgsm_all\tstandard={:.4}\tretrained={:.4}", r.standard_perturbed, r.retrained_perturbed);
        }
        Command::Dodem => {
            print!("{}", evaluation_csv(&run.dodem()?));
        }
        Command::Report => {
            let r = run.report()?;
            println!("{}\t{} rows\t{}", r.config_hash, r.rows.len(), run.dir.join("report").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}
