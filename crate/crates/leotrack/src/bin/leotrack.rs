//! Batch CLI for the tracking simulator: single-frame simulation with a
//! per-block dump, Monte Carlo sweeps to CSV, bound evaluation at a
//! configuration, and scenario validation.
//!
//! Exit codes: 0 on success, 1 on configuration errors (bad flags or
//! scenario files), 2 on runtime failures.

use clap::{Args, Parser, Subcommand};
use leotrack::channel::large_scale_beta;
use leotrack::estimators::design_combiner;
use leotrack::harness::{
    self, emit_csv, generate_truth, run_chain, CombinerChoice, Method, SweepAxis,
};
use leotrack::scenario::{load_scenario, Scenario, ScenarioError};
use leotrack::{crlb, geometry};
use num_complex::Complex64;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "leotrack",
    about = "LEO satellite uplink parameter and channel tracking simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one frame and print per-block truth vs estimates.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Use the true parameters for the measurement covariance.
        #[arg(long)]
        genie: bool,
        /// Optional per-block CSV dump.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo sweep over an axis; writes the aggregate CSV.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Sweep variable: snr | pilots | sigma_u | sigma_v | blocks.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Trials per point (default: scenario run.trials).
        #[arg(long)]
        trials: Option<usize>,
        /// Methods: jpct | jpct-genie | rough | esprit+ls.
        #[arg(long, value_delimiter = ',', default_value = "jpct")]
        method: Vec<String>,
        /// Combiners: proposed | dft | random.
        #[arg(long, value_delimiter = ',', default_value = "proposed")]
        combiner: Vec<String>,
        /// Also run the genie-covariance tracking chain.
        #[arg(long)]
        genie: bool,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the measurement-error bounds at the initial geometry.
    Crlb {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Validate a scenario file and print the resolved setup.
    ScenarioCheck {
        #[command(flatten)]
        common: CommonArgs,
    },
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<harness::HarnessError> for CliError {
    fn from(e: harness::HarnessError) -> Self {
        match e {
            harness::HarnessError::Scenario(s) => CliError::Config(s.to_string()),
            harness::HarnessError::Axis { .. } => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn load(common: &CommonArgs) -> Result<Scenario, CliError> {
    let mut scn = match &common.config {
        Some(path) => load_scenario(path)?,
        None => Scenario::default(),
    };
    if let Some(seed) = common.seed {
        scn.run.seed = seed;
    }
    Ok(scn)
}

fn cmd_simulate(common: CommonArgs, genie: bool, out: Option<PathBuf>) -> Result<(), CliError> {
    let scn = load(&common)?;
    let seed = harness::trial_seed(scn.run.seed, 0);
    let truth = generate_truth(&scn, seed)?;
    let method = if genie { Method::JpctGenie } else { Method::Jpct };
    let records = run_chain(&scn, &truth, method, CombinerChoice::Proposed, seed, 0)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    println!(
        "# method: {method}, seed: {}, blocks: {}",
        scn.run.seed,
        records.len()
    );
    println!(
        "{:>3} {:>12} {:>12} {:>12} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>10}",
        "blk",
        "u_true(Hz)",
        "u_rough",
        "u_jpct",
        "el_true",
        "el_rough",
        "el_jpct",
        "az_true",
        "az_rough",
        "az_jpct",
        "nmse"
    );
    let mut csv = String::from(
        "block,doppler_true_hz,doppler_rough_hz,doppler_updated_hz,elev_true_rad,\
         elev_rough_rad,elev_updated_rad,azim_true_rad,azim_rough_rad,azim_updated_rad,nmse\n",
    );
    for (n, (r, t)) in records.iter().zip(&truth.blocks).enumerate() {
        let nmse = if t.channel.norm_squared() > 0.0 {
            r.csi_err_sq / t.channel.norm_squared()
        } else {
            f64::NAN
        };
        println!(
            "{:>3} {:>12.2} {:>12.2} {:>12.2} {:>9.5} {:>9.5} {:>9.5} {:>9.5} {:>9.5} {:>9.5} {:>10.3e}",
            n,
            t.z.doppler,
            r.rough.doppler,
            r.params.doppler,
            t.z.elevation,
            r.rough.elevation,
            r.params.elevation,
            t.z.azimuth,
            r.rough.azimuth,
            r.params.azimuth,
            nmse
        );
        csv.push_str(&format!(
            "{n},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}\n",
            t.z.doppler,
            r.rough.doppler,
            r.params.doppler,
            t.z.elevation,
            r.rough.elevation,
            r.params.elevation,
            t.z.azimuth,
            r.rough.azimuth,
            r.params.azimuth,
            nmse
        ));
    }
    if let Some(path) = out {
        std::fs::write(path, csv).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    common: CommonArgs,
    axis: String,
    values: Vec<f64>,
    trials: Option<usize>,
    method: Vec<String>,
    combiner: Vec<String>,
    genie: bool,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let scn = load(&common)?;
    let axis = SweepAxis::parse(&axis)
        .ok_or_else(|| CliError::Config(format!("unknown sweep axis '{axis}'")))?;
    let mut methods = Vec::new();
    for m in &method {
        let parsed =
            Method::parse(m).ok_or_else(|| CliError::Config(format!("unknown method '{m}'")))?;
        if !methods.contains(&parsed) {
            methods.push(parsed);
        }
    }
    if genie && !methods.contains(&Method::JpctGenie) {
        methods.push(Method::JpctGenie);
    }
    let mut combiners = Vec::new();
    for c in &combiner {
        let parsed = CombinerChoice::parse(c)
            .ok_or_else(|| CliError::Config(format!("unknown combiner '{c}'")))?;
        if !combiners.contains(&parsed) {
            combiners.push(parsed);
        }
    }
    let trials = trials.unwrap_or(scn.run.trials);
    let rows = harness::sweep(&scn, axis, &values, trials, &methods, &combiners)?;
    match out {
        Some(path) => emit_csv(&rows, path)?,
        None => print!("{}", harness::format_csv(&rows)),
    }
    Ok(())
}

fn cmd_crlb(common: CommonArgs) -> Result<(), CliError> {
    let scn = load(&common)?;
    let (q_sat, q_gu) = scn.initial_states();
    let frame = geometry::array_frame(&q_sat).map_err(|e| CliError::Runtime(e.to_string()))?;
    let z = geometry::measurement_map(&q_sat, &q_gu, &frame, scn.wavelength())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let lb = scn.link_budget();
    let beta = large_scale_beta(scn.initial_distance(), &lb);
    let c_mean = Complex64::new(lb.sat_gain * beta.sqrt(), 0.0);
    let geom = scn.geometry();
    println!("# initial geometry");
    println!("doppler_hz   = {:.3}", z.doppler);
    println!("elevation    = {:.6} rad", z.elevation);
    println!("azimuth      = {:.6} rad", z.azimuth);
    println!("distance_m   = {:.1}", scn.initial_distance());
    println!("noise_var_w  = {:.6e}", scn.noise_var());
    println!("mean_gain_sq = {:.6e}", scn.mean_ctilde_sq());
    for (label, w) in [
        ("codebook", design_combiner(None, &geom, scn.array.rf_chains)),
        (
            "matched",
            design_combiner(Some((z.elevation, z.azimuth)), &geom, scn.array.rf_chains),
        ),
    ] {
        let p = crlb::crlb_at(
            z.elevation,
            z.azimuth,
            c_mean,
            &w,
            scn.tx_power_w(),
            scn.noise_var(),
            scn.frame.pilots,
            scn.frame.symbol_duration_s,
            &geom,
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;
        println!("# combiner: {label}");
        println!(
            "crlb_doppler = {:.6e} Hz^2  (rmse >= {:.3} Hz)",
            p.var_doppler,
            p.var_doppler.sqrt()
        );
        println!(
            "crlb_elev    = {:.6e} rad^2 (rmse >= {:.3e} rad)",
            p.var_elev,
            p.var_elev.sqrt()
        );
        println!(
            "crlb_azim    = {:.6e} rad^2 (rmse >= {:.3e} rad)",
            p.var_azim,
            p.var_azim.sqrt()
        );
    }
    Ok(())
}

fn cmd_scenario_check(common: CommonArgs) -> Result<(), CliError> {
    let scn = load(&common)?;
    let (q_sat, q_gu) = scn.initial_states();
    println!("scenario OK");
    println!("carrier_hz        = {:.4e}", scn.link.carrier_hz);
    println!("wavelength_m      = {:.6}", scn.wavelength());
    println!(
        "antennas          = {} ({} x {})",
        scn.geometry().antennas(),
        scn.array.m_x,
        scn.array.m_y
    );
    println!("rf_chains         = {}", scn.array.rf_chains);
    println!("blocks            = {}", scn.frame.blocks);
    println!("pilots            = {}", scn.frame.pilots);
    println!("block_duration_s  = {}", scn.block_duration());
    println!(
        "grid              = {} x {}",
        scn.grid.elevations, scn.grid.azimuths
    );
    println!("tx_power_w        = {}", scn.tx_power_w());
    println!("noise_var_w       = {:.6e}", scn.noise_var());
    println!("sat_position_m    = {:?}", q_sat.position.as_slice());
    println!("sat_speed_mps     = {:.3}", q_sat.velocity.norm());
    println!("gu_position_m     = {:?}", q_gu.position.as_slice());
    println!("gu_speed_mps      = {:.3}", q_gu.velocity.norm());
    println!("initial_range_m   = {:.1}", scn.initial_distance());
    println!("seed              = {}", scn.run.seed);
    println!("trials            = {}", scn.run.trials);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; anything else is
            // a configuration error.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate { common, genie, out } => cmd_simulate(common, genie, out),
        Command::Sweep {
            common,
            axis,
            values,
            trials,
            method,
            combiner,
            genie,
            out,
        } => cmd_sweep(common, axis, values, trials, method, combiner, genie, out),
        Command::Crlb { common } => cmd_crlb(common),
        Command::ScenarioCheck { common } => cmd_scenario_check(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("runtime failure: {msg}");
            ExitCode::from(2)
        }
    }
}
