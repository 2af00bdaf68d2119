use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use ptsrc_core::direct::{
    harmonic_moments, prony_recover, recover_amplitude, recover_location_1d, recover_location_single,
    write_locations_csv, AmplitudeOptions, LocationEstimate,
};
use ptsrc_core::fem::SpaceMesh;
use ptsrc_core::forward::{simulate, BoundaryTrace};
use ptsrc_core::harness::{
    emit_outputs, fit_rates, make_noisy, parse_noise_level, read_errors_csv, restrict_trace, run_example,
    source_errors, write_rates_csv, ExampleId, ExperimentSpec, Method, Resolution, RunConfig, Scenario, DEFAULT_NOISE_LEVELS,
};
use ptsrc_core::lm::{run_lm, LmParams, LmProblem};
use ptsrc_core::sparse::SolveOptions;
use ptsrc_core::Error;

#[derive(Parser)]
#[command(name = "ptsrc", version, about = "Point-source simulation and recovery from boundary data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate boundary data for the sources in a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use the fine (data) grid instead of the inversion grid.
        #[arg(long)]
        fine: bool,
    },
    /// Levenberg–Marquardt reconstruction from simulated data.
    InvertLm {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Direct reconstruction from reciprocity gaps.
    InvertDirect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to `single` for one source and `moments` otherwise.
        #[arg(long, value_enum)]
        mode: Option<DirectMode>,
    },
    /// Repeated noisy inversions of a built-in example with error statistics.
    Experiment {
        #[arg(long)]
        example: ExampleId,
        /// Comma-separated noise levels; `0.5%` or `0.005`.
        #[arg(long, value_delimiter = ',', value_parser = parse_noise_level)]
        noise: Option<Vec<f64>>,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "lm")]
        method: Method,
        /// Multiplies both grid steps, e.g. 2 for a quick quarter-resolution run in 2D.
        #[arg(long, default_value_t = 1.0)]
        coarsen: f64,
    },
    /// Fit log-log slopes to an errors.csv.
    Rates {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the config file of a built-in example.
    ShowExample {
        example: ExampleId,
        #[arg(long, default_value_t = 1.0)]
        coarsen: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectMode {
    Moments,
    Single,
    Amplitude,
}

/// Boundary data and the mesh step they were recorded with.
#[derive(Serialize, Deserialize)]
struct DataSet {
    dx: f64,
    noise: f64,
    seed: u64,
    trace: BoundaryTrace,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Json(_) => 4,
        e if e.is_numerical() => 3,
        _ => 2,
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Error> {
    RunConfig::parse(&fs::read_to_string(path)?)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<fs::File>, Error> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(fs::File::create(dir.join(name))?))
}

fn write_amplitudes<W: Write>(mut w: W, times: &[f64], amps: &[Vec<f64>]) -> Result<(), Error> {
    write!(w, "time")?;
    for k in 0..amps.len() {
        write!(w, ",lambda_{k}")?;
    }
    writeln!(w)?;
    for (i, t) in times.iter().enumerate() {
        write!(w, "{t:e}")?;
        for a in amps {
            write!(w, ",{:e}", a[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn cmd_simulate(config: &Path, out: &Path, fine: bool) -> Result<(), Error> {
    let rc = load_config(config)?;
    let s = &rc.scenario;
    let (mesh, grid, dx) = if fine {
        (s.fine_mesh()?, s.fine_grid()?, s.fine.dx)
    } else {
        (s.inversion_mesh()?, s.inversion_grid()?, s.inversion.dx)
    };
    let model = s.truth_model(&grid)?;
    model.validate(&mesh, &s.config, false)?;
    let clean = simulate(&s.config, &mesh, &model, &grid)?;
    let trace = make_noisy(&clean, rc.noise, rc.seed);
    trace.write_csv(create(out, "trace.csv")?)?;
    let data = DataSet {
        dx,
        noise: rc.noise,
        seed: rc.seed,
        trace,
    };
    serde_json::to_writer(create(out, "trace.json")?, &data)?;
    fs::write(out.join("config.txt"), rc.to_config_text())?;
    println!(
        "simulated {} steps x {} boundary nodes (sup {:.4e}, noise {}) into {}",
        grid.n_steps + 1,
        mesh.n_boundary(),
        clean.sup_norm(),
        rc.noise,
        out.display()
    );
    Ok(())
}

/// Data restricted to the inversion grid, with the absolute noise level.
fn load_data(s: &Scenario, data_dir: &Path) -> Result<(SpaceMesh, BoundaryTrace, f64), Error> {
    let file = fs::File::open(data_dir.join("trace.json"))?;
    let data: DataSet = serde_json::from_reader(BufReader::new(file))?;
    let data_mesh = Scenario {
        fine: Resolution {
            dt: data.trace.grid.dt,
            dx: data.dx,
        },
        ..s.clone()
    }
    .fine_mesh()?;
    let mesh = s.inversion_mesh()?;
    let grid = s.inversion_grid()?;
    let trace = restrict_trace(&data.trace, &data_mesh, &mesh, &grid)?;
    // δ is relative to the sup norm of the noisy data, close enough to the clean one
    let noise_std = data.noise * data.trace.sup_norm();
    Ok((mesh, trace, noise_std))
}

fn cmd_invert_lm(config: &Path, data_dir: &Path, out: &Path) -> Result<(), Error> {
    let rc = load_config(config)?;
    let s = &rc.scenario;
    let (mesh, data, noise_std) = load_data(s, data_dir)?;
    let grid = data.grid;
    let problem = LmProblem::new(&s.config, &mesh, &grid, &data, SolveOptions::default())?;
    let schedule = s.lm.schedule(mesh.mesh_size, noise_std);
    let truth = s.truth_params(&grid);
    let probe = |p: &LmParams| {
        let (l, a) = source_errors(&truth, &p.locations, &p.amplitudes, &grid);
        (l, a.map_or(f64::NAN, |a| a.0))
    };
    let res = run_lm(&problem, &s.init_params(&grid), &schedule, Some(&probe))?;
    res.write_history_csv(create(out, "history.csv")?)?;
    let est: Vec<LocationEstimate> = res
        .final_params
        .locations
        .iter()
        .map(|p| LocationEstimate { point: *p, raw: *p })
        .collect();
    write_locations_csv(create(out, "locations.csv")?, &[est])?;
    write_amplitudes(create(out, "amplitudes.csv")?, &grid.times(), &res.final_params.amplitudes)?;
    serde_json::to_writer_pretty(create(out, "result.json")?, &res)?;
    let last = res.history.last().expect("history starts with the initial iterate");
    println!(
        "stopped after {} iterations ({:?}), residual {:.4e}",
        last.iteration, res.stop_reason, last.residual
    );
    for (k, p) in res.final_params.locations.iter().enumerate() {
        println!("source {k}: {:?}", p.coords(s.config.dim));
    }
    Ok(())
}

fn cmd_invert_direct(config: &Path, data_dir: &Path, out: &Path, mode: Option<DirectMode>) -> Result<(), Error> {
    let rc = load_config(config)?;
    let s = &rc.scenario;
    let c = &s.config;
    let (mesh, data, _) = load_data(s, data_dir)?;
    let n = s.n_sources();
    let mode = mode.unwrap_or(if n == 1 { DirectMode::Single } else { DirectMode::Moments });
    let single = || -> Result<LocationEstimate, Error> {
        if c.dim == 1 && c.effective_reaction() <= 0.0 {
            recover_location_1d(&data, c, &mesh)
        } else {
            recover_location_single(&data, c, &mesh)
        }
    };
    let locations = match mode {
        DirectMode::Moments => {
            let m = harmonic_moments(&data, c, &mesh, 2 * n)?;
            let nodes = prony_recover(&m, n)?;
            let mut w = create(out, "moments.csv")?;
            writeln!(w, "k,re,im")?;
            for (k, g) in m.values.iter().enumerate() {
                writeln!(w, "{k},{:e},{:e}", g.re, g.im)?;
            }
            nodes
                .iter()
                .map(|p| {
                    let raw = p.location(&m);
                    LocationEstimate {
                        point: mesh.clamp_interior(&raw, 0.0),
                        raw,
                    }
                })
                .collect()
        }
        DirectMode::Single => vec![single()?],
        DirectMode::Amplitude => {
            let loc = single()?;
            let opts = AmplitudeOptions {
                noise_scale: rc.noise,
                ..AmplitudeOptions::default()
            };
            let amp = recover_amplitude(&data, None, &loc.point, c, &mesh, &opts)?;
            amp.write_csv(create(out, "amplitude.csv")?)?;
            println!("amplitude on {} samples (R = {:.1})", amp.time_samples.len(), amp.radius);
            vec![loc]
        }
    };
    write_locations_csv(create(out, "locations.csv")?, std::slice::from_ref(&locations))?;
    for (k, l) in locations.iter().enumerate() {
        println!("source {k}: {:?}", l.point.coords(c.dim));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_experiment(
    example: ExampleId,
    noise: Option<Vec<f64>>,
    runs: usize,
    seed: u64,
    out: &Path,
    method: Method,
    coarsen: f64,
) -> Result<(), Error> {
    if !(coarsen > 0.0) {
        return Err(Error::InvalidConfig("--coarsen must be positive".into()));
    }
    let noise = noise.unwrap_or_else(|| DEFAULT_NOISE_LEVELS.to_vec());
    let spec = ExperimentSpec::for_example(example, &noise, runs, seed, method, coarsen);
    let report = run_example(&spec)?;
    emit_outputs(&report, out)?;
    println!("{:<8}{:>10}{:>6}{:>14}{:>14}", "method", "delta", "ok", "loc_mean", "amp_mean");
    for r in &report.rows {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4e}"));
        println!(
            "{:<8}{:>10}{:>6}{:>14}{:>14}",
            r.method.to_string(),
            r.delta,
            format!("{}/{}", r.n_ok, r.n_runs),
            f(r.loc_mean),
            f(r.amp_mean)
        );
    }
    for r in &report.rates {
        println!("{} {} slope {:.3} (r2 {:.3})", r.method, r.quantity, r.fit.slope, r.fit.r2);
    }
    if report.incomplete() {
        eprintln!("warning: some runs failed, see runs.csv");
    }
    Ok(())
}

fn cmd_rates(input: &Path, out: &Path) -> Result<(), Error> {
    let rows = read_errors_csv(BufReader::new(fs::File::open(input)?))?;
    let rates = fit_rates(&rows);
    let mut w = BufWriter::new(fs::File::create(out)?);
    write_rates_csv(&mut w, &rates)?;
    w.flush()?;
    for r in &rates {
        println!("{} {} slope {:.3} (r2 {:.3})", r.method, r.quantity, r.fit.slope, r.fit.r2);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { config, out, fine } => cmd_simulate(&config, &out, fine),
        Command::InvertLm { config, data, out } => cmd_invert_lm(&config, &data, &out),
        Command::InvertDirect {
            config,
            data,
            out,
            mode,
        } => cmd_invert_direct(&config, &data, &out, mode),
        Command::Experiment {
            example,
            noise,
            runs,
            seed,
            out,
            method,
            coarsen,
        } => cmd_experiment(example, noise, runs, seed, &out, method, coarsen),
        Command::Rates { input, out } => cmd_rates(&input, &out),
        Command::ShowExample { example, coarsen } => {
            let text = RunConfig {
                scenario: example.scenario(coarsen),
                noise: 0.005,
                seed: 1,
            }
            .to_config_text();
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::InvalidConfig("x".into())), 2);
        assert_eq!(exit_code(&Error::Parse { line: 1, message: "x".into() }), 2);
        assert_eq!(exit_code(&Error::RankDeficient(0.0)), 3);
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), 4);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
