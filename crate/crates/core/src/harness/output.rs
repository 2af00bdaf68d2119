use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

use super::experiment::{ErrorReport, ErrorRow, Method, RateRow, RunRecord};

pub const ERRORS_HEADER: &str = "method,delta,n_runs,n_ok,loc_mean,loc_stderr,amp_mean,amp_stderr,amp_rel_l2_mean";
pub const RATES_HEADER: &str = "method,quantity,n_points,slope,intercept,r2";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

pub fn write_errors_csv<W: Write>(mut w: W, rows: &[ErrorRow]) -> Result<()> {
    writeln!(w, "{ERRORS_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{:e},{},{},{},{},{},{},{}",
            r.method,
            r.delta,
            r.n_runs,
            r.n_ok,
            opt(r.loc_mean),
            opt(r.loc_stderr),
            opt(r.amp_mean),
            opt(r.amp_stderr),
            opt(r.amp_rel_l2_mean)
        )?;
    }
    Ok(())
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Inverse of [`write_errors_csv`].
pub fn read_errors_csv<R: BufRead>(r: R) -> Result<Vec<ErrorRow>> {
    let mut rows = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let ln = i + 1;
        if i == 0 {
            if line.trim() != ERRORS_HEADER {
                return Err(parse_err(1, format!("expected header '{ERRORS_HEADER}'")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(parse_err(ln, format!("expected 9 fields, found {}", f.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| parse_err(ln, format!("'{s}': {e}")));
        let count = |s: &str| s.trim().parse::<usize>().map_err(|e| parse_err(ln, format!("'{s}': {e}")));
        let maybe = |s: &str| if s.trim().is_empty() { Ok(None) } else { num(s).map(Some) };
        rows.push(ErrorRow {
            method: f[0].trim().parse::<Method>().map_err(|e| parse_err(ln, e))?,
            delta: num(f[1])?,
            n_runs: count(f[2])?,
            n_ok: count(f[3])?,
            loc_mean: maybe(f[4])?,
            loc_stderr: maybe(f[5])?,
            amp_mean: maybe(f[6])?,
            amp_stderr: maybe(f[7])?,
            amp_rel_l2_mean: maybe(f[8])?,
        });
    }
    Ok(rows)
}

pub fn write_rates_csv<W: Write>(mut w: W, rates: &[RateRow]) -> Result<()> {
    writeln!(w, "{RATES_HEADER}")?;
    for r in rates {
        writeln!(
            w,
            "{},{},{},{:e},{:e},{:e}",
            r.method, r.quantity, r.n_points, r.fit.slope, r.fit.intercept, r.fit.r2
        )?;
    }
    Ok(())
}

fn write_runs_csv<W: Write>(mut w: W, runs: &[RunRecord]) -> Result<()> {
    writeln!(w, "method,delta,seed,loc_err,amp_err,amp_rel_l2,stop_reason,iterations,failure")?;
    for r in runs {
        let stop = r
            .stop_reason
            .map(|s| serde_json::to_value(s).map(|v| v.as_str().unwrap_or("").to_string()))
            .transpose()?
            .unwrap_or_default();
        let failure = r.failure.as_deref().unwrap_or("").replace([',', '\n'], ";");
        writeln!(
            w,
            "{},{:e},{},{},{},{},{},{},{}",
            r.method,
            r.delta,
            r.seed,
            opt(r.location_error),
            opt(r.amplitude_error),
            opt(r.amplitude_rel_l2),
            stop,
            r.history.len().saturating_sub(1),
            failure
        )?;
    }
    Ok(())
}

fn write_history_csv<W: Write>(mut w: W, runs: &[RunRecord]) -> Result<()> {
    writeln!(w, "method,delta,seed,iteration,residual,loc_err,amp_err,beta_x,beta_lambda")?;
    for r in runs {
        for h in &r.history {
            let loc = if h.location_errors.is_empty() {
                None
            } else {
                Some(h.location_errors.iter().sum())
            };
            writeln!(
                w,
                "{},{:e},{},{},{:e},{},{},{:e},{:e}",
                r.method,
                r.delta,
                r.seed,
                h.iteration,
                h.residual,
                opt(loc),
                opt(h.amplitude_error.filter(|v| v.is_finite())),
                h.beta_x,
                h.beta_lambda
            )?;
        }
    }
    Ok(())
}

/// The first successful run of `method` at the noise level closest to 0.5%.
pub fn representative_run(report: &ErrorReport, method: Method) -> Option<&RunRecord> {
    let target = 0.005_f64.ln();
    report
        .runs
        .iter()
        .filter(|r| r.method == method && r.ok() && r.delta > 0.0 && !r.amplitudes.is_empty())
        .fold(None, |best: Option<&RunRecord>, r| match best {
            Some(b) if (b.delta.ln() - target).abs() <= (r.delta.ln() - target).abs() => Some(b),
            _ => Some(r),
        })
}

/// `time,true_<k>...,est_<k>...` for the representative run.
fn write_amplitude_csv<W: Write>(mut w: W, report: &ErrorReport, run: Option<&RunRecord>) -> Result<()> {
    let n = report.truth.n_sources();
    let est = run.map(|r| {
        let perm = super::experiment::best_relabeling(&report.truth.locations, &r.locations);
        perm.iter().map(|&j| r.amplitudes[j].clone()).collect::<Vec<_>>()
    });
    write!(w, "time")?;
    for k in 0..n {
        write!(w, ",true_{k}")?;
    }
    if est.is_some() {
        for k in 0..n {
            write!(w, ",est_{k}")?;
        }
    }
    writeln!(w)?;
    for (i, t) in report.inversion_grid.times().iter().enumerate() {
        write!(w, "{t:e}")?;
        for a in &report.truth.amplitudes {
            write!(w, ",{:e}", a[i])?;
        }
        if let Some(e) = &est {
            for a in e {
                write!(w, ",{:e}", a[i])?;
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Gnuplot script for the amplitude overlay, error against iteration and
/// error against noise level.
pub fn plot_script(n_sources: usize, has_estimate: bool, has_history: bool) -> String {
    let mut s = String::from(
        "# gnuplot -e \"outfile='figure.png'\" plot.gp\n\
         if (!exists(\"outfile\")) outfile = 'figure.png'\n\
         set terminal pngcairo size 1500,450\n\
         set output outfile\n\
         set datafile separator ','\n\
         set key autotitle columnhead\n\
         set multiplot layout 1,3\n\n\
         set title 'amplitude'\nset xlabel 't'\n",
    );
    let mut curves: Vec<String> = (0..n_sources)
        .map(|k| format!("'amplitude.csv' using 1:{} with lines dt 2 title 'true {k}'", k + 2))
        .collect();
    if has_estimate {
        curves.extend(
            (0..n_sources).map(|k| format!("'amplitude.csv' using 1:{} with lines title 'recovered {k}'", k + 2 + n_sources)),
        );
    }
    if curves.is_empty() {
        s.push_str("plot NaN notitle\n");
    } else {
        s.push_str(&format!("plot {}\n", curves.join(", \\\n     ")));
    }
    s.push_str("\nset title 'error vs iteration'\nset xlabel 'k'\nset logscale y\n");
    if has_history {
        s.push_str(
            "plot 'history_rep.csv' using 1:3 with linespoints title 'location', \\\n     \
             'history_rep.csv' using 1:4 with linespoints title 'amplitude'\n",
        );
    } else {
        s.push_str("plot NaN notitle\n");
    }
    s.push_str(
        "unset logscale\n\nset title 'error vs noise level'\nset xlabel 'delta'\nset logscale xy\n\
         lm(c) = (strcol(1) eq 'lm' ? column(c) : NaN)\n\
         direct(c) = (strcol(1) eq 'direct' ? column(c) : NaN)\n\
         plot 'errors.csv' using 2:(lm(5)) with linespoints title 'location (lm)', \\\n     \
         'errors.csv' using 2:(lm(7)) with linespoints title 'amplitude (lm)', \\\n     \
         'errors.csv' using 2:(direct(5)) with linespoints title 'location (direct)', \\\n     \
         'errors.csv' using 2:(direct(7)) with linespoints title 'amplitude (direct)'\n\
         unset multiplot\n",
    );
    s
}

#[derive(Serialize)]
struct Manifest<'a> {
    label: &'a str,
    version: &'a str,
    config: String,
    spec: &'a super::experiment::ExperimentSpec,
    approximate_support: bool,
    incomplete: bool,
    data_wall_time: f64,
    run_wall_times: Vec<f64>,
    failures: Vec<String>,
    files: Vec<&'a str>,
}

const FILES: [&str; 7] = [
    "errors.csv",
    "rates.csv",
    "runs.csv",
    "history.csv",
    "history_rep.csv",
    "amplitude.csv",
    "plot.gp",
];

fn create(dir: &Path, name: &str) -> Result<std::io::BufWriter<fs::File>> {
    Ok(std::io::BufWriter::new(fs::File::create(dir.join(name))?))
}

/// Writes the report files into `out_dir` and returns their paths.
pub fn emit_outputs(report: &ErrorReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    write_errors_csv(create(out_dir, "errors.csv")?, &report.rows)?;
    write_rates_csv(create(out_dir, "rates.csv")?, &report.rates)?;
    write_runs_csv(create(out_dir, "runs.csv")?, &report.runs)?;
    write_history_csv(create(out_dir, "history.csv")?, &report.runs)?;
    let rep = representative_run(report, Method::Lm).or_else(|| representative_run(report, Method::Direct));
    let mut w = create(out_dir, "history_rep.csv")?;
    writeln!(w, "iteration,residual,loc_err,amp_err")?;
    if let Some(r) = rep {
        for h in &r.history {
            writeln!(
                w,
                "{},{:e},{},{}",
                h.iteration,
                h.residual,
                opt(Some(h.location_errors.iter().sum())),
                opt(h.amplitude_error.filter(|v| v.is_finite()))
            )?;
        }
    }
    w.flush()?;
    write_amplitude_csv(create(out_dir, "amplitude.csv")?, report, rep)?;
    fs::write(
        out_dir.join("plot.gp"),
        plot_script(
            report.truth.n_sources(),
            rep.is_some(),
            rep.is_some_and(|r| !r.history.is_empty()),
        ),
    )?;
    let manifest = Manifest {
        label: &report.spec.label,
        version: env!("CARGO_PKG_VERSION"),
        config: report.spec.scenario.to_config_text(),
        spec: &report.spec,
        approximate_support: report.approximate_support,
        incomplete: report.incomplete(),
        data_wall_time: report.data_wall_time,
        run_wall_times: report.runs.iter().map(|r| r.wall_time).collect(),
        failures: report.runs.iter().filter_map(|r| r.failure.clone()).collect(),
        files: FILES.to_vec(),
    };
    fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    let mut paths: Vec<PathBuf> = FILES.iter().map(|f| out_dir.join(f)).collect();
    paths.push(out_dir.join("manifest.json"));
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::examples::ExampleId;
    use crate::harness::experiment::{ExperimentSpec, RateRow};
    use crate::harness::rates::RateFit;
    use crate::lm::LmParams;

    fn empty_report() -> ErrorReport {
        let spec = ExperimentSpec::for_example(ExampleId::Ex1i, &[], 1, 0, Method::Lm, 1.0);
        let grid = spec.scenario.inversion_grid().unwrap();
        ErrorReport {
            truth: spec.scenario.truth_params(&grid),
            spec,
            inversion_grid: grid,
            inversion_mesh_size: 0.004,
            approximate_support: true,
            rows: Vec::new(),
            rates: Vec::new(),
            runs: Vec::new(),
            data_wall_time: 0.0,
        }
    }

    #[test]
    fn empty_report_gives_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        emit_outputs(&empty_report(), dir.path()).unwrap();
        let errors = fs::read_to_string(dir.path().join("errors.csv")).unwrap();
        assert_eq!(errors, format!("{ERRORS_HEADER}\n"));
        let rates = fs::read_to_string(dir.path().join("rates.csv")).unwrap();
        assert_eq!(rates, format!("{RATES_HEADER}\n"));
        let gp = fs::read_to_string(dir.path().join("plot.gp")).unwrap();
        assert!(gp.contains("set multiplot layout 1,3") && gp.trim_end().ends_with("unset multiplot"));
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["label"], "ex1i");
    }

    #[test]
    fn errors_csv_round_trip() {
        let rows = vec![
            ErrorRow {
                method: Method::Lm,
                delta: 0.00125,
                n_runs: 10,
                n_ok: 10,
                loc_mean: Some(1.0 / 3.0),
                loc_stderr: Some(2.5e-17),
                amp_mean: Some(0.123456789012345),
                amp_stderr: Some(1e-300),
                amp_rel_l2_mean: Some(0.1),
            },
            ErrorRow {
                method: Method::Direct,
                delta: 0.02,
                n_runs: 10,
                n_ok: 0,
                loc_mean: None,
                loc_stderr: None,
                amp_mean: None,
                amp_stderr: None,
                amp_rel_l2_mean: None,
            },
        ];
        let mut buf = Vec::new();
        write_errors_csv(&mut buf, &rows).unwrap();
        assert_eq!(read_errors_csv(buf.as_slice()).unwrap(), rows);
        assert!(read_errors_csv("bad header\n".as_bytes()).is_err());
        let bad = format!("{ERRORS_HEADER}\nlm,x,1,1,,,,,\n");
        assert!(matches!(read_errors_csv(bad.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn rates_csv_format() {
        let rates = vec![RateRow {
            method: Method::Lm,
            quantity: "location".into(),
            n_points: 5,
            fit: RateFit {
                slope: 1.0,
                intercept: 0.5,
                r2: 0.99,
            },
        }];
        let mut buf = Vec::new();
        write_rates_csv(&mut buf, &rates).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            format!("{RATES_HEADER}\nlm,location,5,1e0,5e-1,9.9e-1\n")
        );
    }

    #[test]
    fn amplitude_overlay_columns() {
        let mut rep = empty_report();
        rep.truth = LmParams {
            locations: rep.truth.locations.clone(),
            amplitudes: rep.truth.amplitudes.clone(),
        };
        let mut buf = Vec::new();
        write_amplitude_csv(&mut buf, &rep, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time,true_0\n0e0,5e-1\n"));
        assert_eq!(text.lines().count(), rep.inversion_grid.n_steps + 2);
    }
}
