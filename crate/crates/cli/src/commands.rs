use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nvgrav::analytic::{gravitational_phase, ramsey_population_at};
use nvgrav::hilbert::{coherent_leakage, FockSpec};
use nvgrav::model::CouplingSet;
use nvgrav::perturb::{perturbation_fidelity_report, FidelityPoint, FidelityReport};
use nvgrav::ramsey::{at_tilt, fringe_scan_sampled, run_sequence, thermal_p0, InitialMotion, Model};
use nvgrav::trapdata::{fit_peaks, format_peaks, format_psd, psd, read_trace, synthesize_trace};
use nvgrav::{C64, PERIOD};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::{CliError, Command, VERSION};

pub fn dispatch(cmd: &Command, cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    match cmd {
        Command::Fringe => fringe(cfg),
        Command::FidelityGrid => fidelity_grid(cfg),
        Command::Ramsey => ramsey(cfg),
        Command::Psd { .. } => psd_cmd(cfg),
        Command::Synth => synth(cfg),
    }
}

/// Version, resolved config (without the output location) and diagnostics.
pub fn header(
    command: &str,
    cfg: &RunConfig,
    couplings: Option<&CouplingSet>,
    diagnostics: &[String],
) -> String {
    let mut out = String::new();
    writeln!(out, "# nvgrav {VERSION} {command}").unwrap();
    writeln!(out, "# config:").unwrap();
    for line in cfg.to_toml().lines().filter(|l| !l.is_empty()) {
        writeln!(out, "#   {line}").unwrap();
    }
    if let Some(c) = couplings {
        writeln!(
            out,
            "# couplings: lambda = {}, dlambda = {}, dlambda_x = {}, dlambda_y = {}, gamma_x = {}, gamma_y = {}, d = {}",
            c.lambda, c.dlambda, c.dlambda_x, c.dlambda_y, c.gamma_x, c.gamma_y, c.d
        )
        .unwrap();
    }
    for d in diagnostics {
        writeln!(out, "# {d}").unwrap();
    }
    out
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<PathBuf, CliError> {
    let io = |source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Largest coherent amplitude reached on the axial trajectories, over all
/// tilts in `thetas`.
fn trajectory_radius(c: &CouplingSet, beta: C64, thetas: &[f64]) -> f64 {
    thetas
        .iter()
        .flat_map(|&t| {
            let ct = at_tilt(c, t);
            [-1, 0, 1].map(|s| {
                let u = ct.axial_shift(s);
                (beta - u).norm() + u.abs()
            })
        })
        .fold(0.0, f64::max)
}

fn truncation_lines(cfg: &RunConfig, model: &Model, c: &CouplingSet, thetas: &[f64]) -> Vec<String> {
    let s = &cfg.sequence;
    let beta = match s.motion {
        crate::config::MotionKind::Coherent => C64::new(s.beta[0], s.beta[1]),
        _ => C64::new(0.0, 0.0),
    };
    let radius = trajectory_radius(c, beta, thetas);
    let axial = |spec: &FockSpec| {
        format!(
            "trajectory radius {radius:.4}, coherent leakage at that radius {:.3e}",
            coherent_leakage(C64::new(radius, 0.0), spec.n_levels())
        )
    };
    let mut lines = vec![match model {
        Model::Analytic1d => "truncation: none (closed form)".to_string(),
        Model::Exact1d { spec } | Model::Misaligned { spec, .. } => {
            format!("truncation: n = {}; {}", spec.n_levels(), axial(spec))
        }
        Model::Exact3d { specs } | Model::Perturb3d { specs, .. } => format!(
            "truncation: (nx, ny, nz) = ({}, {}, {}); {}",
            specs[0].n_levels(),
            specs[1].n_levels(),
            specs[2].n_levels(),
            axial(&specs[2])
        ),
    }];
    if let crate::config::MotionKind::Thermal = s.motion {
        lines.push(format!(
            "thermal: nbar = {}, method = {:?}, samples = {}, seed = {}",
            s.nbar, s.thermal_method, s.thermal_samples, cfg.seed
        ));
    }
    lines
}

fn fringe(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let c = cfg.couplings()?;
    let spec = cfg.sequence_spec()?;
    let thetas = cfg.theta_grid()?;
    let cx = cfg.cx_grid()?;
    let scan = fringe_scan_sampled(&thetas, &cx, &spec, &c, cfg.sampling()?)?;

    let mut diag = truncation_lines(cfg, &spec.model, &c, &thetas);
    let k = at_tilt(&c, thetas[0]).fringe_k(thetas[0]);
    diag.push(format!("K = 8 lambda dlambda t0 / cos(theta) = {k:.6}"));
    let head = header("fringe", cfg, Some(&c), &diag);

    let mut table = head.clone();
    table.push_str("theta_rad,c_x,p0\n");
    for (row, &cx) in scan.cx_grid.iter().enumerate() {
        for (col, &t) in scan.theta_grid.iter().enumerate() {
            writeln!(table, "{t:.12},{cx:.6},{:.12}", scan.p0[row][col]).unwrap();
        }
    }
    let mut vis = head;
    vis.push_str("c_x,visibility\n");
    for (cx, v) in scan.cx_grid.iter().zip(&scan.visibility) {
        writeln!(vis, "{cx:.6},{v:.12e}").unwrap();
    }
    let dir = &cfg.output.dir;
    Ok(vec![
        write_file(dir, "fringe.csv", &table)?,
        write_file(dir, "visibility.csv", &vis)?,
    ])
}

fn fidelity_grid(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let base = cfg.fidelity_couplings()?;
    let specs = cfg.three_modes()?;
    let doubled = specs.map(|s| s.doubled());
    let opts = cfg.perturb_options()?;
    let beta = match cfg.motion()? {
        InitialMotion::Vacuum => C64::new(0.0, 0.0),
        InitialMotion::Coherent(b) => b,
        InitialMotion::Thermal(_) => {
            return Err(CliError::Config(
                "sequence.motion: the fidelity grid needs a pure (vacuum or coherent) state".into(),
            ))
        }
    };
    let points = cfg.fidelity_points()?;
    let convergence = cfg.grid.convergence;
    let rows: Result<Vec<(FidelityReport, Option<f64>)>, nvgrav::Error> = points
        .par_iter()
        .map(|&(lambda, gamma_x, gamma_y)| {
            let p = FidelityPoint {
                lambda,
                gamma_x,
                gamma_y,
            };
            let r = perturbation_fidelity_report(&base, p, beta, specs, &opts)?;
            let delta = if convergence {
                let r2 = perturbation_fidelity_report(&base, p, beta, doubled, &opts)?;
                Some((r2.fidelity - r.fidelity).abs())
            } else {
                None
            };
            Ok((r, delta))
        })
        .collect();
    let rows = rows?;

    let max_leak = rows.iter().map(|(r, _)| r.edge_leakage).fold(0.0, f64::max);
    let max_states = rows.iter().map(|(r, _)| r.window_states).max().unwrap_or(0);
    let mut diag = vec![
        format!(
            "truncation: (nx, ny, nz) = ({}, {}, {}); max edge leakage {max_leak:.3e}; max window states {max_states}",
            specs[0].n_levels(),
            specs[1].n_levels(),
            specs[2].n_levels()
        ),
        format!("time: t = {PERIOD:.12} (one axial period)"),
    ];
    if convergence {
        let worst = rows.iter().filter_map(|(_, d)| *d).fold(0.0, f64::max);
        diag.push(format!(
            "convergence: doubled cutoffs ({}, {}, {}), max |dF| = {worst:.3e}",
            doubled[0].n_levels(),
            doubled[1].n_levels(),
            doubled[2].n_levels()
        ));
    }
    let mut table = header("fidelity-grid", cfg, Some(&base), &diag);
    table.push_str("lambda,gamma_x,gamma_y,fidelity,convergence\n");
    for (&(l, gx, gy), (r, d)) in points.iter().zip(&rows) {
        let conv = d.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "-".into());
        writeln!(table, "{l:.6},{gx:.6},{gy:.6},{:.15},{conv}", r.fidelity).unwrap();
    }
    Ok(vec![write_file(&cfg.output.dir, "fidelity_grid.csv", &table)?])
}

fn ramsey(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let theta = cfg.sequence.theta;
    let c = at_tilt(&cfg.couplings()?, theta);
    let spec = cfg.sequence_spec()?;
    let (p0, spread) = match spec.initial_motion {
        InitialMotion::Thermal(_) => {
            let t = thermal_p0(&spec, &c, cfg.sampling()?)?;
            (t.mean, t.spread)
        }
        _ => (run_sequence(&spec, &c)?.p0, 0.0),
    };
    let beta = match spec.initial_motion {
        InitialMotion::Coherent(b) => b,
        _ => C64::new(0.0, 0.0),
    };
    let analytic = ramsey_population_at(beta, &c, spec.hold_time);
    let dphi = gravitational_phase(&c) * cfg.sequence.cycles;

    let diag = truncation_lines(cfg, &spec.model, &cfg.couplings()?, &[theta]);
    let mut table = header("ramsey", cfg, Some(&c), &diag);
    table.push_str("theta_rad,p0,p0_analytic,delta_phi,thermal_spread\n");
    writeln!(
        table,
        "{theta:.12},{p0:.12},{analytic:.12},{dphi:.12},{spread:.3e}"
    )
    .unwrap();
    Ok(vec![write_file(&cfg.output.dir, "ramsey.csv", &table)?])
}

fn psd_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let p = &cfg.psd;
    let input = p
        .input
        .as_ref()
        .ok_or_else(|| CliError::Config("psd.input: no trace file given (use --input)".into()))?;
    let ts = read_trace(input).map_err(|e| match e {
        nvgrav::Error::Io(source) => CliError::Io {
            path: input.clone(),
            source,
        },
        nvgrav::Error::Parse { line, msg } => CliError::Core(nvgrav::Error::Parse {
            line,
            msg: format!("{}: {msg}", input.display()),
        }),
        other => CliError::Core(other),
    })?;
    let rec = psd(&ts, p.segment_length, p.overlap)?;
    let peaks = fit_peaks(&rec, p.peaks)?;
    let diag = vec![
        "truncation: none".to_string(),
        format!(
            "trace: {} samples at {} Hz; {} segments, resolution {:.6} Hz, window {}",
            ts.len(),
            ts.sample_rate,
            rec.segments,
            rec.resolution(),
            rec.window
        ),
    ];
    let head = header("psd", cfg, None, &diag);
    let dir = &cfg.output.dir;
    Ok(vec![
        write_file(dir, "psd.csv", &(head.clone() + &format_psd(&rec)))?,
        write_file(dir, "peaks.csv", &(head + &format_peaks(&peaks)))?,
    ])
}

fn synth(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let s = &cfg.synth;
    let ts = synthesize_trace(
        &s.freqs_hz,
        &s.damping_hz,
        s.temperature_scale,
        s.sample_rate,
        s.duration,
        cfg.seed,
    )?;
    let head = header("synth", cfg, None, &["truncation: none".to_string()]);
    Ok(vec![write_file(
        &cfg.output.dir,
        "trace.txt",
        &(head + &ts.to_text()),
    )?])
}
