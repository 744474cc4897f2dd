//! Run configuration: a TOML file with one table per parameter group.
//!
//! Every key is optional; missing keys take the defaults below. Command-line
//! flags (`--seed`, `--out`, `--jobs`, `--input`) override the file.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::path::PathBuf;

use nvgrav::hilbert::FockSpec;
use nvgrav::model::{
    couplings_from_physical, default_d, CouplingSet, DirectionCosines, PhysicalParams, PulseMode,
    DEFAULT_OMEGA_Z,
};
use nvgrav::perturb::PerturbOptions;
use nvgrav::ramsey::{Engine, InitialMotion, Model, Sampling, SequenceSpec};
use nvgrav::C64;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// λ and K of the default fringe preset.
const PRESET_LAMBDA: f64 = 0.1;
const PRESET_K: f64 = 10.0;
/// Along-z Δλ of the default fidelity grid.
const FIDELITY_DLAMBDA: f64 = 0.1;

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub physical: Option<PhysicalSection>,
    pub couplings: CouplingSection,
    pub model: ModelSection,
    pub truncation: TruncationSection,
    pub sequence: SequenceSection,
    pub grid: GridSection,
    pub psd: PsdSection,
    pub synth: SynthSection,
    /// Output location; not echoed into table headers so that runs into
    /// different directories stay byte-identical.
    #[serde(skip_serializing)]
    pub output: OutputSection,
}

/// Laboratory parameters in SI units; when present they set the couplings
/// before `[couplings]` overrides are applied.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicalSection {
    pub omega_x: f64,
    pub omega_y: f64,
    pub omega_z: f64,
    pub mass: Option<f64>,
    pub radius: Option<f64>,
    pub density: f64,
    pub theta: f64,
    pub theta_x: Option<f64>,
    pub theta_y: Option<f64>,
    pub magnet_radius: f64,
    pub magnetization: f64,
    pub magnet_distance: f64,
    pub zero_field_splitting: Option<f64>,
    pub g_nv: f64,
}

impl Default for PhysicalSection {
    fn default() -> Self {
        let p = PhysicalParams::default();
        Self {
            omega_x: p.omega_x,
            omega_y: p.omega_y,
            omega_z: p.omega_z,
            mass: p.mass,
            radius: p.radius,
            density: p.density,
            theta: p.theta,
            theta_x: p.theta_x,
            theta_y: p.theta_y,
            magnet_radius: p.magnet_radius,
            magnetization: p.magnetization,
            magnet_distance: p.magnet_distance,
            zero_field_splitting: p.zero_field_splitting,
            g_nv: p.g_nv,
        }
    }
}

impl PhysicalSection {
    fn params(&self) -> PhysicalParams {
        PhysicalParams {
            omega_x: self.omega_x,
            omega_y: self.omega_y,
            omega_z: self.omega_z,
            mass: self.mass,
            radius: self.radius,
            density: self.density,
            theta: self.theta,
            theta_x: self.theta_x,
            theta_y: self.theta_y,
            magnet_radius: self.magnet_radius,
            magnetization: self.magnetization,
            magnet_distance: self.magnet_distance,
            zero_field_splitting: self.zero_field_splitting,
            g_nv: self.g_nv,
            ..PhysicalParams::default()
        }
    }
}

/// Dimensionless couplings in units of ħω_z. `dlambda` and `dlambda_x` are
/// the values for gravity along z and along x; fringe scans tilt them.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingSection {
    pub lambda: Option<f64>,
    pub dlambda: Option<f64>,
    pub dlambda_x: Option<f64>,
    pub dlambda_y: Option<f64>,
    pub gamma_x: Option<f64>,
    pub gamma_y: Option<f64>,
    pub d: Option<f64>,
    pub omega_x_ratio: Option<f64>,
    pub omega_y_ratio: Option<f64>,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Analytic,
    Exact1d,
    Exact3d,
    Perturb3d,
    Misaligned,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Perturbative,
    Exact,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub engine: EngineKind,
    /// NV axis direction cosines for the single-point misaligned model.
    pub cosines: [f64; 3],
    pub window: f64,
    pub degeneracy: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let o = PerturbOptions::default();
        Self {
            kind: ModelKind::Analytic,
            engine: EngineKind::Perturbative,
            cosines: [0.0, 0.0, 1.0],
            window: o.window,
            degeneracy: o.eps_degen,
        }
    }
}

/// Fock cutoffs: `n` for one-mode models, `nx, ny, nz` for three modes.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruncationSection {
    pub n: usize,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Default for TruncationSection {
    fn default() -> Self {
        Self {
            n: 60,
            nx: 8,
            ny: 8,
            nz: 24,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum MotionKind {
    Vacuum,
    Coherent,
    Thermal,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ThermalMethod {
    Sample,
    Density,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceSection {
    /// Hold time in trap periods.
    pub cycles: f64,
    /// Microwave Rabi frequency in units of ω_z; absent means ideal pulses.
    pub rabi: Option<f64>,
    pub motion: MotionKind,
    pub beta: [f64; 2],
    pub nbar: f64,
    pub thermal_method: ThermalMethod,
    pub thermal_samples: usize,
    /// Gravity tilt for the `ramsey` command.
    pub theta: f64,
}

impl Default for SequenceSection {
    fn default() -> Self {
        Self {
            cycles: 1.0,
            rabi: None,
            motion: MotionKind::Vacuum,
            beta: [0.0, 0.0],
            nbar: 0.0,
            thermal_method: ThermalMethod::Sample,
            thermal_samples: nvgrav::ramsey::DEFAULT_THERMAL_SAMPLES,
            theta: 0.0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// Explicit θ values; when empty, `theta_points` values span
    /// [`theta_min`, `theta_max`] inclusively.
    pub theta: Vec<f64>,
    pub theta_min: f64,
    pub theta_max: f64,
    pub theta_points: usize,
    pub cx: Vec<f64>,
    pub lambda: Vec<f64>,
    /// γ values; γ_x = γ_y = γ unless `gamma_y` is given, in which case the
    /// grid is the product `gamma × gamma_y`.
    pub gamma: Vec<f64>,
    pub gamma_y: Option<Vec<f64>>,
    /// Re-run each fidelity point with doubled cutoffs.
    pub convergence: bool,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            theta: Vec::new(),
            theta_min: FRAC_PI_2 - PI / 20.0,
            theta_max: FRAC_PI_2,
            theta_points: 60,
            cx: vec![0.0],
            lambda: vec![0.025, 0.05, 0.1],
            gamma: vec![0.1, 0.2, 0.32, 0.4],
            gamma_y: None,
            convergence: true,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsdSection {
    pub input: Option<PathBuf>,
    pub segment_length: usize,
    pub overlap: usize,
    pub peaks: usize,
}

impl Default for PsdSection {
    fn default() -> Self {
        Self {
            input: None,
            segment_length: 16384,
            overlap: 8192,
            peaks: 3,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub freqs_hz: Vec<f64>,
    pub damping_hz: Vec<f64>,
    pub temperature_scale: f64,
    pub sample_rate: f64,
    pub duration: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            freqs_hz: vec![60e3, 65e3, 11e3],
            damping_hz: vec![300.0, 300.0, 60.0],
            temperature_scale: 1.0,
            sample_rate: 500e3,
            duration: 0.2,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("."),
        }
    }
}

fn invalid(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

fn fock(key: &str, n: usize) -> Result<FockSpec, CliError> {
    FockSpec::new(n).map_err(|e| invalid(key, e))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// The resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    /// Couplings for the fringe and single-point commands: physical
    /// parameters (if any) followed by `[couplings]` overrides. Without
    /// `[physical]` the base is the fringe preset: λ = 0.1 and the along-z
    /// Δλ chosen so that K = 8λΔλt₀ = 10, which takes P₀ from 1 at θ = π/2
    /// to about 0 at θ = π/2 − π/20.
    pub fn couplings(&self) -> Result<CouplingSet, CliError> {
        let dlambda = PRESET_K / (8.0 * PRESET_LAMBDA * TAU);
        self.couplings_over(CouplingSet::new(PRESET_LAMBDA, dlambda))
    }

    /// Base couplings for the fidelity grid (λ is set per grid point):
    /// Δλ = 0.1 unless `[physical]` or `[couplings]` say otherwise.
    pub fn fidelity_couplings(&self) -> Result<CouplingSet, CliError> {
        self.couplings_over(CouplingSet::new(0.05, FIDELITY_DLAMBDA))
    }

    fn couplings_over(&self, preset: CouplingSet) -> Result<CouplingSet, CliError> {
        let mut c = match &self.physical {
            Some(p) => couplings_from_physical(&p.params())
                .map_err(|e| invalid("physical", e))?
                .couplings,
            None => preset.with_d(default_d(DEFAULT_OMEGA_Z)),
        };
        let o = &self.couplings;
        if let Some(v) = o.lambda {
            c.lambda = v;
        }
        if let Some(v) = o.dlambda {
            c.dlambda = v;
        }
        if let Some(v) = o.dlambda_x {
            c.dlambda_x = v;
        }
        if let Some(v) = o.dlambda_y {
            c.dlambda_y = v;
        }
        if let Some(v) = o.d {
            c.d = v;
        }
        if o.omega_x_ratio.is_some() || o.omega_y_ratio.is_some() {
            c = c.with_transverse_ratios(
                o.omega_x_ratio.unwrap_or(c.omega_x_ratio),
                o.omega_y_ratio.unwrap_or(c.omega_y_ratio),
            );
        }
        if o.gamma_x.is_some() || o.gamma_y.is_some() {
            c = c.with_gammas(o.gamma_x.unwrap_or(c.gamma_x), o.gamma_y.unwrap_or(c.gamma_y));
        }
        c.validate().map_err(|e| invalid("couplings", e))?;
        Ok(c)
    }

    pub fn perturb_options(&self) -> Result<PerturbOptions, CliError> {
        if !(self.model.window > 0.0) {
            return Err(invalid("model.window", "must be positive"));
        }
        if !(self.model.degeneracy > 0.0) {
            return Err(invalid("model.degeneracy", "must be positive"));
        }
        Ok(PerturbOptions {
            window: self.model.window,
            eps_degen: self.model.degeneracy,
        })
    }

    pub fn one_mode(&self) -> Result<FockSpec, CliError> {
        fock("truncation.n", self.truncation.n)
    }

    pub fn three_modes(&self) -> Result<[FockSpec; 3], CliError> {
        let t = &self.truncation;
        Ok([
            fock("truncation.nx", t.nx)?,
            fock("truncation.ny", t.ny)?,
            fock("truncation.nz", t.nz)?,
        ])
    }

    pub fn model(&self) -> Result<Model, CliError> {
        let engine = match self.model.engine {
            EngineKind::Perturbative => Engine::Perturbative(self.perturb_options()?),
            EngineKind::Exact => Engine::Exact,
        };
        Ok(match self.model.kind {
            ModelKind::Analytic => Model::Analytic1d,
            ModelKind::Exact1d => Model::Exact1d {
                spec: self.one_mode()?,
            },
            ModelKind::Exact3d => Model::Exact3d {
                specs: self.three_modes()?,
            },
            ModelKind::Perturb3d => Model::Perturb3d {
                specs: self.three_modes()?,
                opts: self.perturb_options()?,
            },
            ModelKind::Misaligned => {
                let [x, y, z] = self.model.cosines;
                Model::Misaligned {
                    cosines: DirectionCosines::new(x, y, z)
                        .map_err(|e| invalid("model.cosines", e))?,
                    spec: self.one_mode()?,
                    engine,
                }
            }
        })
    }

    pub fn motion(&self) -> Result<InitialMotion, CliError> {
        let s = &self.sequence;
        Ok(match s.motion {
            MotionKind::Vacuum => InitialMotion::Vacuum,
            MotionKind::Coherent => InitialMotion::Coherent(C64::new(s.beta[0], s.beta[1])),
            MotionKind::Thermal => {
                if !(s.nbar >= 0.0) || !s.nbar.is_finite() {
                    return Err(invalid("sequence.nbar", "must be a non-negative number"));
                }
                InitialMotion::Thermal(s.nbar)
            }
        })
    }

    pub fn sampling(&self) -> Result<Sampling, CliError> {
        Ok(match self.sequence.thermal_method {
            ThermalMethod::Sample => {
                if self.sequence.thermal_samples == 0 {
                    return Err(invalid("sequence.thermal_samples", "must be positive"));
                }
                Sampling::PSample {
                    count: self.sequence.thermal_samples,
                    seed: self.seed,
                }
            }
            ThermalMethod::Density => Sampling::DensityExact,
        })
    }

    pub fn sequence_spec(&self) -> Result<SequenceSpec, CliError> {
        let s = &self.sequence;
        if !(s.cycles > 0.0) || !s.cycles.is_finite() {
            return Err(invalid("sequence.cycles", "must be positive"));
        }
        let pulse = match s.rabi {
            None => PulseMode::Ideal,
            Some(omega) if omega > 0.0 && omega.is_finite() => PulseMode::Finite { omega },
            Some(_) => return Err(invalid("sequence.rabi", "must be positive")),
        };
        Ok(SequenceSpec::new(self.model()?)
            .with_motion(self.motion()?)
            .with_hold_time(s.cycles * TAU)
            .with_pulse(pulse))
    }

    pub fn theta_grid(&self) -> Result<Vec<f64>, CliError> {
        let g = &self.grid;
        if !g.theta.is_empty() {
            if g.theta.iter().any(|t| !t.is_finite()) {
                return Err(invalid("grid.theta", "values must be finite"));
            }
            return Ok(g.theta.clone());
        }
        if g.theta_points < 2 {
            return Err(invalid("grid.theta_points", "need at least 2 points"));
        }
        if !(g.theta_max > g.theta_min) {
            return Err(invalid("grid.theta_max", "must exceed grid.theta_min"));
        }
        let step = (g.theta_max - g.theta_min) / (g.theta_points - 1) as f64;
        Ok((0..g.theta_points)
            .map(|k| {
                if k + 1 == g.theta_points {
                    g.theta_max
                } else {
                    g.theta_min + k as f64 * step
                }
            })
            .collect())
    }

    pub fn cx_grid(&self) -> Result<Vec<f64>, CliError> {
        if self.grid.cx.is_empty() {
            return Err(invalid("grid.cx", "must not be empty"));
        }
        if self.grid.cx.iter().any(|c| !(c.abs() <= 1.0)) {
            return Err(invalid("grid.cx", "values must lie in [-1, 1]"));
        }
        Ok(self.grid.cx.clone())
    }

    /// (λ, γ_x, γ_y) points in row-major order.
    pub fn fidelity_points(&self) -> Result<Vec<(f64, f64, f64)>, CliError> {
        let g = &self.grid;
        if g.lambda.is_empty() {
            return Err(invalid("grid.lambda", "must not be empty"));
        }
        if g.gamma.is_empty() {
            return Err(invalid("grid.gamma", "must not be empty"));
        }
        let check = |key: &str, v: &[f64]| {
            if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                Err(invalid(key, "values must be non-negative"))
            } else {
                Ok(())
            }
        };
        check("grid.lambda", &g.lambda)?;
        check("grid.gamma", &g.gamma)?;
        let mut out = Vec::new();
        for &l in &g.lambda {
            match &g.gamma_y {
                None => out.extend(g.gamma.iter().map(|&gm| (l, gm, gm))),
                Some(gy) => {
                    check("grid.gamma_y", gy)?;
                    for &gx in &g.gamma {
                        out.extend(gy.iter().map(|&y| (l, gx, y)));
                    }
                }
            }
        }
        Ok(out)
    }
}
