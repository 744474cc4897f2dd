//! Ramsey sequence: pulse, hold, pulse, read out the S_z = 0 population.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::analytic::ramsey_population_at;
use crate::error::{Error, Result};
use crate::evolver::{eigendecompose, evolve, evolve_density, DensityMatrix};
use crate::hilbert::{
    coherent_state, spin_index, tensor, FockSpec, HybridState, Kron, LabeledOperator, C64,
};
use crate::model::{
    hamiltonian_1d, hamiltonian_3d, hamiltonian_misaligned, microwave_pulse, CouplingSet,
    DirectionCosines, PulseMode,
};
use crate::perturb::{misaligned_evolution, PerturbOptions, PerturbativeEvolution, UnperturbedBasis};
use crate::PERIOD;

/// Default number of Glauber-P samples for thermal averages.
pub const DEFAULT_THERMAL_SAMPLES: usize = 256;

/// How the tilted-axis model is solved.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Engine {
    Perturbative(PerturbOptions),
    Exact,
}

impl Default for Engine {
    fn default() -> Self {
        Engine::Perturbative(PerturbOptions::default())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Model {
    Analytic1d,
    Exact1d {
        spec: FockSpec,
    },
    Exact3d {
        specs: [FockSpec; 3],
    },
    Perturb3d {
        specs: [FockSpec; 3],
        opts: PerturbOptions,
    },
    Misaligned {
        cosines: DirectionCosines,
        spec: FockSpec,
        engine: Engine,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialMotion {
    Vacuum,
    Coherent(C64),
    Thermal(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SequenceSpec {
    pub model: Model,
    pub initial_motion: InitialMotion,
    pub hold_time: f64,
    pub pulse: PulseMode,
}

impl SequenceSpec {
    /// One trap period with ideal pulses, starting from the motional vacuum.
    pub fn new(model: Model) -> Self {
        Self {
            model,
            initial_motion: InitialMotion::Vacuum,
            hold_time: PERIOD,
            pulse: PulseMode::Ideal,
        }
    }

    pub fn with_motion(mut self, motion: InitialMotion) -> Self {
        self.initial_motion = motion;
        self
    }

    pub fn with_cycles(mut self, cycles: u32) -> Self {
        self.hold_time = cycles as f64 * PERIOD;
        self
    }

    pub fn with_hold_time(mut self, t: f64) -> Self {
        self.hold_time = t;
        self
    }

    pub fn with_pulse(mut self, pulse: PulseMode) -> Self {
        self.pulse = pulse;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hold_time > 0.0) || !self.hold_time.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "hold_time must be positive, got {}",
                self.hold_time
            )));
        }
        if let InitialMotion::Thermal(nbar) = self.initial_motion {
            if !(nbar >= 0.0) || !nbar.is_finite() {
                return Err(Error::InvalidSpec(format!(
                    "thermal occupation must be non-negative, got {nbar}"
                )));
            }
        }
        Ok(())
    }
}

/// Result of one sequence.
#[derive(Clone, Debug)]
pub struct SequenceOutcome {
    pub p0: f64,
    /// State after the second pulse; absent for closed-form and thermal runs.
    pub final_state: Option<HybridState>,
    /// State just before the second pulse.
    pub before_readout: Option<HybridState>,
}

/// Arg of ⟨ψ₊|ψ₋⟩ between the s_z = ±1 blocks: the phase of the −1 branch
/// relative to the +1 branch.
pub fn branch_phase(state: &HybridState) -> f64 {
    let a = state.amplitudes();
    let block = a.len() / 3;
    let plus = &a[spin_index(1) * block..(spin_index(1) + 1) * block];
    let minus = &a[spin_index(-1) * block..(spin_index(-1) + 1) * block];
    let w: C64 = plus.iter().zip(minus).map(|(p, m)| p.conj() * m).sum();
    w.im.atan2(w.re)
}

/// Purity of the spin reduced state.
pub fn spin_purity(state: &HybridState) -> f64 {
    let r = state.reduced_first();
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += r[(i, j)].norm_sqr();
        }
    }
    s
}

fn spin_operator_on(layout: &[usize], u: &LabeledOperator) -> LabeledOperator {
    let rest = LabeledOperator::identity(&layout[1..]);
    tensor(&[u, &rest]).expect("non-empty")
}

fn after_pulse(state: &HybridState, u: &LabeledOperator) -> Result<HybridState> {
    state.apply(&spin_operator_on(state.layout(), u))
}

fn zero_population(state: &HybridState) -> f64 {
    state.first_factor_population(spin_index(0)).clamp(0.0, 1.0)
}

fn motion_state(motion: InitialMotion, spec: FockSpec) -> Result<HybridState> {
    match motion {
        InitialMotion::Vacuum => coherent_state(C64::new(0.0, 0.0), spec),
        InitialMotion::Coherent(b) => coherent_state(b, spec),
        InitialMotion::Thermal(_) => Err(Error::InvalidSpec(
            "thermal motion is not a pure state".into(),
        )),
    }
}

fn beta_of(motion: InitialMotion) -> C64 {
    match motion {
        InitialMotion::Coherent(b) => b,
        _ => C64::new(0.0, 0.0),
    }
}

/// Runs the sequence. Thermal initial motion is averaged with
/// [`DEFAULT_THERMAL_SAMPLES`] seeded Glauber-P draws.
pub fn run_sequence(spec: &SequenceSpec, c: &CouplingSet) -> Result<SequenceOutcome> {
    spec.validate()?;
    c.validate()?;
    if let InitialMotion::Thermal(_) = spec.initial_motion {
        let t = thermal_p0(spec, c, Sampling::default())?;
        return Ok(SequenceOutcome {
            p0: t.mean,
            final_state: None,
            before_readout: None,
        });
    }
    let u = microwave_pulse(spec.pulse)?;
    let zero = HybridState::basis(&[3], &[spin_index(0)])?;
    let spin0 = zero.apply(&u)?;
    let t = spec.hold_time;

    let before = match spec.model {
        Model::Analytic1d => {
            return Ok(SequenceOutcome {
                p0: ramsey_population_at(beta_of(spec.initial_motion), c, t),
                final_state: None,
                before_readout: None,
            });
        }
        Model::Exact1d { spec: n } => {
            let psi = spin0.kron(&motion_state(spec.initial_motion, n)?);
            let eig = eigendecompose(&hamiltonian_1d(c, n))?;
            evolve(&psi, &eig, t)?
        }
        Model::Exact3d { specs } => {
            let basis = UnperturbedBasis::three_d(c, specs)?;
            let psi = initial_3d(&basis, &spin0, spec.initial_motion)?;
            let eig = eigendecompose(&hamiltonian_3d(c, specs).full().to_operator())?;
            evolve(&psi, &eig, t)?
        }
        Model::Perturb3d { specs, opts } => {
            let basis = UnperturbedBasis::three_d(c, specs)?;
            let psi = initial_3d(&basis, &spin0, spec.initial_motion)?;
            let v = hamiltonian_3d(c, specs).perturbation();
            PerturbativeEvolution::new(basis, &v, &psi, &opts)?.state_at(t)?
        }
        Model::Misaligned {
            cosines,
            spec: n,
            engine,
        } => {
            let psi = spin0.kron(&motion_state(spec.initial_motion, n)?);
            match engine {
                Engine::Perturbative(opts) => {
                    misaligned_evolution(c, cosines, n, &psi, &opts)?.state_at(t)?
                }
                Engine::Exact => {
                    let h = hamiltonian_misaligned(c, cosines, n)?.full().to_operator();
                    evolve(&psi, &eigendecompose(&h)?, t)?
                }
            }
        }
    };
    let fin = after_pulse(&before, &u)?;
    Ok(SequenceOutcome {
        p0: zero_population(&fin),
        final_state: Some(fin),
        before_readout: Some(before),
    })
}

/// spin ⊗ displaced x, y ground states ⊗ axial motion.
fn initial_3d(
    basis: &UnperturbedBasis,
    spin: &HybridState,
    motion: InitialMotion,
) -> Result<HybridState> {
    let modes = basis.modes();
    let mut parts = vec![spin.clone()];
    for m in &modes[..2] {
        let alpha = C64::new(m.alpha[0], 0.0);
        parts.push(coherent_state(alpha, m.spec)?);
    }
    parts.push(motion_state(motion, modes[2].spec)?);
    let refs: Vec<&HybridState> = parts.iter().collect();
    tensor(&refs)
}

/// Thermal averaging method.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sampling {
    /// Average over coherent states drawn from the Glauber P function.
    PSample { count: usize, seed: u64 },
    /// Evolve the thermal density matrix (exact 1D model only).
    DensityExact,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling::PSample {
            count: DEFAULT_THERMAL_SAMPLES,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThermalOutcome {
    pub mean: f64,
    /// Standard deviation across samples (zero for the density method).
    pub spread: f64,
    pub samples: Vec<f64>,
}

/// Coherent amplitudes with real and imaginary parts ~ N(0, n̄/2).
pub fn glauber_samples(nbar: f64, count: usize, seed: u64) -> Result<Vec<C64>> {
    if !(nbar >= 0.0) || !nbar.is_finite() {
        return Err(Error::Domain(format!(
            "thermal occupation must be non-negative, got {nbar}"
        )));
    }
    if nbar == 0.0 {
        return Ok(vec![C64::new(0.0, 0.0); count]);
    }
    let normal =
        Normal::new(0.0, (nbar / 2.0).sqrt()).map_err(|e| Error::Sampling(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let re = normal.sample(&mut rng);
            let im = normal.sample(&mut rng);
            C64::new(re, im)
        })
        .collect())
}

/// Thermal P₀ for `spec` with `InitialMotion::Thermal(n̄)`.
pub fn thermal_p0(spec: &SequenceSpec, c: &CouplingSet, sampling: Sampling) -> Result<ThermalOutcome> {
    spec.validate()?;
    let nbar = match spec.initial_motion {
        InitialMotion::Thermal(n) => n,
        _ => {
            return Err(Error::InvalidSpec(
                "thermal_p0 requires thermal initial motion".into(),
            ))
        }
    };
    match sampling {
        Sampling::PSample { count, seed } => {
            if count == 0 {
                return Err(Error::Sampling("sample count must be positive".into()));
            }
            if nbar == 0.0 {
                let p = run_sequence(&spec.with_motion(InitialMotion::Vacuum), c)?.p0;
                return Ok(ThermalOutcome {
                    mean: p,
                    spread: 0.0,
                    samples: vec![p; count],
                });
            }
            let betas = glauber_samples(nbar, count, seed)?;
            let samples: Result<Vec<f64>> = betas
                .par_iter()
                .map(|&b| {
                    let s = spec.with_motion(InitialMotion::Coherent(b));
                    Ok(run_sequence(&s, c)?.p0)
                })
                .collect();
            let samples = samples?;
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
            Ok(ThermalOutcome {
                mean,
                spread: var.sqrt(),
                samples,
            })
        }
        Sampling::DensityExact => {
            let n = match spec.model {
                Model::Exact1d { spec } => spec,
                _ => {
                    return Err(Error::InvalidSpec(
                        "density-matrix averaging is available for the exact 1D model only".into(),
                    ))
                }
            };
            let u = microwave_pulse(spec.pulse)?;
            let spin0 = HybridState::basis(&[3], &[spin_index(0)])?.apply(&u)?;
            let rho = DensityMatrix::pure(&spin0).kron(&DensityMatrix::thermal(nbar, n)?);
            let eig = eigendecompose(&hamiltonian_1d(c, n))?;
            let rho_t = evolve_density(&rho, &eig, spec.hold_time)?;
            let fin = rho_t.conjugate(&spin_operator_on(rho_t.layout(), &u))?;
            let p0 = fin.reduced_first()[(spin_index(0), spin_index(0))].re.clamp(0.0, 1.0);
            Ok(ThermalOutcome {
                mean: p0,
                spread: 0.0,
                samples: vec![p0],
            })
        }
    }
}

/// Couplings at gravity tilt θ: Δλ scales with cosθ and Δλ_x with sinθ, so
/// `c.dlambda` and `c.dlambda_x` are the values for gravity along z and x.
pub fn at_tilt(c: &CouplingSet, theta: f64) -> CouplingSet {
    let mut out = *c;
    out.dlambda = c.dlambda * theta.cos();
    out.dlambda_x = c.dlambda_x * theta.sin();
    out
}

/// P₀ over a (c_x, θ) grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FringeScan {
    pub theta_grid: Vec<f64>,
    pub cx_grid: Vec<f64>,
    /// `p0[row][col]` for `cx_grid[row]`, `theta_grid[col]`.
    pub p0: Vec<Vec<f64>>,
    pub visibility: Vec<f64>,
}

/// (max − min)/(max + min).
pub fn visibility(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if max + min > 0.0 {
        (max - min) / (max + min)
    } else {
        0.0
    }
}

fn row_model(model: Model, cx: f64) -> Result<Model> {
    let cosines = DirectionCosines::in_xz_plane(cx)?;
    Ok(match model {
        Model::Misaligned { spec, engine, .. } => Model::Misaligned {
            cosines,
            spec,
            engine,
        },
        m if cx == 0.0 => m,
        Model::Exact1d { spec } => Model::Misaligned {
            cosines,
            spec,
            engine: Engine::default(),
        },
        _ => {
            return Err(Error::InvalidSpec(
                "a non-zero c_x needs the misaligned or exact 1D model".into(),
            ))
        }
    })
}

/// Scans θ for every c_x. `c` holds the couplings for gravity along z (see
/// [`at_tilt`]); rows with c_x ≠ 0 use the tilted-axis model in the xz
/// plane. Points run in parallel and are assembled by index.
pub fn fringe_scan(
    theta_grid: &[f64],
    cx_grid: &[f64],
    spec: &SequenceSpec,
    c: &CouplingSet,
) -> Result<FringeScan> {
    fringe_scan_sampled(theta_grid, cx_grid, spec, c, Sampling::default())
}

/// [`fringe_scan`] with an explicit thermal averaging method, used only when
/// the initial motion is thermal.
pub fn fringe_scan_sampled(
    theta_grid: &[f64],
    cx_grid: &[f64],
    spec: &SequenceSpec,
    c: &CouplingSet,
    sampling: Sampling,
) -> Result<FringeScan> {
    if theta_grid.is_empty() || cx_grid.is_empty() {
        return Err(Error::InvalidSpec("fringe grids must be non-empty".into()));
    }
    let models: Result<Vec<Model>> = cx_grid.iter().map(|&cx| row_model(spec.model, cx)).collect();
    let models = models?;
    let nt = theta_grid.len();
    let flat: Result<Vec<f64>> = (0..cx_grid.len() * nt)
        .into_par_iter()
        .map(|k| {
            let s = SequenceSpec {
                model: models[k / nt],
                ..*spec
            };
            let ck = at_tilt(c, theta_grid[k % nt]);
            match s.initial_motion {
                InitialMotion::Thermal(_) => Ok(thermal_p0(&s, &ck, sampling)?.mean),
                _ => Ok(run_sequence(&s, &ck)?.p0),
            }
        })
        .collect();
    let flat = flat?;
    let p0: Vec<Vec<f64>> = flat.chunks(nt).map(|r| r.to_vec()).collect();
    let visibility = p0.iter().map(|r| visibility(r)).collect();
    Ok(FringeScan {
        theta_grid: theta_grid.to_vec(),
        cx_grid: cx_grid.to_vec(),
        p0,
        visibility,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{gravitational_phase, ramsey_population};
    use std::f64::consts::{PI, TAU};

    fn spec(n: usize) -> FockSpec {
        FockSpec::new(n).unwrap()
    }

    fn exact(n: usize) -> SequenceSpec {
        SequenceSpec::new(Model::Exact1d { spec: spec(n) })
    }

    #[test]
    fn no_gravity_full_population() {
        let c = CouplingSet::new(0.05, 0.0);
        let out = run_sequence(&SequenceSpec::new(Model::Analytic1d), &c).unwrap();
        assert!((out.p0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_matches_closed_form() {
        let c = CouplingSet::new(0.05, 0.1);
        let s = exact(60).with_motion(InitialMotion::Coherent(C64::new(1.0, 0.0)));
        let out = run_sequence(&s, &c).unwrap();
        let want = ramsey_population(gravitational_phase(&c));
        assert!((out.p0 - want).abs() <= 1e-6);
        let fin = out.final_state.unwrap();
        let total: f64 = (0..3).map(|i| fin.first_factor_population(i)).sum();
        assert!((total - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn full_contrast_preset() {
        let theta = PI / 2.0 - PI / 20.0;
        let lambda = 0.1;
        let c = CouplingSet::new(lambda, 10.0 / (8.0 * lambda * TAU));
        for s in [SequenceSpec::new(Model::Analytic1d), exact(40)] {
            assert!(run_sequence(&s, &at_tilt(&c, theta)).unwrap().p0 < 1e-4);
            assert!((run_sequence(&s, &at_tilt(&c, PI / 2.0)).unwrap().p0 - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn spin_disentangles_after_one_period() {
        let c = CouplingSet::new(0.1, 0.2);
        let s = exact(60).with_motion(InitialMotion::Coherent(C64::new(0.5, -0.5)));
        let out = run_sequence(&s, &c).unwrap();
        assert!(spin_purity(out.before_readout.as_ref().unwrap()) >= 1.0 - 1e-8);
        let mid = run_sequence(&s.with_hold_time(PI), &c).unwrap();
        assert!(spin_purity(mid.before_readout.as_ref().unwrap()) < 0.99);
    }

    #[test]
    fn branch_phase_is_gravitational_phase() {
        let c = CouplingSet::new(0.05, 0.1);
        let out = run_sequence(&exact(50), &c).unwrap();
        let dphi = branch_phase(out.before_readout.as_ref().unwrap());
        assert!((dphi - gravitational_phase(&c)).abs() < 1e-8);
    }

    #[test]
    fn cycles_accumulate_phase() {
        let c = CouplingSet::new(0.02, 0.05);
        let two = run_sequence(&exact(40).with_cycles(2), &c).unwrap();
        let dphi = branch_phase(two.before_readout.as_ref().unwrap());
        assert!((dphi - 2.0 * gravitational_phase(&c)).abs() < 1e-8);
        assert!((two.p0 - ramsey_population(2.0 * gravitational_phase(&c))).abs() < 1e-8);
    }

    #[test]
    fn beta_independence() {
        let c = CouplingSet::new(0.05, 0.1);
        let betas = glauber_samples(2.0, 20, 3).unwrap();
        for s in [SequenceSpec::new(Model::Analytic1d), exact(60)] {
            let ps: Vec<f64> = betas
                .iter()
                .map(|&b| run_sequence(&s.with_motion(InitialMotion::Coherent(b)), &c).unwrap().p0)
                .collect();
            let spread = ps.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - ps.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(spread <= 1e-8);
        }
    }

    #[test]
    fn finite_pulse_matches_ideal() {
        let c = CouplingSet::new(0.05, 0.1);
        let a = run_sequence(&exact(40), &c).unwrap().p0;
        let b = run_sequence(&exact(40).with_pulse(PulseMode::Finite { omega: 50.0 }), &c)
            .unwrap()
            .p0;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn thermal_vacuum_limit() {
        let c = CouplingSet::new(0.05, 0.1);
        let vac = run_sequence(&exact(40), &c).unwrap().p0;
        let th = exact(40).with_motion(InitialMotion::Thermal(0.0));
        let p = thermal_p0(&th, &c, Sampling::default()).unwrap();
        assert_eq!(p.mean, vac);
        assert_eq!(p.spread, 0.0);
        let d = thermal_p0(&th, &c, Sampling::DensityExact).unwrap();
        assert!((d.mean - vac).abs() < 1e-12);
    }

    #[test]
    fn thermal_analytic_spread_vanishes() {
        let c = CouplingSet::new(0.05, 0.1);
        let s = SequenceSpec::new(Model::Analytic1d).with_motion(InitialMotion::Thermal(600.0));
        let t = thermal_p0(&s, &c, Sampling::PSample { count: 20, seed: 11 }).unwrap();
        assert!(t.spread <= 1e-10);
        assert!((t.mean - ramsey_population(gravitational_phase(&c))).abs() <= 1e-10);
    }

    #[test]
    fn thermal_density_matches_analytic() {
        let c = CouplingSet::new(0.05, 0.1);
        let s = exact(60).with_motion(InitialMotion::Thermal(1.0));
        let t = thermal_p0(&s, &c, Sampling::DensityExact).unwrap();
        assert!((t.mean - ramsey_population(gravitational_phase(&c))).abs() <= 1e-5);
        // sampling at a modest occupation agrees too
        let p = thermal_p0(&s, &c, Sampling::PSample { count: 16, seed: 1 }).unwrap();
        assert!((p.mean - t.mean).abs() <= 1e-6);
    }

    #[test]
    fn thermal_needs_levels() {
        let c = CouplingSet::new(0.05, 0.1);
        let s = exact(20).with_motion(InitialMotion::Thermal(50.0));
        assert!(matches!(
            thermal_p0(&s, &c, Sampling::PSample { count: 8, seed: 0 }),
            Err(Error::Truncation { .. })
        ));
        assert!(matches!(
            thermal_p0(&s, &c, Sampling::DensityExact),
            Err(Error::Truncation { .. })
        ));
    }

    #[test]
    fn sampling_is_seeded() {
        assert_eq!(glauber_samples(3.0, 5, 9).unwrap(), glauber_samples(3.0, 5, 9).unwrap());
        assert_ne!(glauber_samples(3.0, 5, 9).unwrap(), glauber_samples(3.0, 5, 10).unwrap());
    }

    #[test]
    fn invalid_specs() {
        let c = CouplingSet::new(0.05, 0.1);
        assert!(run_sequence(&exact(20).with_hold_time(0.0), &c).is_err());
        assert!(run_sequence(&exact(20).with_motion(InitialMotion::Thermal(-1.0)), &c).is_err());
        assert!(thermal_p0(&exact(20), &c, Sampling::default()).is_err());
    }

    #[test]
    fn fringe_symmetry_and_aligned_row() {
        let lambda = 0.1;
        let c = CouplingSet::new(lambda, 10.0 / (8.0 * lambda * TAU));
        let thetas: Vec<f64> = (0..9).map(|k| PI / 2.0 - PI / 20.0 * k as f64 / 8.0).collect();
        let neg: Vec<f64> = thetas.iter().map(|t| -t).collect();
        let spec = SequenceSpec::new(Model::Analytic1d);
        let a = fringe_scan(&thetas, &[0.0], &spec, &c).unwrap();
        let b = fringe_scan(&neg, &[0.0], &spec, &c).unwrap();
        for (x, y) in a.p0[0].iter().zip(&b.p0[0]) {
            assert!((x - y).abs() < 1e-14);
        }
        let ex = fringe_scan(&thetas, &[0.0], &exact(40), &c).unwrap();
        for (x, y) in a.p0[0].iter().zip(&ex.p0[0]) {
            assert!((x - y).abs() < 1e-4);
        }
        assert!(a.visibility[0] > 0.99);
    }

    #[test]
    fn perpendicular_axis_keeps_some_visibility() {
        let lambda = 0.1;
        let c = CouplingSet::new(lambda, 10.0 / (8.0 * lambda * TAU)).with_d(40.5);
        let thetas: Vec<f64> = (0..6).map(|k| PI / 2.0 - PI / 20.0 * k as f64 / 5.0).collect();
        let m = Model::Misaligned {
            cosines: DirectionCosines::aligned(),
            spec: spec(40),
            engine: Engine::default(),
        };
        let scan = fringe_scan(&thetas, &[0.0, 1.0], &SequenceSpec::new(m), &c).unwrap();
        assert!(scan.visibility[1] > 0.0);
        assert!(scan.visibility[1] < scan.visibility[0]);
        for row in &scan.p0 {
            assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn misaligned_engines_agree() {
        let c = CouplingSet::new(0.1, 0.15).with_d(40.5);
        let cos = DirectionCosines::in_xz_plane(0.6).unwrap();
        let run = |engine| {
            let m = Model::Misaligned {
                cosines: cos,
                spec: spec(40),
                engine,
            };
            run_sequence(&SequenceSpec::new(m), &c).unwrap().p0
        };
        let pert = run(Engine::default());
        let ex = run(Engine::Exact);
        // residual of the perturbative phase is second order in λ c_x / D
        assert!((pert - ex).abs() < 1e-4, "{pert} vs {ex}");
    }

    #[test]
    fn three_dimensional_models_agree() {
        let c = CouplingSet::new(0.05, 0.1).with_d(40.5).with_gammas(0.4, 0.4);
        let specs = [spec(4), spec(4), spec(20)];
        let ex = run_sequence(&SequenceSpec::new(Model::Exact3d { specs }), &c).unwrap();
        let pt = run_sequence(
            &SequenceSpec::new(Model::Perturb3d {
                specs,
                opts: PerturbOptions::default(),
            }),
            &c,
        )
        .unwrap();
        let want = ramsey_population(gravitational_phase(&c));
        assert!((ex.p0 - want).abs() < 1e-3);
        assert!((pt.p0 - ex.p0).abs() < 1e-5);
    }
}
