//! Laboratory parameters, dimensionless couplings and every Hamiltonian of
//! the scheme.
//!
//! Sign conventions follow the Hamiltonians as written: in the spin sector
//! `s`, the axial mode sees `c†c − u_s (c + c†)` with `u_s = 2(λ s − Δλ)`,
//! so its equilibrium is displaced by `+u_s`. The same convention is used by
//! [`crate::analytic`] and [`crate::perturb`].

use std::f64::consts::{PI, SQRT_2, TAU};

use faer::Mat;

use crate::error::{Error, Result};
use crate::hilbert::{
    annihilation_matrix, small_to_mat, sx_matrix, sy_matrix, sz_matrix, FockSpec,
    LabeledOperator, TensorSum, C64,
};

pub const HBAR: f64 = 1.054_571_817e-34;
pub const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24;
pub const MU0: f64 = 1.256_637_062_12e-6;
pub const STANDARD_GRAVITY: f64 = 9.806_65;

/// NV zero-field splitting, Hz.
pub const NV_ZERO_FIELD_SPLITTING_HZ: f64 = 2.87e9;

/// Axial trap frequency assumed when only dimensionless couplings are given.
pub const DEFAULT_OMEGA_Z: f64 = TAU * 100e3;

const UNIT_TOLERANCE: f64 = 1e-9;

/// Zero-field splitting in units of ħω_z.
pub fn default_d(omega_z: f64) -> f64 {
    TAU * NV_ZERO_FIELD_SPLITTING_HZ / omega_z
}

/// Laboratory description of the trapped nanodiamond and magnet.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalParams {
    /// Trap angular frequencies, rad/s.
    pub omega_x: f64,
    pub omega_y: f64,
    pub omega_z: f64,
    /// Bead mass in kg; derived from `radius` and `density` when absent.
    pub mass: Option<f64>,
    pub radius: Option<f64>,
    pub density: f64,
    /// Angle between gravity and the trap axes, rad.
    pub theta: f64,
    pub theta_x: Option<f64>,
    pub theta_y: Option<f64>,
    /// Magnetized sphere: radius (m), magnetization (A/m), distance (m).
    pub magnet_radius: f64,
    pub magnetization: f64,
    pub magnet_distance: f64,
    /// Zero-field splitting, rad/s; defaults to 2π × 2.87 GHz.
    pub zero_field_splitting: Option<f64>,
    pub g_nv: f64,
    /// Direction cosines of the NV axis relative to the trap axes.
    pub c_x: f64,
    pub c_y: f64,
    pub c_z: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            omega_x: 10.0 * DEFAULT_OMEGA_Z,
            omega_y: 10.0 * DEFAULT_OMEGA_Z,
            omega_z: DEFAULT_OMEGA_Z,
            mass: None,
            radius: Some(100e-9),
            density: 3500.0,
            theta: PI / 2.0,
            theta_x: None,
            theta_y: None,
            magnet_radius: 40e-6,
            magnetization: 1.5e6,
            magnet_distance: 120e-6,
            zero_field_splitting: None,
            g_nv: 2.0028,
            c_x: 0.0,
            c_y: 0.0,
            c_z: 1.0,
        }
    }
}

impl PhysicalParams {
    pub fn mass(&self) -> Result<f64> {
        match (self.mass, self.radius) {
            (Some(m), _) => Ok(m),
            (None, Some(r)) => Ok(self.density * 4.0 / 3.0 * PI * r.powi(3)),
            (None, None) => Err(Error::Domain("either mass or radius is required".into())),
        }
    }

    /// Gravity angles (θ, θ_x, θ_y). Unless given, gravity lies in the x–z
    /// plane: θ_y = π/2 and θ_x = π/2 − θ.
    pub fn gravity_angles(&self) -> (f64, f64, f64) {
        let theta_x = self.theta_x.unwrap_or(PI / 2.0 - self.theta);
        let theta_y = self.theta_y.unwrap_or(PI / 2.0);
        (self.theta, theta_x, theta_y)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("omega_x", self.omega_x),
            ("omega_y", self.omega_y),
            ("omega_z", self.omega_z),
        ] {
            if !(w > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive, got {w}")));
            }
        }
        let mass = self.mass()?;
        if !(mass > 0.0) {
            return Err(Error::Domain(format!("mass must be positive, got {mass}")));
        }
        if !(self.magnet_distance.abs() > self.magnet_radius) {
            return Err(Error::Domain(format!(
                "|z0| = {} must exceed the magnet radius {}",
                self.magnet_distance, self.magnet_radius
            )));
        }
        DirectionCosines::new(self.c_x, self.c_y, self.c_z)?;
        if self.theta_x.is_some() && self.theta_y.is_some() {
            let (t, tx, ty) = self.gravity_angles();
            let s = t.cos().powi(2) + tx.cos().powi(2) + ty.cos().powi(2);
            if (s - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::Domain(format!(
                    "gravity direction cosines must square-sum to 1, got {s}"
                )));
            }
        }
        Ok(())
    }

    pub fn direction_cosines(&self) -> Result<DirectionCosines> {
        DirectionCosines::new(self.c_x, self.c_y, self.c_z)
    }
}

/// Dimensionless model constants, energies in units of ħω_z.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CouplingSet {
    pub lambda: f64,
    pub dlambda: f64,
    pub dlambda_x: f64,
    pub dlambda_y: f64,
    pub gamma_x: f64,
    pub gamma_y: f64,
    pub d: f64,
    pub omega_x_ratio: f64,
    pub omega_y_ratio: f64,
}

impl CouplingSet {
    /// Axial couplings with the default transverse trap (ω_{x,y} = 10 ω_z),
    /// no transverse gravity and the NV splitting at the default ω_z.
    pub fn new(lambda: f64, dlambda: f64) -> Self {
        Self {
            lambda,
            dlambda,
            dlambda_x: 0.0,
            dlambda_y: 0.0,
            gamma_x: (0.1f64).sqrt(),
            gamma_y: (0.1f64).sqrt(),
            d: default_d(DEFAULT_OMEGA_Z),
            omega_x_ratio: 10.0,
            omega_y_ratio: 10.0,
        }
    }

    pub fn with_d(mut self, d: f64) -> Self {
        self.d = d;
        self
    }

    pub fn with_dlambda(mut self, dlambda: f64) -> Self {
        self.dlambda = dlambda;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    /// Sets ω_{x,y}/ω_z and the matching γ = sqrt(ω_z/ω).
    pub fn with_transverse_ratios(mut self, rx: f64, ry: f64) -> Self {
        self.omega_x_ratio = rx;
        self.omega_y_ratio = ry;
        self.gamma_x = (1.0 / rx).sqrt();
        self.gamma_y = (1.0 / ry).sqrt();
        self
    }

    /// Sets γ_{x,y} and the matching ratios ω/ω_z = 1/γ². A zero γ switches
    /// the transverse coupling off and keeps the current ratio.
    pub fn with_gammas(mut self, gx: f64, gy: f64) -> Self {
        if gx > 0.0 {
            self.omega_x_ratio = 1.0 / (gx * gx);
        }
        if gy > 0.0 {
            self.omega_y_ratio = 1.0 / (gy * gy);
        }
        self.gamma_x = gx;
        self.gamma_y = gy;
        self
    }

    pub fn with_transverse_gravity(mut self, dlambda_x: f64, dlambda_y: f64) -> Self {
        self.dlambda_x = dlambda_x;
        self.dlambda_y = dlambda_y;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r, g) in [
            ("x", self.omega_x_ratio, self.gamma_x),
            ("y", self.omega_y_ratio, self.gamma_y),
        ] {
            if !(r > 0.0) {
                return Err(Error::Domain(format!(
                    "omega_{name}_ratio must be positive, got {r}"
                )));
            }
            if g != 0.0 && (g - (1.0 / r).sqrt()).abs() > 1e-12 {
                return Err(Error::Domain(format!(
                    "gamma_{name} = {g} inconsistent with omega_{name}_ratio = {r}"
                )));
            }
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("dlambda", self.dlambda),
            ("dlambda_x", self.dlambda_x),
            ("dlambda_y", self.dlambda_y),
            ("d", self.d),
        ] {
            if !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    /// Displaced centre u = 2(λ s − Δλ) of the axial mode in spin sector `s`.
    pub fn axial_shift(&self, s_z: i32) -> f64 {
        2.0 * (self.lambda * s_z as f64 - self.dlambda)
    }

    /// K = 8λΔλt₀/cosθ for a given tilt, the fringe-contrast figure of merit.
    pub fn fringe_k(&self, theta: f64) -> f64 {
        8.0 * self.lambda * self.dlambda * TAU / theta.cos()
    }
}

/// Result of [`couplings_from_physical`] with the magnet diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct CouplingReport {
    pub couplings: CouplingSet,
    /// m_z = M (4π/3) r0³, A·m².
    pub magnetic_moment: f64,
    /// On-axis gradient ∂B_z/∂z at the trap centre, T/m.
    pub gradient: f64,
    /// Axial zero-point length sqrt(ħ/(2 m ω_z)), m.
    pub zero_point_length: f64,
}

/// Converts laboratory parameters to dimensionless couplings (units ħω_z).
pub fn couplings_from_physical(p: &PhysicalParams) -> Result<CouplingReport> {
    p.validate()?;
    let mass = p.mass()?;
    let z0 = p.magnet_distance;
    let moment = p.magnetization * 4.0 / 3.0 * PI * p.magnet_radius.powi(3);
    // B_z = μ0 m/(2π|z0|³) + 2 B0 z with B0 = 3 μ0 m z0 / (4π |z0|⁵)
    let b0 = 3.0 * MU0 * moment * z0 / (4.0 * PI * z0.abs().powi(5));
    let zpf = |w: f64| (HBAR / (2.0 * mass * w)).sqrt();
    let energy = HBAR * p.omega_z;
    let (theta, theta_x, theta_y) = p.gravity_angles();
    let half_mg = 0.5 * mass * STANDARD_GRAVITY;

    let lambda = b0 * p.g_nv * BOHR_MAGNETON * zpf(p.omega_z) / energy;
    let dlambda = half_mg * theta.cos() * zpf(p.omega_z) / energy;
    let dlambda_x = half_mg * theta_x.cos() * zpf(p.omega_x) / energy;
    let dlambda_y = half_mg * theta_y.cos() * zpf(p.omega_y) / energy;
    let d = p
        .zero_field_splitting
        .map(|w| w / p.omega_z)
        .unwrap_or_else(|| default_d(p.omega_z));

    let couplings = CouplingSet {
        lambda,
        dlambda,
        dlambda_x,
        dlambda_y,
        gamma_x: 0.0,
        gamma_y: 0.0,
        d,
        omega_x_ratio: 0.0,
        omega_y_ratio: 0.0,
    }
    .with_transverse_ratios(p.omega_x / p.omega_z, p.omega_y / p.omega_z);

    Ok(CouplingReport {
        couplings,
        magnetic_moment: moment,
        gradient: 2.0 * b0,
        zero_point_length: zpf(p.omega_z),
    })
}

/// NV axis direction cosines relative to the trap axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectionCosines {
    pub c_x: f64,
    pub c_y: f64,
    pub c_z: f64,
}

impl DirectionCosines {
    pub fn new(c_x: f64, c_y: f64, c_z: f64) -> Result<Self> {
        let norm_sq = c_x * c_x + c_y * c_y + c_z * c_z;
        if (norm_sq - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::DirectionCosines { norm_sq });
        }
        Ok(Self { c_x, c_y, c_z })
    }

    /// Tilt in the x–z plane (c_y = 0, c_z ≥ 0).
    pub fn in_xz_plane(c_x: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&c_x.abs()) {
            return Err(Error::DirectionCosines { norm_sq: c_x * c_x });
        }
        Self::new(c_x, 0.0, (1.0 - c_x * c_x).max(0.0).sqrt())
    }

    pub fn aligned() -> Self {
        Self {
            c_x: 0.0,
            c_y: 0.0,
            c_z: 1.0,
        }
    }
}

fn position(n: usize) -> Mat<C64> {
    let a = annihilation_matrix(n);
    &a + a.adjoint()
}

fn number(n: usize) -> Mat<C64> {
    Mat::from_fn(n, n, |i, j| {
        if i == j {
            C64::new(i as f64, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

fn sz_squared() -> Mat<C64> {
    let sz = small_to_mat(&sz_matrix());
    &sz * &sz
}

/// Axial Hamiltonian D S_z² + c†c − 2(λ S_z − Δλ)(c + c†) in Kronecker form.
pub fn hamiltonian_1d_terms(c: &CouplingSet, spec: FockSpec) -> TensorSum {
    let n = spec.n_levels();
    let mut h = TensorSum::new(vec![3, n]);
    h.push(c.d, vec![Some(sz_squared()), None]);
    h.push(1.0, vec![None, Some(number(n))]);
    h.push(-2.0 * c.lambda, vec![Some(small_to_mat(&sz_matrix())), Some(position(n))]);
    h.push(2.0 * c.dlambda, vec![None, Some(position(n))]);
    h
}

/// Dense axial Hamiltonian on spin ⊗ z (ħ = ω_z = 1).
pub fn hamiltonian_1d(c: &CouplingSet, spec: FockSpec) -> LabeledOperator {
    hamiltonian_1d_terms(c, spec).to_operator()
}

/// Zeroth-order Hamiltonian and the two transverse couplings on
/// spin ⊗ x ⊗ y ⊗ z.
#[derive(Clone, Debug)]
pub struct Hamiltonian3d {
    pub h0: TensorSum,
    pub v_x: TensorSum,
    pub v_y: TensorSum,
}

impl Hamiltonian3d {
    pub fn perturbation(&self) -> TensorSum {
        self.v_x.clone().add(&self.v_y)
    }

    pub fn full(&self) -> TensorSum {
        self.h0.clone().add(&self.v_x).add(&self.v_y)
    }
}

pub fn hamiltonian_3d(c: &CouplingSet, specs: [FockSpec; 3]) -> Hamiltonian3d {
    let [nx, ny, nz] = specs.map(|s| s.n_levels());
    let layout = vec![3, nx, ny, nz];
    let sz = small_to_mat(&sz_matrix());

    let mut h0 = TensorSum::new(layout.clone());
    h0.push(c.d, vec![Some(sz_squared()), None, None, None]);
    h0.push(c.omega_x_ratio, vec![None, Some(number(nx)), None, None]);
    h0.push(c.omega_y_ratio, vec![None, None, Some(number(ny)), None]);
    h0.push(1.0, vec![None, None, None, Some(number(nz))]);
    h0.push(2.0 * c.dlambda_x, vec![None, Some(position(nx)), None, None]);
    h0.push(2.0 * c.dlambda_y, vec![None, None, Some(position(ny)), None]);
    h0.push(2.0 * c.dlambda, vec![None, None, None, Some(position(nz))]);
    h0.push(-2.0 * c.lambda, vec![Some(sz), None, None, Some(position(nz))]);

    let mut v_x = TensorSum::new(layout.clone());
    v_x.push(
        c.lambda * c.gamma_x,
        vec![Some(small_to_mat(&sx_matrix())), Some(position(nx)), None, None],
    );
    let mut v_y = TensorSum::new(layout);
    v_y.push(
        c.lambda * c.gamma_y,
        vec![Some(small_to_mat(&sy_matrix())), None, Some(position(ny)), None],
    );
    Hamiltonian3d { h0, v_x, v_y }
}

/// Axial model with a tilted NV axis, split into the solvable part and the
/// transverse-spin coupling.
#[derive(Clone, Debug)]
pub struct MisalignedHamiltonian {
    pub h0: TensorSum,
    pub h_i: TensorSum,
}

impl MisalignedHamiltonian {
    pub fn full(&self) -> TensorSum {
        self.h0.clone().add(&self.h_i)
    }
}

pub fn hamiltonian_misaligned(
    c: &CouplingSet,
    cosines: DirectionCosines,
    spec: FockSpec,
) -> Result<MisalignedHamiltonian> {
    let cosines = DirectionCosines::new(cosines.c_x, cosines.c_y, cosines.c_z)?;
    let n = spec.n_levels();
    let mut h0 = TensorSum::new(vec![3, n]);
    h0.push(c.d, vec![Some(sz_squared()), None]);
    h0.push(1.0, vec![None, Some(number(n))]);
    h0.push(2.0 * c.dlambda, vec![None, Some(position(n))]);
    h0.push(
        -2.0 * c.lambda * cosines.c_z,
        vec![Some(small_to_mat(&sz_matrix())), Some(position(n))],
    );

    let mut h_i = TensorSum::new(vec![3, n]);
    let sx = small_to_mat(&sx_matrix());
    let sy = small_to_mat(&sy_matrix());
    let transverse = Mat::from_fn(3, 3, |i, j| sx[(i, j)] * cosines.c_x + sy[(i, j)] * cosines.c_y);
    h_i.push(-2.0 * c.lambda, vec![Some(transverse), Some(position(n))]);
    Ok(MisalignedHamiltonian { h0, h_i })
}

/// Microwave pulse model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PulseMode {
    /// Instantaneous pulse: the exact spin unitary, independent of Ω.
    Ideal,
    /// Pulse of Rabi rate Ω (units of ω_z) lasting π/(2√2 Ω).
    Finite { omega: f64 },
}

/// H_mw = Ω(|+1⟩⟨0| + |−1⟩⟨0| + h.c.) on the spin factor.
pub fn microwave_hamiltonian(omega: f64) -> LabeledOperator {
    let o = C64::new(omega, 0.0);
    let z = C64::new(0.0, 0.0);
    let m = [[z, o, z], [o, z, o], [z, o, z]];
    LabeledOperator::new(small_to_mat(&m), vec![3]).expect("3x3")
}

/// t_p = π/(2√2 Ω), the duration mapping |0⟩ onto the bright state.
pub fn pulse_duration(omega: f64) -> f64 {
    PI / (2.0 * SQRT_2 * omega)
}

/// Spin unitary exp(−i H_mw t_p); U|0⟩ = −i(|+1⟩ + |−1⟩)/√2.
pub fn microwave_pulse(mode: PulseMode) -> Result<LabeledOperator> {
    match mode {
        PulseMode::Ideal => {
            let h = 0.5;
            let r = std::f64::consts::FRAC_1_SQRT_2;
            let m = [
                [C64::new(h, 0.0), C64::new(0.0, -r), C64::new(-h, 0.0)],
                [C64::new(0.0, -r), C64::new(0.0, 0.0), C64::new(0.0, -r)],
                [C64::new(-h, 0.0), C64::new(0.0, -r), C64::new(h, 0.0)],
            ];
            LabeledOperator::new(small_to_mat(&m), vec![3])
        }
        PulseMode::Finite { omega } => {
            if !(omega > 0.0) || !omega.is_finite() {
                return Err(Error::Domain(format!(
                    "pulse Rabi rate must be positive, got {omega}"
                )));
            }
            let h = microwave_hamiltonian(omega);
            crate::evolver::propagator(&h, pulse_duration(omega))
        }
    }
}
