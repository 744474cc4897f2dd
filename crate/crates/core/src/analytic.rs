//! Closed-form solution of the axial model.
//!
//! In spin sector `s` the motion is a harmonic oscillator displaced by
//! `u = 2(λ s − Δλ)`, so a coherent state stays coherent and returns to
//! itself after one trap period with a spin-dependent phase.

use crate::error::Result;
use crate::hilbert::{coherent_state, FockSpec, HybridState, C64};
use crate::model::CouplingSet;
use crate::PERIOD;

/// Coherent amplitude and accumulated c-number phase at time `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Trajectory {
    pub beta_t: C64,
    pub phase: f64,
    pub u: f64,
}

impl Trajectory {
    /// e^{i phase} |beta_t⟩ on a truncated mode.
    pub fn state(&self, spec: FockSpec) -> Result<HybridState> {
        let st = coherent_state(self.beta_t, spec)?;
        let p = C64::new(self.phase.cos(), self.phase.sin());
        let amps = st.into_amplitudes().into_iter().map(|a| a * p).collect();
        HybridState::new(amps, vec![spec.n_levels()])
    }
}

/// Evolution of |s⟩|β⟩ under the axial Hamiltonian.
///
/// The phase includes the β-dependent term so that the trajectory equals
/// the exact state at every `t`; that term vanishes at multiples of 2π.
pub fn coherent_trajectory(beta: C64, s_z: i32, t: f64, c: &CouplingSet) -> Trajectory {
    let s = s_z as f64;
    let u = c.axial_shift(s_z);
    let rot = C64::new(t.cos(), -t.sin());
    let beta_t = (beta - u) * rot + u;
    let phase = -(c.d * s * s - u * u) * t - u * u * t.sin() + u * (beta.im - (beta * rot).im);
    Trajectory { beta_t, phase, u }
}

/// Δφ = 16 λ Δλ t₀: phase of the s = −1 trajectory minus that of s = +1
/// after one period.
pub fn gravitational_phase(c: &CouplingSet) -> f64 {
    16.0 * c.lambda * c.dlambda * PERIOD
}

/// P₀ = cos²(Δφ/2).
pub fn ramsey_population(delta_phi: f64) -> f64 {
    (delta_phi / 2.0).cos().powi(2)
}

/// ⟨a|b⟩ for coherent states.
pub fn coherent_overlap(a: C64, b: C64) -> C64 {
    let e = -0.5 * a.norm_sqr() - 0.5 * b.norm_sqr() + a.conj() * b;
    C64::new(e.re.exp() * e.im.cos(), e.re.exp() * e.im.sin())
}

/// P₀ after an ideal Ramsey sequence with hold time `t` starting from |β⟩:
/// (1 + Re(e^{i(φ₋ − φ₊)}⟨β₊|β₋⟩))/2.
pub fn ramsey_population_at(beta: C64, c: &CouplingSet, t: f64) -> f64 {
    // D s² is common to both branches; dropping it avoids cancellation
    let c = c.with_d(0.0);
    let plus = coherent_trajectory(beta, 1, t, &c);
    let minus = coherent_trajectory(beta, -1, t, &c);
    let dphi = minus.phase - plus.phase;
    let w = C64::new(dphi.cos(), dphi.sin()) * coherent_overlap(plus.beta_t, minus.beta_t);
    (0.5 * (1.0 + w.re)).clamp(0.0, 1.0)
}
