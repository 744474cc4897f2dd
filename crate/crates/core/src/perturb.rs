//! Second-order Rayleigh–Schrödinger corrections around the
//! displaced-number eigenbasis of the solvable Hamiltonian.
//!
//! States are handled in basis coordinates: index `(s, n_1, …, n_M)` in the
//! same row-major order as the laboratory layout, but meaning
//! `|s⟩ ⊗ D(α_1(s))|n_1⟩ ⊗ …`. Conversion to the laboratory frame applies
//! the spin-conditioned displacements block by block.
//!
//! The corrected energies are called "E⁽¹⁾" in some treatments even though
//! they carry the second-order shift; here they are `corrected_energies`.

use std::collections::BTreeMap;
use std::fmt;

use faer::linalg::solvers::Solve;
use faer::Mat;

use crate::error::{Error, Result};
use crate::hilbert::{
    apply_factors, coherent_state, displacement, spin_value, tensor, FockSpec, HybridState,
    TensorSum, C64, LEAKAGE_BOUND, ONE, ZERO,
};
use crate::model::{hamiltonian_3d, hamiltonian_misaligned, CouplingSet, DirectionCosines};
use crate::PERIOD;

/// Default energy window around the initial-state support.
pub const DEFAULT_WINDOW: f64 = 30.0;

/// Default gap below which a coupled pair is declared degenerate.
pub const DEFAULT_DEGENERACY: f64 = 1e-6;

/// Transformed single-mode matrix entries below this are dropped.
const ELEMENT_CUTOFF: f64 = 1e-14;

/// Basis populations below this do not count as initial-state support.
const SUPPORT_CUTOFF: f64 = 1e-20;

/// One motional mode of the unperturbed Hamiltonian `ratio · (a†a)` shifted
/// by a spin-dependent displacement.
#[derive(Clone, Debug, PartialEq)]
pub struct Mode {
    pub spec: FockSpec,
    /// Mode frequency in units of ω_z.
    pub ratio: f64,
    /// Displacement per spin index (order +1, 0, −1).
    pub alpha: [f64; 3],
}

/// Quantum numbers of a basis state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Label {
    pub s_z: i32,
    pub occupations: Vec<usize>,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let occ: Vec<String> = self.occupations.iter().map(|n| n.to_string()).collect();
        write!(f, "(n = [{}], s_z = {:+})", occ.join(", "), self.s_z)
    }
}

/// Product eigenbasis |s⟩ ⊗ Π D(α_i(s))|n_i⟩ with closed-form energies
/// D s² + Σ r_i (n_i − α_i(s)²).
#[derive(Clone, Debug)]
pub struct UnperturbedBasis {
    d: f64,
    modes: Vec<Mode>,
    layout: Vec<usize>,
    energies: Vec<f64>,
    disp: Vec<[Mat<C64>; 3]>,
    disp_adj: Vec<[Mat<C64>; 3]>,
}

impl UnperturbedBasis {
    pub fn new(d: f64, modes: Vec<Mode>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidSpec("at least one motional mode is required".into()));
        }
        let mut disp = Vec::with_capacity(modes.len());
        for m in &modes {
            if !(m.ratio > 0.0) {
                return Err(Error::Domain(format!("mode ratio must be positive, got {}", m.ratio)));
            }
            let mats: Result<Vec<Mat<C64>>> = m
                .alpha
                .iter()
                .map(|&a| Ok(displacement(C64::new(a, 0.0), m.spec)?.matrix().clone()))
                .collect();
            let mats = mats?;
            disp.push([mats[0].clone(), mats[1].clone(), mats[2].clone()]);
        }
        let disp_adj = disp
            .iter()
            .map(|ms| {
                [
                    ms[0].adjoint().to_owned(),
                    ms[1].adjoint().to_owned(),
                    ms[2].adjoint().to_owned(),
                ]
            })
            .collect();
        let mut layout = vec![3];
        layout.extend(modes.iter().map(|m| m.spec.n_levels()));
        let mut basis = Self {
            d,
            modes,
            layout,
            energies: Vec::new(),
            disp,
            disp_adj,
        };
        basis.energies = (0..basis.dim()).map(|i| basis.closed_form_energy(i)).collect();
        Ok(basis)
    }

    /// Basis of the zeroth-order three-mode Hamiltonian.
    pub fn three_d(c: &CouplingSet, specs: [FockSpec; 3]) -> Result<Self> {
        c.validate()?;
        let ax = -2.0 * c.dlambda_x / c.omega_x_ratio;
        let ay = -2.0 * c.dlambda_y / c.omega_y_ratio;
        let az = [c.axial_shift(1), c.axial_shift(0), c.axial_shift(-1)];
        Self::new(
            c.d,
            vec![
                Mode {
                    spec: specs[0],
                    ratio: c.omega_x_ratio,
                    alpha: [ax; 3],
                },
                Mode {
                    spec: specs[1],
                    ratio: c.omega_y_ratio,
                    alpha: [ay; 3],
                },
                Mode {
                    spec: specs[2],
                    ratio: 1.0,
                    alpha: az,
                },
            ],
        )
    }

    /// Basis of the axial Hamiltonian with a tilted NV axis, where only the
    /// projection c_z conditions the displacement.
    pub fn misaligned(c: &CouplingSet, cosines: DirectionCosines, spec: FockSpec) -> Result<Self> {
        let cz = cosines.c_z;
        let alpha = [1.0, 0.0, -1.0].map(|s: f64| 2.0 * (c.lambda * cz * s - c.dlambda));
        Self::new(
            c.d,
            vec![Mode {
                spec,
                ratio: 1.0,
                alpha,
            }],
        )
    }

    pub fn dim(&self) -> usize {
        self.layout.iter().product()
    }

    pub fn layout(&self) -> &[usize] {
        &self.layout
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Displacement α per (mode, spin index).
    pub fn displacement_table(&self) -> Vec<[f64; 3]> {
        self.modes.iter().map(|m| m.alpha).collect()
    }

    fn block(&self) -> usize {
        self.layout[1..].iter().product()
    }

    fn decode(&self, index: usize) -> (usize, Vec<usize>) {
        let mut rest = index;
        let mut occ = vec![0; self.modes.len()];
        for (i, m) in self.modes.iter().enumerate().rev() {
            let n = m.spec.n_levels();
            occ[i] = rest % n;
            rest /= n;
        }
        (rest, occ)
    }

    fn closed_form_energy(&self, index: usize) -> f64 {
        let (s, occ) = self.decode(index);
        let sz = spin_value(s) as f64;
        let motion: f64 = self
            .modes
            .iter()
            .zip(&occ)
            .map(|(m, &n)| m.ratio * (n as f64 - m.alpha[s] * m.alpha[s]))
            .sum();
        self.d * sz * sz + motion
    }

    pub fn label(&self, index: usize) -> Label {
        let (s, occupations) = self.decode(index);
        Label {
            s_z: spin_value(s),
            occupations,
        }
    }

    /// True when any mode of the state sits in its highest retained level.
    pub fn at_edge(&self, index: usize) -> bool {
        let (_, occ) = self.decode(index);
        occ.iter()
            .zip(&self.modes)
            .any(|(&n, m)| n + 1 == m.spec.n_levels())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::LayoutMismatch {
                expected: self.layout.clone(),
                found: vec![len],
            });
        }
        Ok(())
    }

    /// Basis coordinates to laboratory amplitudes.
    pub fn to_lab(&self, coords: &[C64]) -> Result<Vec<C64>> {
        self.check_len(coords.len())?;
        Ok(self.transform(coords, &self.disp))
    }

    /// Laboratory amplitudes to basis coordinates.
    pub fn from_lab(&self, lab: &[C64]) -> Result<Vec<C64>> {
        self.check_len(lab.len())?;
        Ok(self.transform(lab, &self.disp_adj))
    }

    fn transform(&self, v: &[C64], mats: &[[Mat<C64>; 3]]) -> Vec<C64> {
        let b = self.block();
        let dims = &self.layout[1..];
        let mut out = Vec::with_capacity(v.len());
        for s in 0..3 {
            let factors: Vec<Option<&Mat<C64>>> = mats.iter().map(|m| Some(&m[s])).collect();
            out.extend(apply_factors(&v[s * b..(s + 1) * b], dims, &factors));
        }
        out
    }

    /// Laboratory-frame basis vector.
    pub fn vector(&self, index: usize) -> HybridState {
        let mut coords = vec![ZERO; self.dim()];
        coords[index] = ONE;
        HybridState::new(self.transform(&coords, &self.disp), self.layout.clone())
            .expect("unitary image of a unit vector")
    }
}

struct CachedTerm {
    coef: C64,
    spin: [[C64; 3]; 3],
    /// `modes[i][s][s']` = D_i(s)† O_i D_i(s'); `None` is the identity.
    modes: Vec<[[Option<Mat<C64>>; 3]; 3]>,
}

/// Matrix elements ⟨k|V|n⟩ of a perturbation in the unperturbed basis,
/// evaluated lazily from transformed single-mode factors.
pub struct ElementTable<'a> {
    basis: &'a UnperturbedBasis,
    terms: Vec<CachedTerm>,
}

/// Builds the element table of `v` over `basis`.
pub fn matrix_elements<'a>(v: &TensorSum, basis: &'a UnperturbedBasis) -> Result<ElementTable<'a>> {
    if v.layout() != basis.layout() {
        return Err(Error::LayoutMismatch {
            expected: basis.layout().to_vec(),
            found: v.layout().to_vec(),
        });
    }
    let mut terms = Vec::with_capacity(v.terms().len());
    for term in v.terms() {
        let mut spin = [[ZERO; 3]; 3];
        for (r, row) in spin.iter_mut().enumerate() {
            for (c, x) in row.iter_mut().enumerate() {
                *x = match &term.factors[0] {
                    Some(m) => m[(r, c)],
                    None if r == c => ONE,
                    None => ZERO,
                };
            }
        }
        let mut modes = Vec::with_capacity(basis.modes.len());
        for (i, mode) in basis.modes.iter().enumerate() {
            let op = term.factors[i + 1].as_ref();
            let mut table: [[Option<Mat<C64>>; 3]; 3] = Default::default();
            for s in 0..3 {
                for sp in 0..3 {
                    if spin[s][sp] == ZERO {
                        continue;
                    }
                    table[s][sp] = match op {
                        None if mode.alpha[s] == mode.alpha[sp] => None,
                        None => Some(&basis.disp_adj[i][s] * &basis.disp[i][sp]),
                        Some(o) => Some(&basis.disp_adj[i][s] * o * &basis.disp[i][sp]),
                    };
                    if let Some(m) = table[s][sp].as_mut() {
                        for c in 0..m.ncols() {
                            for r in 0..m.nrows() {
                                if m[(r, c)].norm() < ELEMENT_CUTOFF {
                                    m[(r, c)] = ZERO;
                                }
                            }
                        }
                    }
                }
            }
            modes.push(table);
        }
        terms.push(CachedTerm {
            coef: term.coef,
            spin,
            modes,
        });
    }
    Ok(ElementTable { basis, terms })
}

impl ElementTable<'_> {
    pub fn basis(&self) -> &UnperturbedBasis {
        self.basis
    }

    /// ⟨i|V|j⟩.
    pub fn get(&self, i: usize, j: usize) -> C64 {
        let (si, oi) = self.basis.decode(i);
        let (sj, oj) = self.basis.decode(j);
        let mut total = ZERO;
        for t in &self.terms {
            let w = t.spin[si][sj];
            if w == ZERO {
                continue;
            }
            let mut v = t.coef * w;
            for (k, table) in t.modes.iter().enumerate() {
                v *= match &table[si][sj] {
                    None if oi[k] == oj[k] => ONE,
                    None => ZERO,
                    Some(m) => m[(oi[k], oj[k])],
                };
                if v == ZERO {
                    break;
                }
            }
            total += v;
        }
        total
    }

    /// Non-zero elements ⟨k|V|n⟩ of column `n`, ascending in `k`.
    pub fn column(&self, n: usize) -> Vec<(usize, C64)> {
        let (sp, occ) = self.basis.decode(n);
        let block = self.basis.block();
        let mut acc: BTreeMap<usize, C64> = BTreeMap::new();
        for t in &self.terms {
            for s in 0..3 {
                let w = t.spin[s][sp];
                if w == ZERO {
                    continue;
                }
                let lists: Vec<Vec<(usize, C64)>> = t
                    .modes
                    .iter()
                    .enumerate()
                    .map(|(k, table)| match &table[s][sp] {
                        None => vec![(occ[k], ONE)],
                        Some(m) => (0..m.nrows())
                            .filter_map(|r| {
                                let x = m[(r, occ[k])];
                                (x != ZERO).then_some((r, x))
                            })
                            .collect(),
                    })
                    .collect();
                let mut partial = vec![(0usize, t.coef * w)];
                for (k, list) in lists.iter().enumerate() {
                    let n_k = self.basis.modes[k].spec.n_levels();
                    let mut next = Vec::with_capacity(partial.len() * list.len());
                    for &(idx, val) in &partial {
                        for &(r, x) in list {
                            next.push((idx * n_k + r, val * x));
                        }
                    }
                    partial = next;
                }
                for (idx, val) in partial {
                    *acc.entry(s * block + idx).or_insert(ZERO) += val;
                }
            }
        }
        acc.into_iter().filter(|(_, v)| *v != ZERO).collect()
    }
}

/// Summary of the couplings entering the second-order sums.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CouplingSummary {
    pub coupled_pairs: usize,
    /// Smallest |E⁰_n − E⁰_k| over coupled pairs.
    pub min_gap: f64,
    /// Largest first-order mixing coefficient |H′_kn/(E⁰_n − E⁰_k)|.
    pub max_mixing: f64,
}

/// Second-order energies and first-order normalized vectors for a selection
/// of basis states.
#[derive(Clone, Debug)]
pub struct PerturbedSystem {
    pub indices: Vec<usize>,
    pub unperturbed_energies: Vec<f64>,
    pub corrected_energies: Vec<f64>,
    /// Sparse basis coordinates of each corrected vector, ascending index.
    pub corrected_vectors: Vec<Vec<(usize, C64)>>,
    /// Normalization factors Z_n.
    pub normalization: Vec<f64>,
    pub report: CouplingSummary,
    dim: usize,
}

impl PerturbedSystem {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// E_n = E⁰_n + H′_nn + Σ_{k≠n} |H′_kn|²/(E⁰_n − E⁰_k) and
/// |n⟩ + Σ_{k≠n} H′_kn/(E⁰_n − E⁰_k)|k⟩ normalized, for every `n` in
/// `selection`. Sums run over the whole truncated basis.
pub fn second_order(
    table: &ElementTable<'_>,
    selection: &[usize],
    eps_degen: f64,
) -> Result<PerturbedSystem> {
    if !(eps_degen > 0.0) {
        return Err(Error::Domain(format!(
            "degeneracy threshold must be positive, got {eps_degen}"
        )));
    }
    let basis = table.basis;
    let e0 = basis.energies();
    let mut report = CouplingSummary {
        coupled_pairs: 0,
        min_gap: f64::INFINITY,
        max_mixing: 0.0,
    };
    let mut sys = PerturbedSystem {
        indices: selection.to_vec(),
        unperturbed_energies: Vec::with_capacity(selection.len()),
        corrected_energies: Vec::with_capacity(selection.len()),
        corrected_vectors: Vec::with_capacity(selection.len()),
        normalization: Vec::with_capacity(selection.len()),
        report,
        dim: basis.dim(),
    };
    for &n in selection {
        let en = e0[n];
        let mut first = ZERO;
        let mut shift = 0.0;
        let mut vec = Vec::new();
        let mut norm_sq = 1.0;
        for (k, v) in table.column(n) {
            if k == n {
                first += v;
                vec.push((k, ONE));
                continue;
            }
            let gap = en - e0[k];
            if gap.abs() < eps_degen {
                return Err(Error::Degeneracy {
                    left: basis.label(n).to_string(),
                    right: basis.label(k).to_string(),
                    gap,
                });
            }
            shift += v.norm_sqr() / gap;
            let mix = v / gap;
            norm_sq += mix.norm_sqr();
            report.coupled_pairs += 1;
            report.min_gap = report.min_gap.min(gap.abs());
            report.max_mixing = report.max_mixing.max(mix.norm());
            vec.push((k, mix));
        }
        if !vec.iter().any(|&(k, _)| k == n) {
            let at = vec.partition_point(|&(k, _)| k < n);
            vec.insert(at, (n, ONE));
        }
        let z = 1.0 / norm_sq.sqrt();
        for (_, x) in vec.iter_mut() {
            *x *= z;
        }
        sys.unperturbed_energies.push(en);
        sys.corrected_energies.push(en + first.re + shift);
        sys.corrected_vectors.push(vec);
        sys.normalization.push(z);
    }
    sys.report = report;
    Ok(sys)
}

/// All basis states whose energy lies within `window` of the energies of
/// the states carrying `coords`.
pub fn window_selection(basis: &UnperturbedBasis, coords: &[C64], window: f64) -> Vec<usize> {
    let e = basis.energies();
    let (lo, hi) = coords
        .iter()
        .enumerate()
        .filter(|(_, c)| c.norm_sqr() > SUPPORT_CUTOFF)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (i, _)| {
            (lo.min(e[i]), hi.max(e[i]))
        });
    (0..basis.dim())
        .filter(|&i| e[i] >= lo - window && e[i] <= hi + window)
        .collect()
}

/// Expansion coefficients of `coords` in the (non-orthogonal) corrected
/// vectors, from the Gram system G c = ⟨E_m|ψ⟩.
pub fn expand(sys: &PerturbedSystem, coords: &[C64]) -> Result<Vec<C64>> {
    if coords.len() != sys.dim {
        return Err(Error::LayoutMismatch {
            expected: vec![sys.dim],
            found: vec![coords.len()],
        });
    }
    let nw = sys.len();
    let mut touching: Vec<Vec<(usize, C64)>> = vec![Vec::new(); sys.dim];
    for (a, vec) in sys.corrected_vectors.iter().enumerate() {
        for &(k, x) in vec {
            touching[k].push((a, x));
        }
    }
    let mut gram = Mat::<C64>::zeros(nw, nw);
    let mut rhs = Mat::<C64>::zeros(nw, 1);
    for (k, list) in touching.iter().enumerate() {
        for &(a, xa) in list {
            let ca = xa.conj();
            rhs[(a, 0)] += ca * coords[k];
            for &(b, xb) in list {
                gram[(a, b)] += ca * xb;
            }
        }
    }
    let lu = gram.partial_piv_lu();
    lu.solve_in_place(rhs.as_mut());
    let out: Vec<C64> = (0..nw).map(|a| rhs[(a, 0)]).collect();
    if out.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
        return Err(Error::Eigen("singular Gram matrix of corrected vectors".into()));
    }
    Ok(out)
}

/// Σ_a c_a e^{−i E_a t} |E_a⟩ in basis coordinates, normalized.
pub fn reassemble(sys: &PerturbedSystem, coeffs: &[C64], t: f64) -> Vec<C64> {
    let mut out = vec![ZERO; sys.dim];
    for ((vec, &e), &c) in sys
        .corrected_vectors
        .iter()
        .zip(&sys.corrected_energies)
        .zip(coeffs)
    {
        let (sn, cs) = (e * t).sin_cos();
        let w = c * C64::new(cs, -sn);
        for &(k, x) in vec {
            out[k] += w * x;
        }
    }
    let norm = out.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in out.iter_mut() {
            *x /= norm;
        }
    }
    out
}

/// Expansion, phase evolution and reassembly of a laboratory state.
pub fn perturbed_evolve(
    psi0: &HybridState,
    basis: &UnperturbedBasis,
    sys: &PerturbedSystem,
    t: f64,
) -> Result<HybridState> {
    if psi0.layout() != basis.layout() {
        return Err(Error::LayoutMismatch {
            expected: basis.layout().to_vec(),
            found: psi0.layout().to_vec(),
        });
    }
    let coords = basis.from_lab(psi0.amplitudes())?;
    let coeffs = expand(sys, &coords)?;
    let out = basis.to_lab(&reassemble(sys, &coeffs, t))?;
    HybridState::normalized(out, basis.layout().to_vec())
}

/// Controls for the windowed perturbative evolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbOptions {
    pub window: f64,
    pub eps_degen: f64,
}

impl Default for PerturbOptions {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            eps_degen: DEFAULT_DEGENERACY,
        }
    }
}

/// Prepared perturbative evolution of one initial state.
#[derive(Clone, Debug)]
pub struct PerturbativeEvolution {
    basis: UnperturbedBasis,
    system: PerturbedSystem,
    initial: Vec<C64>,
    coeffs: Vec<C64>,
    /// Weight reaching the highest retained level of any mode.
    pub edge_leakage: f64,
}

impl PerturbativeEvolution {
    pub fn new(
        basis: UnperturbedBasis,
        perturbation: &TensorSum,
        psi0: &HybridState,
        opts: &PerturbOptions,
    ) -> Result<Self> {
        if psi0.layout() != basis.layout() {
            return Err(Error::LayoutMismatch {
                expected: basis.layout().to_vec(),
                found: psi0.layout().to_vec(),
            });
        }
        let initial = basis.from_lab(psi0.amplitudes())?;
        let selection = window_selection(&basis, &initial, opts.window);
        let system = {
            let table = matrix_elements(perturbation, &basis)?;
            second_order(&table, &selection, opts.eps_degen)?
        };
        let coeffs = expand(&system, &initial)?;

        let mut edge = 0.0;
        for (i, c) in initial.iter().enumerate() {
            if basis.at_edge(i) {
                edge += c.norm_sqr();
            }
        }
        for (vec, c) in system.corrected_vectors.iter().zip(&coeffs) {
            let w: f64 = vec
                .iter()
                .filter(|(k, _)| basis.at_edge(*k))
                .map(|(_, x)| x.norm_sqr())
                .sum();
            edge += c.norm_sqr() * w;
        }
        if edge > LEAKAGE_BOUND {
            return Err(Error::Truncation {
                what: "perturbative basis edge".into(),
                leakage: edge,
                bound: LEAKAGE_BOUND,
            });
        }
        Ok(Self {
            basis,
            system,
            initial,
            coeffs,
            edge_leakage: edge,
        })
    }

    pub fn basis(&self) -> &UnperturbedBasis {
        &self.basis
    }

    pub fn system(&self) -> &PerturbedSystem {
        &self.system
    }

    /// Perturbed state at time `t`, basis coordinates.
    pub fn coords_at(&self, t: f64) -> Vec<C64> {
        reassemble(&self.system, &self.coeffs, t)
    }

    /// Exact evolution under the unperturbed Hamiltonian, basis coordinates.
    pub fn unperturbed_coords_at(&self, t: f64) -> Vec<C64> {
        self.initial
            .iter()
            .zip(self.basis.energies())
            .map(|(c, &e)| {
                let (s, co) = (e * t).sin_cos();
                c * C64::new(co, -s)
            })
            .collect()
    }

    pub fn state_at(&self, t: f64) -> Result<HybridState> {
        let lab = self.basis.to_lab(&self.coords_at(t))?;
        HybridState::normalized(lab, self.basis.layout().to_vec())
    }

    pub fn unperturbed_state_at(&self, t: f64) -> Result<HybridState> {
        let lab = self.basis.to_lab(&self.unperturbed_coords_at(t))?;
        HybridState::normalized(lab, self.basis.layout().to_vec())
    }

    /// |⟨Ψ⁽²⁾(t)|Ψ⁽⁰⁾(t)⟩|.
    pub fn fidelity_at(&self, t: f64) -> f64 {
        let a = self.coords_at(t);
        let b = self.unperturbed_coords_at(t);
        let nb = b.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let overlap: C64 = a.iter().zip(&b).map(|(x, y)| x.conj() * y).sum();
        (overlap.norm() / nb).min(1.0)
    }
}

/// Couplings probed by one fidelity evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FidelityPoint {
    pub lambda: f64,
    pub gamma_x: f64,
    pub gamma_y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FidelityReport {
    pub fidelity: f64,
    pub window_states: usize,
    pub edge_leakage: f64,
    pub coupling: CouplingSummary,
}

/// |β⟩_z ⊗ displaced x, y ground states ⊗ (|+1⟩ + |−1⟩)/√2 on the
/// three-mode layout.
pub fn bright_initial_state(basis: &UnperturbedBasis, beta: C64) -> Result<HybridState> {
    let modes = basis.modes();
    let spin = HybridState::normalized(vec![ONE, ZERO, ONE], vec![3])?;
    let mut factors = vec![spin];
    for (i, m) in modes.iter().enumerate() {
        let last = i + 1 == modes.len();
        let n = m.spec.n_levels();
        if last {
            factors.push(coherent_state(beta, m.spec)?);
        } else {
            // spin-independent displacement for the transverse modes
            let d = &basis.disp[i][0];
            factors.push(HybridState::new((0..n).map(|r| d[(r, 0)]).collect(), vec![n])?);
        }
    }
    let refs: Vec<&HybridState> = factors.iter().collect();
    tensor(&refs)
}

/// Fidelity at t₀ between the perturbatively corrected three-mode evolution
/// and the unperturbed prediction, with Δλ, Δλ_{x,y} and D from `base`.
pub fn perturbation_fidelity_report(
    base: &CouplingSet,
    point: FidelityPoint,
    beta: C64,
    specs: [FockSpec; 3],
    opts: &PerturbOptions,
) -> Result<FidelityReport> {
    let c = base
        .with_lambda(point.lambda)
        .with_gammas(point.gamma_x, point.gamma_y);
    let basis = UnperturbedBasis::three_d(&c, specs)?;
    let psi0 = bright_initial_state(&basis, beta)?;
    let v = hamiltonian_3d(&c, specs).perturbation();
    let run = PerturbativeEvolution::new(basis, &v, &psi0, opts)?;
    Ok(FidelityReport {
        fidelity: run.fidelity_at(PERIOD),
        window_states: run.system.len(),
        edge_leakage: run.edge_leakage,
        coupling: run.system.report,
    })
}

pub fn perturbation_fidelity(
    base: &CouplingSet,
    point: FidelityPoint,
    beta: C64,
    specs: [FockSpec; 3],
) -> Result<f64> {
    Ok(perturbation_fidelity_report(base, point, beta, specs, &PerturbOptions::default())?.fidelity)
}

/// Perturbative evolution of the tilted-axis model from `psi0`.
pub fn misaligned_evolution(
    c: &CouplingSet,
    cosines: DirectionCosines,
    spec: FockSpec,
    psi0: &HybridState,
    opts: &PerturbOptions,
) -> Result<PerturbativeEvolution> {
    let h = hamiltonian_misaligned(c, cosines, spec)?;
    let basis = UnperturbedBasis::misaligned(c, cosines, spec)?;
    PerturbativeEvolution::new(basis, &h.h_i, psi0, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolver::{eigendecompose, evolve};
    use crate::hilbert::{fidelity, spin_index, Kron};
    use crate::model::hamiltonian_1d;
    use std::f64::consts::{PI, TAU};

    fn spec(n: usize) -> FockSpec {
        FockSpec::new(n).unwrap()
    }

    fn small() -> [FockSpec; 3] {
        [spec(6), spec(6), spec(16)]
    }

    #[test]
    fn bare_energies_without_couplings() {
        let c = CouplingSet::new(0.0, 0.0).with_d(2.5);
        let b = UnperturbedBasis::three_d(&c, [spec(2), spec(2), spec(3)]).unwrap();
        for i in 0..b.dim() {
            let l = b.label(i);
            let s = l.s_z as f64;
            let want = 10.0 * (l.occupations[0] + l.occupations[1]) as f64
                + l.occupations[2] as f64
                + 2.5 * s * s;
            assert!((b.energies()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn static_gravitational_splitting() {
        let c = CouplingSet::new(0.05, 0.1).with_d(2.0);
        let b = UnperturbedBasis::three_d(&c, small()).unwrap();
        let block = 6 * 6 * 16;
        let up = b.energies()[spin_index(1) * block];
        let down = b.energies()[spin_index(-1) * block];
        assert!(((up - down) - 16.0 * 0.05 * 0.1).abs() < 1e-12);
    }

    #[test]
    fn energies_match_diagonalization() {
        let c = CouplingSet::new(0.05, 0.1)
            .with_d(2.3)
            .with_transverse_gravity(0.03, 0.02);
        let b = UnperturbedBasis::three_d(&c, small()).unwrap();
        let h0 = hamiltonian_3d(&c, small()).h0.to_operator();
        let eig = eigendecompose(&h0).unwrap();
        let mut checked = 0;
        for i in 0..b.dim() {
            let l = b.label(i);
            if l.occupations[0] > 2 || l.occupations[1] > 2 || l.occupations[2] > 5 {
                continue;
            }
            let e = b.energies()[i];
            let nearest = eig
                .energies()
                .iter()
                .map(|x| (x - e).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest <= 1e-8, "{l}: {nearest:e}");
            let v = b.vector(i);
            let hv = v.apply(&h0).unwrap();
            let resid: f64 = hv
                .amplitudes()
                .iter()
                .zip(v.amplitudes())
                .map(|(a, x)| (a - x * e).norm_sqr())
                .sum::<f64>()
                .sqrt();
            // the vector error is first order in the edge amplitude, the
            // energy error second order
            assert!(resid <= 1e-6, "{l}: residual {resid:e}");
            checked += 1;
        }
        assert!(checked > 100);
    }

    #[test]
    fn basis_is_orthonormal() {
        let c = CouplingSet::new(0.05, 0.1).with_d(2.3);
        let b = UnperturbedBasis::three_d(&c, [spec(3), spec(3), spec(10)]).unwrap();
        let picks = [0, 7, 31, 95, 120, 200, 269];
        for &i in &picks {
            for &j in &picks {
                let o = b.vector(i).inner(&b.vector(j)).unwrap();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((o - C64::new(want, 0.0)).norm() < 1e-8);
            }
        }
        let coords: Vec<C64> = (0..b.dim()).map(|k| C64::new(k as f64, -0.5)).collect();
        let back = b.from_lab(&b.to_lab(&coords).unwrap()).unwrap();
        for (x, y) in coords.iter().zip(&back) {
            assert!((x - y).norm() < 1e-10);
        }
    }

    fn small_table_system() -> (UnperturbedBasis, TensorSum) {
        let c = CouplingSet::new(0.05, 0.1)
            .with_d(2.35)
            .with_gammas(0.3, 0.4)
            .with_transverse_gravity(0.02, 0.0);
        let specs = [spec(3), spec(3), spec(8)];
        let b = UnperturbedBasis::three_d(&c, specs).unwrap();
        (b, hamiltonian_3d(&c, specs).perturbation())
    }

    #[test]
    fn element_table_selection_rules() {
        let (b, v) = small_table_system();
        let t = matrix_elements(&v, &b).unwrap();
        for i in 0..b.dim() {
            assert_eq!(t.get(i, i), ZERO);
            for (k, _) in t.column(i) {
                assert_ne!(k, i);
                let (si, sk) = (b.label(i).s_z, b.label(k).s_z);
                assert_eq!((si - sk).abs(), 1);
            }
        }
    }

    #[test]
    fn element_table_is_hermitian_and_matches_dense() {
        let (b, v) = small_table_system();
        let t = matrix_elements(&v, &b).unwrap();
        let dense = v.to_operator();
        let n = b.dim();
        for j in (0..n).step_by(7) {
            let col: BTreeMap<usize, C64> = t.column(j).into_iter().collect();
            let vj = b.vector(j);
            let image = vj.apply(&dense).unwrap();
            for i in 0..n {
                let g = t.get(i, j);
                assert!((g - t.get(j, i).conj()).norm() <= 1e-12);
                assert!((col.get(&i).copied().unwrap_or(ZERO) - g).norm() <= 1e-12);
                let want = b.vector(i).inner(&image).unwrap();
                assert!((g - want).norm() <= 1e-10, "({i}, {j})");
            }
        }
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let (b, _) = small_table_system();
        let other = hamiltonian_3d(&CouplingSet::new(0.1, 0.1), small()).perturbation();
        assert!(matches!(
            matrix_elements(&other, &b),
            Err(Error::LayoutMismatch { .. })
        ));
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let c = CouplingSet::new(0.05, 0.1).with_d(2.3).with_gammas(0.0, 0.0);
        let b = UnperturbedBasis::three_d(&c, small()).unwrap();
        let v = hamiltonian_3d(&c, small()).perturbation();
        let t = matrix_elements(&v, &b).unwrap();
        let sel: Vec<usize> = (0..b.dim()).step_by(13).collect();
        let sys = second_order(&t, &sel, DEFAULT_DEGENERACY).unwrap();
        for (a, &n) in sel.iter().enumerate() {
            assert_eq!(sys.corrected_energies[a], b.energies()[n]);
            assert_eq!(sys.corrected_vectors[a], vec![(n, ONE)]);
        }
        assert_eq!(sys.report.coupled_pairs, 0);
    }

    #[test]
    fn corrected_vectors_are_normalized() {
        let (b, v) = small_table_system();
        let t = matrix_elements(&v, &b).unwrap();
        let sel: Vec<usize> = (0..b.dim()).collect();
        let sys = second_order(&t, &sel, DEFAULT_DEGENERACY).unwrap();
        for vec in &sys.corrected_vectors {
            let n: f64 = vec.iter().map(|(_, x)| x.norm_sqr()).sum();
            assert!((n - 1.0).abs() <= 1e-10);
        }
        assert!(sys.report.coupled_pairs > 0 && sys.report.min_gap > 0.0);
    }

    #[test]
    fn degenerate_pair_is_reported() {
        // D = r_x makes (s = ±1, n_x) and (s = 0, n_x + 1) coincide
        let c = CouplingSet::new(0.05, 0.0).with_d(4.0).with_gammas(0.5, 0.0);
        let specs = [spec(3), spec(2), spec(8)];
        let b = UnperturbedBasis::three_d(&c.with_lambda(0.0), specs).unwrap();
        let v = hamiltonian_3d(&c, specs).perturbation();
        let t = matrix_elements(&v, &b).unwrap();
        let all: Vec<usize> = (0..b.dim()).collect();
        let err = second_order(&t, &all, DEFAULT_DEGENERACY).unwrap_err();
        assert!(matches!(err, Error::Degeneracy { .. }));
        assert!(err.to_string().contains("s_z"));
        assert!(second_order(&t, &all, 0.0).is_err());
    }

    fn shifts(gamma: f64) -> Vec<f64> {
        let c = CouplingSet::new(0.05, 0.1).with_d(23.5).with_gammas(gamma, 0.0);
        let b = UnperturbedBasis::three_d(&c, small()).unwrap();
        let v = hamiltonian_3d(&c, small()).perturbation();
        let t = matrix_elements(&v, &b).unwrap();
        let sel: Vec<usize> = (0..b.dim())
            .filter(|&i| {
                let l = b.label(i);
                l.occupations[0] <= 1 && l.occupations[1] == 0 && l.occupations[2] <= 4
            })
            .collect();
        let sys = second_order(&t, &sel, DEFAULT_DEGENERACY).unwrap();
        sys.corrected_energies
            .iter()
            .zip(&sys.unperturbed_energies)
            .map(|(a, b)| a - b)
            .collect()
    }

    #[test]
    fn second_order_shifts_scale_quadratically() {
        // γ enters through the coupling strength and the trap ratio 1/γ²;
        // at small γ the shift is (λγ)²/(D − 1/γ²)-like, so halving γ
        // reduces it by 4 · (D − r)/(D − 4r) and the ratio tends to 16.
        // Hold the ratio fixed to isolate the coupling dependence.
        let base = CouplingSet::new(0.05, 0.1).with_d(23.5).with_gammas(0.2, 0.0);
        let b = UnperturbedBasis::three_d(&base, small()).unwrap();
        let v = hamiltonian_3d(&base, small()).perturbation();
        let sel: Vec<usize> = (0..b.dim())
            .filter(|&i| {
                let l = b.label(i);
                l.occupations[0] <= 1 && l.occupations[1] == 0 && l.occupations[2] <= 4
            })
            .collect();
        let shift = |scale: f64| {
            let t = matrix_elements(&v.scaled(scale), &b).unwrap();
            let sys = second_order(&t, &sel, DEFAULT_DEGENERACY).unwrap();
            sys.corrected_energies
                .iter()
                .zip(&sys.unperturbed_energies)
                .map(|(a, b)| a - b)
                .collect::<Vec<f64>>()
        };
        let (s1, s2, s4) = (shift(1.0), shift(0.5), shift(0.25));
        for i in 0..s1.len() {
            assert!((s1[i] / s2[i] - 4.0).abs() < 0.2);
            assert!((s2[i] / s4[i] - 4.0).abs() < 0.2);
        }
        // γ itself, with the ratio following: shifts still fall off at least
        // quadratically once the transverse frequency exceeds D
        let (a, b2) = (shifts(0.1), shifts(0.05));
        for i in 0..a.len() {
            assert!(a[i].abs() >= 3.8 * b2[i].abs());
        }
    }

    #[test]
    fn energies_converge_to_exact_at_fourth_order() {
        let base = CouplingSet::new(0.05, 0.1).with_d(23.5).with_gammas(0.2, 0.2);
        let h = hamiltonian_3d(&base, small());
        let b = UnperturbedBasis::three_d(&base, small()).unwrap();
        let v = h.perturbation();
        let sel: Vec<usize> = (0..b.dim())
            .filter(|&i| {
                let l = b.label(i);
                l.occupations[0] == 0 && l.occupations[1] == 0 && l.occupations[2] <= 2
            })
            .collect();
        let residual = |scale: f64| {
            let t = matrix_elements(&v.scaled(scale), &b).unwrap();
            let sys = second_order(&t, &sel, DEFAULT_DEGENERACY).unwrap();
            let exact = eigendecompose(&h.h0.clone().add(&v.scaled(scale)).to_operator()).unwrap();
            sys.corrected_energies
                .iter()
                .map(|e| {
                    exact
                        .energies()
                        .iter()
                        .map(|x| (x - e).abs())
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
        };
        let (r1, r2) = (residual(1.0), residual(0.5));
        let exponent = (r1 / r2).log2();
        assert!((exponent - 4.0).abs() <= 1.2, "r1 {r1:e} r2 {r2:e}");
    }

    fn aligned_run(gamma: f64, d: f64, n: usize) -> PerturbativeEvolution {
        let c = CouplingSet::new(0.05, 0.1).with_d(d).with_gammas(gamma, gamma);
        let specs = [spec(6), spec(6), spec(n)];
        let b = UnperturbedBasis::three_d(&c, specs).unwrap();
        let psi = bright_initial_state(&b, C64::new(0.3, 0.1)).unwrap();
        let v = hamiltonian_3d(&c, specs).perturbation();
        PerturbativeEvolution::new(b, &v, &psi, &PerturbOptions::default()).unwrap()
    }

    #[test]
    fn round_trip_at_zero_time() {
        let run = aligned_run(0.3, 40.5, 30);
        let psi0 = run.unperturbed_state_at(0.0).unwrap();
        let back = run.state_at(0.0).unwrap();
        assert!(fidelity(&psi0, &back).unwrap() >= 1.0 - 1e-10);
    }

    #[test]
    fn zero_perturbation_matches_exact_evolver() {
        let c = CouplingSet::new(0.05, 0.1).with_d(1.7);
        let n = spec(40);
        let b = UnperturbedBasis::misaligned(&c, DirectionCosines::aligned(), n).unwrap();
        let psi = HybridState::normalized(vec![ONE, ZERO, ONE], vec![3])
            .unwrap()
            .kron(&coherent_state(C64::new(0.5, 0.2), n).unwrap());
        let sys = {
            let v = hamiltonian_misaligned(&c, DirectionCosines::aligned(), n).unwrap().h_i;
            let coords = b.from_lab(psi.amplitudes()).unwrap();
            let t = matrix_elements(&v, &b).unwrap();
            second_order(&t, &window_selection(&b, &coords, DEFAULT_WINDOW), 1e-6).unwrap()
        };
        let eig = eigendecompose(&hamiltonian_1d(&c, n)).unwrap();
        for t in [0.7, PI, TAU] {
            let a = perturbed_evolve(&psi, &b, &sys, t).unwrap();
            let e = evolve(&psi, &eig, t).unwrap();
            for (x, y) in a.amplitudes().iter().zip(e.amplitudes()) {
                assert!((x - y).norm() <= 1e-8);
            }
        }
    }

    #[test]
    fn spin_motion_entanglement() {
        let run = aligned_run(0.4, 40.5, 30);
        let mid = run.state_at(PI).unwrap().schmidt_coefficients();
        assert!(mid.len() >= 2 && mid[1] > 1e-3);
        let end = run.state_at(TAU).unwrap().schmidt_coefficients();
        // only the perturbative admixture survives at t₀
        let mixing = run.system().report.max_mixing;
        assert!(end.get(1).copied().unwrap_or(0.0) <= 10.0 * mixing);
    }

    #[test]
    fn window_doubling_converges() {
        let c = CouplingSet::new(0.1, 0.1).with_d(40.5).with_gammas(0.4, 0.4);
        let specs = [spec(8), spec(8), spec(60)];
        let b = UnperturbedBasis::three_d(&c, specs).unwrap();
        let psi = bright_initial_state(&b, C64::new(0.0, 0.0)).unwrap();
        let v = hamiltonian_3d(&c, specs).perturbation();
        let f = |w: f64| {
            let opts = PerturbOptions {
                window: w,
                ..PerturbOptions::default()
            };
            PerturbativeEvolution::new(b.clone(), &v, &psi, &opts)
                .unwrap()
                .fidelity_at(TAU)
        };
        assert!((f(15.0) - f(30.0)).abs() <= 1e-8);
    }

    #[test]
    fn fidelity_unity_without_transverse_coupling() {
        let base = CouplingSet::new(0.05, 0.1);
        let p = FidelityPoint {
            lambda: 0.1,
            gamma_x: 0.0,
            gamma_y: 0.0,
        };
        let f = perturbation_fidelity(&base, p, C64::new(0.0, 0.0), [spec(4), spec(4), spec(40)])
            .unwrap();
        assert!((f - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn fidelity_stays_high_at_reference_points() {
        let base = CouplingSet::new(0.05, 0.1);
        let specs = [spec(8), spec(8), spec(48)];
        for (lambda, gamma) in [(0.1, 0.4), (0.05, 0.1f64.sqrt())] {
            let p = FidelityPoint {
                lambda,
                gamma_x: gamma,
                gamma_y: gamma,
            };
            let f = perturbation_fidelity(&base, p, C64::new(0.0, 0.0), specs).unwrap();
            assert!(f > 0.99);
        }
    }

    #[test]
    fn truncation_guard_fires() {
        let c = CouplingSet::new(0.1, 0.1).with_d(40.5).with_gammas(0.4, 0.4);
        let specs = [spec(2), spec(2), spec(30)];
        let b = UnperturbedBasis::three_d(&c, specs).unwrap();
        let psi = bright_initial_state(&b, C64::new(0.0, 0.0)).unwrap();
        let v = hamiltonian_3d(&c, specs).perturbation();
        let err = PerturbativeEvolution::new(b, &v, &psi, &PerturbOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Truncation { .. }));
    }
}
