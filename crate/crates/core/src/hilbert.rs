//! Truncated bosonic modes, spin-1 operators, tensor products and the state
//! constructors shared by every dynamical module.

use faer::{Mat, Side};

use crate::error::{Error, Result};

pub type C64 = faer::c64;

/// Largest probability a truncated state may lose beyond the retained levels.
pub const LEAKAGE_BOUND: f64 = 1e-10;

/// Allowed deviation of a normalized state from unit norm.
pub const NORM_TOLERANCE: f64 = 1e-10;

const HERMITIAN_TOLERANCE: f64 = 1e-12;

pub(crate) const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub(crate) const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Truncation of one bosonic mode to `n_levels` Fock states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FockSpec {
    n_levels: usize,
}

impl FockSpec {
    pub fn new(n_levels: usize) -> Result<Self> {
        if n_levels < 2 {
            return Err(Error::InvalidSpec(format!(
                "n_levels must be at least 2, got {n_levels}"
            )));
        }
        Ok(Self { n_levels })
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn doubled(&self) -> Self {
        Self {
            n_levels: 2 * self.n_levels,
        }
    }
}

fn layout_dim(layout: &[usize]) -> usize {
    layout.iter().product()
}

/// Normalized (or explicitly unnormalized) state vector on a declared
/// tensor-factor layout.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridState {
    amplitudes: Vec<C64>,
    layout: Vec<usize>,
}

impl HybridState {
    /// Wraps raw amplitudes without normalizing them.
    pub fn new(amplitudes: Vec<C64>, layout: Vec<usize>) -> Result<Self> {
        if layout.is_empty() || layout.contains(&0) {
            return Err(Error::InvalidSpec(format!("bad layout {layout:?}")));
        }
        if layout_dim(&layout) != amplitudes.len() {
            return Err(Error::LayoutMismatch {
                expected: layout,
                found: vec![amplitudes.len()],
            });
        }
        Ok(Self { amplitudes, layout })
    }

    /// Wraps amplitudes and rescales them to unit norm.
    pub fn normalized(amplitudes: Vec<C64>, layout: Vec<usize>) -> Result<Self> {
        let mut state = Self::new(amplitudes, layout)?;
        state.renormalize()?;
        Ok(state)
    }

    /// Product basis state with one index per factor.
    pub fn basis(layout: &[usize], indices: &[usize]) -> Result<Self> {
        if indices.len() != layout.len() {
            return Err(Error::LayoutMismatch {
                expected: layout.to_vec(),
                found: indices.to_vec(),
            });
        }
        let mut flat = 0;
        for (&i, &d) in indices.iter().zip(layout) {
            if i >= d {
                return Err(Error::Index { index: i, len: d });
            }
            flat = flat * d + i;
        }
        let mut amplitudes = vec![ZERO; layout_dim(layout)];
        amplitudes[flat] = ONE;
        Self::new(amplitudes, layout.to_vec())
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amplitudes
    }

    pub fn layout(&self) -> &[usize] {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes
            .iter()
            .map(|a| a.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn renormalize(&mut self) -> Result<()> {
        let norm = self.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Domain("cannot normalize a zero state".into()));
        }
        self.amplitudes.iter_mut().for_each(|a| *a /= norm);
        Ok(())
    }

    fn check_layout(&self, other: &[usize]) -> Result<()> {
        if self.layout != other {
            return Err(Error::LayoutMismatch {
                expected: self.layout.clone(),
                found: other.to_vec(),
            });
        }
        Ok(())
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &HybridState) -> Result<C64> {
        self.check_layout(&other.layout)?;
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// op·|self⟩ (not renormalized).
    pub fn apply(&self, op: &LabeledOperator) -> Result<HybridState> {
        self.check_layout(&op.layout)?;
        Ok(Self {
            amplitudes: matvec(&op.matrix, &self.amplitudes),
            layout: self.layout.clone(),
        })
    }

    pub fn expectation(&self, op: &LabeledOperator) -> Result<C64> {
        let image = self.apply(op)?;
        self.inner(&image)
    }

    /// Reduced density matrix of the first tensor factor.
    pub fn reduced_first(&self) -> Mat<C64> {
        let d0 = self.layout[0];
        let rest = self.dim() / d0;
        Mat::from_fn(d0, d0, |i, j| {
            (0..rest)
                .map(|k| self.amplitudes[i * rest + k] * self.amplitudes[j * rest + k].conj())
                .sum()
        })
    }

    /// Probability that the first factor is found in level `index`.
    pub fn first_factor_population(&self, index: usize) -> f64 {
        let rest = self.dim() / self.layout[0];
        self.amplitudes[index * rest..(index + 1) * rest]
            .iter()
            .map(|a| a.norm_sqr())
            .sum()
    }

    /// Schmidt coefficients across the cut (first factor | rest), descending.
    pub fn schmidt_coefficients(&self) -> Vec<f64> {
        let rho = self.reduced_first();
        let mut vals: Vec<f64> = rho
            .self_adjoint_eigenvalues(Side::Lower)
            .map(|v| v.into_iter().map(|x| x.max(0.0).sqrt()).collect())
            .unwrap_or_default();
        vals.sort_by(|a, b| b.total_cmp(a));
        vals
    }
}

/// Dense square matrix on a declared tensor-factor layout.
#[derive(Clone, Debug)]
pub struct LabeledOperator {
    matrix: Mat<C64>,
    layout: Vec<usize>,
    hermitian: bool,
}

pub(crate) fn matvec(m: &Mat<C64>, v: &[C64]) -> Vec<C64> {
    let mut out = vec![ZERO; m.nrows()];
    for j in 0..m.ncols() {
        let vj = v[j];
        if vj == ZERO {
            continue;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o += m[(i, j)] * vj;
        }
    }
    out
}

pub(crate) fn hermiticity_defect(m: &Mat<C64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for i in j..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn max_abs(m: &Mat<C64>) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            worst = worst.max(m[(i, j)].norm());
        }
    }
    worst
}

impl LabeledOperator {
    /// Wraps a matrix; the Hermitian flag is set when the matrix is Hermitian
    /// to 1e-12 relative to its largest entry (absolute below unit scale).
    pub fn new(matrix: Mat<C64>, layout: Vec<usize>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidSpec(format!(
                "operator must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if layout_dim(&layout) != matrix.nrows() {
            return Err(Error::LayoutMismatch {
                expected: layout,
                found: vec![matrix.nrows()],
            });
        }
        let scale = max_abs(&matrix).max(1.0);
        let hermitian = hermiticity_defect(&matrix) <= HERMITIAN_TOLERANCE * scale;
        Ok(Self {
            matrix,
            layout,
            hermitian,
        })
    }

    /// Like [`LabeledOperator::new`] but fails unless the matrix is Hermitian.
    pub fn hermitian(matrix: Mat<C64>, layout: Vec<usize>) -> Result<Self> {
        let op = Self::new(matrix, layout)?;
        if !op.hermitian {
            return Err(Error::NotHermitian {
                defect: op.hermiticity_defect(),
            });
        }
        Ok(op)
    }

    pub fn identity(layout: &[usize]) -> Self {
        let n = layout_dim(layout);
        Self {
            matrix: Mat::from_fn(n, n, |i, j| if i == j { ONE } else { ZERO }),
            layout: layout.to_vec(),
            hermitian: true,
        }
    }

    pub fn zeros(layout: &[usize]) -> Self {
        let n = layout_dim(layout);
        Self {
            matrix: Mat::zeros(n, n),
            layout: layout.to_vec(),
            hermitian: true,
        }
    }

    pub fn matrix(&self) -> &Mat<C64> {
        &self.matrix
    }

    pub fn layout(&self) -> &[usize] {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.matrix[(row, col)]
    }

    pub fn hermiticity_defect(&self) -> f64 {
        hermiticity_defect(&self.matrix)
    }

    fn check_layout(&self, other: &LabeledOperator) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::LayoutMismatch {
                expected: self.layout.clone(),
                found: other.layout.clone(),
            });
        }
        Ok(())
    }

    pub fn adjoint(&self) -> Self {
        Self {
            matrix: self.matrix.adjoint().to_owned(),
            layout: self.layout.clone(),
            hermitian: self.hermitian,
        }
    }

    pub fn matmul(&self, other: &LabeledOperator) -> Result<Self> {
        self.check_layout(other)?;
        Self::new(&self.matrix * &other.matrix, self.layout.clone())
    }

    pub fn add(&self, other: &LabeledOperator) -> Result<Self> {
        self.check_layout(other)?;
        Self::new(&self.matrix + &other.matrix, self.layout.clone())
    }

    pub fn sub(&self, other: &LabeledOperator) -> Result<Self> {
        self.check_layout(other)?;
        Self::new(&self.matrix - &other.matrix, self.layout.clone())
    }

    pub fn scale(&self, factor: C64) -> Self {
        let matrix = Mat::from_fn(self.dim(), self.dim(), |i, j| self.matrix[(i, j)] * factor);
        Self {
            hermitian: self.hermitian && factor.im == 0.0,
            matrix,
            layout: self.layout.clone(),
        }
    }

    /// [self, other] = self·other − other·self.
    pub fn commutator(&self, other: &LabeledOperator) -> Result<Self> {
        self.matmul(other)?.sub(&other.matmul(self)?)
    }

    /// max |self − other| over all entries.
    pub fn max_abs_diff(&self, other: &LabeledOperator) -> Result<f64> {
        self.check_layout(other)?;
        Ok(max_abs(&(&self.matrix - &other.matrix)))
    }

    /// max |entry| over the leading `rows × cols` block.
    pub fn max_abs_in_block(&self, rows: usize, cols: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..cols.min(self.dim()) {
            for i in 0..rows.min(self.dim()) {
                worst = worst.max(self.matrix[(i, j)].norm());
            }
        }
        worst
    }

    pub fn max_abs_entry(&self) -> f64 {
        max_abs(&self.matrix)
    }

    /// Spectral norm bound via the Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.norm_l2()
    }
}

/// Kronecker composition of states or operators.
pub trait Kron: Sized {
    fn kron(&self, other: &Self) -> Self;
}

impl Kron for HybridState {
    fn kron(&self, other: &Self) -> Self {
        let mut amplitudes = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.amplitudes {
            amplitudes.extend(other.amplitudes.iter().map(|b| a * b));
        }
        let mut layout = self.layout.clone();
        layout.extend_from_slice(&other.layout);
        Self { amplitudes, layout }
    }
}

impl Kron for LabeledOperator {
    fn kron(&self, other: &Self) -> Self {
        let mut layout = self.layout.clone();
        layout.extend_from_slice(&other.layout);
        Self {
            matrix: self.matrix.kron(&other.matrix),
            layout,
            hermitian: self.hermitian && other.hermitian,
        }
    }
}

/// Kronecker product of a list of factors, left to right.
pub fn tensor<T: Kron + Clone>(factors: &[&T]) -> Result<T> {
    let (first, rest) = factors
        .split_first()
        .ok_or_else(|| Error::InvalidSpec("tensor of an empty factor list".into()))?;
    Ok(rest.iter().fold((*first).clone(), |acc, f| acc.kron(f)))
}

/// |⟨ψ|φ⟩|, insensitive to global phase.
pub fn fidelity(psi: &HybridState, phi: &HybridState) -> Result<f64> {
    Ok(psi.inner(phi)?.norm().clamp(0.0, 1.0))
}

pub struct FockOps {
    pub annihilate: LabeledOperator,
    pub create: LabeledOperator,
    pub number: LabeledOperator,
}

pub fn annihilation_matrix(n: usize) -> Mat<C64> {
    Mat::from_fn(n, n, |i, j| {
        if j == i + 1 {
            C64::new((j as f64).sqrt(), 0.0)
        } else {
            ZERO
        }
    })
}

/// Ladder and number operators of one truncated mode.
pub fn fock_ops(spec: FockSpec) -> FockOps {
    let n = spec.n_levels();
    let a = annihilation_matrix(n);
    let layout = vec![n];
    let create = a.adjoint().to_owned();
    let number = Mat::from_fn(n, n, |i, j| {
        if i == j {
            C64::new(i as f64, 0.0)
        } else {
            ZERO
        }
    });
    FockOps {
        annihilate: LabeledOperator {
            matrix: a,
            layout: layout.clone(),
            hermitian: false,
        },
        create: LabeledOperator {
            matrix: create,
            layout: layout.clone(),
            hermitian: false,
        },
        number: LabeledOperator {
            matrix: number,
            layout,
            hermitian: true,
        },
    }
}

/// Index of a spin projection in the `|+1⟩, |0⟩, |−1⟩` ordering.
pub fn spin_index(s_z: i32) -> usize {
    match s_z {
        1 => 0,
        0 => 1,
        -1 => 2,
        _ => panic!("spin-1 projection must be -1, 0 or +1, got {s_z}"),
    }
}

/// Spin projection stored at an index of the spin factor.
pub fn spin_value(index: usize) -> i32 {
    1 - index as i32
}

pub struct Spin1Ops {
    pub sx: LabeledOperator,
    pub sy: LabeledOperator,
    pub sz: LabeledOperator,
}

pub fn sx_matrix() -> [[C64; 3]; 3] {
    let r = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    [[ZERO, r, ZERO], [r, ZERO, r], [ZERO, r, ZERO]]
}

pub fn sy_matrix() -> [[C64; 3]; 3] {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let p = C64::new(0.0, r);
    [[ZERO, -p, ZERO], [p, ZERO, -p], [ZERO, p, ZERO]]
}

pub fn sz_matrix() -> [[C64; 3]; 3] {
    [[ONE, ZERO, ZERO], [ZERO, ZERO, ZERO], [ZERO, ZERO, -ONE]]
}

pub fn small_to_mat<const N: usize>(m: &[[C64; N]; N]) -> Mat<C64> {
    Mat::from_fn(N, N, |i, j| m[i][j])
}

/// Spin-1 operators in the S_z eigenbasis, ħ = 1.
pub fn spin1_ops() -> Spin1Ops {
    let wrap = |m: [[C64; 3]; 3]| LabeledOperator {
        matrix: small_to_mat(&m),
        layout: vec![3],
        hermitian: true,
    };
    Spin1Ops {
        sx: wrap(sx_matrix()),
        sy: wrap(sy_matrix()),
        sz: wrap(sz_matrix()),
    }
}

/// Probability a coherent state |β⟩ places above the first `n_levels` Fock
/// states, summed directly over the tail.
pub fn coherent_leakage(beta: C64, n_levels: usize) -> f64 {
    let x = beta.norm_sqr();
    if x == 0.0 {
        return 0.0;
    }
    // log of the Poisson weight x^N e^{-x} / N!
    let mut log_term = -x + n_levels as f64 * x.ln() - ln_factorial(n_levels);
    let mut total = 0.0;
    let mut k = n_levels;
    loop {
        let term = log_term.exp();
        total += term;
        k += 1;
        if k as f64 > x && term < 1e-18 * total.max(1e-300) {
            break;
        }
        if term == 0.0 && k as f64 > x {
            break;
        }
        log_term += x.ln() - (k as f64).ln();
    }
    total
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Coherent state amplitudes ⟨n|β⟩ on a truncated mode, renormalized.
pub fn coherent_state(beta: C64, spec: FockSpec) -> Result<HybridState> {
    let n = spec.n_levels();
    let leakage = coherent_leakage(beta, n);
    if leakage > LEAKAGE_BOUND {
        return Err(Error::Truncation {
            what: format!("coherent state with |beta| = {:.4}", beta.norm()),
            leakage,
            bound: LEAKAGE_BOUND,
        });
    }
    let mut amps = Vec::with_capacity(n);
    let mut amp = C64::new((-beta.norm_sqr() / 2.0).exp(), 0.0);
    amps.push(amp);
    for k in 1..n {
        amp = amp * beta / (k as f64).sqrt();
        amps.push(amp);
    }
    HybridState::normalized(amps, vec![n])
}

/// Generalized Laguerre polynomial L_n^{(a)}(x) by upward recurrence.
pub fn laguerre(n: usize, a: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 + a - x;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + a - x) * cur - (kf + a) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Closed-form matrix element ⟨m|D(α)|n⟩ of the infinite-dimensional
/// displacement operator.
pub fn displacement_element(alpha: C64, m: usize, n: usize) -> C64 {
    let x = alpha.norm_sqr();
    let gauss = (-x / 2.0).exp();
    if m >= n {
        // sqrt(n!/m!) α^{m-n}
        let mut pref = C64::new(1.0, 0.0);
        for j in n + 1..=m {
            pref = pref * alpha / (j as f64).sqrt();
        }
        pref * gauss * laguerre(n, (m - n) as f64, x)
    } else {
        let mut pref = C64::new(1.0, 0.0);
        for j in m + 1..=n {
            pref = pref * (-alpha.conj()) / (j as f64).sqrt();
        }
        pref * gauss * laguerre(m, (n - m) as f64, x)
    }
}

/// Probability the displaced number state D(α)|n⟩ places at or above level
/// `n_levels`, summed over the tail of closed-form amplitudes.
pub fn displaced_number_leakage(alpha: C64, n: usize, n_levels: usize) -> f64 {
    if alpha.norm_sqr() == 0.0 {
        return if n < n_levels { 0.0 } else { 1.0 };
    }
    let x = alpha.norm_sqr();
    let mut total = 0.0;
    let mut m = n_levels;
    let peak = n as f64 + x;
    loop {
        let term = displacement_element(alpha, m, n).norm_sqr();
        total += term;
        m += 1;
        if m as f64 > 2.0 * peak + 10.0 && term < 1e-20 * total.max(1e-300) {
            break;
        }
        if m > n_levels + 4000 {
            break;
        }
    }
    total
}

/// Displacement operator D(α) = exp(α a† − α* a) on a truncated mode.
///
/// Computed from the eigendecomposition of the Hermitian generator
/// i(α a† − α* a), so the truncated result is unitary to machine precision.
pub fn displacement(alpha: C64, spec: FockSpec) -> Result<LabeledOperator> {
    let n = spec.n_levels();
    let leakage = coherent_leakage(alpha, n);
    if leakage > LEAKAGE_BOUND {
        return Err(Error::Truncation {
            what: format!("displacement with |alpha| = {:.4}", alpha.norm()),
            leakage,
            bound: LEAKAGE_BOUND,
        });
    }
    Ok(LabeledOperator {
        matrix: displacement_matrix(alpha, n),
        layout: vec![n],
        hermitian: alpha.norm_sqr() == 0.0,
    })
}

/// Unchecked truncated displacement matrix.
pub(crate) fn displacement_matrix(alpha: C64, n: usize) -> Mat<C64> {
    if alpha.norm_sqr() == 0.0 {
        return Mat::from_fn(n, n, |i, j| if i == j { ONE } else { ZERO });
    }
    let i = C64::new(0.0, 1.0);
    let generator = Mat::from_fn(n, n, |r, c| {
        if r == c + 1 {
            i * alpha * (r as f64).sqrt()
        } else if c == r + 1 {
            -i * alpha.conj() * (c as f64).sqrt()
        } else {
            ZERO
        }
    });
    let eig = generator
        .self_adjoint_eigen(Side::Lower)
        .expect("tridiagonal Hermitian eigendecomposition");
    let vecs = eig.U();
    let vals = eig.S().column_vector();
    let phased = Mat::from_fn(n, n, |r, c| {
        let e = vals[c].re;
        vecs[(r, c)] * C64::new(e.cos(), -e.sin())
    });
    &phased * vecs.adjoint()
}

/// D(α)|n⟩, normalized.
pub fn displaced_number_state(alpha: C64, n: usize, spec: FockSpec) -> Result<HybridState> {
    let levels = spec.n_levels();
    if n >= levels {
        return Err(Error::Index {
            index: n,
            len: levels,
        });
    }
    let leakage = displaced_number_leakage(alpha, n, levels);
    if leakage > LEAKAGE_BOUND {
        return Err(Error::Truncation {
            what: format!(
                "displaced number state n = {n} with |alpha| = {:.4}",
                alpha.norm()
            ),
            leakage,
            bound: LEAKAGE_BOUND,
        });
    }
    let d = displacement_matrix(alpha, levels);
    let column: Vec<C64> = (0..levels).map(|r| d[(r, n)]).collect();
    HybridState::normalized(column, vec![levels])
}

/// Applies per-factor matrices to a vector laid out as `dims`
/// (row-major, first factor slowest). `None` leaves a factor untouched.
pub(crate) fn apply_factors(vec: &[C64], dims: &[usize], mats: &[Option<&Mat<C64>>]) -> Vec<C64> {
    let mut cur = vec.to_vec();
    let total: usize = dims.iter().product();
    for (axis, mat) in mats.iter().enumerate() {
        let Some(m) = mat else { continue };
        let d = dims[axis];
        let inner: usize = dims[axis + 1..].iter().product();
        let outer = total / (d * inner);
        let mut next = vec![ZERO; total];
        for o in 0..outer {
            let base = o * d * inner;
            for b in 0..d {
                for a in 0..d {
                    let coef = m[(a, b)];
                    if coef == ZERO {
                        continue;
                    }
                    let src = &cur[base + b * inner..base + (b + 1) * inner];
                    let dst = &mut next[base + a * inner..base + (a + 1) * inner];
                    for (x, y) in dst.iter_mut().zip(src) {
                        *x += coef * y;
                    }
                }
            }
        }
        cur = next;
    }
    cur
}

/// One product term `coef · F₀ ⊗ F₁ ⊗ …`; `None` marks an identity factor.
#[derive(Clone, Debug)]
pub struct KronTerm {
    pub coef: C64,
    pub factors: Vec<Option<Mat<C64>>>,
}

/// Operator stored as a sum of Kronecker products on a declared layout.
///
/// The 3D Hamiltonians are assembled in this form; [`TensorSum::to_operator`]
/// densifies when an exact solver needs the full matrix.
#[derive(Clone, Debug)]
pub struct TensorSum {
    layout: Vec<usize>,
    terms: Vec<KronTerm>,
}

impl TensorSum {
    pub fn new(layout: Vec<usize>) -> Self {
        Self {
            layout,
            terms: Vec::new(),
        }
    }

    /// Adds `coef · ⊗ factors`; factor dimensions must match the layout.
    pub fn push(&mut self, coef: f64, factors: Vec<Option<Mat<C64>>>) {
        self.push_complex(C64::new(coef, 0.0), factors);
    }

    pub fn push_complex(&mut self, coef: C64, factors: Vec<Option<Mat<C64>>>) {
        assert_eq!(factors.len(), self.layout.len(), "factor count");
        for (f, &d) in factors.iter().zip(&self.layout) {
            if let Some(m) = f {
                assert_eq!((m.nrows(), m.ncols()), (d, d), "factor dimension");
            }
        }
        if coef != ZERO {
            self.terms.push(KronTerm { coef, factors });
        }
    }

    pub fn layout(&self) -> &[usize] {
        &self.layout
    }

    pub fn terms(&self) -> &[KronTerm] {
        &self.terms
    }

    pub fn dim(&self) -> usize {
        layout_dim(&self.layout)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(mut self, other: &TensorSum) -> Self {
        assert_eq!(self.layout, other.layout);
        self.terms.extend(other.terms.iter().cloned());
        self
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = Self::new(self.layout.clone());
        for t in &self.terms {
            out.push_complex(t.coef * factor, t.factors.clone());
        }
        out
    }

    /// self·|ψ⟩ without forming the dense matrix.
    pub fn apply(&self, psi: &HybridState) -> Result<HybridState> {
        if psi.layout() != self.layout.as_slice() {
            return Err(Error::LayoutMismatch {
                expected: self.layout.clone(),
                found: psi.layout().to_vec(),
            });
        }
        let mut out = vec![ZERO; self.dim()];
        for t in &self.terms {
            let refs: Vec<Option<&Mat<C64>>> = t.factors.iter().map(|f| f.as_ref()).collect();
            let image = apply_factors(psi.amplitudes(), &self.layout, &refs);
            for (o, v) in out.iter_mut().zip(image) {
                *o += t.coef * v;
            }
        }
        HybridState::new(out, self.layout.clone())
    }

    pub fn to_operator(&self) -> LabeledOperator {
        let n = self.dim();
        let mut total = Mat::<C64>::zeros(n, n);
        for t in &self.terms {
            let mut acc = Mat::from_fn(1, 1, |_, _| t.coef);
            for (f, &d) in t.factors.iter().zip(&self.layout) {
                acc = match f {
                    Some(m) => acc.kron(m),
                    None => acc.kron(Mat::<C64>::identity(d, d)),
                };
            }
            total += &acc;
        }
        LabeledOperator::new(total, self.layout.clone()).expect("layout consistent by construction")
    }
}
