//! Hilbert-space models: Hamiltonians, basis-diagonal projectors and initial states.
//!
//! Units have `hbar = 1`. Grid models discretize `p^2/2m + V(x)` on the open box
//! `(0, L)` with Dirichlet walls, so the `N` interior points sit at
//! `x_j = (j + 1) dx` with `dx = L / (N + 1)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZenoError};
use crate::linalg::{self, CMatrix, CVector, ZERO};

const HERMITIAN_REL_TOL: f64 = 1e-12;
const ROLE_TOL: f64 = 1e-10;
/// Continuum packet mass allowed outside the box.
pub const PACKET_LEAK_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Hermitian,
    Unitary,
    Projector,
    General,
}

/// A dense operator tagged with the algebraic property it is known to satisfy.
#[derive(Debug, Clone)]
pub struct QOperator {
    matrix: CMatrix,
    role: Role,
}

impl QOperator {
    /// Wraps `matrix`, checking the invariant implied by `role`.
    pub fn new(matrix: CMatrix, role: Role) -> Result<Self> {
        if !matrix.is_square() {
            return Err(ZenoError::DimensionMismatch {
                expected: matrix.nrows(),
                actual: matrix.ncols(),
            });
        }
        match role {
            Role::Hermitian => {
                let deviation = linalg::hermiticity_defect(&matrix);
                if !(deviation <= HERMITIAN_REL_TOL * linalg::max_abs(&matrix)) {
                    return Err(ZenoError::NotHermitian { deviation });
                }
            }
            Role::Projector => {
                let idem = linalg::max_abs(&(&matrix * &matrix - &matrix));
                let deviation = idem.max(linalg::hermiticity_defect(&matrix));
                if !(deviation <= ROLE_TOL) {
                    return Err(ZenoError::NotProjector { deviation });
                }
            }
            Role::Unitary => {
                let dim = matrix.nrows();
                let deviation = linalg::max_abs(&(matrix.ad_mul(&matrix) - linalg::identity(dim)));
                if !(deviation <= ROLE_TOL) {
                    return Err(ZenoError::NotUnitary { deviation });
                }
            }
            Role::General => {}
        }
        Ok(QOperator { matrix, role })
    }

    pub fn general(matrix: CMatrix) -> Self {
        QOperator {
            matrix,
            role: Role::General,
        }
    }

    /// For results whose role holds by construction (spectral exponentials, 0/1 diagonals).
    pub(crate) fn trusted(matrix: CMatrix, role: Role) -> Self {
        QOperator { matrix, role }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, v: &CVector) -> CVector {
        &self.matrix * v
    }
}

/// Orthogonal projector onto a set of basis vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Projector {
    dim: usize,
    support: Vec<usize>,
}

impl Projector {
    pub fn new(dim: usize, mut support: Vec<usize>) -> Result<Self> {
        support.sort_unstable();
        support.dedup();
        if let Some(&last) = support.last() {
            if last >= dim {
                return Err(ZenoError::param(
                    "region",
                    format!("basis index {last} out of range for dimension {dim}"),
                ));
            }
        }
        Ok(Projector { dim, support })
    }

    pub fn identity(dim: usize) -> Self {
        Projector {
            dim,
            support: (0..dim).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.support.len()
    }

    /// Sorted basis indices spanning the range.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn is_identity(&self) -> bool {
        self.support.len() == self.dim
    }

    pub fn complement(&self) -> Projector {
        let mut mask = vec![true; self.dim];
        for &i in &self.support {
            mask[i] = false;
        }
        Projector {
            dim: self.dim,
            support: (0..self.dim).filter(|&i| mask[i]).collect(),
        }
    }

    pub fn to_matrix(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim, self.dim);
        for &i in &self.support {
            m[(i, i)] = linalg::ONE;
        }
        m
    }

    pub fn to_operator(&self) -> QOperator {
        QOperator::trusted(self.to_matrix(), Role::Projector)
    }

    pub fn apply(&self, v: &CVector) -> CVector {
        let mut out = CVector::zeros(self.dim);
        for &i in &self.support {
            out[i] = v[i];
        }
        out
    }

    /// `<psi|P|psi>`.
    pub fn expectation(&self, psi: &StateVector) -> f64 {
        self.support
            .iter()
            .map(|&i| psi.amplitudes[i].norm_sqr())
            .sum()
    }
}

/// Uniform grid on the open interval `(0, length)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: usize,
    pub length: f64,
    pub dx: f64,
    pub mass: f64,
}

impl Grid {
    pub fn new(n: usize, length: f64, mass: f64) -> Result<Self> {
        if n < 8 {
            return Err(ZenoError::param("n", format!("need at least 8 grid points, got {n}")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(ZenoError::param("length", format!("must be positive, got {length}")));
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(ZenoError::param("mass", format!("must be positive, got {mass}")));
        }
        Ok(Grid {
            n,
            length,
            dx: length / (n + 1) as f64,
            mass,
        })
    }

    /// Position of interior point `j` (zero based).
    pub fn x(&self, j: usize) -> f64 {
        (j + 1) as f64 * self.dx
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// Index of the point at `L/2`, present only for odd `n`.
    pub fn midpoint_index(&self) -> Option<usize> {
        (self.n % 2 == 1).then_some(self.n / 2)
    }

    fn slack(&self) -> f64 {
        1e-12 * self.length
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Potential {
    Zero,
    /// `m omega^2 (x - center)^2 / 2`; `center` defaults to `L/2`.
    Harmonic { omega: f64, center: Option<f64> },
    Table { values: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Grid1d,
    TwoLevel,
    Composite,
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Basis {
    Grid1d { grid: Grid, potential: Potential },
    TwoLevel,
    /// System factor first: basis index `s * env_dim + e`.
    Composite { system: Box<Basis>, factor_dims: [usize; 2] },
    Custom,
}

/// A Hamiltonian together with the basis it is written in.
#[derive(Debug, Clone)]
pub struct ModelSystem {
    hamiltonian: QOperator,
    basis: Basis,
}

impl ModelSystem {
    /// Wraps an arbitrary Hermitian matrix as a model in an unlabelled basis.
    pub fn custom(hamiltonian: CMatrix) -> Result<Self> {
        Ok(ModelSystem {
            hamiltonian: QOperator::new(hamiltonian, Role::Hermitian)?,
            basis: Basis::Custom,
        })
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn hamiltonian(&self) -> &QOperator {
        &self.hamiltonian
    }

    pub fn h(&self) -> &CMatrix {
        self.hamiltonian.matrix()
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn basis_kind(&self) -> BasisKind {
        match self.basis {
            Basis::Grid1d { .. } => BasisKind::Grid1d,
            Basis::TwoLevel => BasisKind::TwoLevel,
            Basis::Composite { .. } => BasisKind::Composite,
            Basis::Custom => BasisKind::Custom,
        }
    }

    pub fn grid(&self) -> Option<&Grid> {
        match &self.basis {
            Basis::Grid1d { grid, .. } => Some(grid),
            _ => None,
        }
    }

    pub fn potential(&self) -> Option<&Potential> {
        match &self.basis {
            Basis::Grid1d { potential, .. } => Some(potential),
            _ => None,
        }
    }

    pub fn factor_dims(&self) -> Option<[usize; 2]> {
        match &self.basis {
            Basis::Composite { factor_dims, .. } => Some(*factor_dims),
            _ => None,
        }
    }

    fn require_grid(&self, what: &str) -> Result<&Grid> {
        self.grid()
            .ok_or_else(|| ZenoError::Unsupported(format!("{what} needs a grid model")))
    }
}

/// Finite-difference model of a particle in a box with optional potential.
pub fn make_grid_model(n: usize, length: f64, mass: f64, potential: Potential) -> Result<ModelSystem> {
    let grid = Grid::new(n, length, mass)?;
    let v: Vec<f64> = match &potential {
        Potential::Zero => vec![0.0; n],
        Potential::Harmonic { omega, center } => {
            if !omega.is_finite() {
                return Err(ZenoError::param("omega", "must be finite"));
            }
            let c = center.unwrap_or(length / 2.0);
            (0..n)
                .map(|j| 0.5 * mass * omega * omega * (grid.x(j) - c).powi(2))
                .collect()
        }
        Potential::Table { values } => {
            if values.len() != n {
                return Err(ZenoError::DimensionMismatch {
                    expected: n,
                    actual: values.len(),
                });
            }
            if values.iter().any(|x| !x.is_finite()) {
                return Err(ZenoError::param("potential", "table contains non-finite values"));
            }
            values.clone()
        }
    };
    let hop = 1.0 / (2.0 * mass * grid.dx * grid.dx);
    let mut h = CMatrix::zeros(n, n);
    for j in 0..n {
        h[(j, j)] = Complex64::new(2.0 * hop + v[j], 0.0);
        if j + 1 < n {
            h[(j, j + 1)] = Complex64::new(-hop, 0.0);
            h[(j + 1, j)] = Complex64::new(-hop, 0.0);
        }
    }
    Ok(ModelSystem {
        hamiltonian: QOperator::trusted(h, Role::Hermitian),
        basis: Basis::Grid1d { grid, potential },
    })
}

/// `H = (omega / 2) sigma_x`.
pub fn make_two_level(omega: f64) -> ModelSystem {
    let half = Complex64::new(omega / 2.0, 0.0);
    let h = CMatrix::from_row_slice(2, 2, &[ZERO, half, half, ZERO]);
    ModelSystem {
        hamiltonian: QOperator::trusted(h, Role::Hermitian),
        basis: Basis::TwoLevel,
    }
}

/// Interaction term `strength * A (x) B` of a composite model.
#[derive(Debug, Clone)]
pub struct Coupling {
    pub system_operator: CMatrix,
    pub environment_operator: CMatrix,
    pub strength: f64,
}

/// `H = H_s (x) 1 + 1 (x) H_e + lambda A (x) B`.
pub fn make_composite(system: &ModelSystem, environment: &ModelSystem, coupling: &Coupling) -> Result<ModelSystem> {
    let (ds, de) = (system.dim(), environment.dim());
    for (op, expected) in [
        (&coupling.system_operator, ds),
        (&coupling.environment_operator, de),
    ] {
        if op.nrows() != expected || op.ncols() != expected {
            return Err(ZenoError::DimensionMismatch {
                expected,
                actual: op.nrows(),
            });
        }
        let deviation = linalg::hermiticity_defect(op);
        if deviation > HERMITIAN_REL_TOL * linalg::max_abs(op).max(1.0) {
            return Err(ZenoError::NotHermitian { deviation });
        }
    }
    let h = linalg::kron(system.h(), &linalg::identity(de))
        + linalg::kron(&linalg::identity(ds), environment.h())
        + linalg::kron(&coupling.system_operator, &coupling.environment_operator)
            .scale(coupling.strength);
    Ok(ModelSystem {
        hamiltonian: QOperator::new(h, Role::Hermitian)?,
        basis: Basis::Composite {
            system: Box::new(system.basis.clone()),
            factor_dims: [ds, de],
        },
    })
}

/// Diagonal position operator of a grid model.
pub fn position_operator(model: &ModelSystem) -> Result<CMatrix> {
    let grid = model.require_grid("position operator")?;
    Ok(diagonal(grid.positions().into_iter()))
}

/// `sign(x - L/2)`, zero on a midpoint node.
pub fn position_sign_operator(model: &ModelSystem) -> Result<CMatrix> {
    let grid = model.require_grid("position sign operator")?;
    let half = grid.length / 2.0;
    let slack = grid.slack();
    Ok(diagonal(grid.positions().into_iter().map(|x| {
        if x > half + slack {
            1.0
        } else if x < half - slack {
            -1.0
        } else {
            0.0
        }
    })))
}

pub fn pauli_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, linalg::ONE, linalg::ONE, ZERO])
}

pub fn pauli_z() -> CMatrix {
    diagonal([1.0, -1.0].into_iter())
}

fn diagonal(values: impl Iterator<Item = f64>) -> CMatrix {
    let v: Vec<Complex64> = values.map(|x| Complex64::new(x, 0.0)).collect();
    CMatrix::from_diagonal(&CVector::from_vec(v))
}

/// Subset of the defining basis selected by a projector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// Explicit basis labels (system labels for composites).
    Indices(Vec<usize>),
    /// Grid points with `a <= x_j <= b`.
    Interval { a: f64, b: f64 },
    /// Grid points strictly left of `L/2`; a midpoint node is excluded and acts as the wall.
    LeftHalf,
    Whole,
}

/// Basis-diagonal projector for `region`. Composite models apply the region to the
/// system factor and tensor with the identity on the environment.
pub fn region_projector(model: &ModelSystem, region: &Region) -> Result<Projector> {
    match &model.basis {
        Basis::Composite {
            system,
            factor_dims: [ds, de],
        } => {
            let sys = basis_region(system, *ds, region)?;
            let support = sys
                .into_iter()
                .flat_map(|s| (0..*de).map(move |e| s * de + e))
                .collect();
            Projector::new(ds * de, support)
        }
        basis => Projector::new(model.dim(), basis_region(basis, model.dim(), region)?),
    }
}

fn basis_region(basis: &Basis, dim: usize, region: &Region) -> Result<Vec<usize>> {
    match (region, basis) {
        (Region::Whole, _) => Ok((0..dim).collect()),
        (Region::Indices(ix), _) => {
            if let Some(&bad) = ix.iter().find(|&&i| i >= dim) {
                return Err(ZenoError::param(
                    "region",
                    format!("index {bad} out of range for dimension {dim}"),
                ));
            }
            Ok(ix.clone())
        }
        (Region::Interval { a, b }, Basis::Grid1d { grid, .. }) => {
            let s = grid.slack();
            if !(a.is_finite() && b.is_finite()) || *a > *b || *a < -s || *b > grid.length + s {
                return Err(ZenoError::param(
                    "region",
                    format!("interval [{a}, {b}] is not inside the box [0, {}]", grid.length),
                ));
            }
            Ok((0..grid.n)
                .filter(|&j| {
                    let x = grid.x(j);
                    x >= a - s && x <= b + s
                })
                .collect())
        }
        (Region::LeftHalf, Basis::Grid1d { grid, .. }) => {
            let half = grid.length / 2.0 - grid.slack();
            Ok((0..grid.n).filter(|&j| grid.x(j) < half).collect())
        }
        (Region::Interval { .. } | Region::LeftHalf, _) => Err(ZenoError::Unsupported(
            "position regions need a grid model (or a composite with a grid system)".into(),
        )),
    }
}

/// Normalized pure state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: CVector,
}

impl StateVector {
    /// Normalizes `amplitudes`; fails on a zero or non-finite vector.
    pub fn new(amplitudes: CVector) -> Result<Self> {
        let norm = amplitudes.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(ZenoError::param("state", format!("cannot normalize vector with norm {norm}")));
        }
        Ok(StateVector {
            amplitudes: amplitudes.unscale(norm),
        })
    }

    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(ZenoError::param("index", format!("{index} out of range for dimension {dim}")));
        }
        let mut v = CVector::zeros(dim);
        v[index] = linalg::ONE;
        Ok(StateVector { amplitudes: v })
    }

    /// `system (x) environment`.
    pub fn product(system: &StateVector, environment: &StateVector) -> StateVector {
        StateVector {
            amplitudes: system.amplitudes.kronecker(&environment.amplitudes),
        }
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    /// `<psi|A|psi>` (real part; exact for Hermitian `A`).
    pub fn expectation(&self, op: &CMatrix) -> f64 {
        linalg::inner(&self.amplitudes, &(op * &self.amplitudes)).re
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(ZenoError::DimensionMismatch {
                expected: dim,
                actual: self.dim(),
            });
        }
        Ok(())
    }
}

/// Continuum mass of `|g|^2` (a normal density with std `sigma`) outside `[0, L]`.
fn packet_mass_outside(x0: f64, sigma: f64, length: f64) -> f64 {
    let z = std::f64::consts::SQRT_2 * sigma;
    0.5 * libm::erfc(x0 / z) + 0.5 * libm::erfc((length - x0) / z)
}

fn check_packet(grid: &Grid, x0: f64, p0: f64, sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(ZenoError::param("sigma", format!("must be positive, got {sigma}")));
    }
    if !(x0.is_finite() && p0.is_finite()) {
        return Err(ZenoError::param("x0", "packet centre and momentum must be finite"));
    }
    let deficit = packet_mass_outside(x0, sigma, grid.length);
    if deficit > PACKET_LEAK_THRESHOLD {
        return Err(ZenoError::PacketLeak {
            deficit,
            threshold: PACKET_LEAK_THRESHOLD,
        });
    }
    Ok(())
}

fn packet_amplitude(x: f64, x0: f64, p0: f64, sigma: f64) -> Complex64 {
    Complex64::from_polar((-(x - x0).powi(2) / (4.0 * sigma * sigma)).exp(), p0 * x)
}

/// Gaussian packet `exp(-(x - x0)^2 / 4 sigma^2 + i p0 x)` sampled on the grid.
pub fn gaussian_state(model: &ModelSystem, x0: f64, p0: f64, sigma: f64) -> Result<StateVector> {
    let grid = model.require_grid("gaussian state")?;
    check_packet(grid, x0, p0, sigma)?;
    StateVector::new(CVector::from_iterator(
        grid.n,
        (0..grid.n).map(|j| packet_amplitude(grid.x(j), x0, p0, sigma)),
    ))
}

/// `g(x) - g(L - x)` for the Gaussian `g`; odd under reflection about `L/2`.
pub fn antisymmetric_gaussian(model: &ModelSystem, x0: f64, p0: f64, sigma: f64) -> Result<StateVector> {
    let grid = model.require_grid("antisymmetric gaussian")?;
    check_packet(grid, x0, p0, sigma)?;
    let l = grid.length;
    StateVector::new(CVector::from_iterator(
        grid.n,
        (0..grid.n).map(|j| {
            let x = grid.x(j);
            packet_amplitude(x, x0, p0, sigma) - packet_amplitude(l - x, x0, p0, sigma)
        }),
    ))
}

/// `sin(n pi x / L)` on the grid; an exact eigenvector of the zero-potential grid Hamiltonian.
pub fn box_eigenstate(model: &ModelSystem, n: usize) -> Result<StateVector> {
    let grid = model.require_grid("box eigenstate")?;
    if n == 0 || n > grid.n {
        return Err(ZenoError::param("n", format!("level must be in 1..={}, got {n}", grid.n)));
    }
    let k = n as f64 * PI / grid.length;
    StateVector::new(CVector::from_iterator(
        grid.n,
        (0..grid.n).map(|j| Complex64::new((k * grid.x(j)).sin(), 0.0)),
    ))
}
