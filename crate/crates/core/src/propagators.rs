//! Full and restricted propagators.
//!
//! The restricted propagator `g_r(t) = P exp(-i t PHP) P` is available in closed
//! form, as the limit of the projected product `(P U(t/n))^n P`, and, for the
//! half box, by the method of images. Every route reduces to an `r x r` block on
//! the support of `P`, which is where all the arithmetic happens.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Serialize, Serializer};

use crate::error::{Result, ZenoError};
use crate::linalg::{self, CMatrix, CVector, Spectrum};
use crate::model::{region_projector, ModelSystem, Potential, Projector, QOperator, Region, Role};

/// How a restricted propagator was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Closed,
    Product(u64),
    Images,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Closed => f.write_str("closed"),
            Method::Product(n) => write!(f, "product({n})"),
            Method::Images => f.write_str("images"),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone)]
pub struct RestrictedPropagatorResult {
    pub operator: QOperator,
    pub method: Method,
    pub dt: f64,
    /// Operator-norm distance to the closed form; `None` for the closed form itself.
    pub defect: Option<f64>,
    /// Set when the projector has rank zero and the propagator is identically zero.
    pub degenerate: bool,
}

/// Spectral data for one `(H, P)` pair, reusable across many times.
#[derive(Debug, Clone)]
pub struct RestrictedDynamics {
    hamiltonian: CMatrix,
    projector: Projector,
    full: Spectrum,
    restricted: Spectrum,
}

impl RestrictedDynamics {
    pub fn new(model: &ModelSystem, projector: &Projector) -> Result<Self> {
        if projector.dim() != model.dim() {
            return Err(ZenoError::DimensionMismatch {
                expected: model.dim(),
                actual: projector.dim(),
            });
        }
        let h = model.h().clone();
        let full = Spectrum::of_hermitian(&h)?;
        let restricted = Spectrum::of_hermitian(&linalg::extract_block(&h, projector.support()))?;
        Ok(RestrictedDynamics {
            hamiltonian: h,
            projector: projector.clone(),
            full,
            restricted,
        })
    }

    pub fn dim(&self) -> usize {
        self.projector.dim()
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    pub fn hamiltonian(&self) -> &CMatrix {
        &self.hamiltonian
    }

    pub fn full_spectrum(&self) -> &Spectrum {
        &self.full
    }

    /// Spectrum of `PHP` on the range of `P`.
    pub fn restricted_spectrum(&self) -> &Spectrum {
        &self.restricted
    }

    /// `exp(-i dt H)`.
    pub fn full(&self, dt: f64) -> CMatrix {
        self.full.evolution(dt)
    }

    /// Closed-form `g_r(dt)` on the support of `P`.
    pub fn restricted_block(&self, dt: f64) -> CMatrix {
        self.restricted.evolution(dt)
    }

    /// Closed-form `g_r(dt)` embedded in the full space.
    pub fn restricted(&self, dt: f64) -> CMatrix {
        linalg::embed_block(&self.restricted_block(dt), self.projector.support(), self.dim())
    }

    pub fn evolve_full(&self, dt: f64, psi: &CVector) -> CVector {
        self.full.evolve(dt, psi)
    }

    pub fn evolve_restricted(&self, dt: f64, psi: &CVector) -> CVector {
        let support = self.projector.support();
        let local = CVector::from_iterator(support.len(), support.iter().map(|&i| psi[i]));
        let moved = self.restricted.evolve(dt, &local);
        let mut out = CVector::zeros(self.dim());
        for (k, &i) in support.iter().enumerate() {
            out[i] = moved[k];
        }
        out
    }

    /// Block of the slice map `P U(dt/n) P`.
    pub fn slice_block(&self, dt: f64, n: u64) -> CMatrix {
        linalg::extract_block(&self.full(dt / n as f64), self.projector.support())
    }

    /// `(P U(dt/n))^n P` on the support of `P`.
    pub fn product_block(&self, dt: f64, n: u64) -> Result<CMatrix> {
        if n == 0 {
            return Err(ZenoError::param("n", "product form needs at least one slice"));
        }
        let slice = self.slice_block(dt, n);
        Ok(if n.is_power_of_two() {
            linalg::power_of_two(&slice, n)
        } else {
            linalg::power_chain(&slice, n)
        })
    }

    /// Operator-norm distance between the product form with `n` slices and the closed form.
    pub fn product_defect(&self, dt: f64, n: u64) -> Result<f64> {
        let diff = self.product_block(dt, n)? - self.restricted_block(dt);
        linalg::operator_norm(&diff)
    }
}

/// `exp(-i dt H)` by Hermitian eigendecomposition.
pub fn full_propagator(model: &ModelSystem, dt: f64) -> Result<QOperator> {
    let spectrum = Spectrum::of_hermitian(model.h())?;
    Ok(QOperator::trusted(spectrum.evolution(dt), Role::Unitary))
}

/// `PHP` as a full-space matrix.
pub fn restricted_hamiltonian(model: &ModelSystem, projector: &Projector) -> CMatrix {
    let block = linalg::extract_block(model.h(), projector.support());
    linalg::embed_block(&block, projector.support(), model.dim())
}

/// `P [H, P] P`, which vanishes identically for any orthogonal projector.
pub fn projected_commutator(model: &ModelSystem, projector: &Projector) -> CMatrix {
    let p = projector.to_matrix();
    let h = model.h();
    let comm = h * &p - &p * h;
    &p * comm * &p
}

/// Closed form `P exp(-i dt PHP) P`.
pub fn restricted_propagator_closed(
    model: &ModelSystem,
    projector: &Projector,
    dt: f64,
) -> Result<RestrictedPropagatorResult> {
    let dynamics = RestrictedDynamics::new(model, projector)?;
    Ok(RestrictedPropagatorResult {
        operator: QOperator::trusted(dynamics.restricted(dt), Role::General),
        method: Method::Closed,
        dt,
        defect: None,
        degenerate: projector.rank() == 0,
    })
}

/// Projected product `(P U(dt/n))^n P`.
pub fn restricted_propagator_product(
    model: &ModelSystem,
    projector: &Projector,
    dt: f64,
    n: u64,
) -> Result<RestrictedPropagatorResult> {
    if n == 0 {
        return Err(ZenoError::param("n", "product form needs at least one slice"));
    }
    let dynamics = RestrictedDynamics::new(model, projector)?;
    let block = dynamics.product_block(dt, n)?;
    let defect = linalg::operator_norm(&(&block - dynamics.restricted_block(dt)))?;
    Ok(RestrictedPropagatorResult {
        operator: QOperator::trusted(
            linalg::embed_block(&block, projector.support(), model.dim()),
            Role::General,
        ),
        method: Method::Product(n),
        dt,
        defect: Some(defect),
        degenerate: projector.rank() == 0,
    })
}

/// Max-entry residual of `i d/dt g_r - H g_r - [P, H] g_r` at `dt`, with the time
/// derivative taken by a central difference of step `h`.
pub fn restricted_ode_residual(model: &ModelSystem, projector: &Projector, dt: f64, h: f64) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(ZenoError::param("h", format!("step must be positive, got {h}")));
    }
    let dynamics = RestrictedDynamics::new(model, projector)?;
    let ham = model.h();
    let p = projector.to_matrix();
    let g = dynamics.restricted(dt);
    let derivative = (dynamics.restricted(dt + h) - dynamics.restricted(dt - h))
        * Complex64::new(0.0, 1.0 / (2.0 * h));
    let commutator = &p * ham - ham * &p;
    let residual = derivative - ham * &g - commutator * &g;
    Ok(linalg::max_abs(&residual))
}

/// Half-box restricted propagator from the box propagator and its mirror image:
/// `g(x, x') - g(x, L - x')` on the points left of `L/2`.
///
/// The box propagator is summed over the exact lattice sine modes, so this route
/// shares no eigensolver with the closed form.
pub fn images_propagator_halfbox(model: &ModelSystem, dt: f64) -> Result<RestrictedPropagatorResult> {
    let grid = model
        .grid()
        .ok_or_else(|| ZenoError::Unsupported("method of images needs a grid model".into()))?;
    if model.potential() != Some(&Potential::Zero) {
        return Err(ZenoError::Unsupported(
            "method of images is only valid for the zero-potential box".into(),
        ));
    }
    if grid.midpoint_index().is_none() {
        return Err(ZenoError::Unsupported(format!(
            "method of images needs a grid node at L/2 (odd N), got N = {}",
            grid.n
        )));
    }
    let n = grid.n;
    let projector = region_projector(model, &Region::LeftHalf)?;
    let support = projector.support();

    let norm = (2.0 / (n + 1) as f64).sqrt();
    let modes = CMatrix::from_fn(n, n, |j, k| {
        Complex64::new(norm * (PI * ((k + 1) * (j + 1)) as f64 / (n + 1) as f64).sin(), 0.0)
    });
    let hop = 1.0 / (grid.mass * grid.dx * grid.dx);
    let mut weighted = modes.clone();
    for (k, mut col) in weighted.column_iter_mut().enumerate() {
        let energy = hop * (1.0 - (PI * (k + 1) as f64 / (n + 1) as f64).cos());
        col *= linalg::phase(-energy * dt);
    }
    let g_box = weighted * modes.transpose();

    let r = support.len();
    let block = CMatrix::from_fn(r, r, |a, b| {
        let (j, k) = (support[a], support[b]);
        g_box[(j, k)] - g_box[(j, n - 1 - k)]
    });
    let closed = RestrictedDynamics::new(model, &projector)?.restricted_block(dt);
    let defect = linalg::operator_norm(&(&block - closed))?;
    Ok(RestrictedPropagatorResult {
        operator: QOperator::trusted(linalg::embed_block(&block, support, n), Role::General),
        method: Method::Images,
        dt,
        defect: Some(defect),
        degenerate: false,
    })
}
