//! Class operators, candidate probabilities and the decoherence functional for the
//! two-history partition {remain in the subspace, leave it at some point}.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{Result, ZenoError};
use crate::linalg::{self, CMatrix, CVector, Spectrum};
use crate::model::{ModelSystem, Projector, QOperator, Role, StateVector};
use crate::propagators::{self, Method, RestrictedDynamics};

/// Default threshold on the normalized decoherence measure.
pub const DEFAULT_TOLERANCE: f64 = 1e-8;
/// Diagonal weights below this make the normalized measure zero by convention.
pub const DIAGONAL_FLOOR: f64 = 1e-12;
/// How far `<psi|P|psi>` may fall short of one for a state "in the subspace".
pub const SUBSPACE_SLACK: f64 = 1e-9;

/// `C = P_n U(t_n - t_{n-1}) ... U(t_2 - t_1) P_1` for a chain of `(projector, time)`
/// entries in increasing time order. The first entry acts first.
pub fn chain_class_operator(model: &ModelSystem, chain: &[(Projector, f64)]) -> Result<QOperator> {
    let Some((first, rest)) = chain.split_first() else {
        return Err(ZenoError::param("chain", "needs at least one projector"));
    };
    for (p, _) in chain {
        if p.dim() != model.dim() {
            return Err(ZenoError::DimensionMismatch {
                expected: model.dim(),
                actual: p.dim(),
            });
        }
    }
    if chain.windows(2).any(|w| !(w[1].1 > w[0].1)) {
        return Err(ZenoError::param("chain", "times must be strictly increasing"));
    }
    let spectrum = Spectrum::of_hermitian(model.h())?;
    let mut c = first.0.to_matrix();
    let mut t_prev = first.1;
    for (p, t) in rest {
        let u = spectrum.evolution(t - t_prev);
        c = p.to_matrix() * u * c;
        t_prev = *t;
    }
    Ok(QOperator::general(c))
}

/// Class operators for "remain in P throughout dt" and its complement.
#[derive(Debug, Clone)]
pub struct HistoryPair {
    /// `C_alpha = g_r(dt)`.
    pub remain: QOperator,
    /// `C_beta = g(dt) - g_r(dt)`.
    pub leave: QOperator,
    pub dt: f64,
    pub projector: Projector,
    pub method: Method,
}

pub fn make_history_pair(model: &ModelSystem, projector: &Projector, dt: f64, method: Method) -> Result<HistoryPair> {
    let remain = match method {
        Method::Closed => propagators::restricted_propagator_closed(model, projector, dt)?,
        Method::Product(n) => propagators::restricted_propagator_product(model, projector, dt, n)?,
        Method::Images => propagators::images_propagator_halfbox(model, dt)?,
    };
    if remain.operator.dim() != projector.dim() {
        return Err(ZenoError::DimensionMismatch {
            expected: projector.dim(),
            actual: remain.operator.dim(),
        });
    }
    let full = propagators::full_propagator(model, dt)?;
    let leave = full.into_matrix() - remain.operator.matrix();
    Ok(HistoryPair {
        remain: remain.operator,
        leave: QOperator::trusted(leave, Role::General),
        dt,
        projector: projector.clone(),
        method,
    })
}

/// `||C psi||^2`.
pub fn candidate_probability(c: &QOperator, psi: &StateVector) -> Result<f64> {
    psi.check_dim(c.dim())?;
    Ok(c.apply(psi.amplitudes()).norm_squared())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Decoherent,
    Interfering,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Decoherent => "decoherent",
            Verdict::Interfering => "interfering",
        }
    }
}

fn complex_pair<S: Serializer>(z: &Complex64, s: S) -> Result<S::Ok, S::Error> {
    [z.re, z.im].serialize(s)
}

/// Decoherence functional of the remain/leave pair for one pure state.
#[derive(Debug, Clone, Serialize)]
pub struct DecoherenceReport {
    /// `D(alpha, beta) = <psi|C_beta^dagger C_alpha|psi>`, serialized as `[re, im]`.
    #[serde(serialize_with = "complex_pair")]
    pub d_alpha_beta: Complex64,
    pub d_alpha_alpha: f64,
    pub d_beta_beta: f64,
    pub d_normalized: f64,
    pub p_remain: f64,
    pub p_leave: f64,
    /// `|<psi|g_r^dagger g|psi> - <psi|P|psi>|`.
    pub lhs_rhs_gap: f64,
    pub verdict: Verdict,
    pub tolerance: f64,
    /// `<psi|P|psi>`.
    pub p_subspace: f64,
    pub dt: f64,
    pub method: Method,
    pub dim: usize,
    pub projector_rank: usize,
}

impl DecoherenceReport {
    /// Builds the report from `C_alpha psi` and `C_beta psi`.
    pub fn from_branches(
        remain: &CVector,
        leave: &CVector,
        p_subspace: f64,
        tolerance: f64,
        dt: f64,
        method: Method,
        projector_rank: usize,
    ) -> Self {
        let d_ab = linalg::inner(leave, remain);
        let d_aa = remain.norm_squared();
        let d_bb = leave.norm_squared();
        let d_normalized = if d_aa > DIAGONAL_FLOOR && d_bb > DIAGONAL_FLOOR {
            (d_ab.norm() / (d_aa * d_bb).sqrt()).min(1.0)
        } else {
            0.0
        };
        // <g_r psi | g psi> with g psi = remain + leave
        let overlap = linalg::inner(remain, &(remain + leave));
        let verdict = if d_normalized <= tolerance {
            Verdict::Decoherent
        } else {
            Verdict::Interfering
        };
        DecoherenceReport {
            d_alpha_beta: d_ab,
            d_alpha_alpha: d_aa,
            d_beta_beta: d_bb,
            d_normalized,
            p_remain: d_aa,
            p_leave: d_bb,
            lhs_rhs_gap: (overlap - p_subspace).norm(),
            verdict,
            tolerance,
            p_subspace,
            dt,
            method,
            dim: remain.len(),
            projector_rank,
        }
    }

    /// `p(alpha) + p(beta) + 2 Re D(alpha, beta)`, equal to one for a unitary pair.
    pub fn row_sum(&self) -> f64 {
        self.p_remain + self.p_leave + 2.0 * self.d_alpha_beta.re
    }

    pub fn is_decoherent(&self) -> bool {
        self.verdict == Verdict::Decoherent
    }
}

/// Evaluates the decoherence functional of `pair` on `psi`.
pub fn decoherence_functional(pair: &HistoryPair, psi: &StateVector, tolerance: f64) -> Result<DecoherenceReport> {
    psi.check_dim(pair.remain.dim())?;
    let v = psi.amplitudes();
    Ok(DecoherenceReport::from_branches(
        &pair.remain.apply(v),
        &pair.leave.apply(v),
        pair.projector.expectation(psi),
        tolerance,
        pair.dt,
        pair.method,
        pair.projector.rank(),
    ))
}

/// Closed-form decoherence reports for one `(model, P, psi)` at many times,
/// without forming any propagator matrix.
#[derive(Debug, Clone)]
pub struct HistoryEvaluator {
    dynamics: RestrictedDynamics,
    psi: StateVector,
    p_subspace: f64,
    tolerance: f64,
}

impl HistoryEvaluator {
    pub fn new(model: &ModelSystem, projector: &Projector, psi: &StateVector, tolerance: f64) -> Result<Self> {
        psi.check_dim(model.dim())?;
        Ok(HistoryEvaluator {
            dynamics: RestrictedDynamics::new(model, projector)?,
            psi: psi.clone(),
            p_subspace: projector.expectation(psi),
            tolerance,
        })
    }

    pub fn dynamics(&self) -> &RestrictedDynamics {
        &self.dynamics
    }

    pub fn p_subspace(&self) -> f64 {
        self.p_subspace
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// `(g_r psi, g psi)` at `dt`.
    pub fn branches(&self, dt: f64) -> (CVector, CVector) {
        let v = self.psi.amplitudes();
        (self.dynamics.evolve_restricted(dt, v), self.dynamics.evolve_full(dt, v))
    }

    pub fn report(&self, dt: f64) -> DecoherenceReport {
        let (remain, full) = self.branches(dt);
        let leave = &full - &remain;
        DecoherenceReport::from_branches(
            &remain,
            &leave,
            self.p_subspace,
            self.tolerance,
            dt,
            Method::Closed,
            self.dynamics.projector().rank(),
        )
    }

    /// Reports at every `dt`, in input order.
    pub fn scan(&self, dts: &[f64]) -> Vec<DecoherenceReport> {
        dts.par_iter().map(|&dt| self.report(dt)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurvivalPoint {
    pub n: u64,
    pub survival: f64,
}

impl SurvivalPoint {
    pub fn deficit(&self) -> f64 {
        1.0 - self.survival
    }
}

/// `||(P U(dt/n))^n psi||^2` for each `n`, for `psi` inside the subspace.
pub fn zeno_survival_curve(
    model: &ModelSystem,
    projector: &Projector,
    psi: &StateVector,
    dt: f64,
    n_list: &[u64],
) -> Result<Vec<SurvivalPoint>> {
    psi.check_dim(model.dim())?;
    let inside = projector.expectation(psi);
    if inside <= 1.0 - SUBSPACE_SLACK {
        return Err(ZenoError::Precondition(format!(
            "state has weight {inside} in the subspace; project it with P and renormalize before asking for survival"
        )));
    }
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(ZenoError::param("n_list", "needs one or more positive slice counts"));
    }
    if n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ZenoError::param("n_list", "slice counts must be strictly ascending"));
    }
    let spectrum = Spectrum::of_hermitian(model.h())?;
    let support = projector.support();
    let local = CVector::from_iterator(support.len(), support.iter().map(|&i| psi.amplitudes()[i]));
    Ok(n_list
        .par_iter()
        .map(|&n| {
            let slice = linalg::extract_block(&spectrum.evolution(dt / n as f64), support);
            let v = apply_power(&slice, n, &local);
            SurvivalPoint {
                n,
                survival: v.norm_squared(),
            }
        })
        .collect())
}

fn apply_power(slice: &CMatrix, n: u64, v: &CVector) -> CVector {
    if n.is_power_of_two() {
        linalg::power_of_two(slice, n) * v
    } else {
        let mut out = v.clone();
        for _ in 0..n {
            out = slice * out;
        }
        out
    }
}

/// Least-squares slope of `ln(1 - s)` against `ln n`.
pub fn fit_deficit_exponent(points: &[SurvivalPoint]) -> Option<f64> {
    let xy: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.deficit() > 0.0)
        .map(|p| ((p.n as f64).ln(), p.deficit().ln()))
        .collect();
    if xy.len() < 2 {
        return None;
    }
    let m = xy.len() as f64;
    let (sx, sy) = xy.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / m, sy / m);
    let (num, den) = xy.iter().fold((0.0, 0.0), |(a, b), (x, y)| {
        (a + (x - mx) * (y - my), b + (x - mx).powi(2))
    });
    (den > 0.0).then(|| num / den)
}

/// Deficit exponent over the points with `n >= n_max / 10`.
pub fn largest_decade_exponent(points: &[SurvivalPoint]) -> Option<f64> {
    let top = points.iter().map(|p| p.n).max()?;
    let tail: Vec<SurvivalPoint> = points.iter().copied().filter(|p| p.n * 10 >= top).collect();
    fit_deficit_exponent(&tail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    use crate::model::{box_eigenstate, make_grid_model, make_two_level, region_projector, Potential, Region};

    fn two_level() -> (ModelSystem, Projector, StateVector) {
        let m = make_two_level(1.0);
        let p = region_projector(&m, &Region::Indices(vec![0])).unwrap();
        let psi = StateVector::basis(2, 0).unwrap();
        (m, p, psi)
    }

    #[test]
    fn chain_single_entry_is_projector() {
        let m = make_grid_model(12, 1.0, 1.0, Potential::Zero).unwrap();
        let p = region_projector(&m, &Region::Interval { a: 0.0, b: 0.4 }).unwrap();
        let c = chain_class_operator(&m, &[(p.clone(), 0.3)]).unwrap();
        assert_eq!(c.matrix(), &p.to_matrix());
    }

    #[test]
    fn chain_of_identities_is_propagator() {
        let m = make_grid_model(12, 1.0, 1.0, Potential::Zero).unwrap();
        let id = Projector::identity(12);
        let chain: Vec<_> = [0.1, 0.15, 0.3, 0.32].iter().map(|&t| (id.clone(), t)).collect();
        let c = chain_class_operator(&m, &chain).unwrap();
        let u = propagators::full_propagator(&m, 0.22).unwrap();
        assert!(linalg::max_abs(&(c.matrix() - u.matrix())) < 1e-12);
    }

    #[test]
    fn chain_rejects_non_increasing_times() {
        let m = make_two_level(1.0);
        let id = Projector::identity(2);
        assert!(chain_class_operator(&m, &[(id.clone(), 1.0), (id.clone(), 1.0)]).is_err());
        assert!(chain_class_operator(&m, &[(id.clone(), 1.0), (id, 0.5)]).is_err());
        assert!(chain_class_operator(&m, &[]).is_err());
    }

    #[test]
    fn equal_chain_matches_product_form() {
        // n+1 projectors spaced dt/n apart give (P U(dt/n))^n P
        let m = make_grid_model(16, 1.0, 1.0, Potential::Zero).unwrap();
        let p = region_projector(&m, &Region::Interval { a: 0.0, b: 0.5 }).unwrap();
        let (dt, n) = (0.02, 8u64);
        let chain: Vec<_> = (0..=n).map(|k| (p.clone(), dt * k as f64 / n as f64)).collect();
        let c = chain_class_operator(&m, &chain).unwrap();
        let prod = propagators::restricted_propagator_product(&m, &p, dt, n).unwrap();
        assert!(linalg::max_abs(&(c.matrix() - prod.operator.matrix())) < 1e-12);
    }

    #[test]
    fn pair_at_zero_time() {
        let m = make_grid_model(12, 1.0, 1.0, Potential::Zero).unwrap();
        let p = region_projector(&m, &Region::Interval { a: 0.0, b: 0.5 }).unwrap();
        let pair = make_history_pair(&m, &p, 0.0, Method::Closed).unwrap();
        assert!(linalg::max_abs(&(pair.remain.matrix() - p.to_matrix())) < 1e-14);
        assert!(linalg::max_abs(&(pair.leave.matrix() - p.complement().to_matrix())) < 1e-14);
        let whole = make_history_pair(&m, &Projector::identity(12), 0.7, Method::Closed).unwrap();
        assert!(linalg::max_abs(whole.leave.matrix()) < 1e-12);
    }

    #[test]
    fn two_level_pair() {
        let (m, p, _) = two_level();
        let pair = make_history_pair(&m, &p, 1.3, Method::Closed).unwrap();
        let u = propagators::full_propagator(&m, 1.3).unwrap();
        assert!(linalg::max_abs(&(pair.remain.matrix() - p.to_matrix())) < 1e-14);
        assert!(linalg::max_abs(&(pair.leave.matrix() - (u.matrix() - p.to_matrix()))) < 1e-14);
    }

    #[test]
    fn candidate_probabilities() {
        let (m, p, psi) = two_level();
        let pair = make_history_pair(&m, &p, 2.0, Method::Closed).unwrap();
        assert!((candidate_probability(&pair.remain, &psi).unwrap() - 1.0).abs() < 1e-12);
        let out = StateVector::basis(2, 1).unwrap();
        assert!(candidate_probability(&pair.remain, &out).unwrap().abs() < 1e-15);

        let g = make_grid_model(255, 1.0, 1.0, Potential::Zero).unwrap();
        let pg = region_projector(&g, &Region::LeftHalf).unwrap();
        let psi2 = box_eigenstate(&g, 2).unwrap();
        let gr = propagators::restricted_propagator_closed(&g, &pg, 0.05).unwrap();
        assert!((candidate_probability(&gr.operator, &psi2).unwrap() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn zero_time_is_exactly_decoherent() {
        let m = make_grid_model(20, 1.0, 1.0, Potential::Zero).unwrap();
        let p = region_projector(&m, &Region::Interval { a: 0.0, b: 0.5 }).unwrap();
        let psi = StateVector::new(CVector::from_fn(20, |i, _| Complex64::new(1.0 + i as f64, 0.5))).unwrap();
        let pair = make_history_pair(&m, &p, 0.0, Method::Closed).unwrap();
        let r = decoherence_functional(&pair, &psi, DEFAULT_TOLERANCE).unwrap();
        assert!(r.d_alpha_beta.norm() < 1e-15);
        assert!(r.is_decoherent());
    }

    #[test]
    fn two_level_interferes_at_pi() {
        let (m, p, psi) = two_level();
        let pair = make_history_pair(&m, &p, PI, Method::Closed).unwrap();
        let r = decoherence_functional(&pair, &psi, DEFAULT_TOLERANCE).unwrap();
        assert!((r.d_alpha_beta - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
        assert_eq!(r.verdict, Verdict::Interfering);
        // <psi|g_r^dagger g|psi> = cos(dt/2) = 0 against <psi|P|psi> = 1
        assert!((r.lhs_rhs_gap - 1.0).abs() < 1e-12);
        assert!((r.row_sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_level_recurs_at_four_pi() {
        let (m, p, psi) = two_level();
        let pair = make_history_pair(&m, &p, 4.0 * PI, Method::Closed).unwrap();
        let r = decoherence_functional(&pair, &psi, DEFAULT_TOLERANCE).unwrap();
        assert!(r.is_decoherent());
        assert!(r.lhs_rhs_gap < 1e-12);
    }

    #[test]
    fn evaluator_matches_operator_route() {
        let m = make_grid_model(40, 1.0, 1.0, Potential::Zero).unwrap();
        let p = region_projector(&m, &Region::Interval { a: 0.0, b: 0.5 }).unwrap();
        let psi = crate::model::gaussian_state(&m, 0.3, 10.0, 0.05).unwrap();
        let pair = make_history_pair(&m, &p, 0.01, Method::Closed).unwrap();
        let a = decoherence_functional(&pair, &psi, DEFAULT_TOLERANCE).unwrap();
        let b = HistoryEvaluator::new(&m, &p, &psi, DEFAULT_TOLERANCE).unwrap().report(0.01);
        assert!((a.d_alpha_beta - b.d_alpha_beta).norm() < 1e-12);
        assert!((a.d_normalized - b.d_normalized).abs() < 1e-10);
    }

    #[test]
    fn survival_two_level() {
        let (m, p, psi) = two_level();
        let curve = zeno_survival_curve(&m, &p, &psi, PI, &[10, 20, 40]).unwrap();
        for pt in &curve {
            let exact = (PI / (2 * pt.n) as f64).cos().powi(2 * pt.n as i32);
            assert!((pt.survival - exact).abs() < 1e-12);
        }
        assert!((curve[0].survival - 0.78047).abs() < 1e-4);
        let far = zeno_survival_curve(&m, &p, &psi, PI, &[400, 800, 1600]).unwrap();
        let ratios: Vec<f64> = far.windows(2).map(|w| w[0].deficit() / w[1].deficit()).collect();
        assert!(ratios.iter().all(|r| (r - 2.0).abs() < 0.01), "{ratios:?}");
    }

    #[test]
    fn survival_precondition() {
        let (m, p, _) = two_level();
        let outside = StateVector::basis(2, 1).unwrap();
        let err = zeno_survival_curve(&m, &p, &outside, 1.0, &[4]).unwrap_err();
        assert!(err.to_string().contains("renormalize"));
        let psi = StateVector::basis(2, 0).unwrap();
        assert!(zeno_survival_curve(&m, &p, &psi, 1.0, &[8, 4]).is_err());
    }

    #[test]
    fn half_box_ground_state_survival_rises_to_one() {
        // the half-box ground state is not an eigenvector of the slice map, so
        // survival is not flat; it climbs towards one as n grows
        let m = make_grid_model(63, 1.0, 1.0, Potential::Zero).unwrap();
        let p = region_projector(&m, &Region::LeftHalf).unwrap();
        let block = linalg::extract_block(m.h(), p.support());
        let eig = nalgebra::SymmetricEigen::new(block.map(|z| z.re));
        let k = eig.eigenvalues.imin();
        let mut amps = CVector::zeros(63);
        for (idx, &i) in p.support().iter().enumerate() {
            amps[i] = Complex64::new(eig.eigenvectors[(idx, k)], 0.0);
        }
        let psi = StateVector::new(amps).unwrap();
        let curve = zeno_survival_curve(&m, &p, &psi, 0.01, &[1, 4, 16, 64, 256, 1024]).unwrap();
        assert!(curve.windows(2).all(|w| w[1].survival > w[0].survival));
        assert!(curve.last().unwrap().deficit() < 0.01);
    }

    #[test]
    fn exponent_fit_recovers_power() {
        let pts: Vec<SurvivalPoint> = [10u64, 20, 40, 80]
            .iter()
            .map(|&n| SurvivalPoint {
                n,
                survival: 1.0 - 3.0 / n as f64,
            })
            .collect();
        assert!((fit_deficit_exponent(&pts).unwrap() + 1.0).abs() < 1e-12);
    }
}
