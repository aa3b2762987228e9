//! Semi-explicit index-1 DAEs in the partitioned long-term form.
//!
//! The unknowns are stacked as `p = [z_c | x | y]`:
//!
//! ```text
//!   z_c' = h_c(z_c, z_d, x, y)      slow continuous states
//!   x'   = f(z_c, z_d, x, y)        fast states (long-term model)
//!   0    = f(z_c, z_d, x, y)        fast states (QSS model)
//!   0    = g(z_c, z_d, x, y)        algebraic variables
//! ```
//!
//! Discrete variables `z_d` are parameters of the continuous system; they
//! only change through the event layer in [`crate::hybrid`]. Residuals are
//! stacked with the sign convention `F(p) = [-h_c; -f; -g]`, so that the
//! DAE reads `D p' = -F(p)` with `D` the 0/1 mass projector of the model
//! kind.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numeric::{fd_jacobian, norm, solve_linear, Matrix, Vector};

/// Which of the two power-system formulations a problem represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Fast states keep their dynamics (mass block of size `p + m`).
    LongTerm,
    /// Fast states are replaced by their equilibrium condition `f = 0`.
    Qss,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::LongTerm => write!(f, "longterm"),
            ModelKind::Qss => write!(f, "qss"),
        }
    }
}

/// Block sizes of a partitioned model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Dims {
    /// Slow continuous states `z_c` (p).
    pub n_zc: usize,
    /// Discrete states `z_d` (q).
    pub n_zd: usize,
    /// Fast states `x` (m).
    pub n_x: usize,
    /// Algebraic variables `y` (n).
    pub n_y: usize,
}

impl Dims {
    pub fn new(n_zc: usize, n_zd: usize, n_x: usize, n_y: usize) -> Self {
        Dims { n_zc, n_zd, n_x, n_y }
    }

    /// Length of the continuous vector `p`.
    pub fn n_p(&self) -> usize {
        self.n_zc + self.n_x + self.n_y
    }
}

/// The continuous equations of a partitioned DAE.
///
/// Implementors evaluate `h_c`, `f` and `g` at `p = [z_c | x | y]` for a
/// fixed `z_d`. An analytic Jacobian of the stacked `[h_c; f; g]` may be
/// supplied; otherwise a central-difference fallback is used.
pub trait DaeModel: Send + Sync {
    fn dims(&self) -> Dims;

    fn eval(&self, zd: &[f64], p: &[f64], hc: &mut [f64], f: &mut [f64], g: &mut [f64]) -> Result<()>;

    /// Jacobian of `[h_c; f; g]` with respect to `p`, if available.
    fn jacobian(&self, _zd: &[f64], _p: &[f64]) -> Option<Result<Matrix>> {
        None
    }

    /// Time scale `ε` (inverse of the largest time constant). Informational:
    /// simulation runs in seconds with `ε` folded into the equations.
    fn epsilon(&self) -> f64 {
        1.0
    }

    /// Names of the entries of `p`, in `[z_c | x | y]` order.
    fn variable_names(&self) -> Vec<String> {
        let d = self.dims();
        (0..d.n_zc)
            .map(|i| format!("zc{i}"))
            .chain((0..d.n_x).map(|i| format!("x{i}")))
            .chain((0..d.n_y).map(|i| format!("y{i}")))
            .collect()
    }
}

type EvalFn = dyn Fn(&[f64], &[f64], &mut [f64], &mut [f64], &mut [f64]) + Send + Sync;
type JacFn = dyn Fn(&[f64], &[f64]) -> Matrix + Send + Sync;

/// A [`DaeModel`] assembled from closures; handy for small test problems.
pub struct FnModel {
    dims: Dims,
    eval: Box<EvalFn>,
    jac: Option<Box<JacFn>>,
}

impl FnModel {
    /// `eval(zd, p, hc, f, g)` must fill the three output slices.
    pub fn new<E>(dims: Dims, eval: E) -> Self
    where
        E: Fn(&[f64], &[f64], &mut [f64], &mut [f64], &mut [f64]) + Send + Sync + 'static,
    {
        FnModel {
            dims,
            eval: Box::new(eval),
            jac: None,
        }
    }

    /// Attaches an analytic Jacobian of `[h_c; f; g]`.
    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&[f64], &[f64]) -> Matrix + Send + Sync + 'static,
    {
        self.jac = Some(Box::new(jac));
        self
    }
}

impl DaeModel for FnModel {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn eval(&self, zd: &[f64], p: &[f64], hc: &mut [f64], f: &mut [f64], g: &mut [f64]) -> Result<()> {
        (self.eval)(zd, p, hc, f, g);
        Ok(())
    }

    fn jacobian(&self, zd: &[f64], p: &[f64]) -> Option<Result<Matrix>> {
        self.jac.as_ref().map(|j| Ok(j(zd, p)))
    }
}

/// A point of the hybrid system: time, continuous blocks and discrete values.
#[derive(Clone, PartialEq, Debug, Default)]
pub struct SystemState {
    pub t: f64,
    pub zc: Vector,
    pub zd: Vector,
    pub x: Vector,
    pub y: Vector,
}

impl SystemState {
    pub fn new(t: f64, zc: Vec<f64>, zd: Vec<f64>, x: Vec<f64>, y: Vec<f64>) -> Self {
        SystemState {
            t,
            zc: zc.into(),
            zd: zd.into(),
            x: x.into(),
            y: y.into(),
        }
    }

    /// Continuous unknowns stacked as `[z_c | x | y]`.
    pub fn p(&self) -> Vector {
        let mut v = Vec::with_capacity(self.zc.len() + self.x.len() + self.y.len());
        v.extend_from_slice(&self.zc);
        v.extend_from_slice(&self.x);
        v.extend_from_slice(&self.y);
        v.into()
    }

    /// Replaces the continuous part with `p`, keeping `t` and `z_d`.
    pub fn with_p(&self, p: &[f64]) -> SystemState {
        let (a, b) = (self.zc.len(), self.zc.len() + self.x.len());
        assert_eq!(p.len(), b + self.y.len(), "p has wrong length");
        SystemState {
            t: self.t,
            zc: p[..a].into(),
            zd: self.zd.clone(),
            x: p[a..b].into(),
            y: p[b..].into(),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.zc.len(), self.zd.len(), self.x.len(), self.y.len())
    }
}

/// Which mass projector a model kind uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MassKind {
    /// Identity over `[z_c | x]`.
    D1LongTerm,
    /// Identity over `z_c` only.
    D2Qss,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MassStructure {
    pub kind: MassKind,
    /// Size of the leading identity block.
    pub active_count: usize,
    pub total: usize,
}

impl MassStructure {
    /// `true` for rows of `p` that carry a time derivative.
    pub fn is_differential(&self, row: usize) -> bool {
        row < self.active_count
    }
}

/// Result of [`DaeProblem::check_consistency`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConsistencyReport {
    pub consistent: bool,
    pub g_norm: f64,
    /// Only measured for QSS problems, where `f = 0` is a constraint too.
    pub f_norm: Option<f64>,
}

impl ConsistencyReport {
    /// The largest constraint norm that was checked.
    pub fn worst(&self) -> f64 {
        self.f_norm.map_or(self.g_norm, |f| f.max(self.g_norm))
    }
}

/// A model together with the formulation it is solved in.
#[derive(Clone)]
pub struct DaeProblem {
    pub model: Arc<dyn DaeModel>,
    pub kind: ModelKind,
}

impl fmt::Debug for DaeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DaeProblem")
            .field("dims", &self.model.dims())
            .field("kind", &self.kind)
            .finish()
    }
}

impl DaeProblem {
    pub fn new(model: Arc<dyn DaeModel>, kind: ModelKind) -> Self {
        DaeProblem { model, kind }
    }

    /// Same equations, other formulation.
    pub fn with_kind(&self, kind: ModelKind) -> Self {
        DaeProblem {
            model: Arc::clone(&self.model),
            kind,
        }
    }

    pub fn dims(&self) -> Dims {
        self.model.dims()
    }

    pub fn mass_structure(&self) -> MassStructure {
        let d = self.dims();
        let (kind, active_count) = match self.kind {
            ModelKind::LongTerm => (MassKind::D1LongTerm, d.n_zc + d.n_x),
            ModelKind::Qss => (MassKind::D2Qss, d.n_zc),
        };
        MassStructure {
            kind,
            active_count,
            total: d.n_p(),
        }
    }

    fn check_dims(&self, s: &SystemState) -> Result<()> {
        let d = self.dims();
        if s.dims() != d {
            return Err(Error::DimensionMismatch(format!(
                "state has dims {:?}, problem expects {:?}",
                s.dims(),
                d
            )));
        }
        Ok(())
    }

    /// Evaluates `[h_c; f; g]` at `(z_d, p)`.
    pub fn eval_parts(&self, zd: &[f64], p: &[f64]) -> Result<Vector> {
        let d = self.dims();
        let mut out = vec![0.0; d.n_p()];
        {
            let (hc, rest) = out.split_at_mut(d.n_zc);
            let (f, g) = rest.split_at_mut(d.n_x);
            self.model.eval(zd, p, hc, f, g)?;
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteResidual(
                "model evaluated outside its domain".into(),
            ));
        }
        Ok(out.into())
    }

    /// `F(p) = [-h_c; -f; -g]` with `z_d` held fixed.
    pub fn residual_at(&self, zd: &[f64], p: &[f64]) -> Result<Vector> {
        let mut r = self.eval_parts(zd, p)?;
        r.iter_mut().for_each(|v| *v = -*v);
        Ok(r)
    }

    pub fn eval_residual(&self, s: &SystemState) -> Result<Vector> {
        self.check_dims(s)?;
        self.residual_at(&s.zd, &s.p())
    }

    /// `F'(p)`, analytic when the model supplies one.
    pub fn jacobian_at(&self, zd: &[f64], p: &[f64]) -> Result<Matrix> {
        let jac = match self.model.jacobian(zd, p) {
            Some(j) => j?,
            None => return self.fd_fallback(zd, p),
        };
        if !jac.is_finite() {
            return Err(Error::NonFiniteResidual("Jacobian".into()));
        }
        Ok(jac.scaled(-1.0))
    }

    /// Central differences with a per-component step `cbrt(eps) * max(1, |p_j|)`.
    fn fd_fallback(&self, zd: &[f64], p: &[f64]) -> Result<Matrix> {
        let n = p.len();
        let mut jac = Matrix::zeros(n, n);
        let mut q = p.to_vec();
        for j in 0..n {
            let h = f64::EPSILON.cbrt() * p[j].abs().max(1.0);
            let col = fd_jacobian(
                |c| {
                    q[j] = c[0];
                    self.residual_at(zd, &q)
                },
                &[p[j]],
                h,
            )?;
            q[j] = p[j];
            for i in 0..n {
                jac[(i, j)] = col[(i, 0)];
            }
        }
        Ok(jac)
    }

    pub fn eval_jacobian(&self, s: &SystemState) -> Result<Matrix> {
        self.check_dims(s)?;
        self.jacobian_at(&s.zd, &s.p())
    }

    /// The 0/1 diagonal mass projector `D`.
    pub fn assemble_mass(&self) -> Matrix {
        let ms = self.mass_structure();
        let diag: Vec<f64> = (0..ms.total)
            .map(|i| if ms.is_differential(i) { 1.0 } else { 0.0 })
            .collect();
        Matrix::from_diagonal(&diag)
    }

    /// Checks the algebraic constraints: `g` for the long-term model and
    /// both `f` and `g` for the QSS model.
    pub fn check_consistency(&self, s: &SystemState, tol: f64) -> Result<ConsistencyReport> {
        let d = self.dims();
        let parts = self.eval_parts(&s.zd, &s.p())?;
        let f = &parts[d.n_zc..d.n_zc + d.n_x];
        let g = &parts[d.n_zc + d.n_x..];
        let g_norm = norm(g);
        let f_norm = match self.kind {
            ModelKind::LongTerm => None,
            ModelKind::Qss => Some(norm(f)),
        };
        let consistent = g_norm <= tol && f_norm.map_or(true, |v| v <= tol);
        Ok(ConsistencyReport {
            consistent,
            g_norm,
            f_norm,
        })
    }

    /// Index range of `p` holding the constrained unknowns (`y`, or `x`
    /// and `y` for QSS).
    pub fn algebraic_range(&self) -> std::ops::Range<usize> {
        let ms = self.mass_structure();
        ms.active_count..ms.total
    }

    /// Newton-solves the algebraic constraints for the constrained
    /// unknowns, holding `z_c` (and `x` in the long-term model) fixed.
    pub fn project_consistent(&self, s: &SystemState, tol: f64, max_iters: usize) -> Result<SystemState> {
        self.check_dims(s)?;
        let range = self.algebraic_range();
        let mut p = s.p();
        for iter in 0..=max_iters {
            let r = self.residual_at(&s.zd, &p)?;
            let ra = &r[range.clone()];
            let rnorm = norm(ra);
            if rnorm <= tol {
                return Ok(s.with_p(&p));
            }
            if iter == max_iters {
                return Err(Error::NoConvergence {
                    iterations: max_iters,
                    residual: rnorm,
                });
            }
            let jac = self.jacobian_at(&s.zd, &p)?;
            let k = range.len();
            let mut sub = Matrix::zeros(k, k);
            for (i, ri) in range.clone().enumerate() {
                for (j, cj) in range.clone().enumerate() {
                    sub[(i, j)] = jac[(ri, cj)];
                }
            }
            let rhs: Vec<f64> = ra.iter().map(|v| -v).collect();
            let step = solve_linear(&sub, &rhs)?;
            for (i, ri) in range.clone().enumerate() {
                p[ri] += step[i];
            }
        }
        unreachable!()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// h_c = -z_c, f = -x, g = x - y
    fn linear_problem(kind: ModelKind) -> DaeProblem {
        let model = FnModel::new(Dims::new(1, 0, 1, 1), |_zd, p, hc, f, g| {
            hc[0] = -p[0];
            f[0] = -p[1];
            g[0] = p[1] - p[2];
        })
        .with_jacobian(|_, _| {
            Matrix::from_rows(&[&[-1.0, 0.0, 0.0], &[0.0, -1.0, 0.0], &[0.0, 1.0, -1.0]])
        });
        DaeProblem::new(Arc::new(model), kind)
    }

    fn state(zc: f64, x: f64, y: f64) -> SystemState {
        SystemState::new(0.0, vec![zc], vec![], vec![x], vec![y])
    }

    #[test]
    fn residual_sign_convention() {
        let prob = linear_problem(ModelKind::LongTerm);
        let r = prob.eval_residual(&state(1.0, 1.0, 1.0)).unwrap();
        assert_eq!(r.as_slice(), &[1.0, 1.0, 0.0]);
    }

    #[test]
    fn residual_vanishes_at_equilibrium() {
        let prob = linear_problem(ModelKind::LongTerm);
        let r = prob.eval_residual(&state(0.0, 0.0, 0.0)).unwrap();
        assert!(norm(&r) <= 1e-12);
    }

    #[test]
    fn fd_fallback_jacobian_of_linear_problem() {
        let model = FnModel::new(Dims::new(1, 0, 1, 1), |_zd, p, hc, f, g| {
            hc[0] = -p[0];
            f[0] = -p[1];
            g[0] = p[1] - p[2];
        });
        let prob = DaeProblem::new(Arc::new(model), ModelKind::LongTerm);
        let j = prob.eval_jacobian(&state(0.3, -0.2, 0.7)).unwrap();
        let expected = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 1.0]];
        // F = [z; x; y - x] so F' = [[1,0,0],[0,1,0],[0,-1,1]]
        for i in 0..3 {
            for k in 0..3 {
                assert_abs_diff_eq!(j[(i, k)], expected[i][k], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn mass_matrices() {
        let model = FnModel::new(Dims::new(2, 0, 1, 1), |_, _, _, _, _| {});
        let lt = DaeProblem::new(Arc::new(model), ModelKind::LongTerm);
        assert_eq!(lt.assemble_mass(), Matrix::from_diagonal(&[1.0, 1.0, 1.0, 0.0]));
        let qss = lt.with_kind(ModelKind::Qss);
        assert_eq!(qss.assemble_mass(), Matrix::from_diagonal(&[1.0, 1.0, 0.0, 0.0]));
        assert_eq!(lt.mass_structure().active_count, 3);
        assert_eq!(qss.mass_structure().active_count, 2);

        let alg = DaeProblem::new(
            Arc::new(FnModel::new(Dims::new(0, 0, 0, 3), |_, _, _, _, _| {})),
            ModelKind::LongTerm,
        );
        assert_eq!(alg.assemble_mass(), Matrix::zeros(3, 3));
    }

    #[test]
    fn mass_is_a_projector() {
        let model = FnModel::new(Dims::new(2, 0, 3, 2), |_, _, _, _, _| {});
        for kind in [ModelKind::LongTerm, ModelKind::Qss] {
            let d = DaeProblem::new(Arc::new(FnModel::new(model.dims, |_, _, _, _, _| {})), kind)
                .assemble_mass();
            assert_eq!(d.mul_mat(&d), d);
        }
    }

    #[test]
    fn consistency_reports() {
        let lt = linear_problem(ModelKind::LongTerm);
        assert!(lt.check_consistency(&state(0.0, 0.0, 0.0), 1e-8).unwrap().consistent);
        let bad = lt.check_consistency(&state(0.0, 0.0, 1e-3), 1e-6).unwrap();
        assert!(!bad.consistent);
        assert_abs_diff_eq!(bad.g_norm, 1e-3, epsilon = 1e-15);

        // g satisfied but f = -x = -0.1 violates the QSS manifold
        let qss = linear_problem(ModelKind::Qss);
        let r = qss.check_consistency(&state(0.0, 0.1, 0.1), 1e-6).unwrap();
        assert_eq!(r.g_norm, 0.0);
        assert!(!r.consistent);
        assert_abs_diff_eq!(r.f_norm.unwrap(), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn projection_is_identity_on_consistent_state() {
        let prob = linear_problem(ModelKind::LongTerm);
        let s = state(0.4, 0.25, 0.25);
        assert_eq!(prob.project_consistent(&s, 1e-10, 5).unwrap(), s);
    }

    #[test]
    fn projection_of_linear_constraint_is_one_step() {
        let prob = linear_problem(ModelKind::LongTerm);
        let s = state(0.4, 0.25, 0.75);
        let out = prob.project_consistent(&s, 1e-12, 1).unwrap();
        assert_abs_diff_eq!(out.y[0], 0.25, epsilon = 1e-12);
        assert_eq!(out.x[0], 0.25);
        assert_eq!(out.zc[0], 0.4);
    }

    #[test]
    fn projection_reports_no_convergence() {
        // g(y) = y^2 + 1 has no real root
        let model = FnModel::new(Dims::new(0, 0, 0, 1), |_, p, _, _, g| g[0] = p[0] * p[0] + 1.0);
        let prob = DaeProblem::new(Arc::new(model), ModelKind::LongTerm);
        let s = SystemState::new(0.0, vec![], vec![], vec![], vec![0.5]);
        assert!(matches!(
            prob.project_consistent(&s, 1e-10, 30),
            Err(Error::NoConvergence { .. }) | Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn qss_projection_moves_fast_states() {
        let prob = linear_problem(ModelKind::Qss);
        let out = prob.project_consistent(&state(1.0, 0.5, -0.3), 1e-12, 3).unwrap();
        assert_abs_diff_eq!(out.x[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.y[0], 0.0, epsilon = 1e-12);
        assert_eq!(out.zc[0], 1.0);
    }

    #[test]
    fn analytic_jacobian_is_negated() {
        let model = FnModel::new(Dims::new(1, 0, 0, 0), |_, p, hc, _, _| hc[0] = -2.0 * p[0])
            .with_jacobian(|_, _| Matrix::from_rows(&[&[-2.0]]));
        let prob = DaeProblem::new(Arc::new(model), ModelKind::LongTerm);
        let j = prob.eval_jacobian(&SystemState::new(0.0, vec![1.0], vec![], vec![], vec![])).unwrap();
        assert_eq!(j[(0, 0)], 2.0);
    }

    #[test]
    fn zero_algebraic_block() {
        let model = FnModel::new(Dims::new(1, 0, 1, 0), |_, p, hc, f, _| {
            hc[0] = -p[0] + p[1];
            f[0] = -3.0 * p[1];
        });
        let prob = DaeProblem::new(Arc::new(model), ModelKind::LongTerm);
        let j = prob
            .eval_jacobian(&SystemState::new(0.0, vec![1.0], vec![], vec![2.0], vec![]))
            .unwrap();
        assert_eq!((j.rows(), j.cols()), (2, 2));
        assert_abs_diff_eq!(j[(0, 0)], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(j[(0, 1)], -1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(j[(1, 1)], 3.0, epsilon = 1e-8);
    }

    #[test]
    fn ode_sign_convention_reproduces_rhs() {
        // D p' = -F(p): on the differential rows -F equals h_c
        let prob = linear_problem(ModelKind::LongTerm);
        let s = state(0.7, 0.2, 0.2);
        let r = prob.eval_residual(&s).unwrap();
        let d = prob.assemble_mass();
        let minus_f = r.scaled(-1.0);
        let lhs = d.mul_vec(&minus_f);
        assert_eq!(lhs[0], -0.7);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let prob = linear_problem(ModelKind::LongTerm);
        let s = SystemState::new(0.0, vec![1.0, 2.0], vec![], vec![1.0], vec![1.0]);
        assert!(matches!(prob.eval_residual(&s), Err(Error::DimensionMismatch(_))));
    }
}
