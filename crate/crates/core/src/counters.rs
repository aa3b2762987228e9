use std::ops::AddAssign;

/// Work counters shared by the Ψtc kernel and the trapezoidal integrator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    /// Accepted integration steps (trapezoidal) or Ψtc iterations.
    pub steps: usize,
    pub residual_evals: usize,
    pub jacobian_evals: usize,
    /// One per factorization and solve of an iteration matrix.
    pub linear_solves: usize,
}

impl AddAssign for Counters {
    fn add_assign(&mut self, o: Counters) {
        self.steps += o.steps;
        self.residual_evals += o.residual_evals;
        self.jacobian_evals += o.jacobian_evals;
        self.linear_solves += o.linear_solves;
    }
}
