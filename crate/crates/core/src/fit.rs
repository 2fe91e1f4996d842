//! Nonlinear least squares on top of the `levenberg-marquardt` crate.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{DMatrix, DVector, Dyn, Owned};

use crate::error::{Error, Result};

/// Result of a least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub params: Vec<f64>,
    /// Sum of squared residuals at the solution.
    pub cost: f64,
    pub evaluations: usize,
}

struct Problem<'a, F> {
    residual: &'a F,
    n_res: usize,
    p: DVector<f64>,
    r: Option<DVector<f64>>,
}

impl<F: Fn(&[f64], &mut [f64])> Problem<'_, F> {
    fn eval(&self, p: &[f64]) -> Option<DVector<f64>> {
        let mut r = vec![0.0; self.n_res];
        (self.residual)(p, &mut r);
        r.iter()
            .all(|v| v.is_finite())
            .then(|| DVector::from_vec(r))
    }
}

impl<F: Fn(&[f64], &mut [f64])> LeastSquaresProblem<f64, Dyn, Dyn> for Problem<'_, F> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, x: &DVector<f64>) {
        self.p.copy_from(x);
        self.r = self.eval(self.p.as_slice());
    }

    fn params(&self) -> DVector<f64> {
        self.p.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        self.r.clone()
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let n = self.p.len();
        let mut jac = DMatrix::zeros(self.n_res, n);
        let mut p = self.p.as_slice().to_vec();
        for j in 0..n {
            let x = p[j];
            let h = 1e-7 * x.abs().max(1e-7);
            p[j] = x + h;
            let plus = self.eval(&p)?;
            p[j] = x - h;
            let minus = self.eval(&p)?;
            p[j] = x;
            jac.set_column(j, &((plus - minus) / (2.0 * h)));
        }
        Some(jac)
    }
}

/// Minimizes `Σ r_i(p)²` where `residual(p, r)` fills `r` (length `n_res`).
///
/// The Jacobian is taken by central differences.
pub fn least_squares<F>(residual: F, p0: &[f64], n_res: usize) -> Result<FitOutcome>
where
    F: Fn(&[f64], &mut [f64]),
{
    if n_res < p0.len() {
        return Err(Error::FitFailed(format!(
            "{n_res} residuals cannot constrain {} parameters",
            p0.len()
        )));
    }
    let mut problem = Problem {
        residual: &residual,
        n_res,
        p: DVector::from_column_slice(p0),
        r: None,
    };
    problem.r = problem.eval(p0);
    if problem.r.is_none() {
        return Err(Error::FitFailed(
            "non-finite residuals at the starting point".into(),
        ));
    }
    let (problem, report) = LevenbergMarquardt::new()
        .with_patience(200)
        .minimize(problem);
    if report.termination.was_usage_issue() {
        return Err(Error::FitFailed(format!("{:?}", report.termination)));
    }
    let r = problem
        .r
        .ok_or_else(|| Error::FitFailed("non-finite residuals at the solution".into()))?;
    Ok(FitOutcome {
        params: problem.p.as_slice().to_vec(),
        cost: r.norm_squared(),
        evaluations: report.number_of_evaluations,
    })
}
