//! The constrained steady-state program: convex quadratic costs over the
//! reduced map, operating limits, KKT residuals, and an independent
//! reference QP solver used as the ground-truth oracle.

mod kkt;
mod qp;

pub use kkt::{kkt_residual, KktPoint, KktResiduals};
pub use qp::{enumerate_qp_solve, reference_qp_solve};

use nalgebra::{DMatrix, DVector};

use crate::error::OptimizerError;

/// Relative eigenvalue tolerance below which a cost matrix is rejected as
/// indefinite.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Convex quadratic cost f(u, y) = ½uᵀP_u·u + q_uᵀu + ½yᵀP_y·y + q_yᵀy.
#[derive(Debug, Clone)]
pub struct QuadraticCost {
    p_u: DMatrix<f64>,
    q_u: DVector<f64>,
    p_y: DMatrix<f64>,
    q_y: DVector<f64>,
}

impl QuadraticCost {
    /// Build a cost, rejecting non-symmetric or indefinite quadratic terms.
    pub fn new(
        p_u: DMatrix<f64>,
        q_u: DVector<f64>,
        p_y: DMatrix<f64>,
        q_y: DVector<f64>,
    ) -> Result<Self, OptimizerError> {
        check_psd("P_u", &p_u)?;
        check_psd("P_y", &p_y)?;
        assert_eq!(p_u.nrows(), q_u.len(), "P_u/q_u dimension mismatch");
        assert_eq!(p_y.nrows(), q_y.len(), "P_y/q_y dimension mismatch");
        assert_eq!(p_u.nrows(), p_y.nrows(), "input/output dimension mismatch");
        Ok(Self { p_u, q_u, p_y, q_y })
    }

    /// Loss-reduction surrogate ½uᵀK_G·u in the setpoint deviations.
    pub fn loss_surrogate(k_g: &DMatrix<f64>) -> Result<Self, OptimizerError> {
        let n = k_g.nrows();
        // K_G is symmetric only up to reduction rounding; symmetrize so the
        // PSD guard sees an exactly symmetric matrix.
        let sym = 0.5 * (k_g + k_g.transpose());
        Self::new(sym, DVector::zeros(n), DMatrix::zeros(n, n), DVector::zeros(n))
    }

    /// Output cost ½yᵀ·diag(p_y)·y + q_yᵀy.
    pub fn quadratic_output(p_y_diag: &[f64], q_y: &[f64]) -> Result<Self, OptimizerError> {
        let n = p_y_diag.len();
        Self::new(
            DMatrix::zeros(n, n),
            DVector::zeros(n),
            DMatrix::from_diagonal(&DVector::from_column_slice(p_y_diag)),
            DVector::from_column_slice(q_y),
        )
    }

    /// Proportional current cost (1000/2)·Σ y_i²/I*_i.
    pub fn proportional(i_star: &[f64]) -> Result<Self, OptimizerError> {
        let diag: Vec<f64> = i_star.iter().map(|s| 1000.0 / s).collect();
        let n = diag.len();
        Self::new(
            DMatrix::zeros(n, n),
            DVector::zeros(n),
            DMatrix::from_diagonal(&DVector::from_column_slice(&diag)),
            DVector::zeros(n),
        )
    }

    pub fn dim(&self) -> usize {
        self.q_u.len()
    }

    pub fn p_u(&self) -> &DMatrix<f64> {
        &self.p_u
    }

    pub fn q_u(&self) -> &DVector<f64> {
        &self.q_u
    }

    pub fn p_y(&self) -> &DMatrix<f64> {
        &self.p_y
    }

    pub fn q_y(&self) -> &DVector<f64> {
        &self.q_y
    }

    pub fn value(&self, u: &DVector<f64>, y: &DVector<f64>) -> f64 {
        0.5 * (&self.p_u * u).dot(u)
            + self.q_u.dot(u)
            + 0.5 * (&self.p_y * y).dot(y)
            + self.q_y.dot(y)
    }

    /// Gradient blocks (∂f/∂u, ∂f/∂y).
    pub fn gradient(&self, u: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (&self.p_u * u + &self.q_u, &self.p_y * y + &self.q_y)
    }
}

fn check_psd(name: &str, matrix: &DMatrix<f64>) -> Result<(), OptimizerError> {
    if matrix.nrows() != matrix.ncols() {
        return Err(OptimizerError::IndefiniteCost {
            name: name.into(),
            min_eig: f64::NAN,
        });
    }
    if matrix.nrows() == 0 {
        return Ok(());
    }
    let asym = (matrix - matrix.transpose()).abs().max();
    let magnitude = matrix.abs().max().max(1e-300);
    if asym > 1e-10 * magnitude {
        return Err(OptimizerError::IndefiniteCost {
            name: format!("{name} (not symmetric)"),
            min_eig: f64::NAN,
        });
    }
    let eigen = matrix.clone().symmetric_eigen();
    let max_abs = eigen.eigenvalues.iter().fold(0.0_f64, |a, &e| a.max(e.abs()));
    let min_eig = eigen.eigenvalues.min();
    if min_eig < -PSD_TOLERANCE * max_abs.max(1e-300) {
        return Err(OptimizerError::IndefiniteCost {
            name: name.into(),
            min_eig,
        });
    }
    Ok(())
}

/// Stacked gradient (∂f/∂u, ∂f/∂y) as one 2n-vector.
pub fn cost_gradient(cost: &QuadraticCost, u: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
    let (gu, gy) = cost.gradient(u, y);
    let n = gu.len();
    let mut stacked = DVector::zeros(2 * n);
    stacked.rows_mut(0, n).copy_from(&gu);
    stacked.rows_mut(n, n).copy_from(&gy);
    stacked
}

/// Extra linear constraints A·u ≤ b beyond the voltage and current boxes.
#[derive(Debug, Clone)]
pub struct LinearConstraints {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Box limits on station currents and voltages, with optional extra rows.
#[derive(Debug, Clone)]
pub struct OperatingLimits {
    pub i_min: DVector<f64>,
    pub i_max: DVector<f64>,
    pub v_min: DVector<f64>,
    pub v_max: DVector<f64>,
    pub extra: Option<LinearConstraints>,
}

impl OperatingLimits {
    pub fn new(
        i_min: DVector<f64>,
        i_max: DVector<f64>,
        v_min: DVector<f64>,
        v_max: DVector<f64>,
    ) -> Result<Self, OptimizerError> {
        let n = i_min.len();
        if [i_max.len(), v_min.len(), v_max.len()] != [n, n, n] {
            return Err(OptimizerError::InvalidLimits(
                "limit vectors must share one dimension".into(),
            ));
        }
        for i in 0..n {
            if !(i_min[i] <= i_max[i]) {
                return Err(OptimizerError::InvalidLimits(format!(
                    "I_min[{i}] = {} exceeds I_max[{i}] = {}",
                    i_min[i], i_max[i]
                )));
            }
            if !(v_min[i] <= v_max[i]) {
                return Err(OptimizerError::InvalidLimits(format!(
                    "V_min[{i}] = {} exceeds V_max[{i}] = {}",
                    v_min[i], v_max[i]
                )));
            }
        }
        Ok(Self {
            i_min,
            i_max,
            v_min,
            v_max,
            extra: None,
        })
    }

    /// Unlimited boxes for `n` stations.
    pub fn unbounded(n: usize) -> Self {
        Self {
            i_min: DVector::from_element(n, f64::NEG_INFINITY),
            i_max: DVector::from_element(n, f64::INFINITY),
            v_min: DVector::from_element(n, f64::NEG_INFINITY),
            v_max: DVector::from_element(n, f64::INFINITY),
            extra: None,
        }
    }

    pub fn with_extra(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, OptimizerError> {
        if a.nrows() != b.len() || a.ncols() != self.i_min.len() {
            return Err(OptimizerError::InvalidLimits(
                "extra constraint dimensions do not match".into(),
            ));
        }
        self.extra = Some(LinearConstraints { a, b });
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.i_min.len()
    }

    /// Require the nominal point (u = 0) to sit inside the voltage box.
    pub fn validate_nominal(&self, v_nom: f64) -> Result<(), OptimizerError> {
        for i in 0..self.dim() {
            if !(self.v_min[i] <= v_nom && v_nom <= self.v_max[i]) {
                return Err(OptimizerError::InvalidLimits(format!(
                    "nominal voltage {v_nom} outside [{}, {}] at station {i}",
                    self.v_min[i], self.v_max[i]
                )));
            }
        }
        Ok(())
    }

    /// Lower bounds on u = V − V_nom.
    pub fn u_min(&self, v_nom: f64) -> DVector<f64> {
        self.v_min.map(|v| v - v_nom)
    }

    /// Upper bounds on u = V − V_nom.
    pub fn u_max(&self, v_nom: f64) -> DVector<f64> {
        self.v_max.map(|v| v - v_nom)
    }
}
