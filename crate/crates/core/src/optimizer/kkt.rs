//! KKT point representation and residual evaluation for the reduced
//! program over the dispatchable stations.

use nalgebra::DVector;

use crate::grid::QuasiStaticModel;

use super::{OperatingLimits, QuadraticCost};

/// Primal-dual candidate with its optimality residuals.
#[derive(Debug, Clone)]
pub struct KktPoint {
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub zeta_max: DVector<f64>,
    pub zeta_min: DVector<f64>,
    pub lambda_max: DVector<f64>,
    pub lambda_min: DVector<f64>,
    /// Multipliers of the extra A·u ≤ b rows, when present.
    pub extra_duals: Option<DVector<f64>>,
    pub residuals: KktResiduals,
}

impl KktPoint {
    /// Stacked dual vector (ζmax, ζmin, λmax, λmin), the order used by the
    /// controller state.
    pub fn stacked_duals(&self) -> DVector<f64> {
        let n = self.u.len();
        let mut x = DVector::zeros(4 * n);
        x.rows_mut(0, n).copy_from(&self.zeta_max);
        x.rows_mut(n, n).copy_from(&self.zeta_min);
        x.rows_mut(2 * n, n).copy_from(&self.lambda_max);
        x.rows_mut(3 * n, n).copy_from(&self.lambda_min);
        x
    }
}

/// Raw ∞-norm residuals of the four KKT condition groups, each paired with
/// a cancellation-free magnitude so callers can form relative residuals.
#[derive(Debug, Clone, Copy, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub stationarity_scale: f64,
    pub complementarity: f64,
    pub complementarity_scale: f64,
    pub feasibility: f64,
    pub feasibility_scale: f64,
    pub dual_negativity: f64,
    pub dual_negativity_scale: f64,
    /// False when the supplied y is not the model response to u within
    /// 1e-9 relative.
    pub y_consistent: bool,
}

impl KktResiduals {
    /// Largest residual relative to its own scale; the oracle and the
    /// acceptance gates compare this against their tolerances.
    pub fn max_relative(&self) -> f64 {
        [
            self.stationarity / self.stationarity_scale,
            self.complementarity / self.complementarity_scale,
            self.feasibility / self.feasibility_scale,
            self.dual_negativity / self.dual_negativity_scale,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Evaluate the KKT residuals of a primal-dual point for the program
/// defined by (cost, limits, model).
///
/// Stationarity: [I  K_Gᵀ]·∇f + K_Gᵀ(ζmax−ζmin) + (λmax−λmin) + Aᵀμ.
/// Complementarity: dual · slack per constraint. Feasibility: constraint
/// violations. Dual negativity: how far any multiplier dips below zero.
pub fn kkt_residual(
    cost: &QuadraticCost,
    limits: &OperatingLimits,
    model: &QuasiStaticModel,
    point: &KktPoint,
) -> KktResiduals {
    let n = model.dim();
    let u = &point.u;
    let y = &point.y;

    let y_model = &model.k_g * u + &model.w;
    let y_scale = 1.0 + y.amax();
    let y_consistent = (y - &y_model).amax() <= 1e-9 * y_scale;

    // Stationarity with a scale built from entrywise |K_G|·|v| products so
    // cancellation inside the sums does not shrink the denominator.
    let (grad_u, grad_y) = cost.gradient(u, y);
    let zeta_diff = &point.zeta_max - &point.zeta_min;
    let lambda_diff = &point.lambda_max - &point.lambda_min;
    let k_g_t = model.k_g.transpose();
    let mut residual = &grad_u + &k_g_t * &grad_y + &k_g_t * &zeta_diff + &lambda_diff;
    let abs_k_g_t = k_g_t.abs();
    let mut scale_vec = grad_u.abs()
        + &abs_k_g_t * grad_y.abs()
        + &abs_k_g_t * zeta_diff.abs()
        + lambda_diff.abs();
    if let (Some(extra), Some(mu)) = (&limits.extra, &point.extra_duals) {
        let a_t = extra.a.transpose();
        residual += &a_t * mu;
        scale_vec += a_t.abs() * mu.abs();
    }
    let stationarity = residual.amax();
    let stationarity_scale = 1.0 + scale_vec.amax();

    // Complementarity, feasibility, and dual sign over every row.
    let u_min = limits.u_min(model.v_nom);
    let u_max = limits.u_max(model.v_nom);
    let mut complementarity = 0.0_f64;
    let mut complementarity_rel = 0.0_f64;
    let mut feasibility = 0.0_f64;
    let mut feasibility_rel = 0.0_f64;
    let mut min_dual = 0.0_f64;
    let mut max_dual = 0.0_f64;

    let mut visit = |dual: f64, slack: f64, magnitude: f64| {
        min_dual = min_dual.min(dual);
        max_dual = max_dual.max(dual.abs());
        let violation = (-slack).max(0.0);
        feasibility = feasibility.max(violation);
        feasibility_rel = feasibility_rel.max(violation / (1.0 + magnitude));
        if dual != 0.0 && slack.is_finite() {
            let product = (dual * slack).abs();
            complementarity = complementarity.max(product);
            complementarity_rel =
                complementarity_rel.max(product / (1.0 + dual.abs() * (1.0 + magnitude)));
        } else if dual != 0.0 {
            // A multiplier pinned on an unbounded constraint can never
            // satisfy complementary slackness.
            complementarity = f64::INFINITY;
            complementarity_rel = f64::INFINITY;
        }
    };

    for i in 0..n {
        if limits.i_max[i].is_finite() || point.zeta_max[i] != 0.0 {
            let mag = y[i].abs().max(finite_or_zero(limits.i_max[i]).abs());
            visit(point.zeta_max[i], limits.i_max[i] - y[i], mag);
        }
        if limits.i_min[i].is_finite() || point.zeta_min[i] != 0.0 {
            let mag = y[i].abs().max(finite_or_zero(limits.i_min[i]).abs());
            visit(point.zeta_min[i], y[i] - limits.i_min[i], mag);
        }
        if u_max[i].is_finite() || point.lambda_max[i] != 0.0 {
            let mag = u[i].abs().max(finite_or_zero(u_max[i]).abs());
            visit(point.lambda_max[i], u_max[i] - u[i], mag);
        }
        if u_min[i].is_finite() || point.lambda_min[i] != 0.0 {
            let mag = u[i].abs().max(finite_or_zero(u_min[i]).abs());
            visit(point.lambda_min[i], u[i] - u_min[i], mag);
        }
    }
    if let Some(extra) = &limits.extra {
        let slack = &extra.b - &extra.a * u;
        for (j, s) in slack.iter().enumerate() {
            let dual = point
                .extra_duals
                .as_ref()
                .map(|m| m[j])
                .unwrap_or(0.0);
            visit(dual, *s, extra.b[j].abs());
        }
    }

    let dual_negativity = (-min_dual).max(0.0);
    KktResiduals {
        stationarity,
        stationarity_scale,
        complementarity,
        complementarity_scale: if complementarity_rel > 0.0 {
            complementarity / complementarity_rel
        } else {
            1.0
        },
        feasibility,
        feasibility_scale: if feasibility_rel > 0.0 {
            feasibility / feasibility_rel
        } else {
            1.0
        },
        dual_negativity,
        dual_negativity_scale: 1.0 + max_dual,
        y_consistent,
    }
}

fn finite_or_zero(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        0.0
    }
}

/// A KKT point skeleton with zero duals and residuals yet to be filled.
pub(crate) fn bare_point(u: DVector<f64>, y: DVector<f64>) -> KktPoint {
    let n = u.len();
    KktPoint {
        u,
        y,
        zeta_max: DVector::zeros(n),
        zeta_min: DVector::zeros(n),
        lambda_max: DVector::zeros(n),
        lambda_min: DVector::zeros(n),
        extra_duals: None,
        residuals: KktResiduals::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn unit_model() -> QuasiStaticModel {
        QuasiStaticModel {
            k_g: DMatrix::identity(1, 1),
            w: DVector::from_element(1, 5.0),
            v_nom: 0.0,
            near_singular: false,
        }
    }

    #[test]
    fn interior_point_with_zero_duals_measures_gradient() {
        let model = unit_model();
        let cost = QuadraticCost::quadratic_output(&[1.0], &[0.0]).unwrap();
        let limits = OperatingLimits::new(
            DVector::from_element(1, -100.0),
            DVector::from_element(1, 100.0),
            DVector::from_element(1, -50.0),
            DVector::from_element(1, 50.0),
        )
        .unwrap();
        // u = 1 → y = 6, ∇g = [I K_Gᵀ]∇f = y = 6.
        let mut point = bare_point(DVector::from_element(1, 1.0), DVector::from_element(1, 6.0));
        point.residuals = kkt_residual(&cost, &limits, &model, &point);
        assert!((point.residuals.stationarity - 6.0).abs() < 1e-12);
        assert_eq!(point.residuals.complementarity, 0.0);
        assert_eq!(point.residuals.feasibility, 0.0);
        assert_eq!(point.residuals.dual_negativity, 0.0);
        assert!(point.residuals.y_consistent);
    }

    #[test]
    fn flags_inconsistent_output() {
        let model = unit_model();
        let cost = QuadraticCost::quadratic_output(&[1.0], &[0.0]).unwrap();
        let limits = OperatingLimits::unbounded(1);
        let mut point = bare_point(DVector::zeros(1), DVector::from_element(1, 4.0));
        point.residuals = kkt_residual(&cost, &limits, &model, &point);
        assert!(!point.residuals.y_consistent);
    }

    #[test]
    fn feasibility_and_complementarity_detect_violations() {
        let model = unit_model();
        let cost = QuadraticCost::quadratic_output(&[1.0], &[0.0]).unwrap();
        let limits = OperatingLimits::new(
            DVector::from_element(1, -1.0),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, -50.0),
            DVector::from_element(1, 50.0),
        )
        .unwrap();
        // y = 5 violates I_max = 1 by 4; a positive dual off its surface
        // violates complementarity.
        let mut point = bare_point(DVector::zeros(1), DVector::from_element(1, 5.0));
        point.zeta_min = DVector::from_element(1, 2.0);
        let r = kkt_residual(&cost, &limits, &model, &point);
        assert!((r.feasibility - 4.0).abs() < 1e-12);
        assert!((r.complementarity - 12.0).abs() < 1e-12); // 2 · (5 − (−1))
        assert_eq!(r.dual_negativity, 0.0);
    }
}
