//! Reference solver for the reduced program
//!
//! ```text
//! min ½uᵀH·u + cᵀu   s.t.  A·u ≤ b
//! ```
//!
//! with H = P_u + K_GᵀP_yK_G and rows from the current box, the voltage
//! box, and any extra linear constraints. A projected-gradient pass warms
//! up a feasible point, a primal active-set loop refines it, and for
//! n ≤ 3 an exhaustive active-set enumeration cross-checks the result.

use nalgebra::{DMatrix, DVector};

use crate::error::OptimizerError;
use crate::grid::{pseudo_inverse, QuasiStaticModel};

use super::kkt::{bare_point, kkt_residual};
use super::{KktPoint, OperatingLimits, QuadraticCost};

/// Iteration cap for the phase-1 feasibility pass.
const PHASE1_MAX_ITERATIONS: usize = 100_000;
/// Iterations of the penalized warm-start descent.
const WARM_START_ITERATIONS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowTag {
    CurrentUpper(usize),
    CurrentLower(usize),
    VoltUpper(usize),
    VoltLower(usize),
    Extra(usize),
}

impl std::fmt::Display for RowTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RowTag::CurrentUpper(i) => write!(f, "I_max[{i}]"),
            RowTag::CurrentLower(i) => write!(f, "I_min[{i}]"),
            RowTag::VoltUpper(i) => write!(f, "V_max[{i}]"),
            RowTag::VoltLower(i) => write!(f, "V_min[{i}]"),
            RowTag::Extra(i) => write!(f, "A_const[{i}]"),
        }
    }
}

#[derive(Clone)]
struct Row {
    a: DVector<f64>,
    b: f64,
    tag: RowTag,
}

impl Row {
    fn slack(&self, u: &DVector<f64>) -> f64 {
        self.b - self.a.dot(u)
    }

    fn feasibility_tolerance(&self) -> f64 {
        1e-9 * (1.0 + self.b.abs())
    }
}

struct QpProblem<'a> {
    h: DMatrix<f64>,
    c: DVector<f64>,
    rows: Vec<Row>,
    u_min: DVector<f64>,
    u_max: DVector<f64>,
    cost: &'a QuadraticCost,
    limits: &'a OperatingLimits,
    model: &'a QuasiStaticModel,
}

impl<'a> QpProblem<'a> {
    fn build(
        cost: &'a QuadraticCost,
        limits: &'a OperatingLimits,
        model: &'a QuasiStaticModel,
    ) -> Result<Self, OptimizerError> {
        let n = model.dim();
        if cost.dim() != n || limits.dim() != n {
            return Err(OptimizerError::InvalidLimits(format!(
                "cost/limits dimension does not match model dimension {n}"
            )));
        }
        let k_g_t = model.k_g.transpose();
        let h_raw = cost.p_u() + &k_g_t * cost.p_y() * &model.k_g;
        let h = 0.5 * (&h_raw + h_raw.transpose());
        let c = cost.q_u() + &k_g_t * (cost.p_y() * &model.w + cost.q_y());

        let u_min = limits.u_min(model.v_nom);
        let u_max = limits.u_max(model.v_nom);
        let mut rows = Vec::new();
        for i in 0..n {
            if limits.i_max[i].is_finite() {
                rows.push(Row {
                    a: model.k_g.row(i).transpose(),
                    b: limits.i_max[i] - model.w[i],
                    tag: RowTag::CurrentUpper(i),
                });
            }
            if limits.i_min[i].is_finite() {
                rows.push(Row {
                    a: -model.k_g.row(i).transpose(),
                    b: model.w[i] - limits.i_min[i],
                    tag: RowTag::CurrentLower(i),
                });
            }
            if u_max[i].is_finite() {
                let mut a = DVector::zeros(n);
                a[i] = 1.0;
                rows.push(Row {
                    a,
                    b: u_max[i],
                    tag: RowTag::VoltUpper(i),
                });
            }
            if u_min[i].is_finite() {
                let mut a = DVector::zeros(n);
                a[i] = -1.0;
                rows.push(Row {
                    a,
                    b: -u_min[i],
                    tag: RowTag::VoltLower(i),
                });
            }
        }
        if let Some(extra) = &limits.extra {
            for j in 0..extra.b.len() {
                rows.push(Row {
                    a: extra.a.row(j).transpose(),
                    b: extra.b[j],
                    tag: RowTag::Extra(j),
                });
            }
        }
        Ok(Self {
            h,
            c,
            rows,
            u_min,
            u_max,
            cost,
            limits,
            model,
        })
    }

    fn clamp_to_voltage_box(&self, u: &mut DVector<f64>) {
        for i in 0..u.len() {
            u[i] = u[i].max(self.u_min[i]).min(self.u_max[i]);
        }
    }

    fn worst_violation(&self, u: &DVector<f64>) -> Option<(usize, f64)> {
        let mut worst: Option<(usize, f64)> = None;
        for (j, row) in self.rows.iter().enumerate() {
            let violation = (-row.slack(u)).max(0.0);
            if violation > row.feasibility_tolerance()
                && worst.map_or(true, |(_, v)| violation > v)
            {
                worst = Some((j, violation));
            }
        }
        worst
    }

    /// Phase 1: projected gradient on the squared constraint violations
    /// over the voltage box. The box itself is handled by projection, so
    /// only current and extra rows contribute to the objective.
    fn find_feasible(&self, start: DVector<f64>) -> Result<DVector<f64>, OptimizerError> {
        let mut u = start;
        self.clamp_to_voltage_box(&mut u);
        if self.worst_violation(&u).is_none() {
            return Ok(u);
        }
        let lipschitz: f64 = self
            .rows
            .iter()
            .map(|row| row.a.norm_squared())
            .sum::<f64>()
            .max(1e-12);
        let step = 1.0 / lipschitz;
        let mut best = f64::INFINITY;
        let mut stalled = 0usize;
        for _ in 0..PHASE1_MAX_ITERATIONS {
            let mut grad = DVector::zeros(u.len());
            let mut total = 0.0;
            for row in &self.rows {
                let violation = (-row.slack(&u)).max(0.0);
                if violation > 0.0 {
                    grad.axpy(violation, &row.a, 1.0);
                    total += violation * violation;
                }
            }
            if self.worst_violation(&u).is_none() {
                return Ok(u);
            }
            if total < best * (1.0 - 1e-12) {
                best = total;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled > 500 {
                    break;
                }
            }
            u.axpy(-step, &grad, 1.0);
            self.clamp_to_voltage_box(&mut u);
        }
        match self.worst_violation(&u) {
            None => Ok(u),
            Some((j, violation)) => Err(OptimizerError::Infeasible {
                constraint: self.rows[j].tag.to_string(),
                violation,
            }),
        }
    }

    /// Penalized projected-gradient descent with decreasing steps; lands
    /// near the constrained optimum to shorten the active-set phase.
    fn warm_start(&self, start: DVector<f64>) -> DVector<f64> {
        let mut u = start;
        let h_scale = self.h.abs().max().max(1e-12);
        let rho = 100.0 * (1.0 + h_scale);
        let lipschitz_rows: f64 = self.rows.iter().map(|r| r.a.norm_squared()).sum();
        let base_step = 1.0 / (h_scale * u.len() as f64 + rho * lipschitz_rows + 1e-12);
        for k in 0..WARM_START_ITERATIONS {
            let mut grad = &self.h * &u + &self.c;
            for row in &self.rows {
                let violation = (-row.slack(&u)).max(0.0);
                if violation > 0.0 {
                    grad.axpy(rho * violation, &row.a, 1.0);
                }
            }
            let step = base_step / (1.0 + k as f64 / 50.0);
            u.axpy(-step, &grad, 1.0);
            self.clamp_to_voltage_box(&mut u);
        }
        u
    }

    /// Primal active-set refinement. Returns the final iterate and the
    /// working-set multipliers.
    fn active_set(
        &self,
        start: DVector<f64>,
    ) -> Result<(DVector<f64>, Vec<(usize, f64)>), OptimizerError> {
        let n = self.u_min.len();
        let mut u = start;
        let mut working: Vec<usize> = Vec::new();
        let max_iterations = 100 + 20 * self.rows.len().max(1);

        for _ in 0..max_iterations {
            let gradient = &self.h * &u + &self.c;
            let a_w = self.working_matrix(&working, n);
            let z = nullspace_basis(&a_w, n);
            let step = reduced_step(&self.h, &gradient, &z);

            match step {
                ReducedStep::Minimizer(p) => {
                    if p.amax() <= 1e-11 * (1.0 + u.amax()) {
                        // Stationary on the working surface; check signs.
                        if working.is_empty() {
                            return Ok((u, Vec::new()));
                        }
                        let mu = least_squares(&a_w.transpose(), &(-&gradient));
                        let mu_tol = -1e-10 * (1.0 + mu.amax());
                        let mut drop_candidate: Option<(usize, f64)> = None;
                        for (k, &value) in mu.iter().enumerate() {
                            if value < mu_tol
                                && drop_candidate.map_or(true, |(_, worst)| value < worst)
                            {
                                drop_candidate = Some((k, value));
                            }
                        }
                        match drop_candidate {
                            Some((k, _)) => {
                                working.remove(k);
                            }
                            None => {
                                // Snap exactly onto the working surface
                                // before reporting, then refresh the
                                // multipliers at the snapped point.
                                let b_w = DVector::from_iterator(
                                    working.len(),
                                    working.iter().map(|&j| self.rows[j].b),
                                );
                                let (a_w_pinv, _) = pseudo_inverse(&a_w);
                                u += &a_w_pinv * (b_w - &a_w * &u);
                                let gradient = &self.h * &u + &self.c;
                                let mu = least_squares(&a_w.transpose(), &(-&gradient));
                                let pairs = working
                                    .iter()
                                    .zip(mu.iter())
                                    .map(|(&j, &m)| (j, m.max(0.0)))
                                    .collect();
                                return Ok((u, pairs));
                            }
                        }
                    } else {
                        match self.blocking_row(&u, &p, &working) {
                            Some((alpha, j)) if alpha < 1.0 => {
                                u.axpy(alpha, &p, 1.0);
                                working.push(j);
                            }
                            _ => {
                                u += &p;
                            }
                        }
                    }
                }
                ReducedStep::Ray(direction) => match self.blocking_row(&u, &direction, &working) {
                    Some((alpha, j)) => {
                        u.axpy(alpha, &direction, 1.0);
                        working.push(j);
                    }
                    None => {
                        return Err(OptimizerError::InvalidLimits(
                            "problem is unbounded along a zero-curvature direction".into(),
                        ))
                    }
                },
            }
        }

        // Iteration cap reached; report the current surface multipliers and
        // let the residual check downstream expose any gap.
        let a_w = self.working_matrix(&working, n);
        let gradient = &self.h * &u + &self.c;
        let mu = least_squares(&a_w.transpose(), &(-&gradient));
        let pairs = working
            .iter()
            .zip(mu.iter())
            .map(|(&j, &m)| (j, m.max(0.0)))
            .collect();
        Ok((u, pairs))
    }

    fn working_matrix(&self, working: &[usize], n: usize) -> DMatrix<f64> {
        let mut a_w = DMatrix::zeros(working.len(), n);
        for (k, &j) in working.iter().enumerate() {
            a_w.row_mut(k).copy_from(&self.rows[j].a.transpose());
        }
        a_w
    }

    /// Smallest step ratio before a non-working row blocks movement along
    /// `direction`. Negative slacks (inside tolerance) are treated as zero.
    fn blocking_row(
        &self,
        u: &DVector<f64>,
        direction: &DVector<f64>,
        working: &[usize],
    ) -> Option<(f64, usize)> {
        let dir_norm = direction.norm();
        let mut best: Option<(f64, usize)> = None;
        for (j, row) in self.rows.iter().enumerate() {
            if working.contains(&j) {
                continue;
            }
            let along = row.a.dot(direction);
            if along <= 1e-13 * row.a.norm() * dir_norm {
                continue;
            }
            let slack = row.slack(u).max(0.0);
            let alpha = slack / along;
            if best.map_or(true, |(a, _)| alpha < a) {
                best = Some((alpha, j));
            }
        }
        best
    }

    /// Assemble the named dual vectors from working-set multipliers and
    /// score the point.
    fn finish(&self, u: DVector<f64>, duals: &[(usize, f64)]) -> KktPoint {
        let y = &self.model.k_g * &u + &self.model.w;
        let mut point = bare_point(u, y);
        for &(row_idx, value) in duals {
            let value = value.max(0.0);
            match self.rows[row_idx].tag {
                RowTag::CurrentUpper(i) => point.zeta_max[i] = value,
                RowTag::CurrentLower(i) => point.zeta_min[i] = value,
                RowTag::VoltUpper(i) => point.lambda_max[i] = value,
                RowTag::VoltLower(i) => point.lambda_min[i] = value,
                RowTag::Extra(j) => {
                    if point.extra_duals.is_none() {
                        let rows = self.limits.extra.as_ref().map_or(0, |e| e.b.len());
                        point.extra_duals = Some(DVector::zeros(rows));
                    }
                    point.extra_duals.as_mut().unwrap()[j] = value;
                }
            }
        }
        if point.extra_duals.is_none() {
            if let Some(extra) = &self.limits.extra {
                point.extra_duals = Some(DVector::zeros(extra.b.len()));
            }
        }
        point.residuals = kkt_residual(self.cost, self.limits, self.model, &point);
        point
    }
}

enum ReducedStep {
    /// Bounded minimizer of the equality-constrained subproblem.
    Minimizer(DVector<f64>),
    /// Unit descent direction with zero curvature (walk to a blocking row).
    Ray(DVector<f64>),
}

/// Orthonormal basis of null(A) via the eigenvectors of the projector
/// I − A⁺A; returns an n×k matrix (k = nullity).
fn nullspace_basis(a: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let (pinv, _) = pseudo_inverse(a);
    let projector = DMatrix::identity(n, n) - pinv * a;
    let projector = 0.5 * (&projector + projector.transpose());
    let eigen = projector.symmetric_eigen();
    let keep: Vec<usize> = (0..n).filter(|&i| eigen.eigenvalues[i] > 0.5).collect();
    let mut basis = DMatrix::zeros(n, keep.len());
    for (col, &i) in keep.iter().enumerate() {
        basis.column_mut(col).copy_from(&eigen.eigenvectors.column(i));
    }
    basis
}

fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (pinv, _) = pseudo_inverse(a);
    pinv * b
}

/// Minimize ½pᵀHp + gᵀp over p ∈ span(Z). Directions with numerically
/// zero curvature and a live gradient component become descent rays.
fn reduced_step(h: &DMatrix<f64>, g: &DVector<f64>, z: &DMatrix<f64>) -> ReducedStep {
    let k = z.ncols();
    if k == 0 {
        return ReducedStep::Minimizer(DVector::zeros(h.nrows()));
    }
    let h_reduced = z.transpose() * h * z;
    let h_reduced = 0.5 * (&h_reduced + h_reduced.transpose());
    let g_reduced = z.transpose() * g;
    let eigen = h_reduced.symmetric_eigen();
    let lambda_max = eigen.eigenvalues.iter().fold(0.0_f64, |a, &l| a.max(l));
    let cutoff = 1e-12 * lambda_max.max(1e-300);

    let mut q = DVector::zeros(k);
    let mut ray = DVector::zeros(k);
    for i in 0..k {
        let lambda = eigen.eigenvalues[i];
        let v = eigen.eigenvectors.column(i);
        let g_i = v.dot(&g_reduced);
        if lambda > cutoff {
            q.axpy(-g_i / lambda, &v.into_owned(), 1.0);
        } else {
            ray.axpy(-g_i, &v.into_owned(), 1.0);
        }
    }
    if ray.amax() > 1e-11 * (1.0 + g_reduced.amax()) {
        let direction = z * ray;
        let norm = direction.norm();
        ReducedStep::Ray(direction / norm)
    } else {
        ReducedStep::Minimizer(z * q)
    }
}

/// Compare candidate points: feasibility-certified residuals first, then
/// objective, then setpoint norm (the minimum-norm tie-break).
fn pick_better(a: KktPoint, b: KktPoint, cost: &QuadraticCost) -> KktPoint {
    let ra = a.residuals.max_relative();
    let rb = b.residuals.max_relative();
    let ok_a = ra <= 1e-8;
    let ok_b = rb <= 1e-8;
    if ok_a != ok_b {
        return if ok_a { a } else { b };
    }
    let cost_a = cost.value(&a.u, &a.y);
    let cost_b = cost.value(&b.u, &b.y);
    let tol = 1e-9 * (1.0 + cost_a.abs().max(cost_b.abs()));
    if cost_a < cost_b - tol {
        return a;
    }
    if cost_b < cost_a - tol {
        return b;
    }
    if a.u.norm() < b.u.norm() {
        a
    } else {
        b
    }
}

/// Reference solve of the reduced program. Returns a primal-dual point
/// whose residuals certify optimality, or an infeasibility certificate.
pub fn reference_qp_solve(
    cost: &QuadraticCost,
    limits: &OperatingLimits,
    model: &QuasiStaticModel,
) -> Result<KktPoint, OptimizerError> {
    limits.validate_nominal(model.v_nom)?;
    let qp = QpProblem::build(cost, limits, model)?;

    let feasible = qp.find_feasible(DVector::zeros(model.dim()))?;
    let warm = qp.warm_start(feasible.clone());
    // The penalty pass may end slightly outside; repair before refining.
    let warm = qp.find_feasible(warm).unwrap_or(feasible);
    let (u, duals) = qp.active_set(warm)?;
    let mut point = qp.finish(u, &duals);

    if model.dim() <= 3 {
        if let Ok(enumerated) = enumerate_qp_solve(cost, limits, model) {
            point = pick_better(enumerated, point, cost);
        }
    }
    Ok(point)
}

/// Exhaustive active-set enumeration, tractable for small n: every subset
/// of constraint rows (size ≤ n) is treated as an equality surface, the
/// surface minimizer is computed, and feasibility plus multiplier signs
/// select the optimum. Ties break to the minimum-norm setpoint.
pub fn enumerate_qp_solve(
    cost: &QuadraticCost,
    limits: &OperatingLimits,
    model: &QuasiStaticModel,
) -> Result<KktPoint, OptimizerError> {
    limits.validate_nominal(model.v_nom)?;
    let qp = QpProblem::build(cost, limits, model)?;
    let n = model.dim();

    let mut best: Option<(f64, f64, KktPoint)> = None;
    let mut subset = Vec::new();
    evaluate_nested(&qp, &mut subset, 0, n, &mut best, cost);

    match best {
        Some((_, _, point)) => Ok(point),
        None => Err(OptimizerError::Infeasible {
            constraint: "no active-set candidate satisfied all constraints".into(),
            violation: f64::NAN,
        }),
    }
}

fn evaluate_nested(
    qp: &QpProblem,
    subset: &mut Vec<usize>,
    start: usize,
    n: usize,
    best: &mut Option<(f64, f64, KktPoint)>,
    cost: &QuadraticCost,
) {
    evaluate_subset(qp, subset, best, cost);
    if subset.len() >= n {
        return;
    }
    for j in start..qp.rows.len() {
        subset.push(j);
        evaluate_nested(qp, subset, j + 1, n, best, cost);
        subset.pop();
    }
}

fn evaluate_subset(
    qp: &QpProblem,
    subset: &[usize],
    best: &mut Option<(f64, f64, KktPoint)>,
    cost: &QuadraticCost,
) {
    let n = qp.u_min.len();
    let candidate_u = match surface_minimizer(qp, subset, n) {
        Some(u) => u,
        None => return,
    };

    // Primal feasibility over every row.
    for row in &qp.rows {
        let slack = row.slack(&candidate_u);
        if slack < -1e-8 * (1.0 + row.b.abs() + row.a.dot(&candidate_u).abs()) {
            return;
        }
    }

    // Multipliers from stationarity restricted to the subset rows.
    let gradient = &qp.h * &candidate_u + &qp.c;
    let a_s = qp.working_matrix(subset, n);
    let mu = if subset.is_empty() {
        DVector::zeros(0)
    } else {
        least_squares(&a_s.transpose(), &(-&gradient))
    };
    let stationarity_gap = (&a_s.transpose() * &mu + &gradient).amax();
    if stationarity_gap > 1e-7 * (1.0 + gradient.amax()) {
        return;
    }
    if mu.iter().any(|&m| m < -1e-8 * (1.0 + mu.amax())) {
        return;
    }

    let pairs: Vec<(usize, f64)> = subset.iter().zip(mu.iter()).map(|(&j, &m)| (j, m)).collect();
    let point = qp.finish(candidate_u, &pairs);
    let objective = cost.value(&point.u, &point.y);
    let norm = point.u.norm();
    let replace = match best {
        None => true,
        Some((best_obj, best_norm, _)) => {
            let tol = 1e-9 * (1.0 + best_obj.abs());
            objective < *best_obj - tol
                || (objective <= *best_obj + tol && norm < *best_norm - 1e-12 * (1.0 + *best_norm))
        }
    };
    if replace {
        *best = Some((objective, norm, point));
    }
}

/// Minimizer of the objective restricted to the affine surface where the
/// subset rows hold with equality; `None` when the surface is
/// inconsistent or the restricted problem is unbounded.
fn surface_minimizer(qp: &QpProblem, subset: &[usize], n: usize) -> Option<DVector<f64>> {
    let a_s = qp.working_matrix(subset, n);
    let b_s = DVector::from_iterator(subset.len(), subset.iter().map(|&j| qp.rows[j].b));

    let particular = if subset.is_empty() {
        DVector::zeros(n)
    } else {
        let (pinv, _) = pseudo_inverse(&a_s);
        let u_p = &pinv * &b_s;
        if (&a_s * &u_p - &b_s).amax() > 1e-8 * (1.0 + b_s.amax()) {
            return None;
        }
        u_p
    };

    let z = nullspace_basis(&a_s, n);
    if z.ncols() == 0 {
        return Some(particular);
    }
    let gradient = &qp.h * &particular + &qp.c;
    match reduced_step(&qp.h, &gradient, &z) {
        ReducedStep::Minimizer(p) => Some(particular + p),
        ReducedStep::Ray(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use nalgebra::DMatrix;

    fn model_1d(k: f64, w: f64) -> QuasiStaticModel {
        QuasiStaticModel {
            k_g: DMatrix::from_element(1, 1, k),
            w: DVector::from_element(1, w),
            v_nom: 0.0,
            near_singular: false,
        }
    }

    /// min ½y² with y = u + 5 and u ∈ [−2, 2]: the optimum pins u at the
    /// lower voltage bound with λ_min = y* = 3.
    #[test]
    fn one_dimensional_toy() {
        let model = model_1d(1.0, 5.0);
        let cost = QuadraticCost::quadratic_output(&[1.0], &[0.0]).unwrap();
        let limits = OperatingLimits::new(
            DVector::from_element(1, f64::NEG_INFINITY),
            DVector::from_element(1, f64::INFINITY),
            DVector::from_element(1, -2.0),
            DVector::from_element(1, 2.0),
        )
        .unwrap();
        let point = reference_qp_solve(&cost, &limits, &model).unwrap();
        assert_relative_eq!(point.u[0], -2.0, max_relative = 1e-9);
        assert_relative_eq!(point.y[0], 3.0, max_relative = 1e-9);
        assert_relative_eq!(point.lambda_min[0], 3.0, max_relative = 1e-8);
        assert!(point.residuals.max_relative() < 1e-8);

        let enumerated = enumerate_qp_solve(&cost, &limits, &model).unwrap();
        assert_relative_eq!(enumerated.u[0], -2.0, max_relative = 1e-10);
        assert_relative_eq!(enumerated.lambda_min[0], 3.0, max_relative = 1e-10);
    }

    #[test]
    fn unconstrained_loss_minimizer_is_origin() {
        let k_g = DMatrix::from_vec(2, 2, vec![0.6, -0.2, -0.2, 0.5]);
        let model = QuasiStaticModel {
            k_g: k_g.clone(),
            w: DVector::from_vec(vec![12.0, -7.0]),
            v_nom: 100.0,
            near_singular: false,
        };
        let cost = QuadraticCost::loss_surrogate(&k_g).unwrap();
        let limits = OperatingLimits::new(
            DVector::from_element(2, -1e6),
            DVector::from_element(2, 1e6),
            DVector::from_element(2, -1e5),
            DVector::from_element(2, 1e6),
        )
        .unwrap();
        let point = reference_qp_solve(&cost, &limits, &model).unwrap();
        assert_abs_diff_eq!(point.u.amax(), 0.0, epsilon = 1e-7);
        assert!(point.residuals.max_relative() < 1e-8);
    }

    /// Separable 2-d problem solvable by hand: voltage box active on one
    /// coordinate, interior on the other.
    #[test]
    fn two_dimensional_box_solution() {
        let model = QuasiStaticModel {
            k_g: DMatrix::identity(2, 2),
            w: DVector::from_vec(vec![3.0, -1.0]),
            v_nom: 0.0,
            near_singular: false,
        };
        let cost = QuadraticCost::quadratic_output(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        let limits = OperatingLimits::new(
            DVector::from_element(2, f64::NEG_INFINITY),
            DVector::from_element(2, f64::INFINITY),
            DVector::from_element(2, -2.0),
            DVector::from_element(2, 2.0),
        )
        .unwrap();
        let point = reference_qp_solve(&cost, &limits, &model).unwrap();
        assert_relative_eq!(point.u[0], -2.0, max_relative = 1e-9);
        assert_relative_eq!(point.u[1], 1.0, max_relative = 1e-9);
        assert_relative_eq!(point.lambda_min[0], 1.0, max_relative = 1e-8);
        assert_abs_diff_eq!(point.lambda_min[1], 0.0, epsilon = 1e-10);

        let enumerated = enumerate_qp_solve(&cost, &limits, &model).unwrap();
        assert_relative_eq!(point.u[0], enumerated.u[0], max_relative = 1e-9);
        assert_relative_eq!(point.u[1], enumerated.u[1], max_relative = 1e-9);
    }

    /// One current bound active; cross-checked against enumeration.
    #[test]
    fn two_dimensional_current_bound() {
        let model = QuasiStaticModel {
            k_g: DMatrix::identity(2, 2),
            w: DVector::from_vec(vec![3.0, -1.0]),
            v_nom: 0.0,
            near_singular: false,
        };
        let cost = QuadraticCost::quadratic_output(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        let limits = OperatingLimits::new(
            DVector::from_vec(vec![f64::NEG_INFINITY, 0.5]),
            DVector::from_element(2, f64::INFINITY),
            DVector::from_element(2, -10.0),
            DVector::from_element(2, 10.0),
        )
        .unwrap();
        let point = reference_qp_solve(&cost, &limits, &model).unwrap();
        assert_relative_eq!(point.y[1], 0.5, max_relative = 1e-8);
        assert_relative_eq!(point.zeta_min[1], 0.5, max_relative = 1e-7);
        assert!(point.residuals.max_relative() < 1e-8);

        let enumerated = enumerate_qp_solve(&cost, &limits, &model).unwrap();
        assert_relative_eq!(point.u[0], enumerated.u[0], max_relative = 1e-8);
        assert_relative_eq!(point.u[1], enumerated.u[1], max_relative = 1e-8);
    }

    #[test]
    fn redundant_extra_row_leaves_optimum_unchanged() {
        let model = model_1d(1.0, 5.0);
        let cost = QuadraticCost::quadratic_output(&[1.0], &[0.0]).unwrap();
        let base = OperatingLimits::new(
            DVector::from_element(1, f64::NEG_INFINITY),
            DVector::from_element(1, f64::INFINITY),
            DVector::from_element(1, -2.0),
            DVector::from_element(1, 2.0),
        )
        .unwrap();
        let with_row = base
            .clone()
            .with_extra(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 50.0))
            .unwrap();
        let p0 = reference_qp_solve(&cost, &base, &model).unwrap();
        let p1 = reference_qp_solve(&cost, &with_row, &model).unwrap();
        assert_abs_diff_eq!(p0.u[0], p1.u[0], epsilon = 1e-8);
    }

    #[test]
    fn binding_extra_row_is_respected() {
        // min ½(u+5)² with u ≥ −1 expressed as −u ≤ 1 via an extra row.
        let model = model_1d(1.0, 5.0);
        let cost = QuadraticCost::quadratic_output(&[1.0], &[0.0]).unwrap();
        let limits = OperatingLimits::new(
            DVector::from_element(1, f64::NEG_INFINITY),
            DVector::from_element(1, f64::INFINITY),
            DVector::from_element(1, -20.0),
            DVector::from_element(1, 20.0),
        )
        .unwrap()
        .with_extra(DMatrix::from_element(1, 1, -1.0), DVector::from_element(1, 1.0))
        .unwrap();
        let point = reference_qp_solve(&cost, &limits, &model).unwrap();
        assert_relative_eq!(point.u[0], -1.0, max_relative = 1e-8);
        let mu = point.extra_duals.as_ref().unwrap();
        assert_relative_eq!(mu[0], 4.0, max_relative = 1e-7);
        assert!(point.residuals.max_relative() < 1e-8);
    }

    #[test]
    fn infeasible_box_produces_certificate() {
        // y = u + 10 with y ≤ 2 needs u ≤ −8, but u ≥ −2.
        let model = model_1d(1.0, 10.0);
        let cost = QuadraticCost::quadratic_output(&[1.0], &[0.0]).unwrap();
        let limits = OperatingLimits::new(
            DVector::from_element(1, f64::NEG_INFINITY),
            DVector::from_element(1, 2.0),
            DVector::from_element(1, -2.0),
            DVector::from_element(1, 2.0),
        )
        .unwrap();
        let err = reference_qp_solve(&cost, &limits, &model).unwrap_err();
        match err {
            OptimizerError::Infeasible { constraint, violation } => {
                assert!(constraint.contains("I_max"), "got {constraint}");
                assert!(violation > 5.0);
            }
            other => panic!("expected infeasibility, got {other}"),
        }
    }

    /// Singular Hessian (loss cost with a rank-deficient K_G): the oracle
    /// must settle on the minimum-norm optimizer.
    #[test]
    fn singular_hessian_returns_minimum_norm() {
        // K_G = [[1, -1], [-1, 1]]/2: null direction (1, 1).
        let k_g = DMatrix::from_vec(2, 2, vec![0.5, -0.5, -0.5, 0.5]);
        let model = QuasiStaticModel {
            k_g: k_g.clone(),
            w: DVector::from_vec(vec![4.0, -4.0]),
            v_nom: 0.0,
            near_singular: false,
        };
        let cost = QuadraticCost::loss_surrogate(&k_g).unwrap();
        let limits = OperatingLimits::new(
            DVector::from_element(2, -100.0),
            DVector::from_element(2, 100.0),
            DVector::from_element(2, -50.0),
            DVector::from_element(2, 50.0),
        )
        .unwrap();
        let point = reference_qp_solve(&cost, &limits, &model).unwrap();
        // Optimum set is the null line; minimum-norm representative is 0.
        assert_abs_diff_eq!(point.u.amax(), 0.0, epsilon = 1e-7);
        assert!(point.residuals.max_relative() < 1e-8);
    }
}
