//! Projected primal-dual secondary controller: the continuous-time
//! right-hand side, the per-entry projection that keeps the dual flow
//! nonnegative, the online sensitivity construction from reported
//! ac-GFM conductances, and the Lyapunov distance used for numerical
//! monotonicity checks.

use nalgebra::{DMatrix, DVector};

use crate::error::GridError;
use crate::grid::{schur_reduce, ConductanceBlocks};
use crate::optimizer::{KktPoint, OperatingLimits};

/// Diagonal controller gains: primal gain K_p and the dual gains for the
/// current and voltage constraint multipliers.
#[derive(Debug, Clone)]
pub struct ControllerGains {
    pub k_p: DVector<f64>,
    pub k_d_current: DVector<f64>,
    pub k_d_voltage: DVector<f64>,
}

impl ControllerGains {
    /// Uniform gains k_p·I, k_d_I·I, k_d_V·I.
    pub fn uniform(n: usize, k_p: f64, k_d_current: f64, k_d_voltage: f64) -> Self {
        Self {
            k_p: DVector::from_element(n, k_p),
            k_d_current: DVector::from_element(n, k_d_current),
            k_d_voltage: DVector::from_element(n, k_d_voltage),
        }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let all_positive = self
            .k_p
            .iter()
            .chain(self.k_d_current.iter())
            .chain(self.k_d_voltage.iter())
            .all(|&g| g > 0.0 && g.is_finite());
        if !all_positive {
            return Err(GridError::InvalidTopology(
                "controller gains must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Controller state: primal setpoint deviations and the four dual vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub x_p: DVector<f64>,
    pub zeta_max: DVector<f64>,
    pub zeta_min: DVector<f64>,
    pub lambda_max: DVector<f64>,
    pub lambda_min: DVector<f64>,
}

impl ControllerState {
    /// Activation state: setpoints at nominal, duals at zero.
    pub fn zero(n: usize) -> Self {
        Self {
            x_p: DVector::zeros(n),
            zeta_max: DVector::zeros(n),
            zeta_min: DVector::zeros(n),
            lambda_max: DVector::zeros(n),
            lambda_min: DVector::zeros(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.x_p.len()
    }

    /// Discrete integration can overshoot a dual below zero; the
    /// continuous flow never does. Restore the invariant after a step.
    pub fn floor_duals(&mut self) {
        for v in [
            &mut self.zeta_max,
            &mut self.zeta_min,
            &mut self.lambda_max,
            &mut self.lambda_min,
        ] {
            for x in v.iter_mut() {
                if *x < 0.0 {
                    *x = 0.0;
                }
            }
        }
    }

    pub fn axpy(&mut self, alpha: f64, rhs: &StateDerivative) {
        self.x_p.axpy(alpha, &rhs.x_p, 1.0);
        self.zeta_max.axpy(alpha, &rhs.zeta_max, 1.0);
        self.zeta_min.axpy(alpha, &rhs.zeta_min, 1.0);
        self.lambda_max.axpy(alpha, &rhs.lambda_max, 1.0);
        self.lambda_min.axpy(alpha, &rhs.lambda_min, 1.0);
    }
}

/// Time derivative of [`ControllerState`].
#[derive(Debug, Clone)]
pub struct StateDerivative {
    pub x_p: DVector<f64>,
    pub zeta_max: DVector<f64>,
    pub zeta_min: DVector<f64>,
    pub lambda_max: DVector<f64>,
    pub lambda_min: DVector<f64>,
}

impl StateDerivative {
    pub fn amax(&self) -> f64 {
        self.x_p
            .amax()
            .max(self.zeta_max.amax())
            .max(self.zeta_min.amax())
            .max(self.lambda_max.amax())
            .max(self.lambda_min.amax())
    }
}

/// Scalar projection of the dual flow: the derivative passes through
/// while the multiplier is positive and is clamped to nonnegative values
/// on the boundary b ≤ 0.
pub fn psi(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a
    } else {
        a.max(0.0)
    }
}

fn psi_vec(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len(), a.iter().zip(b.iter()).map(|(&ai, &bi)| psi(ai, bi)))
}

/// Gradient callback ∇f evaluated at (x_p, u_y): returns the two blocks
/// (∂f/∂u, ∂f/∂y). The sensitivity matrix in use is passed along so
/// costs defined through it (the loss surrogate) can follow its online
/// updates.
pub trait CostGradient {
    fn gradient(
        &self,
        x_p: &DVector<f64>,
        u_y: &DVector<f64>,
        k_g: &DMatrix<f64>,
    ) -> (DVector<f64>, DVector<f64>);
}

/// The three cost templates of the case studies plus a fixed quadratic.
#[derive(Debug, Clone)]
pub enum CostModel {
    /// ½uᵀK_G·u with K_G the controller's current sensitivity matrix.
    LossSurrogate,
    /// ½yᵀdiag(p_y)·y + q_yᵀy.
    QuadraticOutput { p_y: DVector<f64>, q_y: DVector<f64> },
    /// (1000/2)·Σ y_i²/I*_i.
    ProportionalCurrent { i_star: DVector<f64> },
}

impl CostGradient for CostModel {
    fn gradient(
        &self,
        x_p: &DVector<f64>,
        u_y: &DVector<f64>,
        k_g: &DMatrix<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        match self {
            CostModel::LossSurrogate => (k_g * x_p, DVector::zeros(u_y.len())),
            CostModel::QuadraticOutput { p_y, q_y } => {
                (DVector::zeros(x_p.len()), u_y.component_mul(p_y) + q_y)
            }
            CostModel::ProportionalCurrent { i_star } => {
                let grad_y = DVector::from_iterator(
                    u_y.len(),
                    u_y.iter().zip(i_star.iter()).map(|(&y, &s)| 1000.0 * y / s),
                );
                (DVector::zeros(x_p.len()), grad_y)
            }
        }
    }
}

/// Continuous-time right-hand side of the projected primal-dual flow.
///
/// `u_y` is the current measurement the controller sees (held between
/// samples under reduced communication) and `k_g` its sensitivity matrix.
pub fn projected_rhs<C: CostGradient>(
    state: &ControllerState,
    u_y: &DVector<f64>,
    k_g: &DMatrix<f64>,
    gains: &ControllerGains,
    cost: &C,
    limits: &OperatingLimits,
    v_nom: f64,
) -> StateDerivative {
    let (grad_u, grad_y) = cost.gradient(&state.x_p, u_y, k_g);
    let k_g_t = k_g.transpose();
    let zeta_diff = &state.zeta_max - &state.zeta_min;
    let lambda_diff = &state.lambda_max - &state.lambda_min;
    let descent = grad_u + &k_g_t * (grad_y + zeta_diff) + lambda_diff;
    let x_p_dot = -descent.component_mul(&gains.k_p);

    let u_min = limits.u_min(v_nom);
    let u_max = limits.u_max(v_nom);
    let zeta_max_dot = psi_vec(&(u_y - &limits.i_max), &state.zeta_max)
        .component_mul(&gains.k_d_current);
    let zeta_min_dot = psi_vec(&(&limits.i_min - u_y), &state.zeta_min)
        .component_mul(&gains.k_d_current);
    let lambda_max_dot =
        psi_vec(&(&state.x_p - &u_max), &state.lambda_max).component_mul(&gains.k_d_voltage);
    let lambda_min_dot =
        psi_vec(&(&u_min - &state.x_p), &state.lambda_min).component_mul(&gains.k_d_voltage);

    StateDerivative {
        x_p: x_p_dot,
        zeta_max: zeta_max_dot,
        zeta_min: zeta_min_dot,
        lambda_max: lambda_max_dot,
        lambda_min: lambda_min_dot,
    }
}

/// One explicit fourth-order (classical Runge-Kutta) step of the flow,
/// followed by the dual floor. The held inputs are constant over the step.
#[allow(clippy::too_many_arguments)]
pub fn rk4_step<C: CostGradient>(
    state: &ControllerState,
    u_y: &DVector<f64>,
    k_g: &DMatrix<f64>,
    gains: &ControllerGains,
    cost: &C,
    limits: &OperatingLimits,
    v_nom: f64,
    h: f64,
) -> ControllerState {
    let k1 = projected_rhs(state, u_y, k_g, gains, cost, limits, v_nom);
    let mut s2 = state.clone();
    s2.axpy(0.5 * h, &k1);
    let k2 = projected_rhs(&s2, u_y, k_g, gains, cost, limits, v_nom);
    let mut s3 = state.clone();
    s3.axpy(0.5 * h, &k2);
    let k3 = projected_rhs(&s3, u_y, k_g, gains, cost, limits, v_nom);
    let mut s4 = state.clone();
    s4.axpy(h, &k3);
    let k4 = projected_rhs(&s4, u_y, k_g, gains, cost, limits, v_nom);

    let mut next = state.clone();
    next.axpy(h / 6.0, &k1);
    next.axpy(h / 3.0, &k2);
    next.axpy(h / 3.0, &k3);
    next.axpy(h / 6.0, &k4);
    next.floor_duals();
    next
}

/// Online construction of the sensitivity matrix from the conductances
/// reported by the ac-GFM stations: K_G = G_N − G_NM·(G_M + U_G)⁺·G_MN.
/// Identical to the Kron reduction when U_G equals the true G_P.
pub fn construct_sensitivity(
    blocks: &ConductanceBlocks,
    reported_conductances: &DVector<f64>,
) -> Result<(DMatrix<f64>, bool), GridError> {
    let (k_g, _, near_singular) = schur_reduce(blocks, reported_conductances)?;
    Ok((k_g, near_singular))
}

/// Weighted squared distance to a reference primal-dual optimum:
/// ½(x_p−x_p*)ᵀK_p⁻¹(x_p−x_p*) + ½(x_d−x_d*)ᵀK_d⁻¹(x_d−x_d*)
/// with K_d = blkdiag(K_d_I, K_d_I, K_d_V, K_d_V). Zero exactly at the
/// optimum; non-increasing along exact trajectories of the flow.
pub fn lyapunov_value(
    state: &ControllerState,
    optimum: &KktPoint,
    gains: &ControllerGains,
) -> f64 {
    let mut value = 0.0;
    let quad = |diff: &DVector<f64>, gain: &DVector<f64>| -> f64 {
        diff.iter()
            .zip(gain.iter())
            .map(|(&d, &g)| 0.5 * d * d / g)
            .sum()
    };
    value += quad(&(&state.x_p - &optimum.u), &gains.k_p);
    value += quad(&(&state.zeta_max - &optimum.zeta_max), &gains.k_d_current);
    value += quad(&(&state.zeta_min - &optimum.zeta_min), &gains.k_d_current);
    value += quad(&(&state.lambda_max - &optimum.lambda_max), &gains.k_d_voltage);
    value += quad(&(&state.lambda_min - &optimum.lambda_min), &gains.k_d_voltage);
    value
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::QuasiStaticModel;
    use crate::optimizer::{reference_qp_solve, QuadraticCost};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn psi_branches() {
        assert_eq!(psi(-3.0, 1.0), -3.0);
        assert_eq!(psi(-3.0, 0.0), 0.0);
        assert_eq!(psi(2.0, -1.0), 2.0);
    }

    fn toy_model() -> QuasiStaticModel {
        QuasiStaticModel {
            k_g: DMatrix::identity(1, 1),
            w: DVector::from_element(1, 5.0),
            v_nom: 0.0,
            near_singular: false,
        }
    }

    fn toy_limits() -> OperatingLimits {
        OperatingLimits::new(
            DVector::from_element(1, f64::NEG_INFINITY),
            DVector::from_element(1, f64::INFINITY),
            DVector::from_element(1, -2.0),
            DVector::from_element(1, 2.0),
        )
        .unwrap()
    }

    #[test]
    fn rhs_vanishes_at_kkt_point() {
        let model = toy_model();
        let limits = toy_limits();
        let cost = QuadraticCost::quadratic_output(&[1.0], &[0.0]).unwrap();
        let optimum = reference_qp_solve(&cost, &limits, &model).unwrap();

        let state = ControllerState {
            x_p: optimum.u.clone(),
            zeta_max: optimum.zeta_max.clone(),
            zeta_min: optimum.zeta_min.clone(),
            lambda_max: optimum.lambda_max.clone(),
            lambda_min: optimum.lambda_min.clone(),
        };
        let gains = ControllerGains::uniform(1, 200.0, 10.0, 10.0);
        let cost_model = CostModel::QuadraticOutput {
            p_y: DVector::from_element(1, 1.0),
            q_y: DVector::zeros(1),
        };
        let rhs = projected_rhs(
            &state,
            &optimum.y,
            &model.k_g,
            &gains,
            &cost_model,
            &limits,
            model.v_nom,
        );
        assert!(rhs.amax() < 1e-7, "rhs {:?}", rhs);
    }

    #[test]
    fn interior_state_reduces_to_gradient_flow() {
        let model = toy_model();
        let limits = toy_limits();
        let gains = ControllerGains::uniform(1, 2.0, 1.0, 1.0);
        let cost_model = CostModel::QuadraticOutput {
            p_y: DVector::from_element(1, 1.0),
            q_y: DVector::zeros(1),
        };
        let state = ControllerState {
            x_p: DVector::from_element(1, 0.5),
            ..ControllerState::zero(1)
        };
        let u_y = DVector::from_element(1, 5.5); // y = x_p + 5
        let rhs = projected_rhs(
            &state,
            &u_y,
            &model.k_g,
            &gains,
            &cost_model,
            &limits,
            model.v_nom,
        );
        // ẋ_p = −K_p·K_Gᵀ·y = −2·5.5; duals stay clamped at zero.
        assert_relative_eq!(rhs.x_p[0], -11.0, max_relative = 1e-12);
        assert_eq!(rhs.zeta_max[0], 0.0);
        assert_eq!(rhs.zeta_min[0], 0.0);
        assert_eq!(rhs.lambda_max[0], 0.0);
        assert_eq!(rhs.lambda_min[0], 0.0);
    }

    /// Forward-integrate the closed loop on the algebraic toy plant; the
    /// flow must land on the oracle optimum u* = −2.
    #[test]
    fn toy_flow_converges_to_oracle_optimum() {
        let model = toy_model();
        let limits = toy_limits();
        let k_p = 2.0;
        let gains = ControllerGains::uniform(1, k_p, 10.0, 10.0);
        let cost_model = CostModel::QuadraticOutput {
            p_y: DVector::from_element(1, 1.0),
            q_y: DVector::zeros(1),
        };
        let mut state = ControllerState::zero(1);
        let h = 1e-3;
        let t_end = 50.0 / k_p;
        let steps = (t_end / h) as usize;
        for _ in 0..steps {
            let y = &model.k_g * &state.x_p + &model.w;
            state = rk4_step(
                &state,
                &y,
                &model.k_g,
                &gains,
                &cost_model,
                &limits,
                model.v_nom,
                h,
            );
        }
        assert_abs_diff_eq!(state.x_p[0], -2.0, epsilon = 1e-4);
    }

    #[test]
    fn duals_stay_nonnegative_under_integration() {
        let model = toy_model();
        let limits = OperatingLimits::new(
            DVector::from_element(1, -1.0),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, -2.0),
            DVector::from_element(1, 2.0),
        )
        .unwrap();
        let gains = ControllerGains::uniform(1, 5.0, 20.0, 20.0);
        let cost_model = CostModel::QuadraticOutput {
            p_y: DVector::from_element(1, 1.0),
            q_y: DVector::zeros(1),
        };
        let mut state = ControllerState::zero(1);
        for _ in 0..20_000 {
            let y = &model.k_g * &state.x_p + &model.w;
            state = rk4_step(
                &state,
                &y,
                &model.k_g,
                &gains,
                &cost_model,
                &limits,
                model.v_nom,
                1e-3,
            );
            let all_nonneg = state
                .zeta_max
                .iter()
                .chain(state.zeta_min.iter())
                .chain(state.lambda_max.iter())
                .chain(state.lambda_min.iter())
                .all(|&d| d >= 0.0);
            assert!(all_nonneg);
        }
    }

    #[test]
    fn sensitivity_matches_kron_reduction() {
        use crate::grid::{
            build_conductance_blocks, kron_reduce, AcGfmLinearization, CableParams, GridTopology,
            Line, NodeKind,
        };
        let topo = GridTopology::new(
            vec![
                ("a".into(), NodeKind::DcGfm, 1e9),
                ("b".into(), NodeKind::DcGfm, 1e9),
                ("h".into(), NodeKind::AcGfm, 1e9),
            ],
            vec![
                Line {
                    from: "a".into(),
                    to: "h".into(),
                    length_km: 2.0,
                    cable: CableParams {
                        r1: 3.0,
                        r2: 3.0,
                        r3: 3.0,
                        g: 0.05,
                    },
                },
                Line {
                    from: "b".into(),
                    to: "h".into(),
                    length_km: 1.0,
                    cable: CableParams {
                        r1: 3.0,
                        r2: 3.0,
                        r3: 3.0,
                        g: 0.0,
                    },
                },
            ],
        )
        .unwrap();
        let blocks = build_conductance_blocks(&topo).unwrap();
        let lin = AcGfmLinearization::from_power(&[250.0], &[98.0]).unwrap();
        let model = kron_reduce(&blocks, &lin, 100.0).unwrap();
        let (k_g, _) = construct_sensitivity(&blocks, &lin.g_p).unwrap();
        assert_relative_eq!(k_g, model.k_g, max_relative = 1e-12);

        // m = 0 degenerates to the dc-GFM block itself.
        let (k_g_empty, _) = construct_sensitivity(
            &ConductanceBlocks {
                g_n: blocks.g_n.clone(),
                g_nm: DMatrix::zeros(2, 0),
                g_mn: DMatrix::zeros(0, 2),
                g_m: DMatrix::zeros(0, 0),
                shunt: blocks.shunt.clone(),
            },
            &DVector::zeros(0),
        )
        .unwrap();
        assert_eq!(k_g_empty, blocks.g_n);
    }

    #[test]
    fn lyapunov_zero_at_optimum_and_quadratic_away() {
        let model = toy_model();
        let limits = toy_limits();
        let cost = QuadraticCost::quadratic_output(&[1.0], &[0.0]).unwrap();
        let optimum = reference_qp_solve(&cost, &limits, &model).unwrap();
        let gains = ControllerGains::uniform(1, 200.0, 10.0, 10.0);

        let at_optimum = ControllerState {
            x_p: optimum.u.clone(),
            zeta_max: optimum.zeta_max.clone(),
            zeta_min: optimum.zeta_min.clone(),
            lambda_max: optimum.lambda_max.clone(),
            lambda_min: optimum.lambda_min.clone(),
        };
        assert_eq!(lyapunov_value(&at_optimum, &optimum, &gains), 0.0);

        let mut offset = at_optimum.clone();
        offset.x_p[0] += 1.0;
        assert_relative_eq!(
            lyapunov_value(&offset, &optimum, &gains),
            1.0 / 400.0,
            max_relative = 1e-12
        );
    }

    /// Scaling every gain by a common factor must not move the
    /// equilibrium set, only the trajectory speed.
    #[test]
    fn gain_scaling_preserves_equilibrium() {
        let model = toy_model();
        let limits = toy_limits();
        let cost_model = CostModel::QuadraticOutput {
            p_y: DVector::from_element(1, 1.0),
            q_y: DVector::zeros(1),
        };
        for scale in [1.0, 7.5] {
            let gains = ControllerGains::uniform(1, 2.0 * scale, 10.0 * scale, 10.0 * scale);
            let mut state = ControllerState::zero(1);
            let h = 1e-3 / scale;
            for _ in 0..40_000 {
                let y = &model.k_g * &state.x_p + &model.w;
                state = rk4_step(
                    &state,
                    &y,
                    &model.k_g,
                    &gains,
                    &cost_model,
                    &limits,
                    model.v_nom,
                    h,
                );
            }
            assert_abs_diff_eq!(state.x_p[0], -2.0, epsilon = 1e-4);
        }
    }
}
