//! Plant models the closed loop runs against.
//!
//! The static plant solves the nonlinear constant-power circuit at every
//! step: ac-GFM nodes inject P_i/V_i at their terminal voltage, solved by
//! damped fixed-point iteration. The controller never sees this model —
//! only measurements and the reported conductances — which is what makes
//! the closed loop a feedback optimization rather than a feedforward one.
//!
//! The dynamic plant is a reduced-order stand-in (node capacitances, RL
//! branches, first-order voltage-tracking sources) to exercise the
//! controller against plant dynamics. Its parameters are plausible
//! defaults, not claims about any particular installation.

use nalgebra::DVector;

use crate::error::SimError;
use crate::grid::{build_conductance_blocks, ConductanceBlocks, GridTopology};

/// Fixed-point relaxation factor of the static solve.
const STATIC_RELAXATION: f64 = 0.7;
/// Iteration cap of the static solve.
const STATIC_MAX_ITERATIONS: usize = 200;
/// Voltages below this fraction of nominal are treated as collapse.
const COLLAPSE_FLOOR: f64 = 0.05;

/// Measurements a plant produces each step.
#[derive(Debug, Clone)]
pub struct PlantOutput {
    /// dc-GFM station currents into the network [A].
    pub y: DVector<f64>,
    /// dc-GFM node voltages [V].
    pub v_dc: DVector<f64>,
    /// ac-GFM node voltages [V].
    pub v_ac: DVector<f64>,
    /// Reported conductances G_Pi = P_i/V_i² at the operating point [Ω⁻¹].
    pub g_p: DVector<f64>,
    /// Linearized current sources Ī_i = 2·P_i/V_i [A].
    pub i_bar: DVector<f64>,
}

/// Common interface of the two plants.
pub trait Plant {
    /// Update the scheduled injection of one ac-GFM station [W].
    fn set_power(&mut self, ac_index: usize, power: f64);

    fn powers(&self) -> &DVector<f64>;

    /// Advance one step of `h` seconds with the dc-GFM voltage setpoints
    /// held at `v_set` [V] and return the resulting measurements. The
    /// static plant is algebraic and ignores `h`.
    fn advance(&mut self, v_set: &DVector<f64>, h: f64) -> Result<PlantOutput, SimError>;

    fn blocks(&self) -> &ConductanceBlocks;
}

/// Quasi-static nonlinear plant: the network is resistive and each ac-GFM
/// node is an exact constant-power device solved per step.
pub struct StaticPlant {
    blocks: ConductanceBlocks,
    ac_names: Vec<String>,
    powers: DVector<f64>,
    /// Warm start carried between steps.
    v_ac: DVector<f64>,
    g_m_lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    v_nom: f64,
}

impl StaticPlant {
    pub fn new(topology: &GridTopology, v_nom: f64) -> Result<Self, SimError> {
        let blocks = build_conductance_blocks(topology)?;
        let m = blocks.acgfm_count();
        let g_m_lu = (m > 0).then(|| blocks.g_m.clone().lu());
        Ok(Self {
            blocks,
            ac_names: topology.acgfm_ids().to_vec(),
            powers: DVector::zeros(m),
            v_ac: DVector::from_element(m, v_nom),
            g_m_lu,
            v_nom,
        })
    }

    /// Damped fixed-point solve of the constant-power circuit at the given
    /// dc-GFM voltages. Convergence tolerance 1e-10·V_nom.
    fn solve(&mut self, v_n: &DVector<f64>) -> Result<PlantOutput, SimError> {
        let m = self.blocks.acgfm_count();
        if m == 0 {
            let y = &self.blocks.g_n * v_n;
            return Ok(PlantOutput {
                y,
                v_dc: v_n.clone(),
                v_ac: DVector::zeros(0),
                g_p: DVector::zeros(0),
                i_bar: DVector::zeros(0),
            });
        }
        let lu = self.g_m_lu.as_ref().expect("m > 0");
        let coupling = &self.blocks.g_mn * v_n;
        let tolerance = 1e-10 * self.v_nom;
        let floor = COLLAPSE_FLOOR * self.v_nom;
        let mut v = self.v_ac.clone();
        // Restart from nominal if the warm start is unusable.
        if v.iter().any(|x| !x.is_finite() || *x < floor) {
            v = DVector::from_element(m, self.v_nom);
        }

        let mut converged = false;
        let mut iterations = 0;
        for iter in 0..STATIC_MAX_ITERATIONS {
            iterations = iter + 1;
            let i_load = DVector::from_iterator(
                m,
                self.powers.iter().zip(v.iter()).map(|(&p, &vi)| p / vi),
            );
            let rhs = i_load - &coupling;
            let v_next = lu.solve(&rhs).ok_or_else(|| SimError::PlantCollapse {
                node: self.ac_names[0].clone(),
                mismatch: f64::NAN,
                iterations,
            })?;
            let mut step_size = 0.0_f64;
            for i in 0..m {
                let updated = (1.0 - STATIC_RELAXATION) * v[i] + STATIC_RELAXATION * v_next[i];
                step_size = step_size.max((updated - v[i]).abs());
                v[i] = updated;
            }
            if let Some(bad) = v.iter().position(|x| !x.is_finite() || *x < floor) {
                return Err(SimError::PlantCollapse {
                    node: self.ac_names[bad].clone(),
                    mismatch: self.mismatch(&v, &coupling).1,
                    iterations,
                });
            }
            if step_size <= tolerance {
                converged = true;
                break;
            }
        }
        if !converged {
            let (node, mismatch) = self.mismatch(&v, &coupling);
            return Err(SimError::PlantCollapse {
                node: self.ac_names[node].clone(),
                mismatch,
                iterations,
            });
        }

        self.v_ac = v.clone();
        let y = &self.blocks.g_n * v_n + &self.blocks.g_nm * &v;
        let g_p = DVector::from_iterator(
            m,
            self.powers.iter().zip(v.iter()).map(|(&p, &vi)| p / (vi * vi)),
        );
        let i_bar = DVector::from_iterator(
            m,
            self.powers.iter().zip(v.iter()).map(|(&p, &vi)| 2.0 * p / vi),
        );
        Ok(PlantOutput {
            y,
            v_dc: v_n.clone(),
            v_ac: v,
            g_p,
            i_bar,
        })
    }

    /// Worst constant-power mismatch |P/V − I_network| and its node.
    fn mismatch(&self, v: &DVector<f64>, coupling: &DVector<f64>) -> (usize, f64) {
        let network = &self.blocks.g_m * v + coupling;
        let mut worst = (0, 0.0_f64);
        for i in 0..v.len() {
            let gap = (self.powers[i] / v[i] - network[i]).abs();
            if gap > worst.1 {
                worst = (i, gap);
            }
        }
        worst
    }
}

impl Plant for StaticPlant {
    fn set_power(&mut self, ac_index: usize, power: f64) {
        self.powers[ac_index] = power;
    }

    fn powers(&self) -> &DVector<f64> {
        &self.powers
    }

    fn advance(&mut self, v_set: &DVector<f64>, _h: f64) -> Result<PlantOutput, SimError> {
        self.solve(v_set)
    }

    fn blocks(&self) -> &ConductanceBlocks {
        &self.blocks
    }
}

/// Parameters of the reduced dynamic plant.
#[derive(Debug, Clone, Copy)]
pub struct DynamicParams {
    /// Collapsed series inductance [H/km].
    pub inductance_per_km: f64,
    /// Lumped station capacitance added at every node [F].
    pub station_capacitance: f64,
    /// First-order lag of the dc-GFM voltage sources [s].
    pub source_lag: f64,
}

impl Default for DynamicParams {
    fn default() -> Self {
        Self {
            inductance_per_km: 3.0e-3,
            station_capacitance: 2.0e-3,
            source_lag: 50.0e-3,
        }
    }
}

struct RlBranch {
    from: usize,
    to: usize,
    resistance: f64,
    inductance: f64,
}

/// Reduced-order dynamic dc plant: per-line RL branches, node capacitors
/// (line charging plus a lumped station capacitor), constant-power ac-GFM
/// injections, and dc-GFM sources that track their setpoint through a
/// first-order lag and pin their node voltage.
pub struct DynamicPlant {
    blocks: ConductanceBlocks,
    ac_names: Vec<String>,
    branches: Vec<RlBranch>,
    /// Capacitance per ac-GFM node [F].
    cap_ac: DVector<f64>,
    powers: DVector<f64>,
    /// States: ac node voltages, branch currents, source EMFs.
    v_ac: DVector<f64>,
    i_branch: DVector<f64>,
    emf: DVector<f64>,
    lag: f64,
    v_nom: f64,
}

impl DynamicPlant {
    pub fn new(
        topology: &GridTopology,
        v_nom: f64,
        params: DynamicParams,
    ) -> Result<Self, SimError> {
        let blocks = build_conductance_blocks(topology)?;
        let n = blocks.dcgfm_count();
        let m = blocks.acgfm_count();
        let mut cap_all = DVector::from_element(n + m, params.station_capacitance);
        let mut branches = Vec::new();
        for line in topology.lines() {
            let a = topology.node_index(&line.from).expect("validated");
            let b = topology.node_index(&line.to).expect("validated");
            branches.push(RlBranch {
                from: a,
                to: b,
                resistance: line.series_resistance(),
                inductance: params.inductance_per_km * line.length_km,
            });
            // Pi-model charging capacitance, half per endpoint.
            let c_half = 0.5 * 0.1616e-6 * line.length_km;
            cap_all[a] += c_half;
            cap_all[b] += c_half;
        }
        Ok(Self {
            blocks,
            ac_names: topology.acgfm_ids().to_vec(),
            branches,
            cap_ac: cap_all.rows(n, m).into(),
            powers: DVector::zeros(m),
            v_ac: DVector::from_element(m, v_nom),
            i_branch: DVector::zeros(topology.lines().len()),
            emf: DVector::zeros(n),
            lag: params.source_lag,
            v_nom,
        })
    }

    /// Initialize the source EMFs so activation does not slam the grid.
    pub fn preset_voltages(&mut self, v_set: &DVector<f64>) {
        self.emf.copy_from(v_set);
    }

    fn derivatives(
        &self,
        v_ac: &DVector<f64>,
        i_branch: &DVector<f64>,
        emf: &DVector<f64>,
        v_set: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let n = self.blocks.dcgfm_count();
        let m = self.blocks.acgfm_count();
        let node_voltage = |idx: usize| -> f64 {
            if idx < n {
                emf[idx]
            } else {
                v_ac[idx - n]
            }
        };

        let mut injection = DVector::<f64>::zeros(m);
        for (k, branch) in self.branches.iter().enumerate() {
            let i = i_branch[k];
            if branch.from >= n {
                injection[branch.from - n] -= i;
            }
            if branch.to >= n {
                injection[branch.to - n] += i;
            }
        }
        let mut v_ac_dot = DVector::zeros(m);
        for j in 0..m {
            let v = v_ac[j];
            let load = self.powers[j] / v;
            let shunt = self.blocks.shunt[n + j] * v;
            v_ac_dot[j] = (load + injection[j] - shunt) / self.cap_ac[j];
        }
        let mut i_dot = DVector::zeros(self.branches.len());
        for (k, branch) in self.branches.iter().enumerate() {
            i_dot[k] = (node_voltage(branch.from)
                - node_voltage(branch.to)
                - branch.resistance * i_branch[k])
                / branch.inductance;
        }
        let emf_dot = (v_set - emf) / self.lag;
        (v_ac_dot, i_dot, emf_dot)
    }

    /// dc-GFM station currents: shunt draw plus branch flow out of the node.
    fn measure_y(&self) -> DVector<f64> {
        let n = self.blocks.dcgfm_count();
        let mut y = DVector::zeros(n);
        for i in 0..n {
            y[i] = self.blocks.shunt[i] * self.emf[i];
        }
        for (k, branch) in self.branches.iter().enumerate() {
            let i = self.i_branch[k];
            if branch.from < n {
                y[branch.from] += i;
            }
            if branch.to < n {
                y[branch.to] -= i;
            }
        }
        y
    }
}

impl Plant for DynamicPlant {
    fn set_power(&mut self, ac_index: usize, power: f64) {
        self.powers[ac_index] = power;
    }

    fn powers(&self) -> &DVector<f64> {
        &self.powers
    }

    fn advance(&mut self, v_set: &DVector<f64>, h: f64) -> Result<PlantOutput, SimError> {
        let m = self.blocks.acgfm_count();
        // Classical fourth-order step of the plant states.
        let (k1v, k1i, k1e) = self.derivatives(&self.v_ac, &self.i_branch, &self.emf, v_set);
        let half = 0.5 * h;
        let (k2v, k2i, k2e) = self.derivatives(
            &(&self.v_ac + half * &k1v),
            &(&self.i_branch + half * &k1i),
            &(&self.emf + half * &k1e),
            v_set,
        );
        let (k3v, k3i, k3e) = self.derivatives(
            &(&self.v_ac + half * &k2v),
            &(&self.i_branch + half * &k2i),
            &(&self.emf + half * &k2e),
            v_set,
        );
        let (k4v, k4i, k4e) = self.derivatives(
            &(&self.v_ac + h * &k3v),
            &(&self.i_branch + h * &k3i),
            &(&self.emf + h * &k3e),
            v_set,
        );
        let sixth = h / 6.0;
        self.v_ac += sixth * (&k1v + 2.0 * &k2v + 2.0 * &k3v + &k4v);
        self.i_branch += sixth * (&k1i + 2.0 * &k2i + 2.0 * &k3i + &k4i);
        self.emf += sixth * (&k1e + 2.0 * &k2e + 2.0 * &k3e + &k4e);

        let floor = COLLAPSE_FLOOR * self.v_nom;
        if let Some(bad) = self.v_ac.iter().position(|v| !v.is_finite() || *v < floor) {
            return Err(SimError::PlantCollapse {
                node: self.ac_names[bad].clone(),
                mismatch: f64::NAN,
                iterations: 0,
            });
        }

        let g_p = DVector::from_iterator(
            m,
            self.powers
                .iter()
                .zip(self.v_ac.iter())
                .map(|(&p, &v)| p / (v * v)),
        );
        let i_bar = DVector::from_iterator(
            m,
            self.powers
                .iter()
                .zip(self.v_ac.iter())
                .map(|(&p, &v)| 2.0 * p / v),
        );
        Ok(PlantOutput {
            y: self.measure_y(),
            v_dc: self.emf.clone(),
            v_ac: self.v_ac.clone(),
            g_p,
            i_bar,
        })
    }

    fn blocks(&self) -> &ConductanceBlocks {
        &self.blocks
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{full_network_solve, AcGfmLinearization, CableParams, Line, NodeKind};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn small_topology() -> GridTopology {
        let cable = CableParams {
            r1: 3.0,
            r2: 3.0,
            r3: 3.0,
            g: 1e-4,
        };
        GridTopology::new(
            vec![
                ("a".into(), NodeKind::DcGfm, 1e6),
                ("b".into(), NodeKind::DcGfm, 1e6),
                ("h".into(), NodeKind::AcGfm, 1e6),
            ],
            vec![
                Line {
                    from: "a".into(),
                    to: "h".into(),
                    length_km: 1.0,
                    cable,
                },
                Line {
                    from: "b".into(),
                    to: "h".into(),
                    length_km: 2.0,
                    cable,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn static_zero_power_is_flat() {
        // No shunts: zero injection must leave the grid at uniform voltage.
        let cable = CableParams {
            r1: 3.0,
            r2: 3.0,
            r3: 3.0,
            g: 0.0,
        };
        let topo = GridTopology::new(
            vec![
                ("a".into(), NodeKind::DcGfm, 1e6),
                ("h".into(), NodeKind::AcGfm, 1e6),
            ],
            vec![Line {
                from: "a".into(),
                to: "h".into(),
                length_km: 1.0,
                cable,
            }],
        )
        .unwrap();
        let mut plant = StaticPlant::new(&topo, 1000.0).unwrap();
        let out = plant
            .advance(&DVector::from_element(1, 1000.0), 1e-3)
            .unwrap();
        assert_relative_eq!(out.v_ac[0], 1000.0, max_relative = 1e-9);
        assert_eq!(out.g_p[0], 0.0);
        assert!(out.y[0].abs() < 1e-9);
    }

    #[test]
    fn static_solve_satisfies_constant_power_exactly() {
        let topo = small_topology();
        let mut plant = StaticPlant::new(&topo, 1000.0).unwrap();
        plant.set_power(0, 50_000.0); // 50 kW injection at 1 kV scale
        let v_set = DVector::from_vec(vec![1000.0, 998.0]);
        let out = plant.advance(&v_set, 1e-3).unwrap();
        // Network current at the hub equals P/V.
        let i_network = (&plant.blocks.g_mn * &v_set + &plant.blocks.g_m * &out.v_ac)[0];
        assert_relative_eq!(i_network, 50_000.0 / out.v_ac[0], max_relative = 1e-9);
    }

    /// Linearizing at the solved point reproduces the nonlinear solution
    /// through the linear solver (the linearization is exact there).
    #[test]
    fn static_solution_matches_linearized_solve_at_expansion_point() {
        let topo = small_topology();
        let mut plant = StaticPlant::new(&topo, 1000.0).unwrap();
        plant.set_power(0, -80_000.0);
        let v_set = DVector::from_vec(vec![1001.0, 999.5]);
        let u = DVector::from_vec(vec![1.0, -0.5]);
        let out = plant.advance(&v_set, 1e-3).unwrap();
        let lin = AcGfmLinearization {
            g_p: out.g_p.clone(),
            i_bar: out.i_bar.clone(),
            v_bar: out.v_ac.clone(),
        };
        let (y_lin, v_m_lin) = full_network_solve(plant.blocks(), &lin, &u, 1000.0).unwrap();
        assert_relative_eq!(out.v_ac[0], v_m_lin[0], max_relative = 1e-8);
        assert_relative_eq!(out.y[0], y_lin[0], max_relative = 1e-8);
        assert_relative_eq!(out.y[1], y_lin[1], max_relative = 1e-8);
    }

    #[test]
    fn static_collapse_reports_node() {
        let topo = small_topology();
        let mut plant = StaticPlant::new(&topo, 1000.0).unwrap();
        // Far beyond the deliverable power of a ~1 Ω network at 1 kV.
        plant.set_power(0, -2.0e6);
        let err = plant
            .advance(&DVector::from_element(2, 1000.0), 1e-3)
            .unwrap_err();
        match err {
            SimError::PlantCollapse { node, .. } => assert_eq!(node, "h"),
            other => panic!("expected collapse, got {other}"),
        }
    }

    #[test]
    fn dynamic_settles_to_static_solution() {
        let topo = small_topology();
        let v_nom = 1000.0;
        let mut dynamic = DynamicPlant::new(&topo, v_nom, DynamicParams::default()).unwrap();
        let v_set = DVector::from_vec(vec![1002.0, 999.0]);
        dynamic.preset_voltages(&v_set);
        dynamic.set_power(0, 30_000.0);
        let mut out = None;
        for _ in 0..40_000 {
            out = Some(dynamic.advance(&v_set, 1e-4).unwrap());
        }
        let out = out.unwrap();

        let mut static_plant = StaticPlant::new(&topo, v_nom).unwrap();
        static_plant.set_power(0, 30_000.0);
        let reference = static_plant.advance(&v_set, 1e-3).unwrap();
        assert_abs_diff_eq!(out.v_ac[0], reference.v_ac[0], epsilon = 1e-3);
        assert_abs_diff_eq!(out.y[0], reference.y[0], epsilon = 1e-2);
        assert_abs_diff_eq!(out.y[1], reference.y[1], epsilon = 1e-2);
    }
}
