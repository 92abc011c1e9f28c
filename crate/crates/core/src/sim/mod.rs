//! Closed-loop experiment orchestration: scenario configuration, plant
//! models, the fixed-step simulation engine, and trajectory recording.

mod engine;
mod plant;
mod scenario;

pub use engine::{
    droop_operating_point, run_case_study, ClosedLoopSim, RunArtifacts, RunSummary,
    TrajectoryRecord,
};
pub use plant::{DynamicParams, DynamicPlant, Plant, PlantOutput, StaticPlant};
pub use scenario::{load_scenario, LoadedScenario, OracleInstance};

use nalgebra::DVector;

use crate::comms::TriggerConfig;
use crate::controller::{ControllerGains, CostModel};
use crate::error::SimError;
use crate::grid::{GridTopology, QuasiStaticModel};
use crate::optimizer::{OperatingLimits, QuadraticCost};

/// A scheduled change of one ac-GFM station's power injection.
#[derive(Debug, Clone)]
pub struct ScheduleEvent {
    pub time: f64,
    pub node: String,
    /// Injected dc-side power [W]; negative values consume.
    pub power: f64,
}

/// Piecewise-constant injection schedule plus the controller timeline.
#[derive(Debug, Clone)]
pub struct ScenarioSchedule {
    pub events: Vec<ScheduleEvent>,
    pub duration: f64,
    pub activation_time: f64,
}

impl ScenarioSchedule {
    pub fn validate(&self, topology: &GridTopology) -> Result<(), SimError> {
        if !(self.duration > 0.0) {
            return Err(SimError::InvalidScenario("duration must be positive".into()));
        }
        if !(self.activation_time >= 0.0 && self.activation_time < self.duration) {
            return Err(SimError::InvalidScenario(
                "activation time must lie inside the run".into(),
            ));
        }
        let mut previous = f64::NEG_INFINITY;
        for event in &self.events {
            if event.time < previous {
                return Err(SimError::InvalidScenario(
                    "schedule times must be nondecreasing".into(),
                ));
            }
            previous = event.time;
            let index = topology.node_index(&event.node);
            let is_ac = index.map_or(false, |i| i >= topology.dcgfm_count());
            if !is_ac {
                return Err(SimError::InvalidScenario(format!(
                    "schedule event at t = {} targets {}, which is not an ac-GFM node",
                    event.time, event.node
                )));
            }
        }
        Ok(())
    }

    /// Times at which the injection pattern changes after activation;
    /// these delimit the segments used for convergence accounting.
    pub fn segment_boundaries(&self) -> Vec<f64> {
        let mut boundaries = vec![self.activation_time];
        for event in &self.events {
            if event.time > self.activation_time && Some(&event.time) != boundaries.last() {
                boundaries.push(event.time);
            }
        }
        boundaries
    }
}

/// Communication layout between the stations and the controller.
#[derive(Debug, Clone)]
pub enum CommMode {
    /// Fresh values every integrator step.
    Continuous,
    /// Sample-and-hold on a fixed cadence [s].
    Periodic { period: f64 },
    /// Event-triggered sample-and-hold.
    Event { config: TriggerConfig },
}

impl CommMode {
    pub fn label(&self) -> &'static str {
        match self {
            CommMode::Continuous => "continuous",
            CommMode::Periodic { .. } => "periodic",
            CommMode::Event { .. } => "event",
        }
    }
}

/// Which plant the loop closes against.
#[derive(Debug, Clone)]
pub enum PlantKind {
    Static,
    Dynamic(DynamicParams),
}

/// Cost template resolved per scenario.
#[derive(Debug, Clone)]
pub enum CostSpec {
    /// ½uᵀK_G·u with the online sensitivity matrix.
    LossReduction,
    /// ½yᵀdiag(p_y)·y + q_yᵀy.
    QuadraticOutput { p_y: Vec<f64>, q_y: Vec<f64> },
    /// (1000/2)·Σ y_i²/I*_i with I* the rated currents.
    ProportionalCurrent,
}

impl CostSpec {
    pub fn label(&self) -> &'static str {
        match self {
            CostSpec::LossReduction => "loss",
            CostSpec::QuadraticOutput { .. } => "quadratic",
            CostSpec::ProportionalCurrent => "proportional",
        }
    }

    /// Gradient callback for the controller.
    pub fn controller_cost(&self, i_star: &[f64]) -> CostModel {
        match self {
            CostSpec::LossReduction => CostModel::LossSurrogate,
            CostSpec::QuadraticOutput { p_y, q_y } => CostModel::QuadraticOutput {
                p_y: DVector::from_column_slice(p_y),
                q_y: DVector::from_column_slice(q_y),
            },
            CostSpec::ProportionalCurrent => CostModel::ProportionalCurrent {
                i_star: DVector::from_column_slice(i_star),
            },
        }
    }

    /// Fixed quadratic cost for the oracle at a given linearization.
    pub fn oracle_cost(
        &self,
        model: &QuasiStaticModel,
        i_star: &[f64],
    ) -> Result<QuadraticCost, SimError> {
        let cost = match self {
            CostSpec::LossReduction => QuadraticCost::loss_surrogate(&model.k_g),
            CostSpec::QuadraticOutput { p_y, q_y } => QuadraticCost::quadratic_output(p_y, q_y),
            CostSpec::ProportionalCurrent => QuadraticCost::proportional(i_star),
        };
        cost.map_err(SimError::Optimizer)
    }
}

/// A fully resolved closed-loop experiment.
#[derive(Clone)]
pub struct Scenario {
    pub topology: GridTopology,
    pub v_nom: f64,
    pub cost: CostSpec,
    pub limits: OperatingLimits,
    pub gains: ControllerGains,
    pub comm: CommMode,
    pub plant: PlantKind,
    pub schedule: ScenarioSchedule,
    /// Integrator step [s].
    pub step: f64,
    /// Recording period [s].
    pub record_period: f64,
    /// Relative KKT tolerance that counts as convergence for exit status.
    pub kkt_tolerance: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        self.schedule.validate(&self.topology)?;
        self.gains.validate().map_err(SimError::Grid)?;
        if !(self.step > 0.0) {
            return Err(SimError::InvalidScenario("step must be positive".into()));
        }
        if self.record_period < self.step {
            return Err(SimError::InvalidScenario(
                "recording period must be at least one step".into(),
            ));
        }
        if let CommMode::Event { config } = &self.comm {
            config.validate()?;
            if self.step > config.t_min {
                return Err(SimError::InvalidScenario(format!(
                    "step {} must not exceed T_min {}",
                    self.step, config.t_min
                )));
            }
        }
        if let CommMode::Periodic { period } = &self.comm {
            if *period < self.step {
                return Err(SimError::InvalidScenario(
                    "sampling period must be at least one step".into(),
                ));
            }
        }
        let n = self.topology.dcgfm_count();
        if self.limits.dim() != n {
            return Err(SimError::InvalidScenario(format!(
                "limits are {}-dimensional but the grid has {} dc-GFM stations",
                self.limits.dim(),
                n
            )));
        }
        self.limits
            .validate_nominal(self.v_nom)
            .map_err(SimError::Optimizer)?;
        if let CostSpec::QuadraticOutput { p_y, q_y } = &self.cost {
            if p_y.len() != n || q_y.len() != n {
                return Err(SimError::InvalidScenario(
                    "cost coefficient vectors must match the dc-GFM station count".into(),
                ));
            }
        }
        Ok(())
    }

    /// Rated currents I* = S*/V_nom of the dc-GFM stations.
    pub fn rated_currents(&self) -> Vec<f64> {
        self.topology.rated_currents(self.v_nom)
    }

    /// Droop gains R_d = 0.05·V_nom/I* used by the pre-activation phase
    /// and the droop baseline.
    pub fn droop_gains(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.topology.dcgfm_count(),
            self.rated_currents()
                .iter()
                .map(|i_star| 0.05 * self.v_nom / i_star),
        )
    }
}
