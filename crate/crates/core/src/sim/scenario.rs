//! Scenario files: a TOML document that references a topology file and
//! configures cost, limits, gains, communication, plant, and schedule.
//! A scenario may instead carry an explicit reduced model (`[model]`),
//! which yields an oracle-only instance for solver work without a plant.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::comms::TriggerConfig;
use crate::controller::ControllerGains;
use crate::error::ParseError;
use crate::grid::{topology_syntax_error, GridTopology, QuasiStaticModel};
use crate::optimizer::{OperatingLimits, QuadraticCost};

use super::plant::DynamicParams;
use super::{CommMode, CostSpec, PlantKind, Scenario, ScenarioSchedule, ScheduleEvent};

/// A scenario resolved from disk.
pub enum LoadedScenario {
    Full(Box<Scenario>),
    OracleOnly(Box<OracleInstance>),
}

/// Stand-alone program instance for the reference solver.
pub struct OracleInstance {
    pub model: QuasiStaticModel,
    pub cost: QuadraticCost,
    pub limits: OperatingLimits,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    topology: Option<String>,
    v_nom: Option<f64>,
    model: Option<ModelSection>,
    cost: CostSection,
    limits: LimitsSection,
    #[serde(default)]
    gains: GainsSection,
    #[serde(default)]
    comm: CommSection,
    #[serde(default)]
    plant: PlantSection,
    #[serde(default)]
    sim: SimSection,
    #[serde(default)]
    injection: Vec<InjectionEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    k_g: Vec<Vec<f64>>,
    w: Vec<f64>,
    v_nom: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CostSection {
    template: String,
    p_y: Option<Vec<f64>>,
    q_y: Option<Vec<f64>>,
    i_star: Option<Vec<f64>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct LimitsSection {
    current_ratio_min: Option<f64>,
    current_ratio_max: Option<f64>,
    v_min_pu: Option<f64>,
    v_max_pu: Option<f64>,
    i_min: Option<Vec<f64>>,
    i_max: Option<Vec<f64>>,
    v_min: Option<Vec<f64>>,
    v_max: Option<Vec<f64>>,
    #[serde(default)]
    extra: Vec<ExtraRow>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExtraRow {
    a: Vec<f64>,
    b: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GainsSection {
    k_p: f64,
    k_d_current: f64,
    k_d_voltage: f64,
}

impl Default for GainsSection {
    fn default() -> Self {
        Self {
            k_p: 200.0,
            k_d_current: 10.0,
            k_d_voltage: 10.0,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CommSection {
    mode: String,
    period: Option<f64>,
    sigma_y: Option<f64>,
    sigma_x: Option<f64>,
    sigma_g: Option<f64>,
    t_min: Option<f64>,
    t_max: Option<f64>,
}

impl Default for CommSection {
    fn default() -> Self {
        Self {
            mode: "continuous".into(),
            period: None,
            sigma_y: None,
            sigma_x: None,
            sigma_g: None,
            t_min: None,
            t_max: None,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlantSection {
    kind: String,
    inductance_mh_per_km: Option<f64>,
    station_capacitance_f: Option<f64>,
    source_lag_s: Option<f64>,
}

impl Default for PlantSection {
    fn default() -> Self {
        Self {
            kind: "static".into(),
            inductance_mh_per_km: None,
            station_capacitance_f: None,
            source_lag_s: None,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimSection {
    step: f64,
    record_period: f64,
    duration: f64,
    activation_time: f64,
    kkt_tolerance: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            step: 1e-3,
            record_period: 1e-2,
            duration: 40.0,
            activation_time: 10.0,
            kkt_tolerance: 1e-4,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InjectionEntry {
    time: f64,
    node: String,
    power: f64,
}

fn schema_error(path: &Path, message: impl Into<String>) -> ParseError {
    ParseError::Schema {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Load and resolve a scenario file. Relative topology paths resolve
/// against the scenario file's directory.
pub fn load_scenario(path: &Path) -> Result<LoadedScenario, ParseError> {
    let text = std::fs::read_to_string(path).map_err(|source| ParseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: ScenarioFile = toml::from_str(&text)
        .map_err(|e| topology_syntax_error(&path.display().to_string(), &text, e))?;

    if let Some(model) = &file.model {
        if file.topology.is_some() {
            return Err(schema_error(
                path,
                "a scenario carries either `topology` or `[model]`, not both",
            ));
        }
        return Ok(LoadedScenario::OracleOnly(Box::new(build_oracle_instance(
            path, &file, model,
        )?)));
    }

    let topology_ref = file
        .topology
        .as_ref()
        .ok_or_else(|| schema_error(path, "missing `topology` (or `[model]`)"))?;
    let topology_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(topology_ref);
    let topology = GridTopology::load(&topology_path)?;
    let v_nom = file
        .v_nom
        .ok_or_else(|| schema_error(path, "missing `v_nom`"))?;
    if !(v_nom > 0.0) {
        return Err(schema_error(path, "v_nom must be positive"));
    }

    let n = topology.dcgfm_count();
    let i_star = topology.rated_currents(v_nom);
    let cost = build_cost_spec(path, &file.cost, n)?;
    let limits = build_limits(path, &file.limits, n, v_nom, Some(&i_star))?;
    let gains = ControllerGains::uniform(
        n,
        file.gains.k_p,
        file.gains.k_d_current,
        file.gains.k_d_voltage,
    );
    let comm = build_comm(path, &file.comm)?;
    let plant = build_plant(path, &file.plant)?;
    let schedule = ScenarioSchedule {
        events: file
            .injection
            .iter()
            .map(|e| ScheduleEvent {
                time: e.time,
                node: e.node.clone(),
                power: e.power,
            })
            .collect(),
        duration: file.sim.duration,
        activation_time: file.sim.activation_time,
    };

    let scenario = Scenario {
        topology,
        v_nom,
        cost,
        limits,
        gains,
        comm,
        plant,
        schedule,
        step: file.sim.step,
        record_period: file.sim.record_period,
        kkt_tolerance: file.sim.kkt_tolerance,
    };
    scenario
        .validate()
        .map_err(|e| schema_error(path, e.to_string()))?;
    Ok(LoadedScenario::Full(Box::new(scenario)))
}

fn build_oracle_instance(
    path: &Path,
    file: &ScenarioFile,
    model: &ModelSection,
) -> Result<OracleInstance, ParseError> {
    let n = model.w.len();
    if model.k_g.len() != n || model.k_g.iter().any(|row| row.len() != n) {
        return Err(schema_error(path, "[model] k_g must be n×n matching w"));
    }
    let k_g = DMatrix::from_fn(n, n, |i, j| model.k_g[i][j]);
    let quasi_static = QuasiStaticModel {
        k_g: k_g.clone(),
        w: DVector::from_column_slice(&model.w),
        v_nom: model.v_nom,
        near_singular: false,
    };
    let limits = build_limits(path, &file.limits, n, model.v_nom, None)?;
    let cost = match file.cost.template.as_str() {
        "loss" => QuadraticCost::loss_surrogate(&k_g),
        "quadratic" => {
            let p_y = file
                .cost
                .p_y
                .as_ref()
                .ok_or_else(|| schema_error(path, "quadratic cost needs p_y"))?;
            let q_y = file
                .cost
                .q_y
                .as_ref()
                .ok_or_else(|| schema_error(path, "quadratic cost needs q_y"))?;
            QuadraticCost::quadratic_output(p_y, q_y)
        }
        "proportional" => {
            let i_star = file.cost.i_star.as_ref().ok_or_else(|| {
                schema_error(path, "proportional cost needs i_star for a [model] scenario")
            })?;
            QuadraticCost::proportional(i_star)
        }
        other => return Err(schema_error(path, format!("unknown cost template {other}"))),
    }
    .map_err(|e| schema_error(path, e.to_string()))?;
    if cost.dim() != n {
        return Err(schema_error(path, "cost dimension does not match model"));
    }
    Ok(OracleInstance {
        model: quasi_static,
        cost,
        limits,
    })
}

fn build_cost_spec(path: &Path, section: &CostSection, n: usize) -> Result<CostSpec, ParseError> {
    match section.template.as_str() {
        "loss" => Ok(CostSpec::LossReduction),
        "proportional" => Ok(CostSpec::ProportionalCurrent),
        "quadratic" => {
            let p_y = section
                .p_y
                .clone()
                .ok_or_else(|| schema_error(path, "quadratic cost needs p_y"))?;
            let q_y = section
                .q_y
                .clone()
                .ok_or_else(|| schema_error(path, "quadratic cost needs q_y"))?;
            if p_y.len() != n || q_y.len() != n {
                return Err(schema_error(
                    path,
                    format!("cost vectors must have {n} entries"),
                ));
            }
            Ok(CostSpec::QuadraticOutput { p_y, q_y })
        }
        other => Err(schema_error(path, format!("unknown cost template {other}"))),
    }
}

fn build_limits(
    path: &Path,
    section: &LimitsSection,
    n: usize,
    v_nom: f64,
    i_star: Option<&[f64]>,
) -> Result<OperatingLimits, ParseError> {
    let expand = |label: &str, v: &Vec<f64>| -> Result<DVector<f64>, ParseError> {
        if v.len() == n {
            Ok(DVector::from_column_slice(v))
        } else {
            Err(schema_error(path, format!("{label} must have {n} entries")))
        }
    };

    let i_min = match (&section.i_min, section.current_ratio_min) {
        (Some(v), _) => expand("i_min", v)?,
        (None, Some(ratio)) => {
            let i_star = i_star
                .ok_or_else(|| schema_error(path, "current_ratio limits need a topology"))?;
            DVector::from_iterator(n, i_star.iter().map(|s| ratio * s))
        }
        (None, None) => DVector::from_element(n, f64::NEG_INFINITY),
    };
    let i_max = match (&section.i_max, section.current_ratio_max) {
        (Some(v), _) => expand("i_max", v)?,
        (None, Some(ratio)) => {
            let i_star = i_star
                .ok_or_else(|| schema_error(path, "current_ratio limits need a topology"))?;
            DVector::from_iterator(n, i_star.iter().map(|s| ratio * s))
        }
        (None, None) => DVector::from_element(n, f64::INFINITY),
    };
    let v_min = match (&section.v_min, section.v_min_pu) {
        (Some(v), _) => expand("v_min", v)?,
        (None, Some(pu)) => DVector::from_element(n, pu * v_nom),
        (None, None) => DVector::from_element(n, f64::NEG_INFINITY),
    };
    let v_max = match (&section.v_max, section.v_max_pu) {
        (Some(v), _) => expand("v_max", v)?,
        (None, Some(pu)) => DVector::from_element(n, pu * v_nom),
        (None, None) => DVector::from_element(n, f64::INFINITY),
    };

    let mut limits = OperatingLimits::new(i_min, i_max, v_min, v_max)
        .map_err(|e| schema_error(path, e.to_string()))?;
    if !section.extra.is_empty() {
        let rows = section.extra.len();
        let mut a = DMatrix::zeros(rows, n);
        let mut b = DVector::zeros(rows);
        for (j, row) in section.extra.iter().enumerate() {
            if row.a.len() != n {
                return Err(schema_error(
                    path,
                    format!("extra constraint row {j} must have {n} coefficients"),
                ));
            }
            for (k, &coeff) in row.a.iter().enumerate() {
                a[(j, k)] = coeff;
            }
            b[j] = row.b;
        }
        limits = limits
            .with_extra(a, b)
            .map_err(|e| schema_error(path, e.to_string()))?;
    }
    Ok(limits)
}

fn build_comm(path: &Path, section: &CommSection) -> Result<CommMode, ParseError> {
    match section.mode.as_str() {
        "continuous" => Ok(CommMode::Continuous),
        "periodic" => Ok(CommMode::Periodic {
            period: section.period.unwrap_or(0.01),
        }),
        "event" => Ok(CommMode::Event {
            config: TriggerConfig {
                sigma_y: section.sigma_y.unwrap_or(5.0),
                sigma_x: section.sigma_x.unwrap_or(20.0),
                sigma_g: section.sigma_g.unwrap_or(1e-4),
                t_min: section.t_min.unwrap_or(0.01),
                t_max: section.t_max.unwrap_or(1.0),
            },
        }),
        other => Err(schema_error(path, format!("unknown comm mode {other}"))),
    }
}

fn build_plant(path: &Path, section: &PlantSection) -> Result<PlantKind, ParseError> {
    match section.kind.as_str() {
        "static" => Ok(PlantKind::Static),
        "dynamic" => {
            let defaults = DynamicParams::default();
            Ok(PlantKind::Dynamic(DynamicParams {
                inductance_per_km: section
                    .inductance_mh_per_km
                    .map(|mh| mh * 1e-3)
                    .unwrap_or(defaults.inductance_per_km),
                station_capacitance: section
                    .station_capacitance_f
                    .unwrap_or(defaults.station_capacitance),
                source_lag: section.source_lag_s.unwrap_or(defaults.source_lag),
            }))
        }
        other => Err(schema_error(path, format!("unknown plant kind {other}"))),
    }
}
