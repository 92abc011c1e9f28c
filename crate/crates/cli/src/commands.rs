use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use mtdc_core::batch::batch_map;
use mtdc_core::comms::TriggerConfig;
use mtdc_core::error::{OptimizerError, SimError};
use mtdc_core::grid::{kron_reduce, AcGfmLinearization, GridTopology};
use mtdc_core::optimizer::{reference_qp_solve, KktPoint};
use mtdc_core::sim::{
    load_scenario, run_case_study, CommMode, LoadedScenario, OracleInstance, PlantKind,
    RunArtifacts, Scenario, StaticPlant, Plant,
};

use crate::{
    CaseName, CommChoice, CompareArgs, OracleArgs, Overrides, PlantChoice, RunArgs,
    ScenarioSource, ValidateArgs,
};

const EXIT_OK: u8 = 0;
const EXIT_INVALID: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_PLANT_COLLAPSE: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;

const TOPOLOGY_ASSET: (&str, &str) = (
    "replica12.topo.toml",
    include_str!("../../../assets/replica12.topo.toml"),
);
const CASE_ASSETS: [(&str, &str); 3] = [
    (
        "case_loss.scn.toml",
        include_str!("../../../assets/case_loss.scn.toml"),
    ),
    (
        "case_quadratic.scn.toml",
        include_str!("../../../assets/case_quadratic.scn.toml"),
    ),
    (
        "case_proportional.scn.toml",
        include_str!("../../../assets/case_proportional.scn.toml"),
    ),
];

fn fail(code: u8, message: impl std::fmt::Display) -> u8 {
    eprintln!("error: {message}");
    code
}

fn sim_error_code(err: &SimError) -> u8 {
    match err {
        SimError::PlantCollapse { .. } => EXIT_PLANT_COLLAPSE,
        SimError::Optimizer(OptimizerError::Infeasible { .. }) => EXIT_INFEASIBLE,
        _ => EXIT_INVALID,
    }
}

/// Write the bundled assets next to the outputs and return the scenario
/// path for the requested case.
fn materialize_case(case: CaseName, out: &Path) -> std::io::Result<PathBuf> {
    let dir = out.join("assets");
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(TOPOLOGY_ASSET.0), TOPOLOGY_ASSET.1)?;
    for (name, text) in CASE_ASSETS {
        fs::write(dir.join(name), text)?;
    }
    let name = match case {
        CaseName::Loss => CASE_ASSETS[0].0,
        CaseName::Quadratic => CASE_ASSETS[1].0,
        CaseName::Proportional => CASE_ASSETS[2].0,
    };
    Ok(dir.join(name))
}

fn resolve_scenario(source: &ScenarioSource, out: &Path) -> Result<LoadedScenario, (u8, String)> {
    let path = match (&source.scenario, source.case) {
        (Some(path), _) => path.clone(),
        (None, Some(case)) => materialize_case(case, out)
            .map_err(|e| (EXIT_INVALID, format!("cannot write bundled assets: {e}")))?,
        (None, None) => {
            return Err((
                EXIT_INVALID,
                "either --scenario or --case is required".into(),
            ))
        }
    };
    load_scenario(&path).map_err(|e| (EXIT_INVALID, e.to_string()))
}

fn event_config_from(scenario: &Scenario, overrides: &Overrides) -> TriggerConfig {
    let base = match &scenario.comm {
        CommMode::Event { config } => *config,
        _ => TriggerConfig {
            sigma_y: 5.0,
            sigma_x: 20.0,
            sigma_g: 1e-4,
            t_min: 0.01,
            t_max: 1.0,
        },
    };
    TriggerConfig {
        sigma_y: overrides.sigma_y.unwrap_or(base.sigma_y),
        sigma_x: overrides.sigma_x.unwrap_or(base.sigma_x),
        sigma_g: overrides.sigma_g.unwrap_or(base.sigma_g),
        t_min: overrides.t_min.unwrap_or(base.t_min),
        t_max: overrides.t_max.unwrap_or(base.t_max),
    }
}

fn apply_overrides(scenario: &mut Scenario, overrides: &Overrides) {
    let event_config = event_config_from(scenario, overrides);
    if let Some(choice) = overrides.comm {
        scenario.comm = match choice {
            CommChoice::Continuous => CommMode::Continuous,
            CommChoice::Periodic => CommMode::Periodic {
                period: overrides.period.unwrap_or(0.01),
            },
            CommChoice::Event => CommMode::Event {
                config: event_config,
            },
        };
    } else if let CommMode::Event { config } = &mut scenario.comm {
        *config = event_config;
    } else if let (CommMode::Periodic { period }, Some(p)) =
        (&mut scenario.comm, overrides.period)
    {
        *period = p;
    }
    if let Some(choice) = overrides.plant {
        scenario.plant = match choice {
            PlantChoice::Static => PlantKind::Static,
            PlantChoice::Dynamic => PlantKind::Dynamic(Default::default()),
        };
    }
    if let Some(duration) = overrides.duration {
        scenario.schedule.duration = duration;
    }
    let n = scenario.topology.dcgfm_count();
    if let Some(k_p) = overrides.k_p {
        scenario.gains.k_p = DVector::from_element(n, k_p);
    }
    if let Some(k) = overrides.k_d_current {
        scenario.gains.k_d_current = DVector::from_element(n, k);
    }
    if let Some(k) = overrides.k_d_voltage {
        scenario.gains.k_d_voltage = DVector::from_element(n, k);
    }
}

fn write_artifacts(artifacts: &RunArtifacts, out: &Path) -> std::io::Result<()> {
    fs::create_dir_all(out)?;
    let mut trajectory = fs::File::create(out.join("trajectory.csv"))?;
    artifacts.record.write_csv(&mut trajectory)?;
    let mut summary = fs::File::create(out.join("summary.txt"))?;
    artifacts.summary.write_text(&mut summary)?;
    let mut triggers = fs::File::create(out.join("triggers.csv"))?;
    artifacts.write_trigger_csv(&mut triggers)?;
    Ok(())
}

pub(crate) fn run(args: RunArgs) -> u8 {
    let loaded = match resolve_scenario(&args.source, &args.out) {
        Ok(loaded) => loaded,
        Err((code, message)) => return fail(code, message),
    };
    let mut scenario = match loaded {
        LoadedScenario::Full(s) => *s,
        LoadedScenario::OracleOnly(_) => {
            return fail(
                EXIT_INVALID,
                "this scenario has no plant ([model] form); use `mtdc oracle`",
            )
        }
    };
    apply_overrides(&mut scenario, &args.overrides);
    if let Err(e) = scenario.validate() {
        return fail(EXIT_INVALID, e);
    }

    match run_case_study(scenario) {
        Ok(artifacts) => {
            if let Err(e) = write_artifacts(&artifacts, &args.out) {
                return fail(EXIT_INVALID, format!("cannot write outputs: {e}"));
            }
            let mut stdout = std::io::stdout().lock();
            let _ = artifacts.summary.write_text(&mut stdout);
            println!("artifacts written to {}", args.out.display());
            if artifacts.summary.converged {
                EXIT_OK
            } else {
                eprintln!(
                    "not converged: terminal relative KKT residual {:.3e}",
                    artifacts.summary.terminal_kkt_relative
                );
                EXIT_NOT_CONVERGED
            }
        }
        Err(e) => fail(sim_error_code(&e), e),
    }
}

fn print_kkt_point(point: &KktPoint) {
    let join = |v: &DVector<f64>| {
        v.iter()
            .map(|x| format!("{x:.9e}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    println!("u_star = {}", join(&point.u));
    println!("y_star = {}", join(&point.y));
    println!("zeta_max = {}", join(&point.zeta_max));
    println!("zeta_min = {}", join(&point.zeta_min));
    println!("lambda_max = {}", join(&point.lambda_max));
    println!("lambda_min = {}", join(&point.lambda_min));
    if let Some(extra) = &point.extra_duals {
        println!("extra_duals = {}", join(extra));
    }
    let r = &point.residuals;
    println!("stationarity = {:.9e}", r.stationarity);
    println!("complementarity = {:.9e}", r.complementarity);
    println!("feasibility = {:.9e}", r.feasibility);
    println!("dual_negativity = {:.9e}", r.dual_negativity);
    println!("kkt_relative = {:.9e}", r.max_relative());
}

/// Build the oracle instance of a full scenario: all schedule events
/// applied, plant solved at nominal setpoints, model linearized there.
fn full_scenario_instance(scenario: &Scenario) -> Result<OracleInstance, SimError> {
    let mut plant = StaticPlant::new(&scenario.topology, scenario.v_nom)?;
    let n = scenario.topology.dcgfm_count();
    for event in &scenario.schedule.events {
        let index = scenario
            .topology
            .node_index(&event.node)
            .expect("validated");
        plant.set_power(index - n, event.power);
    }
    let out = plant.advance(&DVector::from_element(n, scenario.v_nom), 0.0)?;
    let lin = AcGfmLinearization::from_power(plant.powers().as_slice(), out.v_ac.as_slice())
        .map_err(SimError::Grid)?;
    let model = kron_reduce(plant.blocks(), &lin, scenario.v_nom).map_err(SimError::Grid)?;
    let i_star = scenario.rated_currents();
    let cost = scenario.cost.oracle_cost(&model, &i_star)?;
    Ok(OracleInstance {
        model,
        cost,
        limits: scenario.limits.clone(),
    })
}

pub(crate) fn oracle(args: OracleArgs) -> u8 {
    let out = PathBuf::from("out");
    let loaded = match resolve_scenario(&args.source, &out) {
        Ok(loaded) => loaded,
        Err((code, message)) => return fail(code, message),
    };
    let instance = match loaded {
        LoadedScenario::OracleOnly(instance) => *instance,
        LoadedScenario::Full(scenario) => match full_scenario_instance(&scenario) {
            Ok(instance) => instance,
            Err(e) => return fail(sim_error_code(&e), e),
        },
    };
    match reference_qp_solve(&instance.cost, &instance.limits, &instance.model) {
        Ok(point) => {
            print_kkt_point(&point);
            if point.residuals.max_relative() < 1e-6 {
                EXIT_OK
            } else {
                eprintln!("solver did not certify optimality to 1e-6");
                EXIT_NOT_CONVERGED
            }
        }
        Err(OptimizerError::Infeasible {
            constraint,
            violation,
        }) => fail(
            EXIT_INFEASIBLE,
            format!("infeasible: {constraint} violated by {violation:.6e}"),
        ),
        Err(e) => fail(EXIT_INVALID, e),
    }
}

pub(crate) fn compare_comm(args: CompareArgs) -> u8 {
    let loaded = match resolve_scenario(&args.source, &args.out) {
        Ok(loaded) => loaded,
        Err((code, message)) => return fail(code, message),
    };
    let mut scenario = match loaded {
        LoadedScenario::Full(s) => *s,
        LoadedScenario::OracleOnly(_) => {
            return fail(EXIT_INVALID, "compare-comm needs a full scenario")
        }
    };
    apply_overrides(&mut scenario, &args.overrides);
    let event_config = event_config_from(&scenario, &args.overrides);
    let period = args.overrides.period.unwrap_or(0.01);

    let mut periodic = scenario.clone();
    periodic.comm = CommMode::Periodic { period };
    let mut event = scenario.clone();
    event.comm = CommMode::Event {
        config: event_config,
    };
    if let Err(e) = periodic.validate() {
        return fail(EXIT_INVALID, e);
    }
    if let Err(e) = event.validate() {
        return fail(EXIT_INVALID, e);
    }

    // Paired runs share no state; evaluate them as one batch.
    let mut results = batch_map(vec![periodic, event], run_case_study);
    let event_run = results.pop().expect("two runs");
    let periodic_run = results.pop().expect("two runs");
    let (periodic_run, event_run) = match (periodic_run, event_run) {
        (Ok(p), Ok(e)) => (p, e),
        (Err(e), _) | (_, Err(e)) => return fail(sim_error_code(&e), e),
    };

    let delta_u = (&event_run.summary.terminal_u - &periodic_run.summary.terminal_u).amax();
    let delta_y = (&event_run.summary.terminal_y - &periodic_run.summary.terminal_y).amax();
    let bound = args.bound.unwrap_or(2.0 * event_config.sigma_x);

    println!("terminal_delta_u_v = {delta_u:.9e}");
    println!("terminal_delta_y_a = {delta_y:.9e}");
    println!("bound_v = {bound:.9e}");
    for (label, run) in [("periodic", &periodic_run), ("event", &event_run)] {
        for kind in [
            mtdc_core::comms::ChannelKind::PrimalState,
            mtdc_core::comms::ChannelKind::OutputCurrent,
            mtdc_core::comms::ChannelKind::AcConductance,
        ] {
            println!(
                "triggers_{label}_{} = {}",
                kind.label(),
                run.summary.trigger_report.total_fires(kind)
            );
        }
    }

    if let Err(e) = fs::create_dir_all(&args.out).and_then(|_| {
        use std::io::Write;
        let mut report = fs::File::create(args.out.join("compare_comm.txt"))?;
        writeln!(report, "terminal_delta_u_v = {delta_u:.9e}")?;
        writeln!(report, "terminal_delta_y_a = {delta_y:.9e}")?;
        writeln!(report, "bound_v = {bound:.9e}")?;
        for (label, run) in [("periodic", &periodic_run), ("event", &event_run)] {
            for channel in &run.summary.trigger_report.channels {
                writeln!(
                    report,
                    "triggers_{label}_{}_{} = {}",
                    channel.kind.label(),
                    channel.node,
                    channel.fires
                )?;
            }
        }
        Ok(())
    }) {
        return fail(EXIT_INVALID, format!("cannot write report: {e}"));
    }

    if delta_u <= bound {
        EXIT_OK
    } else {
        eprintln!("terminal difference {delta_u:.3e} V exceeds bound {bound:.3e} V");
        EXIT_NOT_CONVERGED
    }
}

pub(crate) fn validate(args: ValidateArgs) -> u8 {
    if args.topology.is_none() && args.scenario.is_none() {
        return fail(EXIT_INVALID, "provide --topology and/or --scenario");
    }
    if let Some(path) = &args.topology {
        match GridTopology::load(path) {
            Ok(topology) => println!(
                "topology ok: {} dc-GFM, {} ac-GFM, {} lines",
                topology.dcgfm_count(),
                topology.acgfm_count(),
                topology.lines().len()
            ),
            Err(e) => return fail(EXIT_INVALID, e),
        }
    }
    if let Some(path) = &args.scenario {
        match load_scenario(path) {
            Ok(LoadedScenario::Full(scenario)) => println!(
                "scenario ok: case {}, comm {}, {} events, duration {} s",
                scenario.cost.label(),
                scenario.comm.label(),
                scenario.schedule.events.len(),
                scenario.schedule.duration
            ),
            Ok(LoadedScenario::OracleOnly(instance)) => println!(
                "oracle instance ok: {} stations",
                instance.model.dim()
            ),
            Err(e) => return fail(EXIT_INVALID, e),
        }
    }
    EXIT_OK
}
