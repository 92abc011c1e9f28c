//! Fixed-step closed-loop simulation: schedule application, plant solve,
//! sample-and-hold communication, one controller step, setpoint delivery.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::comms::{ChannelKind, SampledChannel, TriggerReport};
use crate::controller::{
    construct_sensitivity, lyapunov_value, rk4_step, ControllerState, CostModel,
};
use crate::error::SimError;
use crate::grid::{
    droop_steady_state, kron_reduce, loss_from_voltages, AcGfmLinearization, ConductanceBlocks,
    GridTopology, QuasiStaticModel,
};
use crate::optimizer::{
    kkt_residual, reference_qp_solve, KktPoint, KktResiduals, OperatingLimits,
};

use super::plant::{DynamicPlant, Plant, PlantOutput, StaticPlant};
use super::{CommMode, CostSpec, PlantKind, Scenario};

struct Channels {
    y: Vec<SampledChannel>,
    x_p: Vec<SampledChannel>,
    g_p: Vec<SampledChannel>,
}

/// One closed-loop experiment in progress.
pub struct ClosedLoopSim {
    scenario: Scenario,
    plant: Box<dyn Plant>,
    blocks: ConductanceBlocks,
    cost_model: CostModel,
    r_d: DVector<f64>,
    /// Relaxation of the quasi-static droop feedback before activation;
    /// sized from ‖R_d·K_G‖∞ so the fixed-point iteration contracts.
    droop_relaxation: f64,
    state: ControllerState,
    k_g: DMatrix<f64>,
    u_applied: DVector<f64>,
    held_y: DVector<f64>,
    held_g_p: DVector<f64>,
    channels: Option<Channels>,
    next_event: usize,
    step_index: usize,
    active: bool,
    last_output: Option<PlantOutput>,
}

impl ClosedLoopSim {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let n = scenario.topology.dcgfm_count();
        let m = scenario.topology.acgfm_count();
        let plant: Box<dyn Plant> = match &scenario.plant {
            PlantKind::Static => Box::new(StaticPlant::new(&scenario.topology, scenario.v_nom)?),
            PlantKind::Dynamic(params) => {
                let mut plant = DynamicPlant::new(&scenario.topology, scenario.v_nom, *params)?;
                plant.preset_voltages(&DVector::from_element(n, scenario.v_nom));
                Box::new(plant)
            }
        };
        let blocks = plant.blocks().clone();
        let (k_g, _) = construct_sensitivity(&blocks, &DVector::zeros(m))?;
        let i_star = scenario.rated_currents();
        let cost_model = scenario.cost.controller_cost(&i_star);
        let r_d = scenario.droop_gains();
        // Row-sum norm of R_d·K_G at zero load conductance bounds the loop
        // gain (the Schur complement only shrinks as G_P grows).
        let mut loop_gain = 0.0_f64;
        for i in 0..n {
            let row_sum: f64 = (0..n).map(|j| k_g[(i, j)].abs()).sum();
            loop_gain = loop_gain.max(r_d[i] * row_sum);
        }
        let droop_relaxation = 1.0 / (1.0 + loop_gain);
        Ok(Self {
            scenario,
            plant,
            blocks,
            cost_model,
            r_d,
            droop_relaxation,
            state: ControllerState::zero(n),
            k_g,
            u_applied: DVector::zeros(n),
            held_y: DVector::zeros(n),
            held_g_p: DVector::zeros(m),
            channels: None,
            next_event: 0,
            step_index: 0,
            active: false,
            last_output: None,
        })
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.scenario.step
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn applied_setpoints(&self) -> &DVector<f64> {
        &self.u_applied
    }

    pub fn last_output(&self) -> Option<&PlantOutput> {
        self.last_output.as_ref()
    }

    pub fn sensitivity(&self) -> &DMatrix<f64> {
        &self.k_g
    }

    pub fn all_channels(&self) -> Vec<SampledChannel> {
        match &self.channels {
            None => Vec::new(),
            Some(ch) => ch
                .y
                .iter()
                .chain(ch.x_p.iter())
                .chain(ch.g_p.iter())
                .cloned()
                .collect(),
        }
    }

    fn apply_due_events(&mut self, now: f64) {
        let n = self.scenario.topology.dcgfm_count();
        while self.next_event < self.scenario.schedule.events.len() {
            let event = &self.scenario.schedule.events[self.next_event];
            if event.time > now + 1e-12 {
                break;
            }
            let index = self
                .scenario
                .topology
                .node_index(&event.node)
                .expect("validated");
            self.plant.set_power(index - n, event.power);
            self.next_event += 1;
        }
    }

    /// Advance one step of `h`. Returns the plant output of this step.
    pub fn step(&mut self) -> Result<PlantOutput, SimError> {
        let h = self.scenario.step;
        let now = self.time();
        self.apply_due_events(now);

        if !self.active && now + 1e-12 >= self.scenario.schedule.activation_time {
            // Hand-over: setpoints snap to nominal, duals start at zero.
            self.active = true;
            self.state = ControllerState::zero(self.state.dim());
            self.u_applied.fill(0.0);
        }

        let v_set = self.u_applied.add_scalar(self.scenario.v_nom);
        let out = self.plant.advance(&v_set, h)?;

        if self.active {
            self.communicate_measurements(&out, now)?;
            self.state = rk4_step(
                &self.state,
                &self.held_y,
                &self.k_g,
                &self.scenario.gains,
                &self.cost_model,
                &self.scenario.limits,
                self.scenario.v_nom,
                h,
            );
            self.communicate_setpoints(now);
        } else {
            // Droop-only phase: relaxed quasi-static feedback u = −R_d·y.
            let target = -self.r_d.component_mul(&out.y);
            self.u_applied
                .axpy(self.droop_relaxation, &(target - &self.u_applied), 1.0);
        }

        self.step_index += 1;
        self.last_output = Some(out.clone());
        Ok(out)
    }

    fn communicate_measurements(&mut self, out: &PlantOutput, now: f64) -> Result<(), SimError> {
        match &self.scenario.comm {
            CommMode::Continuous => {
                self.held_y.copy_from(&out.y);
                self.held_g_p.copy_from(&out.g_p);
                let (k_g, _) = construct_sensitivity(&self.blocks, &self.held_g_p)?;
                self.k_g = k_g;
            }
            CommMode::Periodic { .. } | CommMode::Event { .. } => {
                if self.channels.is_none() {
                    self.init_channels(out, now)?;
                    return Ok(());
                }
                let mut g_p_fired = false;
                let comm = self.scenario.comm.clone();
                let channels = self.channels.as_mut().expect("initialized above");
                for (i, channel) in channels.y.iter_mut().enumerate() {
                    fire(channel, out.y[i], now, &comm);
                    self.held_y[i] = channel.held_value();
                }
                for (j, channel) in channels.g_p.iter_mut().enumerate() {
                    if fire(channel, out.g_p[j], now, &comm) {
                        g_p_fired = true;
                    }
                    self.held_g_p[j] = channel.held_value();
                }
                if g_p_fired {
                    let (k_g, _) = construct_sensitivity(&self.blocks, &self.held_g_p)?;
                    self.k_g = k_g;
                }
            }
        }
        Ok(())
    }

    fn communicate_setpoints(&mut self, now: f64) {
        match &self.scenario.comm {
            CommMode::Continuous => self.u_applied.copy_from(&self.state.x_p),
            CommMode::Periodic { .. } | CommMode::Event { .. } => {
                let comm = self.scenario.comm.clone();
                if let Some(channels) = self.channels.as_mut() {
                    for (i, channel) in channels.x_p.iter_mut().enumerate() {
                        fire(channel, self.state.x_p[i], now, &comm);
                        self.u_applied[i] = channel.held_value();
                    }
                }
            }
        }
    }

    /// The first sample of every channel fires at activation time.
    fn init_channels(&mut self, out: &PlantOutput, now: f64) -> Result<(), SimError> {
        let topo = &self.scenario.topology;
        let y = topo
            .dcgfm_ids()
            .iter()
            .enumerate()
            .map(|(i, id)| SampledChannel::activate(ChannelKind::OutputCurrent, id.clone(), out.y[i], now))
            .collect();
        let x_p = topo
            .dcgfm_ids()
            .iter()
            .enumerate()
            .map(|(i, id)| {
                SampledChannel::activate(ChannelKind::PrimalState, id.clone(), self.state.x_p[i], now)
            })
            .collect();
        let g_p = topo
            .acgfm_ids()
            .iter()
            .enumerate()
            .map(|(j, id)| {
                SampledChannel::activate(ChannelKind::AcConductance, id.clone(), out.g_p[j], now)
            })
            .collect();
        self.channels = Some(Channels { y, x_p, g_p });
        self.held_y.copy_from(&out.y);
        self.held_g_p.copy_from(&out.g_p);
        let (k_g, _) = construct_sensitivity(&self.blocks, &self.held_g_p)?;
        self.k_g = k_g;
        Ok(())
    }
}

fn fire(channel: &mut SampledChannel, value: f64, now: f64, comm: &CommMode) -> bool {
    match comm {
        CommMode::Continuous => unreachable!("continuous mode bypasses channels"),
        CommMode::Periodic { period } => channel.periodic_trigger(value, now, *period),
        CommMode::Event { config } => channel.maybe_trigger(value, now, config),
    }
}

/// Uniformly sampled trajectory of one run.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub u: Vec<DVector<f64>>,
    pub x_p: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub v_dc: Vec<DVector<f64>>,
    pub v_ac: Vec<DVector<f64>>,
    /// Stacked duals (ζmax, ζmin, λmax, λmin).
    pub duals: Vec<DVector<f64>>,
    pub g_p: Vec<DVector<f64>>,
    pub loss: Vec<f64>,
    /// Weighted distance to the segment optimum; NaN before activation.
    pub lyapunov: Vec<f64>,
    /// Schedule segment index after activation; usize::MAX before.
    pub segment: Vec<usize>,
    /// Per-segment oracle solutions at the segment-end linearization.
    pub segment_oracles: Vec<Option<KktPoint>>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with one row per recording tick. Column order: time_s,
    /// u_1..n, xp_1..n, y_1..n, vdc_1..n, vac_1..m, zmax_1..n, zmin_1..n,
    /// lmax_1..n, lmin_1..n, gp_1..m, loss_w, lyapunov, segment.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        if self.is_empty() {
            return Ok(());
        }
        let n = self.u[0].len();
        let m = self.v_ac[0].len();
        write!(out, "time_s")?;
        for prefix in ["u", "xp", "y", "vdc"] {
            for i in 1..=n {
                write!(out, ",{prefix}_{i}")?;
            }
        }
        for i in 1..=m {
            write!(out, ",vac_{i}")?;
        }
        for prefix in ["zmax", "zmin", "lmax", "lmin"] {
            for i in 1..=n {
                write!(out, ",{prefix}_{i}")?;
            }
        }
        for i in 1..=m {
            write!(out, ",gp_{i}")?;
        }
        writeln!(out, ",loss_w,lyapunov,segment")?;

        for k in 0..self.len() {
            write!(out, "{:.9e}", self.times[k])?;
            for v in [&self.u[k], &self.x_p[k], &self.y[k], &self.v_dc[k]] {
                for x in v.iter() {
                    write!(out, ",{x:.9e}")?;
                }
            }
            for x in self.v_ac[k].iter() {
                write!(out, ",{x:.9e}")?;
            }
            for x in self.duals[k].iter() {
                write!(out, ",{x:.9e}")?;
            }
            for x in self.g_p[k].iter() {
                write!(out, ",{x:.9e}")?;
            }
            let segment = if self.segment[k] == usize::MAX {
                String::from("-")
            } else {
                self.segment[k].to_string()
            };
            writeln!(out, ",{:.9e},{:.9e},{segment}", self.loss[k], self.lyapunov[k])?;
        }
        Ok(())
    }
}

/// Terminal figures of one run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub case: String,
    pub comm: String,
    pub terminal_time: f64,
    pub terminal_u: DVector<f64>,
    pub terminal_y: DVector<f64>,
    pub oracle_u: DVector<f64>,
    pub oracle_y: DVector<f64>,
    /// ‖u − u*‖∞ against the oracle at the terminal linearization.
    pub oracle_gap: f64,
    pub terminal_kkt: KktResiduals,
    pub terminal_kkt_relative: f64,
    /// Worst voltage-box violation relative to the box range.
    pub voltage_violation: f64,
    /// Worst current-box violation relative to the box range.
    pub current_violation: f64,
    pub loss_terminal: f64,
    pub loss_droop: f64,
    /// Relative spread of marginal costs across unsaturated stations
    /// (quadratic case only).
    pub marginal_cost_spread: Option<f64>,
    /// Relative spread of y_i/I*_i across unsaturated stations
    /// (proportional case only).
    pub current_ratio_spread: Option<f64>,
    pub saturated_have_positive_duals: bool,
    pub trigger_report: TriggerReport,
    pub converged: bool,
}

impl RunSummary {
    /// Key-value text form, 9 significant digits.
    pub fn write_text<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "case = {}", self.case)?;
        writeln!(out, "comm = {}", self.comm)?;
        writeln!(out, "terminal_time_s = {:.9e}", self.terminal_time)?;
        let join = |v: &DVector<f64>| {
            v.iter()
                .map(|x| format!("{x:.9e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        writeln!(out, "terminal_u_v = {}", join(&self.terminal_u))?;
        writeln!(out, "terminal_y_a = {}", join(&self.terminal_y))?;
        writeln!(out, "oracle_u_v = {}", join(&self.oracle_u))?;
        writeln!(out, "oracle_y_a = {}", join(&self.oracle_y))?;
        writeln!(out, "oracle_gap_v = {:.9e}", self.oracle_gap)?;
        writeln!(out, "kkt_stationarity = {:.9e}", self.terminal_kkt.stationarity)?;
        writeln!(
            out,
            "kkt_complementarity = {:.9e}",
            self.terminal_kkt.complementarity
        )?;
        writeln!(out, "kkt_feasibility = {:.9e}", self.terminal_kkt.feasibility)?;
        writeln!(
            out,
            "kkt_dual_negativity = {:.9e}",
            self.terminal_kkt.dual_negativity
        )?;
        writeln!(out, "kkt_relative = {:.9e}", self.terminal_kkt_relative)?;
        writeln!(out, "voltage_violation_rel = {:.9e}", self.voltage_violation)?;
        writeln!(out, "current_violation_rel = {:.9e}", self.current_violation)?;
        writeln!(out, "loss_ofo_w = {:.9e}", self.loss_terminal)?;
        writeln!(out, "loss_droop_w = {:.9e}", self.loss_droop)?;
        if let Some(spread) = self.marginal_cost_spread {
            writeln!(out, "marginal_cost_spread_rel = {spread:.9e}")?;
        }
        if let Some(spread) = self.current_ratio_spread {
            writeln!(out, "current_ratio_spread_rel = {spread:.9e}")?;
        }
        writeln!(
            out,
            "saturated_duals_positive = {}",
            self.saturated_have_positive_duals
        )?;
        for channel in &self.trigger_report.channels {
            writeln!(
                out,
                "triggers_{}_{} = {}",
                channel.kind.label(),
                channel.node,
                channel.fires
            )?;
        }
        writeln!(out, "converged = {}", self.converged)?;
        Ok(())
    }
}

/// Linearize the plant at its current operating point.
fn linearized_model(
    blocks: &ConductanceBlocks,
    powers: &DVector<f64>,
    v_ac: &DVector<f64>,
    v_nom: f64,
) -> Result<QuasiStaticModel, SimError> {
    let lin = AcGfmLinearization::from_power(powers.as_slice(), v_ac.as_slice())
        .map_err(SimError::Grid)?;
    kron_reduce(blocks, &lin, v_nom).map_err(SimError::Grid)
}

/// Droop operating point on the nonlinear plant, found by alternating the
/// exact constant-power solve with the linearized droop steady state.
pub fn droop_operating_point(
    topology: &GridTopology,
    powers: &[f64],
    r_d: &DVector<f64>,
    v_nom: f64,
) -> Result<(DVector<f64>, DVector<f64>, f64), SimError> {
    let mut plant = StaticPlant::new(topology, v_nom)?;
    for (j, &p) in powers.iter().enumerate() {
        plant.set_power(j, p);
    }
    let n = topology.dcgfm_count();
    let mut u = DVector::zeros(n);
    let mut out = plant.advance(&u.add_scalar(v_nom), 0.0)?;
    for _ in 0..60 {
        let model = linearized_model(plant.blocks(), plant.powers(), &out.v_ac, v_nom)?;
        let (u_next, _) = droop_steady_state(&model, r_d).map_err(SimError::Grid)?;
        let delta = (&u_next - &u).amax();
        u = u_next;
        out = plant.advance(&u.add_scalar(v_nom), 0.0)?;
        if delta <= 1e-10 * v_nom {
            break;
        }
    }
    let blocks = plant.blocks();
    let mut v_full = DVector::zeros(topology.node_count());
    for i in 0..n {
        v_full[i] = v_nom + u[i];
    }
    for j in 0..out.v_ac.len() {
        v_full[n + j] = out.v_ac[j];
    }
    let loss = loss_from_voltages(blocks, &v_full);
    Ok((u, out.y.clone(), loss))
}

/// Everything one run produces.
#[derive(Clone)]
pub struct RunArtifacts {
    pub record: TrajectoryRecord,
    pub summary: RunSummary,
    pub channels: Vec<SampledChannel>,
}

impl RunArtifacts {
    /// Trigger log CSV: time_s, channel_kind, node_id, value.
    pub fn write_trigger_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "time_s,channel_kind,node_id,value")?;
        for channel in &self.channels {
            for event in channel.log() {
                writeln!(
                    out,
                    "{:.9e},{},{},{:.9e}",
                    event.time,
                    channel.kind.label(),
                    channel.node,
                    event.value
                )?;
            }
        }
        Ok(())
    }
}

/// Run a full scenario and summarize it against the oracle.
pub fn run_case_study(scenario: Scenario) -> Result<RunArtifacts, SimError> {
    let record_every = (scenario.record_period / scenario.step).round().max(1.0) as usize;
    let total_steps = (scenario.schedule.duration / scenario.step).round() as usize;
    let boundaries = scenario.schedule.segment_boundaries();
    let n = scenario.topology.dcgfm_count();

    let mut sim = ClosedLoopSim::new(scenario.clone())?;
    let mut record = TrajectoryRecord::default();

    for k in 0..total_steps {
        let out = sim.step()?;
        if (k + 1) % record_every != 0 {
            continue;
        }
        let t = sim.time();
        let mut v_full = DVector::zeros(out.v_dc.len() + out.v_ac.len());
        v_full.rows_mut(0, out.v_dc.len()).copy_from(&out.v_dc);
        v_full
            .rows_mut(out.v_dc.len(), out.v_ac.len())
            .copy_from(&out.v_ac);
        let segment = if t + 1e-12 < scenario.schedule.activation_time {
            usize::MAX
        } else {
            boundaries.iter().filter(|&&b| b <= t + 1e-12).count() - 1
        };
        record.times.push(t);
        record.u.push(sim.applied_setpoints().clone());
        record.x_p.push(sim.state().x_p.clone());
        record.y.push(out.y.clone());
        record.v_dc.push(out.v_dc.clone());
        record.v_ac.push(out.v_ac.clone());
        let state = sim.state();
        let mut duals = DVector::zeros(4 * n);
        duals.rows_mut(0, n).copy_from(&state.zeta_max);
        duals.rows_mut(n, n).copy_from(&state.zeta_min);
        duals.rows_mut(2 * n, n).copy_from(&state.lambda_max);
        duals.rows_mut(3 * n, n).copy_from(&state.lambda_min);
        record.duals.push(duals);
        record.g_p.push(out.g_p.clone());
        record.loss.push(loss_from_voltages(sim.plant.blocks(), &v_full));
        record.lyapunov.push(f64::NAN);
        record.segment.push(segment);
    }

    let terminal = sim
        .last_output()
        .cloned()
        .ok_or_else(|| SimError::InvalidScenario("run produced no steps".into()))?;
    let i_star = scenario.rated_currents();
    let terminal_model = linearized_model(
        sim.plant.blocks(),
        sim.plant.powers(),
        &terminal.v_ac,
        scenario.v_nom,
    )?;
    let oracle_cost = scenario.cost.oracle_cost(&terminal_model, &i_star)?;
    let oracle = reference_qp_solve(&oracle_cost, &scenario.limits, &terminal_model)
        .map_err(SimError::Optimizer)?;

    fill_lyapunov(&mut record, &sim, &scenario, &boundaries)?;

    // Terminal KKT point assembled from what the plant actually saw.
    let state = sim.state().clone();
    let mut terminal_point = KktPoint {
        u: sim.applied_setpoints().clone(),
        y: terminal.y.clone(),
        zeta_max: state.zeta_max,
        zeta_min: state.zeta_min,
        lambda_max: state.lambda_max,
        lambda_min: state.lambda_min,
        extra_duals: scenario
            .limits
            .extra
            .as_ref()
            .map(|e| DVector::zeros(e.b.len())),
        residuals: Default::default(),
    };
    terminal_point.residuals =
        kkt_residual(&oracle_cost, &scenario.limits, &terminal_model, &terminal_point);
    let kkt_relative = terminal_point.residuals.max_relative();

    let (voltage_violation, current_violation) =
        box_violations(&scenario.limits, scenario.v_nom, &terminal_point.u, &terminal.y);

    let (u_droop, _y_droop, loss_droop) = droop_operating_point(
        &scenario.topology,
        sim.plant.powers().as_slice(),
        &sim.r_d,
        scenario.v_nom,
    )?;
    let _ = u_droop;
    let loss_terminal = *record.loss.last().expect("recorded");

    let saturation = saturation_mask(&scenario.limits, &terminal.y);
    let marginal_cost_spread = match &scenario.cost {
        CostSpec::QuadraticOutput { p_y, q_y } => Some(relative_spread(
            (0..n)
                .filter(|&i| !saturation[i])
                .map(|i| p_y[i] * terminal.y[i] + q_y[i]),
        )),
        _ => None,
    };
    let current_ratio_spread = match &scenario.cost {
        CostSpec::ProportionalCurrent => Some(relative_spread(
            (0..n)
                .filter(|&i| !saturation[i])
                .map(|i| terminal.y[i] / i_star[i]),
        )),
        _ => None,
    };
    let saturated_have_positive_duals = (0..n).filter(|&i| saturation[i]).all(|i| {
        terminal_point.zeta_max[i] > 0.0 || terminal_point.zeta_min[i] > 0.0
    });

    let channels = sim.all_channels();
    let summary = RunSummary {
        case: scenario.cost.label().to_string(),
        comm: scenario.comm.label().to_string(),
        terminal_time: sim.time(),
        terminal_u: terminal_point.u.clone(),
        terminal_y: terminal.y.clone(),
        oracle_u: oracle.u.clone(),
        oracle_y: oracle.y.clone(),
        oracle_gap: (&terminal_point.u - &oracle.u).amax(),
        terminal_kkt: terminal_point.residuals,
        terminal_kkt_relative: kkt_relative,
        voltage_violation,
        current_violation,
        loss_terminal,
        loss_droop,
        marginal_cost_spread,
        current_ratio_spread,
        saturated_have_positive_duals,
        trigger_report: crate::comms::trigger_report(&channels),
        converged: kkt_relative < scenario.kkt_tolerance,
    };
    Ok(RunArtifacts {
        record,
        summary,
        channels,
    })
}

/// Fill the Lyapunov column: within each schedule segment the reference
/// optimum is the oracle solution at the linearization recorded at the
/// segment's end (the operating point the flow converges to).
fn fill_lyapunov(
    record: &mut TrajectoryRecord,
    sim: &ClosedLoopSim,
    scenario: &Scenario,
    boundaries: &[f64],
) -> Result<(), SimError> {
    let i_star = scenario.rated_currents();
    record.segment_oracles = vec![None; boundaries.len()];
    for seg in 0..boundaries.len() {
        let indices: Vec<usize> = (0..record.len())
            .filter(|&k| record.segment[k] == seg)
            .collect();
        let Some(&last) = indices.last() else {
            continue;
        };
        // Reconstruct the injections active in this segment from v_ac and
        // g_p at the segment end: P_i = G_Pi · V_i².
        let v_ac = &record.v_ac[last];
        let powers = DVector::from_iterator(
            v_ac.len(),
            record.g_p[last]
                .iter()
                .zip(v_ac.iter())
                .map(|(&g, &v)| g * v * v),
        );
        let model = linearized_model(sim.plant.blocks(), &powers, v_ac, scenario.v_nom)?;
        let cost = scenario.cost.oracle_cost(&model, &i_star)?;
        let Ok(optimum) = reference_qp_solve(&cost, &scenario.limits, &model) else {
            continue;
        };
        for &k in &indices {
            let n = record.x_p[k].len();
            let state = ControllerState {
                x_p: record.x_p[k].clone(),
                zeta_max: record.duals[k].rows(0, n).into(),
                zeta_min: record.duals[k].rows(n, n).into(),
                lambda_max: record.duals[k].rows(2 * n, n).into(),
                lambda_min: record.duals[k].rows(3 * n, n).into(),
            };
            record.lyapunov[k] = lyapunov_value(&state, &optimum, &scenario.gains);
        }
        record.segment_oracles[seg] = Some(optimum);
    }
    Ok(())
}

fn box_violations(
    limits: &OperatingLimits,
    v_nom: f64,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> (f64, f64) {
    let mut voltage = 0.0_f64;
    let mut current = 0.0_f64;
    for i in 0..u.len() {
        let v_range = limits.v_max[i] - limits.v_min[i];
        if v_range.is_finite() && v_range > 0.0 {
            let v = v_nom + u[i];
            let violation = (limits.v_min[i] - v).max(v - limits.v_max[i]).max(0.0);
            voltage = voltage.max(violation / v_range);
        }
        let i_range = limits.i_max[i] - limits.i_min[i];
        if i_range.is_finite() && i_range > 0.0 {
            let violation = (limits.i_min[i] - y[i]).max(y[i] - limits.i_max[i]).max(0.0);
            current = current.max(violation / i_range);
        }
    }
    (voltage, current)
}

/// A station counts as saturated when its current sits within 1% of the
/// box range from either bound.
fn saturation_mask(limits: &OperatingLimits, y: &DVector<f64>) -> Vec<bool> {
    (0..y.len())
        .map(|i| {
            let range = limits.i_max[i] - limits.i_min[i];
            if !range.is_finite() || range <= 0.0 {
                return false;
            }
            let margin = 0.01 * range;
            y[i] - limits.i_min[i] < margin || limits.i_max[i] - y[i] < margin
        })
        .collect()
}

fn relative_spread(values: impl Iterator<Item = f64>) -> f64 {
    let collected: Vec<f64> = values.collect();
    if collected.len() < 2 {
        return 0.0;
    }
    let min = collected.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = collected.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = collected.iter().sum::<f64>() / collected.len() as f64;
    if mean.abs() < 1e-300 {
        return f64::INFINITY;
    }
    (max - min) / mean.abs()
}
