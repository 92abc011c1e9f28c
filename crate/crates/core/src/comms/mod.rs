//! Event-triggered sample-and-hold channels between the stations and the
//! central controller, plus a periodic baseline and trigger accounting.
//!
//! A channel fires when the minimum dwell time has passed and either the
//! signal deviates from its held sample beyond the class threshold or the
//! heartbeat timeout elapses. Conditions are evaluated at integrator step
//! boundaries, so heartbeat overshoot is bounded by one step.

use crate::error::SimError;

/// Signal classes with their own deviation thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    /// Station current y_i, sent from a dc-GFM station to the controller.
    OutputCurrent,
    /// Primal state x_p_i, sent from the controller to a dc-GFM station.
    PrimalState,
    /// Conductance G_P_i, sent from an ac-GFM station to the controller.
    AcConductance,
}

impl ChannelKind {
    pub fn label(&self) -> &'static str {
        match self {
            ChannelKind::OutputCurrent => "y",
            ChannelKind::PrimalState => "x_p",
            ChannelKind::AcConductance => "G_P",
        }
    }
}

/// Deviation thresholds and dwell bounds of the triggering mechanism.
#[derive(Debug, Clone, Copy)]
pub struct TriggerConfig {
    /// Current deviation threshold σ_y [A].
    pub sigma_y: f64,
    /// Primal-state deviation threshold σ_x [V].
    pub sigma_x: f64,
    /// Conductance deviation threshold σ_G [Ω⁻¹].
    pub sigma_g: f64,
    /// Minimum inter-sample time [s].
    pub t_min: f64,
    /// Heartbeat timeout [s].
    pub t_max: f64,
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.t_min > 0.0 && self.t_min <= self.t_max) {
            return Err(SimError::InvalidScenario(format!(
                "trigger times must satisfy 0 < T_min ≤ T_max, got ({}, {})",
                self.t_min, self.t_max
            )));
        }
        if self.sigma_y < 0.0 || self.sigma_x < 0.0 || self.sigma_g < 0.0 {
            return Err(SimError::InvalidScenario(
                "trigger thresholds must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    fn threshold(&self, kind: ChannelKind) -> f64 {
        match kind {
            ChannelKind::OutputCurrent => self.sigma_y,
            ChannelKind::PrimalState => self.sigma_x,
            ChannelKind::AcConductance => self.sigma_g,
        }
    }
}

/// A recorded sample instant.
#[derive(Debug, Clone, Copy)]
pub struct TriggerEvent {
    pub time: f64,
    pub value: f64,
}

/// One sample-and-hold channel. Between fires the consumer sees exactly
/// the held sample.
#[derive(Debug, Clone)]
pub struct SampledChannel {
    pub kind: ChannelKind,
    /// Node the signal belongs to.
    pub node: String,
    held: f64,
    last_sample_time: f64,
    log: Vec<TriggerEvent>,
}

impl SampledChannel {
    /// The first sample fires at controller activation.
    pub fn activate(kind: ChannelKind, node: impl Into<String>, value: f64, now: f64) -> Self {
        Self {
            kind,
            node: node.into(),
            held: value,
            last_sample_time: now,
            log: vec![TriggerEvent { time: now, value }],
        }
    }

    pub fn held_value(&self) -> f64 {
        self.held
    }

    pub fn last_sample_time(&self) -> f64 {
        self.last_sample_time
    }

    pub fn log(&self) -> &[TriggerEvent] {
        &self.log
    }

    fn fire(&mut self, value: f64, now: f64) {
        self.held = value;
        self.last_sample_time = now;
        self.log.push(TriggerEvent { time: now, value });
    }

    /// Event-triggered sampling: fires iff the dwell time T_min has
    /// passed and (|deviation| > σ or the heartbeat T_max has elapsed).
    pub fn maybe_trigger(&mut self, current_value: f64, now: f64, cfg: &TriggerConfig) -> bool {
        debug_assert!(now >= self.last_sample_time);
        let elapsed = now - self.last_sample_time;
        // Sample times live on the integrator grid k·h; differences of
        // grid points can fall short of an exact multiple by a few ulp.
        if elapsed < cfg.t_min * (1.0 - 1e-9) {
            return false;
        }
        let deviation = (current_value - self.held).abs();
        if deviation > cfg.threshold(self.kind) || elapsed > cfg.t_max {
            self.fire(current_value, now);
            true
        } else {
            false
        }
    }

    /// Periodic baseline: fires on a fixed cadence regardless of deviation.
    pub fn periodic_trigger(&mut self, current_value: f64, now: f64, period: f64) -> bool {
        debug_assert!(period > 0.0);
        if now - self.last_sample_time >= period * (1.0 - 1e-9) {
            self.fire(current_value, now);
            true
        } else {
            false
        }
    }
}

/// Inter-event statistics of one channel.
#[derive(Debug, Clone)]
pub struct ChannelReport {
    pub kind: ChannelKind,
    pub node: String,
    pub fires: usize,
    pub min_interval: Option<f64>,
    pub mean_interval: Option<f64>,
    pub max_interval: Option<f64>,
}

/// Aggregated trigger accounting across channels.
#[derive(Debug, Clone, Default)]
pub struct TriggerReport {
    pub channels: Vec<ChannelReport>,
}

impl TriggerReport {
    pub fn total_fires(&self, kind: ChannelKind) -> usize {
        self.channels
            .iter()
            .filter(|c| c.kind == kind)
            .map(|c| c.fires)
            .sum()
    }

    /// Check every recorded inter-event interval against the dwell bounds
    /// [T_min, T_max + step]; returns the worst offender if any.
    pub fn check_dwell_bounds(
        channels: &[SampledChannel],
        t_min: f64,
        t_max_plus_step: f64,
    ) -> Result<(), String> {
        for channel in channels {
            for pair in channel.log.windows(2) {
                let interval = pair[1].time - pair[0].time;
                // First-activation gaps obey the same bounds because the
                // first sample is itself a fire.
                if interval < t_min - 1e-12 || interval > t_max_plus_step + 1e-12 {
                    return Err(format!(
                        "channel {}[{}]: interval {:.6} s outside [{:.6}, {:.6}]",
                        channel.kind.label(),
                        channel.node,
                        interval,
                        t_min,
                        t_max_plus_step
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Per-channel fire counts and inter-event statistics.
pub fn trigger_report(channels: &[SampledChannel]) -> TriggerReport {
    let mut report = TriggerReport::default();
    for channel in channels {
        let intervals: Vec<f64> = channel
            .log
            .windows(2)
            .map(|pair| pair[1].time - pair[0].time)
            .collect();
        let (min_interval, mean_interval, max_interval) = if intervals.is_empty() {
            (None, None, None)
        } else {
            let min = intervals.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = intervals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mean = intervals.iter().sum::<f64>() / intervals.len() as f64;
            (Some(min), Some(mean), Some(max))
        };
        report.channels.push(ChannelReport {
            kind: channel.kind,
            node: channel.node.clone(),
            fires: channel.log.len(),
            min_interval,
            mean_interval,
            max_interval,
        });
    }
    report
}
