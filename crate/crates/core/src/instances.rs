//! The two worked examples: a triple integrator under delayed output feedback
//! and a second-order plant under sampled PID control, with reference figures.

use crate::model::{DerivativeController, LtiPlant, PidController, PidPlant};

/// Valid identifiers for [`by_id`].
pub const EXAMPLE_IDS: [&str; 2] = ["triple-integrator", "pid"];

#[derive(Debug, Clone)]
pub struct TripleIntegrator {
    pub plant: LtiPlant,
    pub ideal: DerivativeController,
    pub alpha: f64,
    pub delays: [u32; 2],
    /// Periodic sampling period.
    pub h: f64,
    /// Sampling period and threshold of the event-triggered loop.
    pub h_event: f64,
    pub sigma: f64,
    pub horizon: f64,
    /// Rounded mapped gains `K_0, K_1, K_2`.
    pub reference_gains: [f64; 3],
    pub reference_samples: usize,
    pub reference_mean_events: f64,
    /// Band accepted for the seeded mean transmission count.
    pub events_band: (f64, f64),
    pub reference_actuator_reduction: f64,
    pub reference_total_reduction: f64,
}

pub fn triple_integrator() -> TripleIntegrator {
    TripleIntegrator {
        plant: LtiPlant::integrator_chain(3),
        ideal: DerivativeController::scalar(&[-2e-4, -0.06, -0.342]).expect("static gains"),
        alpha: 1e-3,
        delays: [30, 60],
        h: 0.044,
        h_event: 0.042,
        sigma: 2e-3,
        horizon: 100.0,
        reference_gains: [-0.265, 0.483, -0.219],
        reference_samples: 2273,
        reference_mean_events: 455.6,
        events_band: (364.0, 547.0),
        reference_actuator_reduction: 0.80,
        reference_total_reduction: 0.37,
    }
}

#[derive(Debug, Clone)]
pub struct PidExample {
    pub plant: PidPlant,
    pub ideal: PidController,
    pub alpha: f64,
    pub q: u32,
    pub h: f64,
    pub h_event: f64,
    pub sigma: f64,
    pub horizon: f64,
    /// Rounded `(k_p, k_i, k_d)` at `h` and at `h_event`.
    pub reference_gains: [(f64, f64, f64); 2],
    pub reference_decay_rate: f64,
    pub reference_samples: usize,
    pub reference_mean_events: f64,
    pub events_band: (f64, f64),
    pub reference_actuator_reduction: f64,
    pub reference_total_reduction: f64,
    /// Large-decay-rate point that needs a tiny sampling period.
    pub stress: (f64, f64, u32),
}

pub fn pid() -> PidExample {
    PidExample {
        plant: PidPlant::new(8.4, 0.0, 35.71).expect("static plant"),
        ideal: PidController::new(-10.0, -40.0, -0.65).expect("static gains"),
        alpha: 5.0,
        q: 7,
        h: 4.7e-3,
        h_event: 4e-3,
        sigma: 9e-3,
        horizon: 10.0,
        reference_gains: [(-29.76, -40.0, 19.76), (-33.21, -40.0, 23.21)],
        reference_decay_rate: 10.4,
        reference_samples: 2128,
        reference_mean_events: 628.4,
        events_band: (503.0, 754.0),
        reference_actuator_reduction: 0.70,
        reference_total_reduction: 0.26,
        stress: (10.3, 1e-7, 4272),
    }
}

pub enum Example {
    TripleIntegrator(TripleIntegrator),
    Pid(PidExample),
}

pub fn by_id(id: &str) -> Option<Example> {
    match id {
        "triple-integrator" => Some(Example::TripleIntegrator(triple_integrator())),
        "pid" => Some(Example::Pid(pid())),
        _ => None,
    }
}
