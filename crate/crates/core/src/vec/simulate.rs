//! Monte Carlo ground truth for per-replica success rates.

use rand::Rng;
use rand_distr::StandardNormal;

use super::channel::{compute_delay, transmission_delay, ChannelParams, CPU_POLE};
use crate::error::{Error, Result};

/// Observable conditions of one (micro service, vehicular cloud) pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Feature {
    /// RSU to vehicular-cloud distance in meters.
    pub distance: f64,
    /// CPU utilization of the vehicular cloud, below the queueing pole 2.15.
    pub cpu: f64,
    /// Deadline in seconds.
    pub deadline: f64,
    /// Center of the per-round interference draw, dBm.
    pub interference: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulationParams {
    pub channel: ChannelParams,
    pub rounds: usize,
    /// Relative GPS error; distance is jittered by `Uniform[−e, +e]` each round.
    pub gps_error: f64,
    /// Per-round interference is `Uniform[center − spread, center + spread]` dBm.
    pub interference_spread_db: f64,
}

impl Default for SimulationParams {
    fn default() -> Self {
        Self {
            channel: ChannelParams::default(),
            rounds: 1000,
            gps_error: 0.03,
            interference_spread_db: 10.0,
        }
    }
}

/// Fraction of rounds in which transmission plus compute delay meets the
/// deadline.
pub fn simulate_success_rate<R: Rng + ?Sized>(feature: &Feature, params: &SimulationParams, rng: &mut R) -> Result<f64> {
    if params.rounds == 0 {
        return Err(Error::Config("simulation needs at least one round".into()));
    }
    if !(feature.cpu < CPU_POLE) {
        return Err(Error::Domain(format!("cpu load {} must be below {CPU_POLE}", feature.cpu)));
    }
    let mut hits = 0usize;
    for _ in 0..params.rounds {
        let jitter = if params.gps_error > 0.0 {
            rng.random_range(-params.gps_error..=params.gps_error)
        } else {
            0.0
        };
        let spread = params.interference_spread_db;
        let interference = if spread > 0.0 {
            feature.interference + rng.random_range(-spread..=spread)
        } else {
            feature.interference
        };
        let z: f64 = rng.sample(StandardNormal);
        let delay = transmission_delay(feature.distance * (1.0 + jitter), interference, &params.channel)?
            + compute_delay(feature.cpu, z)?;
        if delay <= feature.deadline {
            hits += 1;
        }
    }
    Ok(hits as f64 / params.rounds as f64)
}
