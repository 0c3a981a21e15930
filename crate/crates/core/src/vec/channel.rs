//! Latency model of one offloaded micro service: wireless transmission to a
//! vehicular cloud plus M/M/1-style compute delay.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Converts dBm to watts: `10^((dBm − 30)/10)`.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelParams {
    /// Offloaded data size in bits.
    pub data_bits: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_dbm: f64,
    /// Path-loss exponent applied to distance in meters.
    pub path_loss_exp: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            data_bits: 3e6,
            bandwidth_hz: 10e6,
            tx_power_dbm: 10.0,
            noise_dbm: -172.0,
            path_loss_exp: 1.8,
        }
    }
}

/// `d^t = S / (W · log2(1 + P·d^{−α} / (σ² + I)))` in seconds.
pub fn transmission_delay(distance_m: f64, interference_dbm: f64, params: &ChannelParams) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {distance_m}")));
    }
    if !(params.bandwidth_hz > 0.0) {
        return Err(Error::Domain(format!("bandwidth must be positive, got {}", params.bandwidth_hz)));
    }
    let signal = dbm_to_watts(params.tx_power_dbm) * distance_m.powf(-params.path_loss_exp);
    let snr = signal / (dbm_to_watts(params.noise_dbm) + dbm_to_watts(interference_dbm));
    let capacity = (1.0 + snr).log2();
    if !(snr > 0.0) || !(capacity > 0.0) || !capacity.is_finite() {
        return Err(Error::Domain(format!("non-positive SNR {snr}")));
    }
    Ok(params.data_bits / (params.bandwidth_hz * capacity))
}

/// Queueing-load pole of the compute-delay fit.
pub const CPU_POLE: f64 = 2.15;
const COMPUTE_SCALE: f64 = 0.227;
const COMPUTE_NOISE_STD: f64 = 0.007;

/// `0.227/(2.15 − cpu) + 0.007·z`, floored at zero.
pub fn compute_delay(cpu: f64, z: f64) -> Result<f64> {
    if !(cpu < CPU_POLE) {
        return Err(Error::Domain(format!("cpu load {cpu} must be below {CPU_POLE}")));
    }
    Ok((COMPUTE_SCALE / (CPU_POLE - cpu) + COMPUTE_NOISE_STD * z).max(0.0))
}

pub fn sample_compute_delay<R: Rng + ?Sized>(cpu: f64, rng: &mut R) -> Result<f64> {
    let z: f64 = rng.sample(StandardNormal);
    compute_delay(cpu, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_evaluated_transmission_delay() {
        let p = ChannelParams::default();
        // P = 10 dBm = 0.01 W, σ² = 10^-20.2 W, I = -20 dBm = 1e-5 W
        let signal = 0.01 * 100f64.powf(-1.8);
        let noise = 10f64.powf(-20.2) + 1e-5;
        let expected = 3e6 / (1e7 * (1.0 + signal / noise).log2());
        let got = transmission_delay(100.0, -20.0, &p).unwrap();
        assert!(((got - expected) / expected).abs() < 1e-9);
    }

    #[test]
    fn delay_is_linear_in_data_size() {
        let p = ChannelParams::default();
        let q = ChannelParams {
            data_bits: 6e6,
            ..p
        };
        let a = transmission_delay(80.0, -25.0, &p).unwrap();
        let b = transmission_delay(80.0, -25.0, &q).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12 * b);
    }

    #[test]
    fn delay_increases_with_distance() {
        let p = ChannelParams::default();
        let mut prev = 0.0;
        for k in 0..100 {
            let d = 10.0 + 340.0 * k as f64 / 99.0;
            let t = transmission_delay(d, -20.0, &p).unwrap();
            assert!(t > prev);
            prev = t;
        }
    }

    #[test]
    fn invalid_channel_inputs() {
        let p = ChannelParams::default();
        assert!(transmission_delay(0.0, -20.0, &p).is_err());
        let zero_bw = ChannelParams {
            bandwidth_hz: 0.0,
            ..p
        };
        assert!(transmission_delay(10.0, -20.0, &zero_bw).is_err());
        let dead = ChannelParams {
            tx_power_dbm: f64::NEG_INFINITY,
            ..p
        };
        assert!(transmission_delay(10.0, -20.0, &dead).is_err());
    }

    #[test]
    fn compute_delay_examples() {
        assert!((compute_delay(1.15, 0.0).unwrap() - 0.227).abs() < 1e-12);
        assert!((compute_delay(0.0, 0.0).unwrap() - 0.227 / 2.15).abs() < 1e-12);
        assert!(compute_delay(2.15, 0.0).is_err());
        assert_eq!(compute_delay(0.0, -1e3).unwrap(), 0.0);
    }

    #[test]
    fn compute_delay_mean_matches_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let mean = (0..n).map(|_| sample_compute_delay(1.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 0.227 / 1.15).abs() < 3.0 * 0.007 / 100.0);
    }
}
