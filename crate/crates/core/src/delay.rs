//! Delay terms of the system model. All sizes are in bits, rates in bits per
//! second, bandwidth in hertz, power in watts, delays in seconds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bits per megabyte (1 MB = 8e6 bits).
pub const BITS_PER_MB: f64 = 8.0e6;

/// Vehicles closer than this to their base station are treated as being at
/// this distance; the inverse-square channel term is singular at zero.
pub const MIN_LINK_DISTANCE_M: f64 = 1.0;

pub fn mb_to_bits(mb: f64) -> f64 {
    mb * BITS_PER_MB
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DelayParams {
    /// Backhaul link rate, bits/s.
    pub backhaul_rate: f64,
    /// Per-hop migration delay, s/hop.
    pub migration_coeff: f64,
    /// Per-hop backhaul transmission delay, s/hop.
    pub transmission_coeff: f64,
    /// Receiver noise power, W.
    pub noise: f64,
    /// Channel gain per unit distance.
    pub unit_gain: f64,
    /// Total bandwidth of one base station, Hz.
    pub bs_bandwidth: f64,
    /// CPU frequency of one edge server, cycles/s.
    pub server_capacity: f64,
}

impl Default for DelayParams {
    fn default() -> Self {
        DelayParams {
            backhaul_rate: 500.0e6,
            migration_coeff: 1.5,
            transmission_coeff: 0.3,
            noise: 1e-13,
            unit_gain: 1e-5,
            bs_bandwidth: 20.0e6,
            server_capacity: 60.0e9,
        }
    }
}

impl DelayParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("backhaul_rate", self.backhaul_rate),
            ("migration_coeff", self.migration_coeff),
            ("transmission_coeff", self.transmission_coeff),
            ("noise", self.noise),
            ("unit_gain", self.unit_gain),
            ("bs_bandwidth", self.bs_bandwidth),
            ("server_capacity", self.server_capacity),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// One offloaded task: data size `D` (bits), density `C` (cycles/bit) and the
/// vehicle's transmit power `P` (W).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub data_bits: f64,
    pub density: f64,
    pub tx_power: f64,
}

impl TaskSpec {
    pub fn new(data_bits: f64, density: f64, tx_power: f64) -> Result<Self> {
        for (name, v) in [("data", data_bits), ("density", density), ("power", tx_power)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("task {name} must be positive, got {v}")));
            }
        }
        Ok(TaskSpec {
            data_bits,
            density,
            tx_power,
        })
    }
}

/// Size of the migratable service state, bits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceProfile {
    pub service_bits: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct DelayBreakdown {
    pub migration: f64,
    pub access: f64,
    pub backhaul: f64,
    pub computation: f64,
}

impl DelayBreakdown {
    /// Communication delay: access plus backhaul.
    pub fn communication(&self) -> f64 {
        self.access + self.backhaul
    }

    pub fn total(&self) -> f64 {
        self.migration + (self.access + self.backhaul) + self.computation
    }
}

pub fn migration_delay(service: &ServiceProfile, hops: u32, params: &DelayParams) -> f64 {
    if hops == 0 {
        0.0
    } else {
        service.service_bits / params.backhaul_rate + params.migration_coeff * hops as f64
    }
}

pub fn snr(task: &TaskSpec, distance: f64, params: &DelayParams) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::invalid(format!(
            "link distance must be positive, got {distance}"
        )));
    }
    Ok(task.tx_power * params.unit_gain / (params.noise * distance * distance))
}

pub fn access_delay(task: &TaskSpec, bandwidth_share: f64, snr: f64) -> Result<f64> {
    if !(bandwidth_share > 0.0) {
        return Err(Error::invalid(format!(
            "bandwidth share must be positive, got {bandwidth_share}"
        )));
    }
    if !(snr > 0.0) {
        return Err(Error::invalid(format!("snr must be positive, got {snr}")));
    }
    Ok(task.data_bits / (bandwidth_share * (1.0 + snr).log2()))
}

pub fn backhaul_delay(task: &TaskSpec, hops: u32, params: &DelayParams) -> f64 {
    if hops == 0 {
        0.0
    } else {
        task.data_bits / params.backhaul_rate + params.transmission_coeff * hops as f64
    }
}

pub fn required_cycles(task: &TaskSpec) -> f64 {
    task.data_bits * task.density
}

pub fn computation_delay(cycles: f64, proportion: f64, params: &DelayParams) -> Result<f64> {
    if !(proportion > 0.0) {
        return Err(Error::invalid(format!(
            "resource proportion must be positive, got {proportion}"
        )));
    }
    if cycles < 0.0 {
        return Err(Error::invalid("cycle count must be non-negative"));
    }
    Ok(cycles / (proportion * params.server_capacity))
}

pub fn slot_total(breakdowns: &[DelayBreakdown]) -> f64 {
    breakdowns.iter().map(DelayBreakdown::total).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    fn task(d: f64) -> TaskSpec {
        TaskSpec::new(d, 600.0, 0.5).unwrap()
    }

    #[test]
    fn migration_golden_and_zero_branch() {
        let p = DelayParams::default();
        let s = ServiceProfile {
            service_bits: mb_to_bits(50.0),
        };
        assert_eq!(migration_delay(&s, 0, &p), 0.0);
        assert!(rel(migration_delay(&s, 2, &p), 3.8) < 1e-12);
        let d: Vec<f64> = (0..3).map(|h| migration_delay(&s, h, &p)).collect();
        assert!(d[0] <= d[1] && d[1] <= d[2]);
        assert!(d[1] >= s.service_bits / p.backhaul_rate);
    }

    #[test]
    fn snr_golden_and_scaling() {
        let p = DelayParams::default();
        let t = task(8e6);
        let base = snr(&t, 100.0, &p).unwrap();
        assert!(rel(base, 5000.0) < 1e-12);
        assert!(rel(snr(&t, 200.0, &p).unwrap(), base / 4.0) < 1e-12);
        let loud = TaskSpec { tx_power: 1.0, ..t };
        assert!(rel(snr(&loud, 100.0, &p).unwrap(), 2.0 * base) < 1e-12);
        assert!(snr(&t, 0.0, &p).is_err());
    }

    #[test]
    fn access_golden_and_properties() {
        let t = task(8e6);
        let d = access_delay(&t, 2e6, 5000.0).unwrap();
        // 8e6 / (2e6 * log2(5001)), evaluated independently in extended precision.
        assert!(rel(d, 0.325_520_809_764_133_3) < 1e-12, "{d}");
        assert!(access_delay(&t, 2e6, 6000.0).unwrap() < d);
        assert!(rel(access_delay(&task(16e6), 2e6, 5000.0).unwrap(), 2.0 * d) < 1e-12);
        assert!(access_delay(&t, 0.0, 5000.0).is_err());
        let rebuilt = d * 2e6 * 5001f64.log2();
        assert!(rel(rebuilt, 8e6) < 1e-12);
    }

    #[test]
    fn backhaul_golden() {
        let p = DelayParams::default();
        let t = task(8e6);
        assert_eq!(backhaul_delay(&t, 0, &p), 0.0);
        assert!(rel(backhaul_delay(&t, 3, &p), 0.916) < 1e-12);
        let diff = backhaul_delay(&t, 2, &p) - backhaul_delay(&t, 1, &p);
        assert!((diff - p.transmission_coeff).abs() < 1e-12);
    }

    #[test]
    fn cycles_and_computation() {
        let p = DelayParams::default();
        let t = task(8e6);
        assert_eq!(required_cycles(&t), 4.8e9);
        let unit = TaskSpec { density: 1.0, ..t };
        assert_eq!(required_cycles(&unit), t.data_bits);
        assert!(rel(computation_delay(4.8e9, 0.25, &p).unwrap(), 0.32) < 1e-12);
        assert_eq!(computation_delay(4.8e9, 1.0, &p).unwrap(), 4.8e9 / p.server_capacity);
        let half = computation_delay(4.8e9, 0.125, &p).unwrap();
        assert!(rel(half, 0.64) < 1e-12);
        assert!(computation_delay(4.8e9, 0.0, &p).is_err());
        assert!(TaskSpec::new(0.0, 600.0, 0.5).is_err());
    }

    #[test]
    fn slot_total_sums() {
        let b = DelayBreakdown {
            migration: 1.0,
            access: 1.0,
            backhaul: 1.0,
            computation: 3.0,
        };
        assert_eq!(slot_total(&[b, b]), 12.0);
        assert_eq!(slot_total(&[]), 0.0);
        let c = DelayBreakdown {
            migration: 0.5,
            ..b
        };
        assert_eq!(slot_total(&[b, c]), slot_total(&[c, b]));
    }
}
