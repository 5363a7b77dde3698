//! Deterministic range-limited channel between vehicles.

use serde::{Deserialize, Serialize};

/// Range cutoff and link cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub range_m: f64,
    pub bandwidth_bytes_per_s: f64,
    pub base_latency_s: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            range_m: 200.0,
            bandwidth_bytes_per_s: 1.0e6,
            base_latency_s: 0.01,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.range_m >= 0.0 && self.range_m.is_finite()) {
            return Err(format!(
                "range_m must be finite and >= 0, got {}",
                self.range_m
            ));
        }
        if !(self.bandwidth_bytes_per_s > 0.0 && self.bandwidth_bytes_per_s.is_finite()) {
            return Err(format!(
                "bandwidth must be finite and > 0, got {}",
                self.bandwidth_bytes_per_s
            ));
        }
        if !(self.base_latency_s >= 0.0 && self.base_latency_s.is_finite()) {
            return Err(format!(
                "base latency must be finite and >= 0, got {}",
                self.base_latency_s
            ));
        }
        Ok(())
    }

    pub fn latency_s(&self, size_bytes: usize) -> f64 {
        self.base_latency_s + size_bytes as f64 / self.bandwidth_bytes_per_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Delivery {
    Delivered {
        latency_s: f64,
    },
    /// Receiver farther than `range_m`, or a position was not finite.
    OutOfRange {
        distance_m: f64,
    },
}

impl Delivery {
    pub fn is_delivered(&self) -> bool {
        matches!(self, Delivery::Delivered { .. })
    }
}

/// Delivers when the Euclidean distance is at most `range_m`.
pub fn channel_send(
    cfg: &ChannelConfig,
    size_bytes: usize,
    sender_pos: [f64; 2],
    receiver_pos: [f64; 2],
) -> Delivery {
    let dx = sender_pos[0] - receiver_pos[0];
    let dy = sender_pos[1] - receiver_pos[1];
    let distance_m = dx.hypot(dy);
    if distance_m <= cfg.range_m {
        Delivery::Delivered {
            latency_s: cfg.latency_s(size_bytes),
        }
    } else {
        Delivery::OutOfRange { distance_m }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_boundary_is_inclusive() {
        let cfg = ChannelConfig::default();
        assert!(channel_send(&cfg, 10, [0.0, 0.0], [200.0, 0.0]).is_delivered());
        assert!(!channel_send(&cfg, 10, [0.0, 0.0], [250.0, 0.0]).is_delivered());
        assert!(!channel_send(&cfg, 10, [f64::NAN, 0.0], [0.0, 0.0]).is_delivered());
    }

    #[test]
    fn latency_formula() {
        let cfg = ChannelConfig {
            range_m: 200.0,
            bandwidth_bytes_per_s: 1.0e6,
            base_latency_s: 0.01,
        };
        match channel_send(&cfg, 100_000, [0.0, 0.0], [0.0, 0.0]) {
            Delivery::Delivered { latency_s } => assert!((latency_s - 0.11).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validate_rejects_zero_bandwidth() {
        let cfg = ChannelConfig {
            bandwidth_bytes_per_s: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
