use serde::{Deserialize, Serialize};

/// Constant-velocity Kalman filter for one Cartesian axis.
///
/// Transition `F = [[1, dt], [0, 1]]`, acceleration input `G = [dt²/2, dt]`,
/// process noise `G Gᵀ a²` and scalar position measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanAxisFilter {
    pub position: f64,
    pub velocity: f64,
    /// Row-major 2×2 covariance of (position, velocity).
    pub covariance: [[f64; 2]; 2],
    pub dt: f64,
    pub accel_std: f64,
    pub meas_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Process noise acceleration scale, m/s².
    pub accel_std: f64,
    /// Position measurement noise, m.
    pub meas_std: f64,
    /// Prior velocity uncertainty at track birth, m/s.
    pub init_vel_std: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            accel_std: 2.0,
            meas_std: 0.1,
            init_vel_std: 2.0,
        }
    }
}

impl KalmanAxisFilter {
    pub fn new(position: f64, dt: f64, cfg: &FilterConfig) -> Self {
        assert!(dt > 0.0, "filter period must be positive");
        KalmanAxisFilter {
            position,
            velocity: 0.0,
            covariance: [
                [cfg.meas_std * cfg.meas_std, 0.0],
                [0.0, cfg.init_vel_std * cfg.init_vel_std],
            ],
            dt,
            accel_std: cfg.accel_std,
            meas_std: cfg.meas_std,
        }
    }

    pub fn predict(&mut self) {
        let dt = self.dt;
        self.position += dt * self.velocity;
        let [[p00, p01], [_, p11]] = self.covariance;
        let q = self.accel_std * self.accel_std;
        let (g0, g1) = (0.5 * dt * dt, dt);
        // F P Fᵀ + G Gᵀ q
        let n00 = p00 + 2.0 * dt * p01 + dt * dt * p11 + g0 * g0 * q;
        let n01 = p01 + dt * p11 + g0 * g1 * q;
        let n11 = p11 + g1 * g1 * q;
        self.covariance = [[n00, n01], [n01, n11]];
    }

    pub fn update(&mut self, z: f64) {
        let [[p00, p01], [_, p11]] = self.covariance;
        let s = p00 + self.meas_std * self.meas_std;
        let k0 = p00 / s;
        let k1 = p01 / s;
        let innovation = z - self.position;
        self.position += k0 * innovation;
        self.velocity += k1 * innovation;
        let n00 = (1.0 - k0) * p00;
        let n01 = (1.0 - k0) * p01;
        let n11 = p11 - k1 * p01;
        self.covariance = [[n00, n01], [n01, n11]];
    }

    /// One detection period: predict, then correct when a finite
    /// measurement is available. Missing or non-finite input coasts.
    pub fn step(&mut self, measurement: Option<f64>) {
        self.predict();
        if let Some(z) = measurement.filter(|z| z.is_finite()) {
            self.update(z);
        }
    }
}
