//! System parameters, deployment geometry, and reproducible randomness.
//!
//! The coordinate frame puts the fusion center (FC) on the x axis and the
//! STAR-RIS in the y-z plane. Devices sit on two circles tangent to the
//! surface plane: the near circle is served by reflection, the far circle
//! by transmission.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Full set of scenario parameters. Distances are meters, powers dBm,
/// gains and Rician factors dB.
///
/// `Default` is the reference full-scale setup (64 antennas, 64 elements,
/// 64 devices split evenly across the two sides). Deserialization treats
/// every key as optional and fills the rest from `Default`, so a config
/// file only lists what it overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// FC antennas (uniform linear array along the x axis).
    pub n: usize,
    /// STAR-RIS elements; must equal `m_y * m_z`.
    pub m: usize,
    /// URA width along y.
    pub m_y: usize,
    /// URA height along z.
    pub m_z: usize,
    /// Devices in total; must equal `k_r + k_t`.
    pub k: usize,
    /// Devices on the reflection side (same side as the FC).
    pub k_r: usize,
    /// Devices on the transmission side (behind the surface).
    pub k_t: usize,
    /// Transmit SNR in dB; the per-device power budget is `P = sigma2 * 10^(snr_db/10)`.
    pub snr_db: f64,
    /// Receiver noise power in dBm.
    pub sigma2_dbm: f64,
    /// Path gain at the reference distance, dB.
    pub c0_db: f64,
    /// Reference distance for the path-loss model, m.
    pub d0_m: f64,
    /// Path-loss exponent, device to RIS.
    pub alpha_wr: f64,
    /// Path-loss exponent, reflection-side device to FC.
    pub alpha_rwf: f64,
    /// Path-loss exponent, transmission-side device to FC.
    pub alpha_twf: f64,
    /// Path-loss exponent, RIS to FC.
    pub alpha_rf: f64,
    /// Rician factor, device-RIS links, dB.
    pub kappa_wr_db: f64,
    /// Rician factor, RIS-FC link, dB.
    pub kappa_rf_db: f64,
    /// Rician factor, reflection-side device-FC links, dB.
    pub kappa_rwf_db: f64,
    /// Rician factor, transmission-side device-FC links, dB.
    pub kappa_twf_db: f64,
    /// FC x offset from the origin, m.
    pub d_x_m: f64,
    /// RIS y offset from the origin, m.
    pub d_y_m: f64,
    /// RIS height, m.
    pub d_z_m: f64,
    /// Device circle radius, m.
    pub d_r_m: f64,
    /// Exponential correlation coefficient of the non-LoS fading, in [0, 1).
    pub corr_rho: f64,
    /// Stop when the per-iteration MSE decrease falls below this.
    pub epsilon: f64,
    /// Hard cap on outer iterations.
    pub max_iters: usize,
    /// Base seed for all random streams.
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            n: 64,
            m: 64,
            m_y: 4,
            m_z: 16,
            k: 64,
            k_r: 32,
            k_t: 32,
            snr_db: 15.0,
            sigma2_dbm: -80.0,
            c0_db: -30.0,
            d0_m: 1.0,
            alpha_wr: 2.2,
            alpha_rwf: 3.8,
            alpha_twf: 4.0,
            alpha_rf: 3.0,
            kappa_wr_db: 3.0,
            kappa_rf_db: 3.0,
            kappa_rwf_db: -3.0,
            kappa_twf_db: -3.0,
            d_x_m: 2.0,
            d_y_m: 50.0,
            d_z_m: 3.0,
            d_r_m: 3.0,
            corr_rho: 0.0,
            epsilon: 1e-4,
            max_iters: 1000,
            seed: 1,
        }
    }
}

/// The full-scale reference configuration.
pub fn default_config() -> SystemConfig {
    SystemConfig::default()
}

impl SystemConfig {
    /// Parse a flat JSON object of overrides on top of `Default`.
    /// Unknown keys are rejected.
    pub fn from_json_str(text: &str) -> Result<SystemConfig> {
        let cfg: SystemConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Consistency checks; every constructor path should call this before
    /// the config reaches the numeric code.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n == 0 {
            return fail("n must be at least 1".into());
        }
        if self.m == 0 || self.m_y == 0 || self.m_z == 0 {
            return fail("m, m_y, m_z must be at least 1".into());
        }
        if self.m_y * self.m_z != self.m {
            return fail(format!(
                "m_y * m_z must equal m (got {} * {} != {})",
                self.m_y, self.m_z, self.m
            ));
        }
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if self.k_r + self.k_t != self.k {
            return fail(format!(
                "k_r + k_t must equal k (got {} + {} != {})",
                self.k_r, self.k_t, self.k
            ));
        }
        if !self.snr_db.is_finite() || !self.sigma2_dbm.is_finite() {
            return fail("snr_db and sigma2_dbm must be finite".into());
        }
        if !(self.d0_m > 0.0) {
            return fail("d0_m must be positive".into());
        }
        for (name, a) in [
            ("alpha_wr", self.alpha_wr),
            ("alpha_rwf", self.alpha_rwf),
            ("alpha_twf", self.alpha_twf),
            ("alpha_rf", self.alpha_rf),
        ] {
            if !a.is_finite() || a < 0.0 {
                return fail(format!("{name} must be finite and non-negative"));
            }
        }
        for (name, k) in [
            ("kappa_wr_db", self.kappa_wr_db),
            ("kappa_rf_db", self.kappa_rf_db),
            ("kappa_rwf_db", self.kappa_rwf_db),
            ("kappa_twf_db", self.kappa_twf_db),
        ] {
            if !k.is_finite() {
                return fail(format!("{name} must be finite"));
            }
        }
        if !(self.d_y_m > 0.0) || !(self.d_r_m > 0.0) {
            return fail("d_y_m and d_r_m must be positive".into());
        }
        if self.d_x_m < 0.0 || self.d_z_m < 0.0 {
            return fail("d_x_m and d_z_m must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.corr_rho) {
            return fail(format!("corr_rho must lie in [0, 1), got {}", self.corr_rho));
        }
        if !(self.epsilon > 0.0) {
            return fail("epsilon must be positive".into());
        }
        if self.max_iters == 0 {
            return fail("max_iters must be at least 1".into());
        }
        Ok(())
    }

    /// Noise power in linear units (mW).
    pub fn sigma2(&self) -> f64 {
        10f64.powf(self.sigma2_dbm / 10.0)
    }

    /// Per-device transmit power budget in linear units (mW).
    pub fn power(&self) -> Result<f64> {
        snr_to_power(self.snr_db, self.sigma2())
    }
}

/// Power budget from a transmit SNR: `P = sigma2 * 10^(snr_db/10)`.
pub fn snr_to_power(snr_db: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::Domain(format!(
            "snr_to_power needs sigma2 > 0, got {sigma2}"
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::Domain("snr_to_power needs a finite snr_db".into()));
    }
    Ok(sigma2 * 10f64.powf(snr_db / 10.0))
}

/// Node positions implied by a config. Units: meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    /// Fusion center, `(d_x, 0, 0)`.
    pub fc: [f64; 3],
    /// STAR-RIS reference element, `(0, d_y, d_z)`.
    pub ris: [f64; 3],
    /// Device positions, reflection side first (`k_r` entries, then `k_t`).
    pub wd: Vec<[f64; 3]>,
}

/// Deterministic deployment: devices at ground level on two circles of
/// radius `d_r`, centered `d_r` before and behind the surface plane, at
/// evenly spaced angles `i * 2pi / k_side`. The circles touch the plane
/// `y = d_y`, so device `y` stays within `[d_y - 2 d_r, d_y]` on the
/// reflection side and `[d_y, d_y + 2 d_r]` on the transmission side.
pub fn build_geometry(cfg: &SystemConfig) -> Geometry {
    let circle = |count: usize, center_y: f64| -> Vec<[f64; 3]> {
        (0..count)
            .map(|i| {
                let phi = i as f64 * TAU / count as f64;
                [
                    cfg.d_r_m * phi.cos(),
                    center_y + cfg.d_r_m * phi.sin(),
                    0.0,
                ]
            })
            .collect()
    };
    let mut wd = circle(cfg.k_r, cfg.d_y_m - cfg.d_r_m);
    wd.extend(circle(cfg.k_t, cfg.d_y_m + cfg.d_r_m));
    Geometry {
        fc: [cfg.d_x_m, 0.0, 0.0],
        ris: [0.0, cfg.d_y_m, cfg.d_z_m],
        wd,
    }
}

/// A reproducible generator for the given `(seed, stream)` pair.
/// Streams with the same seed are mutually independent, so each concern
/// (channel draw, initial state, coupling draw, ...) can own one.
pub fn make_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
