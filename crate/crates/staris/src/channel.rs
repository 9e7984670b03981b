//! Geometric Rician channel generation.
//!
//! Every link is `sqrt(L) * (sqrt(kappa/(1+kappa)) * los + sqrt(1/(1+kappa)) * nlos)`
//! where `L` is distance path loss, `los` a unit-modulus steering term, and
//! `nlos` circularly symmetric complex Gaussian with optional exponential
//! spatial correlation. Three link families make up a scenario: device-FC
//! vectors `h_k` (length N), device-RIS vectors `g_k` (length M), and the
//! RIS-FC matrix `G` (N x M, rank-one LoS component).

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scenario::{build_geometry, SystemConfig};

/// Rician factors at or above this linear value collapse to a pure LoS
/// draw with no stochastic component.
pub const PURE_LOS_KAPPA: f64 = 1e12;

/// Distance path gain `c0 * (d / d0)^(-alpha)`, all arguments linear.
pub fn path_loss(d: f64, alpha: f64, c0: f64, d0: f64) -> Result<f64> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Domain(format!("path_loss needs d > 0, got {d}")));
    }
    if !(d0 > 0.0) || !d0.is_finite() {
        return Err(Error::Domain(format!("path_loss needs d0 > 0, got {d0}")));
    }
    if !c0.is_finite() || c0 < 0.0 {
        return Err(Error::Domain(format!("path_loss needs c0 >= 0, got {c0}")));
    }
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::Domain(format!(
            "path_loss needs alpha >= 0, got {alpha}"
        )));
    }
    Ok(c0 * (d / d0).powf(-alpha))
}

/// Half-wavelength ULA steering vector: entry `i` is `exp(j pi i cos_angle)`,
/// with `cos_angle` the direction cosine against the array axis.
pub fn ula_steering(n: usize, cos_angle: f64) -> DVector<Complex64> {
    DVector::from_iterator(
        n,
        (0..n).map(|i| Complex64::from_polar(1.0, PI * i as f64 * cos_angle)),
    )
}

/// Half-wavelength URA steering vector for an array spanning the y-z plane.
/// `dir` is the unit propagation direction; entry `(i_y, i_z)` gets phase
/// `pi * (i_y * dir_y + i_z * dir_z)`. Elements are ordered row-major over
/// `(z, y)`: index `i_z * m_y + i_y`.
pub fn ura_steering(m_y: usize, m_z: usize, dir: [f64; 3]) -> DVector<Complex64> {
    DVector::from_iterator(
        m_y * m_z,
        (0..m_z).flat_map(move |iz| {
            (0..m_y).map(move |iy| {
                Complex64::from_polar(1.0, PI * (iy as f64 * dir[1] + iz as f64 * dir[2]))
            })
        }),
    )
}

/// Cholesky factor `l` of the exponential correlation matrix
/// `r[i][j] = rho^|i-j|`, so `l * l^H == r`.
pub fn correlation_root(m: usize, rho: f64) -> Result<DMatrix<Complex64>> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Domain(format!(
            "correlation coefficient must lie in [0, 1), got {rho}"
        )));
    }
    if rho == 0.0 {
        return Ok(DMatrix::identity(m, m));
    }
    let r = DMatrix::from_fn(m, m, |i, j| {
        Complex64::from(rho.powi((i as i32 - j as i32).abs()))
    });
    let chol = nalgebra::Cholesky::new(r)
        .ok_or_else(|| Error::Solver("correlation matrix is not positive definite".into()))?;
    Ok(chol.l())
}

/// One draw of every link in the scenario. Device indexing is global:
/// `0..k_r` reflection side, `k_r..k` transmission side.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    /// Direct device-FC channels, one length-N vector per device.
    pub h: Vec<DVector<Complex64>>,
    /// Device-RIS channels, one length-M vector per device.
    pub g: Vec<DVector<Complex64>>,
    /// RIS-FC channel matrix, N x M.
    pub big_g: DMatrix<Complex64>,
    /// Number of reflection-side devices (prefix of the device indexing).
    pub k_r: usize,
}

impl ChannelSet {
    pub fn new(
        h: Vec<DVector<Complex64>>,
        g: Vec<DVector<Complex64>>,
        big_g: DMatrix<Complex64>,
        k_r: usize,
    ) -> Result<ChannelSet> {
        if h.len() != g.len() {
            return Err(Error::Config(format!(
                "channel set needs one h and one g per device, got {} and {}",
                h.len(),
                g.len()
            )));
        }
        if k_r > h.len() {
            return Err(Error::Config(format!(
                "k_r = {} exceeds device count {}",
                k_r,
                h.len()
            )));
        }
        let (n, m) = (big_g.nrows(), big_g.ncols());
        if h.iter().any(|v| v.len() != n) || g.iter().any(|v| v.len() != m) {
            return Err(Error::Config(
                "channel vector lengths do not match the RIS-FC matrix".into(),
            ));
        }
        Ok(ChannelSet { h, g, big_g, k_r })
    }

    pub fn k(&self) -> usize {
        self.h.len()
    }

    pub fn k_t(&self) -> usize {
        self.k() - self.k_r
    }

    pub fn n(&self) -> usize {
        self.big_g.nrows()
    }

    pub fn m(&self) -> usize {
        self.big_g.ncols()
    }

    /// Flat CSV dump: `field,index1,index2,re,im` with `h,k,i`, `g,k,i`,
    /// and `G,row,col` blocks.
    pub fn dump_csv(&self) -> String {
        let mut out = String::from("field,index1,index2,re,im\n");
        let mut push = |field: &str, i: usize, j: usize, z: Complex64| {
            out.push_str(&format!("{field},{i},{j},{:.17e},{:.17e}\n", z.re, z.im));
        };
        for (k, hk) in self.h.iter().enumerate() {
            for i in 0..hk.len() {
                push("h", k, i, hk[i]);
            }
        }
        for (k, gk) in self.g.iter().enumerate() {
            for i in 0..gk.len() {
                push("g", k, i, gk[i]);
            }
        }
        for i in 0..self.big_g.nrows() {
            for j in 0..self.big_g.ncols() {
                push("G", i, j, self.big_g[(i, j)]);
            }
        }
        out
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn unit_dir(from: [f64; 3], to: [f64; 3], d: f64) -> [f64; 3] {
    [(to[0] - from[0]) / d, (to[1] - from[1]) / d, (to[2] - from[2]) / d]
}

pub(crate) fn complex_gaussian(rng: &mut ChaCha12Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
}

/// LoS/NLoS mixture weights for a linear Rician factor.
fn rician_weights(kappa: f64) -> (f64, f64) {
    ((kappa / (1.0 + kappa)).sqrt(), (1.0 / (1.0 + kappa)).sqrt())
}

fn rician_vector(
    l: f64,
    kappa: f64,
    los: &DVector<Complex64>,
    root: Option<&DMatrix<Complex64>>,
    rng: &mut ChaCha12Rng,
) -> DVector<Complex64> {
    let amp = l.sqrt();
    if kappa >= PURE_LOS_KAPPA {
        return los * Complex64::from(amp);
    }
    let mut w = DVector::from_iterator(los.len(), (0..los.len()).map(|_| complex_gaussian(rng)));
    if let Some(r) = root {
        w = r * w;
    }
    let (c_los, c_nlos) = rician_weights(kappa);
    los * Complex64::from(amp * c_los) + w * Complex64::from(amp * c_nlos)
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Draw every link of the scenario from `rng`. The draw order is fixed
/// (each device's `h`, then each device's `g`, then `G` row-major), so a
/// given `(config, rng state)` always yields the same `ChannelSet`.
pub fn generate_channels(cfg: &SystemConfig, rng: &mut ChaCha12Rng) -> Result<ChannelSet> {
    cfg.validate()?;
    let geo = build_geometry(cfg);
    let c0 = db_to_linear(cfg.c0_db);

    let root_n = if cfg.corr_rho != 0.0 {
        Some(correlation_root(cfg.n, cfg.corr_rho)?)
    } else {
        None
    };
    let root_m = if cfg.corr_rho != 0.0 {
        Some(correlation_root(cfg.m, cfg.corr_rho)?)
    } else {
        None
    };

    let fc_axis = [1.0, 0.0, 0.0];
    let cos_at_fc = |target: [f64; 3]| -> Result<f64> {
        let d = dist(geo.fc, target);
        if !(d > 0.0) {
            return Err(Error::Domain(
                "degenerate geometry: node coincides with the FC".into(),
            ));
        }
        let u = unit_dir(geo.fc, target, d);
        Ok(u[0] * fc_axis[0] + u[1] * fc_axis[1] + u[2] * fc_axis[2])
    };

    let mut h = Vec::with_capacity(cfg.k);
    for (k, &wd) in geo.wd.iter().enumerate() {
        let reflection_side = k < cfg.k_r;
        let alpha = if reflection_side { cfg.alpha_rwf } else { cfg.alpha_twf };
        let kappa_db = if reflection_side { cfg.kappa_rwf_db } else { cfg.kappa_twf_db };
        let d = dist(geo.fc, wd);
        let l = path_loss(d, alpha, c0, cfg.d0_m)?;
        let los = ula_steering(cfg.n, cos_at_fc(wd)?);
        h.push(rician_vector(l, db_to_linear(kappa_db), &los, root_n.as_ref(), rng));
    }

    let mut g = Vec::with_capacity(cfg.k);
    for &wd in &geo.wd {
        let d = dist(geo.ris, wd);
        if !(d > 0.0) {
            return Err(Error::Domain(
                "degenerate geometry: device coincides with the RIS".into(),
            ));
        }
        let l = path_loss(d, cfg.alpha_wr, c0, cfg.d0_m)?;
        let los = ura_steering(cfg.m_y, cfg.m_z, unit_dir(geo.ris, wd, d));
        g.push(rician_vector(l, db_to_linear(cfg.kappa_wr_db), &los, root_m.as_ref(), rng));
    }

    let d_rf = dist(geo.ris, geo.fc);
    if !(d_rf > 0.0) {
        return Err(Error::Domain(
            "degenerate geometry: RIS coincides with the FC".into(),
        ));
    }
    let l_rf = path_loss(d_rf, cfg.alpha_rf, c0, cfg.d0_m)?;
    let a_fc = ula_steering(cfg.n, cos_at_fc(geo.ris)?);
    let a_ris = ura_steering(cfg.m_y, cfg.m_z, unit_dir(geo.ris, geo.fc, d_rf));
    let kappa_rf = db_to_linear(cfg.kappa_rf_db);
    let los_g = &a_fc * a_ris.adjoint();
    let big_g = if kappa_rf >= PURE_LOS_KAPPA {
        los_g * Complex64::from(l_rf.sqrt())
    } else {
        let mut w = DMatrix::zeros(cfg.n, cfg.m);
        for i in 0..cfg.n {
            for j in 0..cfg.m {
                w[(i, j)] = complex_gaussian(rng);
            }
        }
        if let Some(rn) = root_n.as_ref() {
            w = rn * w;
        }
        if let Some(rm) = root_m.as_ref() {
            w = w * rm.adjoint();
        }
        let (c_los, c_nlos) = rician_weights(kappa_rf);
        los_g * Complex64::from(l_rf.sqrt() * c_los) + w * Complex64::from(l_rf.sqrt() * c_nlos)
    };

    ChannelSet::new(h, g, big_g, cfg.k_r)
}
