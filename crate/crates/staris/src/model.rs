//! Received-signal model: effective channels through the surface, the
//! computation MSE, and a Monte-Carlo check of the full signal chain.
//!
//! Each device `k` sends `x_k = v_k s_k` under the per-device budget
//! `|v_k|^2 <= P`. The FC observes the superposition through the device's
//! effective channel (direct path plus the surface path on its side) and
//! estimates the sum of readings with a receive combiner `u`. The
//! computation MSE splits into per-device misalignment terms plus the
//! combined noise power:
//!
//! `mse = sum_k |u^H h_eff_k v_k - 1|^2 + sigma2 * ||u||^2`

use nalgebra::DVector;
use num_complex::Complex64;
use rand_chacha::ChaCha12Rng;

use crate::channel::{complex_gaussian, ChannelSet};
use crate::error::{Error, Result};

/// `|theta| - 1` tolerance for surface phase entries.
pub const UNIT_MODULUS_TOL: f64 = 1e-12;
/// Tolerance on the coupled-phase identity `theta_t = i * q * theta_r`.
pub const COUPLING_TOL: f64 = 1e-9;
/// Relative slack on the power budget check.
pub const POWER_TOL: f64 = 1e-9;

/// One complete transceiver configuration.
///
/// `theta_r` and `theta_t` are the per-element reflection and transmission
/// phases (unit modulus). For coupled-phase operation `theta_t` must equal
/// `i * q * theta_r` elementwise with `q` in {-1, +1}; schemes that relax
/// the coupling simply stop reading `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerState {
    /// Transmit coefficients, one per device (global device order).
    pub v: Vec<Complex64>,
    /// Receive combiner at the FC, length N.
    pub u: DVector<Complex64>,
    /// Reflection phases, length M, unit modulus.
    pub theta_r: Vec<Complex64>,
    /// Transmission phases, length M, unit modulus.
    pub theta_t: Vec<Complex64>,
    /// Per-element coupling selector in {-1, +1}.
    pub q: Vec<i8>,
}

impl BeamformerState {
    /// Feasibility check: unit-modulus phases, binary `q`, the coupling
    /// identity (unless waived), and the power budget.
    pub fn validate(&self, p: f64, require_coupling: bool) -> Result<()> {
        let fail = |msg: String| Err(Error::InfeasibleInit(msg));
        if self.theta_r.len() != self.theta_t.len() || self.theta_r.len() != self.q.len() {
            return fail("phase and coupling vectors must share one length".into());
        }
        for (m, z) in self.theta_r.iter().chain(self.theta_t.iter()).enumerate() {
            if (z.norm() - 1.0).abs() > UNIT_MODULUS_TOL {
                return fail(format!("phase entry {m} has modulus {}", z.norm()));
            }
        }
        for (m, &qm) in self.q.iter().enumerate() {
            if qm != 1 && qm != -1 {
                return fail(format!("q[{m}] = {qm} is not in {{-1, +1}}"));
            }
        }
        if require_coupling {
            for m in 0..self.q.len() {
                let want = Complex64::i() * self.q[m] as f64 * self.theta_r[m];
                if (self.theta_t[m] - want).norm() > COUPLING_TOL {
                    return fail(format!("element {m} violates the coupled-phase identity"));
                }
            }
        }
        for (k, vk) in self.v.iter().enumerate() {
            if vk.norm_sqr() > p * (1.0 + POWER_TOL) {
                return fail(format!(
                    "device {k} exceeds the power budget: |v|^2 = {} > {p}",
                    vk.norm_sqr()
                ));
            }
        }
        if self.u.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return fail("combiner contains non-finite entries".into());
        }
        Ok(())
    }

    /// Dimension consistency against a channel draw.
    pub fn check_dims(&self, ch: &ChannelSet) -> Result<()> {
        if self.v.len() != ch.k()
            || self.u.len() != ch.n()
            || self.theta_r.len() != ch.m()
            || self.theta_t.len() != ch.m()
            || self.q.len() != ch.m()
        {
            return Err(Error::InfeasibleInit(
                "state dimensions do not match the channel set".into(),
            ));
        }
        Ok(())
    }

    /// Flat CSV snapshot: `field,index,re,im` blocks for v, u, theta_r,
    /// theta_t, q.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("field,index,re,im\n");
        let mut push = |field: &str, i: usize, z: Complex64| {
            out.push_str(&format!("{field},{i},{:.17e},{:.17e}\n", z.re, z.im));
        };
        for (i, z) in self.v.iter().enumerate() {
            push("v", i, *z);
        }
        for (i, z) in self.u.iter().enumerate() {
            push("u", i, *z);
        }
        for (i, z) in self.theta_r.iter().enumerate() {
            push("theta_r", i, *z);
        }
        for (i, z) in self.theta_t.iter().enumerate() {
            push("theta_t", i, *z);
        }
        for (i, &qm) in self.q.iter().enumerate() {
            push("q", i, Complex64::from(qm as f64));
        }
        out
    }
}

/// Per-device end-to-end channels after the surface is applied.
#[derive(Debug, Clone)]
pub struct EffectiveChannels {
    /// Reflection-side devices, global indices `0..k_r`.
    pub h_r: Vec<DVector<Complex64>>,
    /// Transmission-side devices, global indices `k_r..k`.
    pub h_t: Vec<DVector<Complex64>>,
}

impl EffectiveChannels {
    pub fn k(&self) -> usize {
        self.h_r.len() + self.h_t.len()
    }

    /// The effective channel of device `k` in global order.
    pub fn get(&self, k: usize) -> &DVector<Complex64> {
        if k < self.h_r.len() {
            &self.h_r[k]
        } else {
            &self.h_t[k - self.h_r.len()]
        }
    }
}

/// Direct path plus the surface path under the given element phases:
/// `h_k + G diag(conj(phases)) g_k`.
pub fn ris_augmented(ch: &ChannelSet, k: usize, phases: &[Complex64]) -> DVector<Complex64> {
    let weighted = DVector::from_iterator(
        ch.m(),
        ch.g[k].iter().zip(phases).map(|(gm, ph)| ph.conj() * gm),
    );
    &ch.h[k] + &ch.big_g * weighted
}

/// Effective channels of every device: reflection side through `theta_r`,
/// transmission side through `theta_t`.
pub fn effective_channels(ch: &ChannelSet, state: &BeamformerState) -> EffectiveChannels {
    let h_r = (0..ch.k_r)
        .map(|k| ris_augmented(ch, k, &state.theta_r))
        .collect();
    let h_t = (ch.k_r..ch.k())
        .map(|k| ris_augmented(ch, k, &state.theta_t))
        .collect();
    EffectiveChannels { h_r, h_t }
}

/// Computation MSE over a prebuilt set of effective channels.
pub fn mse_over(
    eff: &EffectiveChannels,
    u: &DVector<Complex64>,
    v: &[Complex64],
    sigma2: f64,
) -> f64 {
    let mut total = sigma2 * u.norm_squared();
    for k in 0..eff.k() {
        let gain = u.dotc(eff.get(k)) * v[k];
        total += (gain - Complex64::new(1.0, 0.0)).norm_sqr();
    }
    total
}

/// Computation MSE of a state against a channel draw.
pub fn compute_mse(ch: &ChannelSet, state: &BeamformerState, sigma2: f64) -> f64 {
    let eff = effective_channels(ch, state);
    mse_over(&eff, &state.u, &state.v, sigma2)
}

/// One pass through the physical signal chain.
#[derive(Debug, Clone)]
pub struct SignalRealization {
    /// Unit-variance device readings.
    pub s: Vec<Complex64>,
    /// Transmitted symbols `x_k = v_k s_k`.
    pub x: Vec<Complex64>,
    /// Receiver noise vector.
    pub noise: DVector<Complex64>,
    /// Received superposition.
    pub y: DVector<Complex64>,
    /// Combiner output `u^H y`.
    pub s_hat: Complex64,
    /// The target `sum_k s_k`.
    pub s_target: Complex64,
}

/// Draw one signal-chain realization: readings, superposed observation,
/// and the sum estimate.
pub fn draw_realization(
    ch: &ChannelSet,
    state: &BeamformerState,
    sigma2: f64,
    rng: &mut ChaCha12Rng,
) -> SignalRealization {
    let eff = effective_channels(ch, state);
    let sigma = sigma2.sqrt();
    let s: Vec<Complex64> = (0..ch.k()).map(|_| complex_gaussian(rng)).collect();
    let x: Vec<Complex64> = s.iter().zip(&state.v).map(|(sk, vk)| vk * sk).collect();
    let noise = DVector::from_iterator(
        ch.n(),
        (0..ch.n()).map(|_| complex_gaussian(rng) * sigma),
    );
    let mut y = noise.clone();
    for k in 0..ch.k() {
        y.axpy(x[k], eff.get(k), Complex64::new(1.0, 0.0));
    }
    let s_hat = state.u.dotc(&y);
    let s_target = s.iter().sum();
    SignalRealization {
        s,
        x,
        noise,
        y,
        s_hat,
        s_target,
    }
}

/// Empirical MSE of the sum estimate over `n_trials` independent draws.
/// Converges to [`compute_mse`] at the usual `1/sqrt(n_trials)` rate.
pub fn simulate_aircomp(
    ch: &ChannelSet,
    state: &BeamformerState,
    sigma2: f64,
    n_trials: usize,
    rng: &mut ChaCha12Rng,
) -> f64 {
    let eff = effective_channels(ch, state);
    // fold v into the channels once; the per-trial work is then one
    // K-vector of readings, one N-vector of noise, and one combine
    let cols: Vec<DVector<Complex64>> = (0..ch.k()).map(|k| eff.get(k) * state.v[k]).collect();
    let sigma = sigma2.sqrt();
    let n = ch.n();
    let mut y = DVector::<Complex64>::zeros(n);
    let mut acc = 0.0;
    for _ in 0..n_trials {
        for i in 0..n {
            y[i] = complex_gaussian(rng) * sigma;
        }
        let mut target = Complex64::new(0.0, 0.0);
        for col in &cols {
            let sk = complex_gaussian(rng);
            target += sk;
            y.axpy(sk, col, Complex64::new(1.0, 0.0));
        }
        let s_hat = state.u.dotc(&y);
        acc += (s_hat - target).norm_sqr();
    }
    acc / n_trials as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_channels;
    use crate::scenario::{default_config, make_rng, SystemConfig};
    use nalgebra::DMatrix;
    use std::f64::consts::TAU;

    fn small_cfg() -> SystemConfig {
        SystemConfig {
            n: 4,
            m: 4,
            m_y: 2,
            m_z: 2,
            k: 3,
            k_r: 2,
            k_t: 1,
            ..default_config()
        }
    }

    fn random_phases(m: usize, rng: &mut ChaCha12Rng) -> Vec<Complex64> {
        use rand::Rng;
        (0..m)
            .map(|_| Complex64::from_polar(1.0, rng.random::<f64>() * TAU))
            .collect()
    }

    fn random_state(n: usize, m: usize, k: usize, scale: f64, rng: &mut ChaCha12Rng) -> BeamformerState {
        use rand::Rng;
        let theta_r = random_phases(m, rng);
        let q: Vec<i8> = (0..m).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        let theta_t: Vec<Complex64> = theta_r
            .iter()
            .zip(&q)
            .map(|(th, &qm)| Complex64::i() * qm as f64 * th)
            .collect();
        BeamformerState {
            v: (0..k).map(|_| complex_gaussian(rng) * scale).collect(),
            u: DVector::from_iterator(n, (0..n).map(|_| complex_gaussian(rng))),
            theta_r,
            theta_t,
            q,
        }
    }

    #[test]
    fn effective_channel_reduces_without_surface_path() {
        let cfg = small_cfg();
        let mut rng = make_rng(2, 0);
        let mut ch = generate_channels(&cfg, &mut rng).unwrap();
        let state = random_state(cfg.n, cfg.m, cfg.k, 1.0, &mut rng);
        // no device-RIS links
        for gk in &mut ch.g {
            gk.fill(Complex64::new(0.0, 0.0));
        }
        let eff = effective_channels(&ch, &state);
        for k in 0..cfg.k {
            assert!((eff.get(k) - &ch.h[k]).norm() < 1e-14);
        }
        // no RIS-FC link
        let mut ch2 = generate_channels(&cfg, &mut rng).unwrap();
        ch2.big_g = DMatrix::zeros(cfg.n, cfg.m);
        let eff2 = effective_channels(&ch2, &state);
        for k in 0..cfg.k {
            assert!((eff2.get(k) - &ch2.h[k]).norm() < 1e-14);
        }
    }

    #[test]
    fn effective_channel_matches_scalar_expansion() {
        // u^H h_eff v == u^H h v + sum_m conj(theta(m)) (u^H G)(m) g(m) v
        let cfg = small_cfg();
        let mut rng = make_rng(3, 1);
        let ch = generate_channels(&cfg, &mut rng).unwrap();
        let state = random_state(cfg.n, cfg.m, cfg.k, 1.0, &mut rng);
        let eff = effective_channels(&ch, &state);
        let ug = state.u.adjoint() * &ch.big_g;
        for k in 0..cfg.k {
            let phases = if k < cfg.k_r { &state.theta_r } else { &state.theta_t };
            let mut want = state.u.dotc(&ch.h[k]) * state.v[k];
            for m in 0..cfg.m {
                want += phases[m].conj() * ug[m] * ch.g[k][m] * state.v[k];
            }
            let got = state.u.dotc(eff.get(k)) * state.v[k];
            assert!((got - want).norm() < 1e-12, "device {k}");
        }
    }

    #[test]
    fn mse_zero_combiner_gives_device_count() {
        let cfg = small_cfg();
        let mut rng = make_rng(4, 0);
        let ch = generate_channels(&cfg, &mut rng).unwrap();
        let mut state = random_state(cfg.n, cfg.m, cfg.k, 1.0, &mut rng);
        state.u.fill(Complex64::new(0.0, 0.0));
        let mse = compute_mse(&ch, &state, 1e-8);
        assert!((mse - cfg.k as f64).abs() < 1e-12);
    }

    #[test]
    fn mse_perfect_alignment_no_noise_is_zero() {
        let cfg = SystemConfig {
            k: 1,
            k_r: 1,
            k_t: 0,
            ..small_cfg()
        };
        let mut rng = make_rng(5, 0);
        let ch = generate_channels(&cfg, &mut rng).unwrap();
        let mut state = random_state(cfg.n, cfg.m, cfg.k, 1.0, &mut rng);
        let eff = effective_channels(&ch, &state);
        // scale v so the single device hits u^H h v = 1 exactly
        let gain = state.u.dotc(&eff.h_r[0]);
        state.v[0] = gain.conj() / gain.norm_sqr();
        let mse = compute_mse(&ch, &state, 0.0);
        assert!(mse < 1e-20, "mse = {mse}");
    }

    #[test]
    fn mse_invariant_under_global_phase() {
        let cfg = small_cfg();
        let mut rng = make_rng(6, 0);
        let ch = generate_channels(&cfg, &mut rng).unwrap();
        let state = random_state(cfg.n, cfg.m, cfg.k, 1.0, &mut rng);
        let base = compute_mse(&ch, &state, 1e-8);
        for step in 1..8 {
            let rot = Complex64::from_polar(1.0, step as f64 * TAU / 8.0);
            let mut rotated = state.clone();
            rotated.u *= rot;
            for vk in &mut rotated.v {
                *vk *= rot;
            }
            let got = compute_mse(&ch, &rotated, 1e-8);
            assert!((got - base).abs() <= 1e-10 * base.max(1.0), "step {step}");
        }
    }

    #[test]
    fn mse_dominates_noise_floor() {
        let cfg = small_cfg();
        let mut rng = make_rng(7, 0);
        let ch = generate_channels(&cfg, &mut rng).unwrap();
        for _ in 0..20 {
            let state = random_state(cfg.n, cfg.m, cfg.k, 0.3, &mut rng);
            let sigma2 = 2.5e-7;
            let mse = compute_mse(&ch, &state, sigma2);
            assert!(mse >= sigma2 * state.u.norm_squared() - 1e-15);
        }
    }

    #[test]
    fn realization_chain_is_reconstructable() {
        let cfg = small_cfg();
        let mut rng = make_rng(8, 0);
        let ch = generate_channels(&cfg, &mut rng).unwrap();
        let state = random_state(cfg.n, cfg.m, cfg.k, 1.0, &mut rng);
        let r = draw_realization(&ch, &state, 1e-6, &mut rng);
        assert_eq!(r.s.len(), cfg.k);
        for k in 0..cfg.k {
            assert!((r.x[k] - state.v[k] * r.s[k]).norm() < 1e-15);
        }
        let eff = effective_channels(&ch, &state);
        let mut y = r.noise.clone();
        for k in 0..cfg.k {
            y.axpy(r.x[k], eff.get(k), Complex64::new(1.0, 0.0));
        }
        assert!((&y - &r.y).norm() < 1e-12);
        assert!((state.u.dotc(&r.y) - r.s_hat).norm() < 1e-12);
        let sum: Complex64 = r.s.iter().sum();
        assert!((sum - r.s_target).norm() < 1e-12);
    }

    #[test]
    fn empirical_mse_zero_state_estimates_device_count() {
        // u = 0 makes the error exactly |sum_k s_k|^2 with mean K
        let cfg = small_cfg();
        let mut rng = make_rng(9, 0);
        let ch = generate_channels(&cfg, &mut rng).unwrap();
        let mut state = random_state(cfg.n, cfg.m, cfg.k, 1.0, &mut rng);
        state.u.fill(Complex64::new(0.0, 0.0));
        let est = simulate_aircomp(&ch, &state, 1e-9, 10_000, &mut rng);
        let want = cfg.k as f64;
        assert!((est - want).abs() / want < 0.05, "estimate {est}");
    }

    #[test]
    fn empirical_mse_converges_to_analytic() {
        let cfg = small_cfg();
        let mut rng = make_rng(10, 0);
        let ch = generate_channels(&cfg, &mut rng).unwrap();
        let state = random_state(cfg.n, cfg.m, cfg.k, 0.5, &mut rng);
        let exact = compute_mse(&ch, &state, 1e-7);
        let mut coarse_err = 0.0;
        let mut fine_err = 0.0;
        for seed in 0..5 {
            let mut r1 = make_rng(100 + seed, 0);
            let mut r2 = make_rng(200 + seed, 0);
            coarse_err += (simulate_aircomp(&ch, &state, 1e-7, 10_000, &mut r1) - exact).abs();
            fine_err += (simulate_aircomp(&ch, &state, 1e-7, 640_000, &mut r2) - exact).abs();
        }
        // an 8x larger sample should cut the average deviation markedly
        assert!(
            fine_err < coarse_err,
            "fine {fine_err} vs coarse {coarse_err}"
        );
        let est = simulate_aircomp(&ch, &state, 1e-7, 200_000, &mut make_rng(300, 0));
        assert!((est - exact).abs() / exact < 0.05);
    }

    #[test]
    fn validate_flags_infeasible_states() {
        let cfg = small_cfg();
        let mut rng = make_rng(11, 0);
        let state = random_state(cfg.n, cfg.m, cfg.k, 0.1, &mut rng);
        state.validate(1.0, true).unwrap();

        let mut bad = state.clone();
        bad.theta_r[0] *= 1.001;
        assert!(bad.validate(1.0, true).is_err());

        let mut bad = state.clone();
        bad.theta_t[1] = -bad.theta_t[1];
        assert!(bad.validate(1.0, true).is_err());
        // the same state passes once coupling is waived
        assert!(bad.validate(1.0, false).is_ok());

        let mut bad = state.clone();
        bad.q[2] = 0;
        assert!(bad.validate(1.0, true).is_err());

        let mut bad = state.clone();
        bad.v[0] = Complex64::new(2.0, 0.0);
        assert!(bad.validate(1.0, true).is_err());
    }

    #[test]
    fn state_csv_has_all_fields() {
        let cfg = small_cfg();
        let mut rng = make_rng(12, 0);
        let state = random_state(cfg.n, cfg.m, cfg.k, 1.0, &mut rng);
        let csv = state.to_csv();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines[0], "field,index,re,im");
        assert_eq!(lines.len(), 1 + cfg.k + cfg.n + 3 * cfg.m);
        assert!(lines.iter().filter(|l| l.starts_with("q,")).count() == cfg.m);
    }
}
