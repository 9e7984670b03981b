//! Closed-form and approximate MSE expressions.
//!
//! After the optimal combiner is substituted back, the MSE collapses to
//! `K - w^H D^{-1} w` with `w` the v-weighted sum of effective channels
//! and `D` their weighted Gram matrix plus noise. `D^{-1}` admits an
//! exact rank-one-update recursion, and when effective channels of
//! different devices are orthogonal the quadratic form separates into
//! per-device terms, giving the approximate MSE
//! `K - sum_k x_k / (sigma2 + x_k)` with `x_k = |v_k|^2 ||h_k||^2`.
//!
//! The separation is exact for the constructed channel sets returned by
//! [`orthogonal_channel_set`] and increasingly accurate for random
//! channels as the antenna count grows.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use std::f64::consts::TAU;

use crate::aobpc::couple_theta_t;
use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::model::{ris_augmented, EffectiveChannels};

const ONE: Complex64 = Complex64::new(1.0, 0.0);

fn check_lengths(ch: &ChannelSet, v: &[Complex64], thetas: &[&[Complex64]]) -> Result<()> {
    if v.len() != ch.k() {
        return Err(Error::Config(format!(
            "{} transmit coefficients for {} devices",
            v.len(),
            ch.k()
        )));
    }
    for th in thetas {
        if th.len() != ch.m() {
            return Err(Error::Config(format!(
                "{} phases for {} surface elements",
                th.len(),
                ch.m()
            )));
        }
    }
    Ok(())
}

/// `K - w^H D^{-1} w` over explicit effective channels.
fn closed_form_over(eff: &EffectiveChannels, v: &[Complex64], sigma2: f64) -> Result<f64> {
    let k = eff.k();
    if k == 0 {
        return Err(Error::Config("closed form needs at least one device".into()));
    }
    let n = eff.get(0).len();
    let mut d = DMatrix::<Complex64>::identity(n, n) * Complex64::from(sigma2);
    let mut w = DVector::<Complex64>::zeros(n);
    for i in 0..k {
        let hk = eff.get(i);
        d.gerc(Complex64::from(v[i].norm_sqr()), hk, hk, ONE);
        w.axpy(v[i], hk, ONE);
    }
    let chol = Cholesky::new(d).ok_or_else(|| {
        Error::Solver("closed form needs a positive definite Gram matrix".into())
    })?;
    let x = chol.solve(&w);
    Ok(k as f64 - w.dotc(&x).re)
}

/// Minimum MSE of the two-sided surface over the combiner, in closed
/// form. Agrees with `compute_mse` evaluated at the optimal combiner.
pub fn closed_form_mse_star(
    ch: &ChannelSet,
    v: &[Complex64],
    theta_r: &[Complex64],
    theta_t: &[Complex64],
    sigma2: f64,
) -> Result<f64> {
    check_lengths(ch, v, &[theta_r, theta_t])?;
    let eff = EffectiveChannels {
        h_r: (0..ch.k_r).map(|k| ris_augmented(ch, k, theta_r)).collect(),
        h_t: (ch.k_r..ch.k()).map(|k| ris_augmented(ch, k, theta_t)).collect(),
    };
    closed_form_over(&eff, v, sigma2)
}

/// Closed-form minimum MSE when only the reflection side is served by
/// the surface.
pub fn closed_form_mse_cris(
    ch: &ChannelSet,
    v: &[Complex64],
    theta: &[Complex64],
    sigma2: f64,
) -> Result<f64> {
    check_lengths(ch, v, &[theta])?;
    let eff = EffectiveChannels {
        h_r: (0..ch.k_r).map(|k| ris_augmented(ch, k, theta)).collect(),
        h_t: (ch.k_r..ch.k()).map(|k| ch.h[k].clone()).collect(),
    };
    closed_form_over(&eff, v, sigma2)
}

/// Running inverse of `sigma2 I + sum weight_i h_i h_i^H`, built one
/// rank-one update at a time.
#[derive(Debug, Clone)]
pub struct RecursiveInverseState {
    /// Updates applied so far.
    pub n: usize,
    /// Inverse after `n` updates.
    pub d_inv: DMatrix<Complex64>,
}

impl RecursiveInverseState {
    /// Start from `(sigma2 I)^{-1}`; the noise floor keeps every stage
    /// invertible, so `sigma2` must be strictly positive.
    pub fn new(dim: usize, sigma2: f64) -> Result<RecursiveInverseState> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::Domain(format!(
                "recursive inverse needs sigma2 > 0, got {sigma2}"
            )));
        }
        Ok(RecursiveInverseState {
            n: 0,
            d_inv: DMatrix::identity(dim, dim) * Complex64::from(1.0 / sigma2),
        })
    }

    /// Absorb one `weight * h h^H` term:
    /// `A <- A - weight (A h)(A h)^H / (1 + weight h^H A h)`.
    pub fn rank_one_update(&mut self, weight: f64, h: &DVector<Complex64>) -> Result<()> {
        if h.len() != self.d_inv.nrows() {
            return Err(Error::Config(format!(
                "vector of length {} against a {}-dim inverse",
                h.len(),
                self.d_inv.nrows()
            )));
        }
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::Domain(format!("update weight must be nonnegative, got {weight}")));
        }
        let ah = &self.d_inv * h;
        let denom = 1.0 + weight * h.dotc(&ah).re;
        self.d_inv.gerc(Complex64::from(-weight / denom), &ah, &ah, ONE);
        self.n += 1;
        Ok(())
    }
}

/// Exact `D^{-1}` for `D = sigma2 I + sum weight_i h_i h_i^H` via the
/// rank-one recursion. An empty term list returns `sigma2^{-1} I`.
pub fn sherman_morrison_inverse(
    dim: usize,
    terms: &[(f64, DVector<Complex64>)],
    sigma2: f64,
) -> Result<DMatrix<Complex64>> {
    let mut state = RecursiveInverseState::new(dim, sigma2)?;
    for (weight, h) in terms {
        state.rank_one_update(*weight, h)?;
    }
    Ok(state.d_inv)
}

/// Squared effective-channel norms when both sides are served by the
/// surface.
pub fn star_effective_norms(
    ch: &ChannelSet,
    theta_r: &[Complex64],
    theta_t: &[Complex64],
) -> Vec<f64> {
    (0..ch.k())
        .map(|k| {
            let phases = if k < ch.k_r { theta_r } else { theta_t };
            ris_augmented(ch, k, phases).norm_squared()
        })
        .collect()
}

/// Squared effective-channel norms when only the reflection side is
/// served; transmission-side devices keep their direct norms.
pub fn cris_effective_norms(ch: &ChannelSet, theta: &[Complex64]) -> Vec<f64> {
    (0..ch.k())
        .map(|k| {
            if k < ch.k_r {
                ris_augmented(ch, k, theta).norm_squared()
            } else {
                ch.h[k].norm_squared()
            }
        })
        .collect()
}

fn approx_mse(eff_norms_sq: &[f64], v: &[Complex64], sigma2: f64) -> Result<f64> {
    if eff_norms_sq.len() != v.len() {
        return Err(Error::Config(format!(
            "{} norms for {} transmit coefficients",
            eff_norms_sq.len(),
            v.len()
        )));
    }
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::Domain(format!("noise power must be nonnegative, got {sigma2}")));
    }
    let mut total = v.len() as f64;
    for (norm_sq, vk) in eff_norms_sq.iter().zip(v) {
        if !(*norm_sq >= 0.0) || !norm_sq.is_finite() {
            return Err(Error::Domain(format!("channel norm must be nonnegative, got {norm_sq}")));
        }
        let x = vk.norm_sqr() * norm_sq;
        if x > 0.0 {
            total -= x / (sigma2 + x);
        }
    }
    Ok(total)
}

/// Approximate MSE of the two-sided surface under orthogonal effective
/// channels: `K - sum_k x_k / (sigma2 + x_k)` with
/// `x_k = |v_k|^2 * eff_norms_sq[k]`. Feed [`star_effective_norms`].
pub fn approx_mse_star(eff_norms_sq: &[f64], v: &[Complex64], sigma2: f64) -> Result<f64> {
    approx_mse(eff_norms_sq, v, sigma2)
}

/// Same separation for the reflection-only surface. Feed
/// [`cris_effective_norms`].
pub fn approx_mse_cris(eff_norms_sq: &[f64], v: &[Complex64], sigma2: f64) -> Result<f64> {
    approx_mse(eff_norms_sq, v, sigma2)
}

/// Evidence that serving the transmission side helps: a coupling-feasible
/// transmission phase vector plus the per-device terms entering the
/// comparison.
#[derive(Debug, Clone)]
pub struct GapWitness {
    /// Transmission phases, a quarter turn off `theta` elementwise.
    pub theta_t_bar: Vec<Complex64>,
    /// `|v_k|^2 ||h_k||^2` per transmission-side device (global index
    /// `k_r + i`).
    pub e: Vec<f64>,
    /// `sigma2 (2 Re(h_k^H s_k) + ||s_k||^2)` with `s_k` the surface
    /// path opened by `theta_t_bar`; positive when the surface path adds
    /// constructively.
    pub f: Vec<f64>,
}

/// Approximate-MSE gap between a two-sided surface reusing a converged
/// reflection-only solution `(v, theta)` and that solution itself.
///
/// The transmission phases are not optimized: each element is set to the
/// coupling-feasible choice (`theta_t_bar = ±i theta`) that rotates its
/// aggregate transmission-side contribution onto the positive real axis.
/// Whenever every `f_k` is positive the gap is strictly negative. When
/// no such choice opens a transmission path (no transmission devices, or
/// all their surface links are zero) there is nothing to compare and the
/// witness is reported as not found.
pub fn cris_to_star_gap(
    ch: &ChannelSet,
    v: &[Complex64],
    theta: &[Complex64],
    sigma2: f64,
) -> Result<(f64, GapWitness)> {
    check_lengths(ch, v, &[theta])?;
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::Domain(format!("gap comparison needs sigma2 > 0, got {sigma2}")));
    }
    if ch.k_t() == 0 {
        return Err(Error::WitnessNotFound(
            "no transmission-side devices to open a path for".into(),
        ));
    }
    // aggregate transmission-side coupling of element m
    let q_bar: Vec<i8> = (0..ch.m())
        .map(|m| {
            let col = ch.big_g.column(m);
            let mut z = Complex64::new(0.0, 0.0);
            for k in ch.k_r..ch.k() {
                z += ch.h[k].dotc(&col) * ch.g[k][m];
            }
            let aligned = (-Complex64::i() * theta[m].conj() * z).re;
            if aligned >= 0.0 {
                1
            } else {
                -1
            }
        })
        .collect();
    let theta_t_bar = couple_theta_t(theta, &q_bar);

    let mut e = Vec::with_capacity(ch.k_t());
    let mut f = Vec::with_capacity(ch.k_t());
    for k in ch.k_r..ch.k() {
        let s = &ch.big_g
            * DVector::from_iterator(
                ch.m(),
                (0..ch.m()).map(|m| theta_t_bar[m].conj() * ch.g[k][m]),
            );
        e.push(v[k].norm_sqr() * ch.h[k].norm_squared());
        f.push(sigma2 * (2.0 * ch.h[k].dotc(&s).re + s.norm_squared()));
    }
    if !(f.iter().sum::<f64>() > 0.0) {
        return Err(Error::WitnessNotFound(
            "no coupling-feasible transmission phases open a surface path".into(),
        ));
    }
    let star = approx_mse_star(&star_effective_norms(ch, theta, &theta_t_bar), v, sigma2)?;
    let cris = approx_mse_cris(&cris_effective_norms(ch, theta), v, sigma2)?;
    Ok((star - cris, GapWitness { theta_t_bar, e, f }))
}

/// Channel set with exactly orthogonal per-device channels: device `k`
/// occupies receive dimension `k` alone, and surface element `m` links
/// only to device `m mod K`. The separated MSE formulas are exact on
/// these sets.
///
/// Direct gains are drawn so `P |alpha_k|^2 / sigma2` spans about
/// `[0.3, 31]` (log-uniform), keeping every device's term away from both
/// saturation and the noise floor. Surface links carry half the direct
/// amplitude split across the device's elements. Draw order: two
/// uniforms per device (phase, exponent), then one uniform phase per
/// surface element.
pub fn orthogonal_channel_set(
    n: usize,
    m: usize,
    k_r: usize,
    k_t: usize,
    sigma2: f64,
    p: f64,
    rng: &mut ChaCha12Rng,
) -> Result<ChannelSet> {
    let k = k_r + k_t;
    if k == 0 || m == 0 {
        return Err(Error::Config("need at least one device and one surface element".into()));
    }
    if n < k {
        return Err(Error::Config(format!(
            "orthogonal construction needs one receive dimension per device, got n = {n} < k = {k}"
        )));
    }
    if !(sigma2 > 0.0) || !(p > 0.0) {
        return Err(Error::Config("orthogonal construction needs sigma2 > 0 and p > 0".into()));
    }
    let owners: Vec<usize> = (0..m).map(|i| i % k).collect();
    let owned: Vec<f64> = (0..k).map(|d| owners.iter().filter(|&&o| o == d).count() as f64).collect();

    let mut h = Vec::with_capacity(k);
    let mut alpha_abs = Vec::with_capacity(k);
    for d in 0..k {
        let phase = rng.random::<f64>() * TAU;
        let exponent = -0.5 + 2.0 * rng.random::<f64>();
        let r = ((sigma2 / p) * 10f64.powf(exponent)).sqrt();
        alpha_abs.push(r);
        let mut hd = DVector::zeros(n);
        hd[d] = Complex64::from_polar(r, phase);
        h.push(hd);
    }
    let mut g = vec![DVector::<Complex64>::zeros(m); k];
    let mut big_g = DMatrix::<Complex64>::zeros(n, m);
    for (i, &owner) in owners.iter().enumerate() {
        let phase = rng.random::<f64>() * TAU;
        let amp = 0.5 * alpha_abs[owner] / owned[owner].sqrt();
        g[owner][i] = Complex64::from_polar(amp, phase);
        big_g[(owner, i)] = ONE;
    }
    ChannelSet::new(h, g, big_g, k_r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aobpc::{initial_state, mmse_receiver, update_u, RunOptions};
    use crate::baselines::{cris_effective, run_cris};
    use crate::channel::generate_channels;
    use crate::model::{compute_mse, mse_over, BeamformerState};
    use crate::scenario::{default_config, make_rng, SystemConfig};

    fn small_cfg() -> SystemConfig {
        SystemConfig {
            n: 8,
            m: 8,
            m_y: 2,
            m_z: 4,
            k: 5,
            k_r: 3,
            k_t: 2,
            snr_db: 15.0,
            d_x_m: 0.5,
            d_y_m: 0.8,
            d_z_m: 0.2,
            d_r_m: 0.3,
            ..default_config()
        }
    }

    fn instance(seed: u64) -> (ChannelSet, BeamformerState, f64, f64) {
        let cfg = small_cfg();
        let sigma2 = cfg.sigma2();
        let p = cfg.power().unwrap();
        let ch = generate_channels(&cfg, &mut make_rng(seed, 0)).unwrap();
        let state = initial_state(&ch, sigma2, p, &mut make_rng(seed, 1)).unwrap();
        (ch, state, sigma2, p)
    }

    #[test]
    fn closed_form_zero_v_gives_device_count() {
        let (ch, state, sigma2, _) = instance(31);
        let zeros = vec![Complex64::new(0.0, 0.0); ch.k()];
        let star =
            closed_form_mse_star(&ch, &zeros, &state.theta_r, &state.theta_t, sigma2).unwrap();
        assert!((star - ch.k() as f64).abs() < 1e-12);
        let cris = closed_form_mse_cris(&ch, &zeros, &state.theta_r, sigma2).unwrap();
        assert!((cris - ch.k() as f64).abs() < 1e-12);
    }

    #[test]
    fn closed_form_matches_mse_at_optimal_combiner() {
        for seed in 32..42 {
            let (ch, mut state, sigma2, _) = instance(seed);
            state.u = update_u(&ch, &state, sigma2).unwrap();
            let direct = compute_mse(&ch, &state, sigma2);
            let closed =
                closed_form_mse_star(&ch, &state.v, &state.theta_r, &state.theta_t, sigma2)
                    .unwrap();
            assert!((closed - direct).abs() < 1e-8, "seed {seed}: {closed} vs {direct}");

            let eff = cris_effective(&ch, &state);
            let u = mmse_receiver(&eff, &state.v, sigma2).unwrap();
            let direct = mse_over(&eff, &u, &state.v, sigma2);
            let closed = closed_form_mse_cris(&ch, &state.v, &state.theta_r, sigma2).unwrap();
            assert!((closed - direct).abs() < 1e-8, "seed {seed}: {closed} vs {direct}");
        }
    }

    #[test]
    fn closed_form_stays_in_range() {
        for seed in 42..52 {
            let (ch, state, sigma2, _) = instance(seed);
            let val =
                closed_form_mse_star(&ch, &state.v, &state.theta_r, &state.theta_t, sigma2)
                    .unwrap();
            assert!(val > -1e-10 && val < ch.k() as f64 + 1e-10, "seed {seed}: {val}");
        }
    }

    #[test]
    fn recursion_base_cases() {
        let st = RecursiveInverseState::new(3, 0.25).unwrap();
        assert_eq!(st.n, 0);
        assert!((st.d_inv[(0, 0)] - Complex64::from(4.0)).norm() < 1e-14);
        assert!(st.d_inv[(0, 1)].norm() == 0.0);
        assert!(matches!(RecursiveInverseState::new(3, 0.0), Err(Error::Domain(_))));
        // scalar: (sigma2 + w |h|^2)^{-1}
        let inv = sherman_morrison_inverse(
            1,
            &[(2.0, DVector::from_element(1, Complex64::new(0.0, 3.0)))],
            0.5,
        )
        .unwrap();
        assert!((inv[(0, 0)] - Complex64::from(1.0 / 18.5)).norm() < 1e-14);
    }

    #[test]
    fn recursion_matches_dense_inverse() {
        let mut rng = make_rng(53, 0);
        for _ in 0..5 {
            let n = 16;
            let terms: Vec<(f64, DVector<Complex64>)> = (0..8)
                .map(|_| {
                    let h = DVector::from_iterator(
                        n,
                        (0..n).map(|_| crate::channel::complex_gaussian(&mut rng)),
                    );
                    (rng.random::<f64>() * 2.0, h)
                })
                .collect();
            let sigma2 = 0.1 + rng.random::<f64>();
            let recursive = sherman_morrison_inverse(n, &terms, sigma2).unwrap();
            let mut d = DMatrix::<Complex64>::identity(n, n) * Complex64::from(sigma2);
            for (w, h) in &terms {
                d.gerc(Complex64::from(*w), h, h, ONE);
            }
            let dense = d.try_inverse().unwrap();
            let rel = (&recursive - &dense).norm() / dense.norm();
            assert!(rel < 1e-8, "relative error {rel}");
        }
    }

    #[test]
    fn approx_limits() {
        let v = vec![Complex64::from(1.0); 4];
        assert!((approx_mse_star(&[0.0; 4], &v, 0.3).unwrap() - 4.0).abs() < 1e-14);
        let huge = approx_mse_cris(&[1e12; 4], &v, 0.3).unwrap();
        assert!(huge > 0.0 && huge < 1e-9, "limit from above: {huge}");
        assert!(approx_mse_star(&[1.0; 3], &v, 0.3).is_err());
        assert!(approx_mse_star(&[-1.0; 4], &v, 0.3).is_err());
    }

    #[test]
    fn approx_is_exact_on_orthogonal_sets() {
        for seed in 54..60 {
            let sigma2 = 0.05;
            let p = 2.0;
            let ch =
                orthogonal_channel_set(8, 8, 2, 2, sigma2, p, &mut make_rng(seed, 0)).unwrap();
            let state = initial_state(&ch, sigma2, p, &mut make_rng(seed, 1)).unwrap();
            let closed =
                closed_form_mse_star(&ch, &state.v, &state.theta_r, &state.theta_t, sigma2)
                    .unwrap();
            let approx = approx_mse_star(
                &star_effective_norms(&ch, &state.theta_r, &state.theta_t),
                &state.v,
                sigma2,
            )
            .unwrap();
            assert!((closed - approx).abs() < 1e-6, "seed {seed}: {closed} vs {approx}");
            let closed = closed_form_mse_cris(&ch, &state.v, &state.theta_r, sigma2).unwrap();
            let approx = approx_mse_cris(
                &cris_effective_norms(&ch, &state.theta_r),
                &state.v,
                sigma2,
            )
            .unwrap();
            assert!((closed - approx).abs() < 1e-6, "seed {seed}: {closed} vs {approx}");
        }
    }

    #[test]
    fn orthogonal_sets_have_disjoint_support() {
        let ch = orthogonal_channel_set(8, 8, 2, 2, 0.1, 1.0, &mut make_rng(61, 0)).unwrap();
        for a in 0..ch.k() {
            for b in 0..a {
                assert_eq!(ch.h[a].dotc(&ch.h[b]).norm(), 0.0);
            }
            // surface elements of device a only touch its own dimension
            for m in 0..ch.m() {
                if ch.g[a][m].norm() > 0.0 {
                    assert_eq!(m % ch.k(), a);
                }
            }
        }
        assert!(matches!(
            orthogonal_channel_set(3, 8, 2, 2, 0.1, 1.0, &mut make_rng(61, 0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn gap_is_negative_with_positive_witness_terms() {
        for seed in 62..68 {
            let sigma2 = 0.05;
            let p = 2.0;
            let ch =
                orthogonal_channel_set(8, 8, 2, 2, sigma2, p, &mut make_rng(seed, 0)).unwrap();
            let init = initial_state(&ch, sigma2, p, &mut make_rng(seed, 1)).unwrap();
            let opts = RunOptions::new(1e-8, 400);
            let trace = run_cris(&ch, sigma2, p, &opts, &init).unwrap();
            let fin = trace.final_state;
            let (gap, witness) = cris_to_star_gap(&ch, &fin.v, &fin.theta_r, sigma2).unwrap();
            assert!(witness.f.iter().all(|&fk| fk > 0.0), "seed {seed}: f = {:?}", witness.f);
            assert!(gap < 0.0, "seed {seed}: gap = {gap}");
            assert_eq!(witness.e.len(), ch.k_t());
            // the witness phases stay coupling-feasible: a quarter turn
            // off the reflection phases either way
            for m in 0..ch.m() {
                let ratio = witness.theta_t_bar[m] / fin.theta_r[m];
                assert!(ratio.re.abs() < 1e-12);
                assert!((ratio.im.abs() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gap_witness_not_found_without_a_surface_path() {
        let sigma2 = 0.05;
        let ch = orthogonal_channel_set(8, 8, 2, 2, sigma2, 2.0, &mut make_rng(69, 0)).unwrap();
        let v = vec![Complex64::from(1.0); ch.k()];
        let theta = vec![Complex64::from(1.0); ch.m()];
        // silence every transmission-side surface link
        let mut dead = ch.clone();
        for k in dead.k_r..dead.k() {
            dead.g[k] = DVector::zeros(dead.m());
        }
        assert!(matches!(
            cris_to_star_gap(&dead, &v, &theta, sigma2),
            Err(Error::WitnessNotFound(_))
        ));
        // no transmission-side devices at all
        let all_r = orthogonal_channel_set(8, 8, 4, 0, sigma2, 2.0, &mut make_rng(69, 1)).unwrap();
        let v = vec![Complex64::from(1.0); all_r.k()];
        assert!(matches!(
            cris_to_star_gap(&all_r, &v, &theta, sigma2),
            Err(Error::WitnessNotFound(_))
        ));
    }

    #[test]
    fn per_device_term_is_increasing_in_received_power() {
        // the gap argument rests on x / (sigma2 + x) growing with x
        let sigma2 = 0.7;
        let term = |x: f64| x / (sigma2 + x);
        let mut last = term(0.0);
        for i in 1..200 {
            let now = term(i as f64 * 0.05);
            assert!(now > last);
            last = now;
        }
        assert!(term(1e12) < 1.0);
    }
}
