//! Invariant batteries behind the `analyze` and `validate` subcommands.
//!
//! Each check row compares two quantities and records a verdict; the
//! batteries never abort on a failed check, they report it. `analyze`
//! covers the closed-form identities, the rank-one inverse recursion,
//! the orthogonal-regime approximations, the surface-gap witness, and
//! monotone descent of every scheme. `validate` replays the signal
//! chain in Monte-Carlo and compares against the analytic MSE.

use staris::aobpc::{initial_state, update_u, RunOptions};
use staris::analysis::{
    approx_mse_cris, approx_mse_star, closed_form_mse_cris, closed_form_mse_star,
    cris_effective_norms, cris_to_star_gap, orthogonal_channel_set, sherman_morrison_inverse,
    star_effective_norms,
};
use staris::baselines::{run_cris, run_scheme, RandomCoupling, SchemeId};
use staris::channel::{generate_channels, ChannelSet};
use staris::model::{compute_mse, mse_over, simulate_aircomp};
use staris::scenario::{make_rng, SystemConfig};
use staris::Result;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// One verdict row of a battery report.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub instance: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

pub const CHECK_HEADER: &str = "check_name,instance_id,value_lhs,value_rhs,pass";

pub fn checks_to_csv(checks: &[Check]) -> String {
    let mut out = String::from(CHECK_HEADER);
    out.push('\n');
    for c in checks {
        out.push_str(&format!(
            "{},{},{:.17e},{:.17e},{}\n",
            c.name, c.instance, c.lhs, c.rhs, c.pass
        ));
    }
    out
}

pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass)
}

/// Closed-form identities, inverse recursion, orthogonal-regime
/// approximations, gap witness, and monotone descent, on the given
/// scenario. Orthogonality checks need one receive dimension per
/// device, hence the `n >= k` requirement inherited from the
/// constructor.
pub fn analyze_battery(cfg: &SystemConfig, seed: u64) -> Result<Vec<Check>> {
    cfg.validate()?;
    let sigma2 = cfg.sigma2();
    let p = cfg.power()?;
    let mut checks = Vec::new();

    // closed form equals the direct objective at the optimal combiner
    for i in 0..10 {
        let ch = generate_channels(cfg, &mut make_rng(seed, 100 + i))?;
        let mut state = initial_state(&ch, sigma2, p, &mut make_rng(seed, 200 + i))?;
        state.u = update_u(&ch, &state, sigma2)?;
        let lhs = closed_form_mse_star(&ch, &state.v, &state.theta_r, &state.theta_t, sigma2)?;
        let rhs = compute_mse(&ch, &state, sigma2);
        checks.push(Check {
            name: "closed_form_vs_objective",
            instance: i as usize,
            lhs,
            rhs,
            pass: (lhs - rhs).abs() < 1e-8,
        });
    }

    // rank-one recursion equals dense inversion
    for i in 0..5usize {
        let mut rng = make_rng(seed, 300 + i as u64);
        use rand::Rng;
        let n = cfg.n.min(32);
        let terms: Vec<(f64, DVector<Complex64>)> = (0..cfg.k)
            .map(|_| {
                let h = DVector::from_iterator(
                    n,
                    (0..n).map(|_| {
                        Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                    }),
                );
                (rng.random::<f64>(), h)
            })
            .collect();
        let s2 = 0.1 + rng.random::<f64>();
        let recursive = sherman_morrison_inverse(n, &terms, s2)?;
        let mut d = DMatrix::<Complex64>::identity(n, n) * Complex64::from(s2);
        for (w, h) in &terms {
            d.gerc(Complex64::from(*w), h, h, Complex64::new(1.0, 0.0));
        }
        let dense = d.try_inverse().expect("noise floor keeps the matrix invertible");
        let lhs = (&recursive - &dense).norm() / dense.norm();
        checks.push(Check { name: "recursive_inverse_vs_dense", instance: i, lhs, rhs: 1e-8, pass: lhs < 1e-8 });
    }

    // the separated MSE is exact on orthogonal constructions
    for i in 0..10 {
        let ch = orthogonal_channel_set(cfg.n, cfg.m, cfg.k_r, cfg.k_t, sigma2, p, &mut make_rng(seed, 400 + i))?;
        let state = initial_state(&ch, sigma2, p, &mut make_rng(seed, 500 + i))?;
        let closed = closed_form_mse_star(&ch, &state.v, &state.theta_r, &state.theta_t, sigma2)?;
        let approx = approx_mse_star(
            &star_effective_norms(&ch, &state.theta_r, &state.theta_t),
            &state.v,
            sigma2,
        )?;
        checks.push(Check {
            name: "orthogonal_separation_exact",
            instance: i as usize,
            lhs: (closed - approx).abs(),
            rhs: 1e-6,
            pass: (closed - approx).abs() < 1e-6,
        });
    }

    // a coupling-feasible transmission choice strictly improves on the
    // reflection-only optimum
    if cfg.k_t > 0 {
        for i in 0..10 {
            let ch = orthogonal_channel_set(cfg.n, cfg.m, cfg.k_r, cfg.k_t, sigma2, p, &mut make_rng(seed, 600 + i))?;
            let init = initial_state(&ch, sigma2, p, &mut make_rng(seed, 700 + i))?;
            let opts = RunOptions::new(1e-8, cfg.max_iters);
            let trace = run_cris(&ch, sigma2, p, &opts, &init)?;
            let fin = trace.final_state;
            let (gap, witness) = cris_to_star_gap(&ch, &fin.v, &fin.theta_r, sigma2)?;
            checks.push(Check {
                name: "transmission_gap_negative",
                instance: i as usize,
                lhs: gap,
                rhs: 0.0,
                pass: gap < 0.0 && witness.f.iter().all(|&f| f > 0.0),
            });
        }
    }

    // every scheme descends monotonically
    let coupling_rng_base = 800;
    for (s, &scheme) in SchemeId::ALL.iter().enumerate() {
        for i in 0..3u64 {
            let ch = generate_channels(cfg, &mut make_rng(seed, 900 + i))?;
            let init = initial_state(&ch, sigma2, p, &mut make_rng(seed, 950 + i))?;
            let coupling = RandomCoupling::draw(ch.m(), &mut make_rng(seed, coupling_rng_base + i));
            let opts = RunOptions::from_config(cfg);
            let trace = run_scheme(scheme, &ch, sigma2, p, &opts, &init, Some(&coupling))?;
            let worst_ascent = trace
                .mse_per_iter
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(f64::NEG_INFINITY, f64::max);
            checks.push(Check {
                name: "monotone_descent",
                instance: s * 3 + i as usize,
                lhs: worst_ascent,
                rhs: 1e-9,
                pass: worst_ascent < 1e-9,
            });
        }
    }

    Ok(checks)
}

/// Monte-Carlo replay of the signal chain against the analytic MSE, plus
/// a cross-check of the closed forms at the optimal combiner. Returns
/// the verdicts and the first instance's channels for inspection.
pub struct ValidateOutcome {
    pub checks: Vec<Check>,
    pub sample_channels: ChannelSet,
}

pub fn validate_battery(cfg: &SystemConfig, seed: u64, trials: usize) -> Result<ValidateOutcome> {
    cfg.validate()?;
    let sigma2 = cfg.sigma2();
    let p = cfg.power()?;
    let mut checks = Vec::new();
    let mut sample = None;
    for i in 0..5u64 {
        let ch = generate_channels(cfg, &mut make_rng(seed, 20 + i))?;
        let mut state = initial_state(&ch, sigma2, p, &mut make_rng(seed, 40 + i))?;
        state.u = update_u(&ch, &state, sigma2)?;
        let analytic = compute_mse(&ch, &state, sigma2);
        let empirical =
            simulate_aircomp(&ch, &state, sigma2, trials, &mut make_rng(seed, 60 + i));
        let rel = (empirical - analytic).abs() / analytic.max(f64::MIN_POSITIVE);
        checks.push(Check {
            name: "empirical_vs_analytic_mse",
            instance: i as usize,
            lhs: empirical,
            rhs: analytic,
            pass: rel < 0.01,
        });
        // same combiner through the reflection-only closed form
        let eff = staris::baselines::cris_effective(&ch, &state);
        let u = staris::aobpc::mmse_receiver(&eff, &state.v, sigma2)?;
        let direct = mse_over(&eff, &u, &state.v, sigma2);
        let closed = closed_form_mse_cris(&ch, &state.v, &state.theta_r, sigma2)?;
        checks.push(Check {
            name: "cris_closed_form_vs_objective",
            instance: i as usize,
            lhs: closed,
            rhs: direct,
            pass: (closed - direct).abs() < 1e-8,
        });
        let _ = approx_mse_cris(&cris_effective_norms(&ch, &state.theta_r), &state.v, sigma2)?;
        if sample.is_none() {
            sample = Some(ch);
        }
    }
    Ok(ValidateOutcome {
        checks,
        sample_channels: sample.expect("at least one instance"),
    })
}
