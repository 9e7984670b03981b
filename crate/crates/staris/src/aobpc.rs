//! Alternating optimization with binary-coupled surface phases.
//!
//! The MSE is minimized block by block: the combiner `u` has a closed-form
//! Hermitian solve, each transmit coefficient `v_k` a water-filling-style
//! closed form, and the surface phases are updated one element at a time.
//! Each element update is the exact one-variable minimizer, so every step
//! is non-increasing and the outer loop converges monotonically.
//!
//! The phase objective groups into linear terms: for reflection-side
//! devices the term is `|b + conj(theta_r(m)) a(m)|^2` and for
//! transmission-side devices `|d + conj(theta_r(m) i q(m)) c(m)|^2`, with
//! `a = diag(u^H G) g_k v_k` (and `c` likewise) and `b, d` collecting the
//! remaining elements. Minimizing over one unit-modulus phase gives
//! `theta_r(m) = -eta / |eta|` where
//!
//! `eta = sum_r a_k(m) conj(b_k(m)) - i sum_t q(m) c_k(m) conj(d_k(m))`
//!
//! (the transmission coefficient carries `conj(i q(m)) = -i q(m)`), and
//! the binary selector flips to `q(m) = -sign(Re[sum_t conj(theta_r(m) i)
//! c_k(m) conj(d_k(m))])`.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use std::f64::consts::TAU;

use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::model::{effective_channels, mse_over, BeamformerState, EffectiveChannels};

/// Below this magnitude an element's `eta` is treated as degenerate and
/// the current phase is kept.
pub const ETA_KEEP_THRESHOLD: f64 = 1e-14;

/// Relative tolerance of the power bisection on `|v|^2`.
const POWER_BISECT_TOL: f64 = 1e-10;
const POWER_BISECT_MAX_ITERS: usize = 200;

const ONE: Complex64 = Complex64::new(1.0, 0.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Outcome of one per-device power allocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerAllocation {
    /// The new transmit coefficient.
    pub v: Complex64,
    /// Lagrange multiplier of the power constraint (0 when inactive).
    pub mu: f64,
    /// Whether the budget binds (`|v|^2 == p` up to tolerance).
    pub active: bool,
}

/// MMSE combiner for an arbitrary set of per-device channels:
/// `u = (sum_k |v_k|^2 e_k e_k^H + sigma2 I)^{-1} sum_k e_k v_k`.
pub fn mmse_receiver(
    eff: &EffectiveChannels,
    v: &[Complex64],
    sigma2: f64,
) -> Result<DVector<Complex64>> {
    let k = eff.k();
    if k == 0 {
        return Err(Error::Config("combiner update needs at least one device".into()));
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
        Error::Solver("combiner system is not positive definite (sigma2 = 0 with rank-deficient channels?)".into())
    })?;
    Ok(chol.solve(&w))
}

/// MSE-optimal combiner for the current state.
pub fn update_u(
    ch: &ChannelSet,
    state: &BeamformerState,
    sigma2: f64,
) -> Result<DVector<Complex64>> {
    let eff = effective_channels(ch, state);
    mmse_receiver(&eff, &state.v, sigma2)
}

/// Power-constrained minimizer of one device's misalignment
/// `|u^H h v - 1|^2` subject to `|v|^2 <= p`. The unconstrained optimum
/// is `conj(g)/|g|^2` with `g = u^H h`; when it violates the budget the
/// multiplier is found by bisection on the strictly decreasing map
/// `mu -> |conj(g)/(|g|^2 + mu)|^2`.
pub fn update_v_single(
    h_eff: &DVector<Complex64>,
    u: &DVector<Complex64>,
    p: f64,
) -> PowerAllocation {
    let g = u.dotc(h_eff);
    let gsq = g.norm_sqr();
    if gsq == 0.0 {
        // the device cannot reach the combiner output; sending is useless
        return PowerAllocation { v: ZERO, mu: 0.0, active: false };
    }
    if 1.0 / gsq < p {
        return PowerAllocation { v: g.conj() / gsq, mu: 0.0, active: false };
    }
    let vsq = |mu: f64| gsq / (gsq + mu).powi(2);
    let mut hi = gsq;
    let mut guard = 0;
    while vsq(hi) >= p {
        hi *= 2.0;
        guard += 1;
        assert!(guard < 4096, "power bisection bracket failed to expand");
    }
    let mut lo = 0.0;
    let mut mu = hi;
    for _ in 0..POWER_BISECT_MAX_ITERS {
        mu = 0.5 * (lo + hi);
        let val = vsq(mu);
        if ((val - p) / p).abs() < POWER_BISECT_TOL {
            break;
        }
        if val > p {
            lo = mu;
        } else {
            hi = mu;
        }
    }
    PowerAllocation { v: g.conj() / (gsq + mu), mu, active: true }
}

/// Power allocation for every device against the current effective
/// channels and combiner.
pub fn update_all_v(ch: &ChannelSet, state: &BeamformerState, p: f64) -> Vec<PowerAllocation> {
    let eff = effective_channels(ch, state);
    (0..ch.k())
        .map(|k| update_v_single(eff.get(k), &state.u, p))
        .collect()
}

/// One squared term of the phase objective: `|offset + theta^H coeff|^2`.
#[derive(Debug, Clone)]
pub(crate) struct LinearTerm {
    pub offset: Complex64,
    pub coeff: Vec<Complex64>,
}

/// The gradient coefficient of element `m`: with all other elements held
/// fixed the objective is `const + 2 Re[conj(theta(m)) eta]`.
pub(crate) fn element_eta(terms: &[LinearTerm], theta: &[Complex64], m: usize) -> Complex64 {
    let mut eta = ZERO;
    for t in terms {
        let mut resid = t.offset;
        for (j, th) in theta.iter().enumerate() {
            if j != m {
                resid += th.conj() * t.coeff[j];
            }
        }
        eta += t.coeff[m] * resid.conj();
    }
    eta
}

/// One Gauss-Seidel pass of exact per-element minimizers over a
/// unit-modulus phase vector. Residuals are recomputed fresh for every
/// element, so each step sees the values already updated this pass.
pub(crate) fn unit_modulus_pass(theta: &mut [Complex64], terms: &[LinearTerm]) {
    for m in 0..theta.len() {
        let eta = element_eta(terms, theta, m);
        if eta.norm() > ETA_KEEP_THRESHOLD {
            theta[m] = -eta / Complex64::from(eta.norm());
        }
    }
}

/// Sum of squared linear terms at the given phases.
pub(crate) fn terms_objective(terms: &[LinearTerm], theta: &[Complex64]) -> f64 {
    terms
        .iter()
        .map(|t| {
            let mut val = t.offset;
            for (th, c) in theta.iter().zip(&t.coeff) {
                val += th.conj() * c;
            }
            val.norm_sqr()
        })
        .sum()
}

/// Per-iteration quantities shared by all element updates: coefficient
/// rows `a_k = diag(u^H G) g_k v_k` and constant offsets
/// `u^H h_k v_k - 1`, split by device side.
pub struct PhaseWorkspace {
    r_terms: Vec<LinearTerm>,
    t_raw: Vec<LinearTerm>,
    m: usize,
}

impl PhaseWorkspace {
    pub fn new(ch: &ChannelSet, u: &DVector<Complex64>, v: &[Complex64]) -> PhaseWorkspace {
        let ug = u.adjoint() * &ch.big_g;
        let term_for = |k: usize| -> LinearTerm {
            let coeff: Vec<Complex64> = (0..ch.m()).map(|m| ug[m] * ch.g[k][m] * v[k]).collect();
            let offset = u.dotc(&ch.h[k]) * v[k] - ONE;
            LinearTerm { offset, coeff }
        };
        PhaseWorkspace {
            r_terms: (0..ch.k_r).map(term_for).collect(),
            t_raw: (ch.k_r..ch.k()).map(term_for).collect(),
            m: ch.m(),
        }
    }

    /// Number of surface elements.
    pub fn elements(&self) -> usize {
        self.m
    }

    /// Terms of the reflection-phase objective when the transmission
    /// phases follow `theta_t(m) = coupling(m) * theta_r(m)`. `None`
    /// drops the transmission terms entirely (surface invisible to that
    /// side).
    pub(crate) fn terms_with_coupling(&self, coupling: Option<&[Complex64]>) -> Vec<LinearTerm> {
        let mut terms = self.r_terms.clone();
        if let Some(c) = coupling {
            terms.extend(self.t_raw.iter().map(|t| LinearTerm {
                offset: t.offset,
                coeff: t
                    .coeff
                    .iter()
                    .zip(c)
                    .map(|(cm, cp)| cp.conj() * cm)
                    .collect(),
            }));
        }
        terms
    }

    /// Reflection-side terms only (phases act on one side).
    pub(crate) fn reflection_terms(&self) -> Vec<LinearTerm> {
        self.r_terms.clone()
    }

    /// Raw transmission-side terms keyed directly by `theta_t`.
    pub(crate) fn transmission_terms(&self) -> Vec<LinearTerm> {
        self.t_raw.clone()
    }

    fn binary_coupling(q: &[i8]) -> Vec<Complex64> {
        q.iter().map(|&qm| Complex64::i() * qm as f64).collect()
    }

    /// Gradient coefficient of `theta_r(m)` under binary coupling.
    pub fn eta(&self, m: usize, theta_r: &[Complex64], q: &[i8]) -> Complex64 {
        let coupling = Self::binary_coupling(q);
        element_eta(&self.terms_with_coupling(Some(&coupling)), theta_r, m)
    }

    /// `Re[sum_t conj(theta_r(m) i) c_k(m) conj(d_k(m))]`, the linear
    /// coefficient of `q(m)` in the objective.
    pub fn q_metric(&self, m: usize, theta_r: &[Complex64], q: &[i8]) -> f64 {
        let mut metric = 0.0;
        for t in &self.t_raw {
            let mut d = t.offset;
            for j in 0..self.m {
                if j != m {
                    d += (theta_r[j] * Complex64::i() * q[j] as f64).conj() * t.coeff[j];
                }
            }
            metric += ((theta_r[m] * Complex64::i()).conj() * t.coeff[m] * d.conj()).re;
        }
        metric
    }

    /// The phase-objective value under binary coupling (the MSE without
    /// its constant noise term).
    pub fn objective(&self, theta_r: &[Complex64], q: &[i8]) -> f64 {
        let coupling = Self::binary_coupling(q);
        terms_objective(&self.terms_with_coupling(Some(&coupling)), theta_r)
    }
}

/// Exact minimizer of the single-element phase problem; keeps the current
/// phase when `eta` is degenerate.
pub fn update_theta_r_element(
    ws: &PhaseWorkspace,
    m: usize,
    theta_r: &[Complex64],
    q: &[i8],
) -> Complex64 {
    let eta = ws.eta(m, theta_r, q);
    if eta.norm() > ETA_KEEP_THRESHOLD {
        -eta / Complex64::from(eta.norm())
    } else {
        theta_r[m]
    }
}

/// Exact minimizer of the single-element binary selection; the tie at a
/// zero metric resolves to `-1`.
pub fn update_q_element(ws: &PhaseWorkspace, m: usize, theta_r: &[Complex64], q: &[i8]) -> i8 {
    if ws.q_metric(m, theta_r, q) >= 0.0 {
        -1
    } else {
        1
    }
}

/// Transmission phases implied by the coupling: `theta_t = i q theta_r`.
pub fn couple_theta_t(theta_r: &[Complex64], q: &[i8]) -> Vec<Complex64> {
    theta_r
        .iter()
        .zip(q)
        .map(|(th, &qm)| Complex64::i() * qm as f64 * th)
        .collect()
}

/// One full phase sweep: a Gauss-Seidel pass over all reflection phases,
/// a pass over all binary selectors, then recoupling of `theta_t`.
/// Every step is an exact one-variable minimizer, so the phase objective
/// is non-increasing across the sweep.
pub fn sweep_phases(ch: &ChannelSet, state: &mut BeamformerState) {
    let ws = PhaseWorkspace::new(ch, &state.u, &state.v);
    let coupling = PhaseWorkspace::binary_coupling(&state.q);
    let terms = ws.terms_with_coupling(Some(&coupling));
    unit_modulus_pass(&mut state.theta_r, &terms);
    for m in 0..ws.elements() {
        state.q[m] = update_q_element(&ws, m, &state.theta_r, &state.q);
    }
    state.theta_t = couple_theta_t(&state.theta_r, &state.q);
}

/// Stopping rule and sweep count for the alternating loop.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Stop when the per-iteration MSE decrease falls below this.
    pub epsilon: f64,
    /// Hard cap on outer iterations.
    pub max_iters: usize,
    /// Phase sweeps per outer iteration.
    pub phase_sweeps: usize,
}

impl RunOptions {
    pub fn new(epsilon: f64, max_iters: usize) -> RunOptions {
        RunOptions { epsilon, max_iters, phase_sweeps: 1 }
    }

    pub fn from_config(cfg: &crate::scenario::SystemConfig) -> RunOptions {
        RunOptions::new(cfg.epsilon, cfg.max_iters)
    }
}

/// Record of one optimization run.
#[derive(Debug, Clone)]
pub struct IterationTrace {
    /// MSE before the first iteration and after each one.
    pub mse_per_iter: Vec<f64>,
    /// Outer iterations executed.
    pub iterations: usize,
    /// Whether the decrease rule fired (as opposed to the iteration cap).
    pub converged: bool,
    /// State at termination.
    pub final_state: BeamformerState,
}

impl IterationTrace {
    /// MSE at termination.
    pub fn final_mse(&self) -> f64 {
        *self.mse_per_iter.last().expect("trace always holds the initial MSE")
    }
}

/// Shared alternating-descent driver: combiner solve, per-device power
/// allocation, then a scheme-specific phase step, tracing the scheme's
/// objective after every outer iteration.
pub(crate) fn run_alternating(
    ch: &ChannelSet,
    sigma2: f64,
    p: f64,
    opts: &RunOptions,
    init: &BeamformerState,
    require_coupling: bool,
    eff_fn: &dyn Fn(&ChannelSet, &BeamformerState) -> EffectiveChannels,
    phase_fn: &mut dyn FnMut(&ChannelSet, &mut BeamformerState),
) -> Result<IterationTrace> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::Domain(format!("power budget must be positive, got {p}")));
    }
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::Domain(format!("noise power must be non-negative, got {sigma2}")));
    }
    if opts.max_iters == 0 || !(opts.epsilon > 0.0) {
        return Err(Error::Config("run options need max_iters >= 1 and epsilon > 0".into()));
    }
    init.check_dims(ch)?;
    init.validate(p, require_coupling)?;

    let mut state = init.clone();
    let mut mse = {
        let eff = eff_fn(ch, &state);
        mse_over(&eff, &state.u, &state.v, sigma2)
    };
    let mut trace = vec![mse];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        let eff = eff_fn(ch, &state);
        state.u = mmse_receiver(&eff, &state.v, sigma2)?;
        for k in 0..ch.k() {
            state.v[k] = update_v_single(eff.get(k), &state.u, p).v;
        }
        for _ in 0..opts.phase_sweeps {
            phase_fn(ch, &mut state);
        }
        let eff = eff_fn(ch, &state);
        let new_mse = mse_over(&eff, &state.u, &state.v, sigma2);
        iterations += 1;
        trace.push(new_mse);
        let decrease = mse - new_mse;
        mse = new_mse;
        if decrease < opts.epsilon {
            converged = true;
            break;
        }
    }
    Ok(IterationTrace { mse_per_iter: trace, iterations, converged, final_state: state })
}

/// Random feasible starting point: uniform reflection phases, uniform
/// binary selectors, coupled transmission phases, full-power transmit
/// coefficients, and the matching MMSE combiner.
pub fn initial_state(
    ch: &ChannelSet,
    sigma2: f64,
    p: f64,
    rng: &mut ChaCha12Rng,
) -> Result<BeamformerState> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::Domain(format!("power budget must be positive, got {p}")));
    }
    let theta_r: Vec<Complex64> = (0..ch.m())
        .map(|_| Complex64::from_polar(1.0, rng.random::<f64>() * TAU))
        .collect();
    let q: Vec<i8> = (0..ch.m())
        .map(|_| if rng.random::<bool>() { 1 } else { -1 })
        .collect();
    let theta_t = couple_theta_t(&theta_r, &q);
    let mut state = BeamformerState {
        v: vec![Complex64::from(p.sqrt()); ch.k()],
        u: DVector::zeros(ch.n()),
        theta_r,
        theta_t,
        q,
    };
    state.u = update_u(ch, &state, sigma2)?;
    Ok(state)
}

/// Alternating optimization under the binary coupled-phase constraint.
pub fn run_aobpc(
    ch: &ChannelSet,
    sigma2: f64,
    p: f64,
    opts: &RunOptions,
    init: &BeamformerState,
) -> Result<IterationTrace> {
    run_alternating(
        ch,
        sigma2,
        p,
        opts,
        init,
        true,
        &effective_channels,
        &mut |ch, state| sweep_phases(ch, state),
    )
}
