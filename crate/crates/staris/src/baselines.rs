//! Comparison schemes sharing the alternating driver.
//!
//! All schemes reuse the combiner and power updates and differ only in
//! how the surface phases move:
//!
//! * `cris`: a conventional reflecting surface. Only reflection-side
//!   devices see the surface; transmission-side devices keep their
//!   direct channels and the transmission phases are never read.
//! * `ao-rpc`: the coupling factor between the two sides is drawn at
//!   random up front and held fixed, so only `theta_r` is optimized and
//!   `theta_t` trails it.
//! * `ao-wpc`: both phase vectors are optimized independently, ignoring
//!   any coupling. This relaxation lower-bounds the coupled scheme.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use crate::aobpc::{run_alternating, run_aobpc, unit_modulus_pass, IterationTrace, PhaseWorkspace, RunOptions};
use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::model::{effective_channels, ris_augmented, BeamformerState, EffectiveChannels};

/// Scheme identifiers, ordered as they appear in result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SchemeId {
    AoBpc,
    Cris,
    AoRpc,
    AoWpc,
}

impl SchemeId {
    pub const ALL: [SchemeId; 4] = [SchemeId::AoBpc, SchemeId::Cris, SchemeId::AoRpc, SchemeId::AoWpc];

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::AoBpc => "ao-bpc",
            SchemeId::Cris => "cris",
            SchemeId::AoRpc => "ao-rpc",
            SchemeId::AoWpc => "ao-wpc",
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<SchemeId> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme '{s}', expected one of ao-bpc, cris, ao-rpc, ao-wpc")))
    }
}

/// A fixed unit-modulus factor per element tying `theta_t` to `theta_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomCoupling {
    pub factors: Vec<Complex64>,
}

impl RandomCoupling {
    /// Uniform random phases, one per surface element.
    pub fn draw(m: usize, rng: &mut ChaCha12Rng) -> RandomCoupling {
        RandomCoupling {
            factors: (0..m)
                .map(|_| Complex64::from_polar(1.0, rng.random::<f64>() * TAU))
                .collect(),
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        if self.factors.len() != m {
            return Err(Error::Config(format!(
                "coupling has {} factors for {m} surface elements",
                self.factors.len()
            )));
        }
        for (i, z) in self.factors.iter().enumerate() {
            if (z.norm() - 1.0).abs() > crate::model::UNIT_MODULUS_TOL {
                return Err(Error::Config(format!(
                    "coupling factor {i} has modulus {}",
                    z.norm()
                )));
            }
        }
        Ok(())
    }
}

/// Effective channels of the conventional reflecting surface: the
/// reflection side is augmented through `theta_r`, the transmission side
/// keeps its direct channels.
pub fn cris_effective(ch: &ChannelSet, state: &BeamformerState) -> EffectiveChannels {
    EffectiveChannels {
        h_r: (0..ch.k_r).map(|k| ris_augmented(ch, k, &state.theta_r)).collect(),
        h_t: (ch.k_r..ch.k()).map(|k| ch.h[k].clone()).collect(),
    }
}

/// Conventional reflecting surface: transmission-side devices bypass the
/// surface entirely, so only the reflection phases are optimized.
pub fn run_cris(
    ch: &ChannelSet,
    sigma2: f64,
    p: f64,
    opts: &RunOptions,
    init: &BeamformerState,
) -> Result<IterationTrace> {
    run_alternating(ch, sigma2, p, opts, init, false, &cris_effective, &mut |ch, state| {
        let ws = PhaseWorkspace::new(ch, &state.u, &state.v);
        let terms = ws.terms_with_coupling(None);
        unit_modulus_pass(&mut state.theta_r, &terms);
    })
}

/// Random phase coupling: `theta_t` follows `theta_r` through fixed
/// random factors instead of the optimized binary ones.
pub fn run_aorpc(
    ch: &ChannelSet,
    sigma2: f64,
    p: f64,
    opts: &RunOptions,
    init: &BeamformerState,
    coupling: &RandomCoupling,
) -> Result<IterationTrace> {
    coupling.validate(ch.m())?;
    let mut start = init.clone();
    // the drawn factors define this scheme's coupling from the start
    start.theta_t = start
        .theta_r
        .iter()
        .zip(&coupling.factors)
        .map(|(th, f)| f * th)
        .collect();
    let factors = coupling.factors.clone();
    run_alternating(ch, sigma2, p, opts, &start, false, &effective_channels, &mut |ch, state| {
        let ws = PhaseWorkspace::new(ch, &state.u, &state.v);
        let terms = ws.terms_with_coupling(Some(&factors));
        unit_modulus_pass(&mut state.theta_r, &terms);
        state.theta_t = state
            .theta_r
            .iter()
            .zip(&factors)
            .map(|(th, f)| f * th)
            .collect();
    })
}

/// Uncoupled phases: the two sides are optimized independently, one
/// Gauss-Seidel pass each. Upper bounds what any coupling can achieve.
pub fn run_aowpc(
    ch: &ChannelSet,
    sigma2: f64,
    p: f64,
    opts: &RunOptions,
    init: &BeamformerState,
) -> Result<IterationTrace> {
    run_alternating(ch, sigma2, p, opts, init, false, &effective_channels, &mut |ch, state| {
        let ws = PhaseWorkspace::new(ch, &state.u, &state.v);
        unit_modulus_pass(&mut state.theta_r, &ws.reflection_terms());
        unit_modulus_pass(&mut state.theta_t, &ws.transmission_terms());
    })
}

/// Dispatch by identifier. `ao-rpc` needs its coupling draw; the others
/// ignore the argument.
pub fn run_scheme(
    scheme: SchemeId,
    ch: &ChannelSet,
    sigma2: f64,
    p: f64,
    opts: &RunOptions,
    init: &BeamformerState,
    coupling: Option<&RandomCoupling>,
) -> Result<IterationTrace> {
    match scheme {
        SchemeId::AoBpc => run_aobpc(ch, sigma2, p, opts, init),
        SchemeId::Cris => run_cris(ch, sigma2, p, opts, init),
        SchemeId::AoRpc => {
            let c = coupling
                .ok_or_else(|| Error::Config("ao-rpc needs a coupling draw".into()))?;
            run_aorpc(ch, sigma2, p, opts, init, c)
        }
        SchemeId::AoWpc => run_aowpc(ch, sigma2, p, opts, init),
    }
}
