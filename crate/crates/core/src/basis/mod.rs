//! Distance and angle expansions feeding the message blocks.
//!
//! Radial: `e_n(d) = u(d/c) · sqrt(2/c) · sin(nπd/c) / d`, `n = 1..=n_radial`.
//!
//! Angular: `a_{ln}(d, θ) = u(d/c) · j_l(z_{ln} d / c) · sqrt((2l+1)/2) · P_l(cos θ)`
//! with `z_{ln}` the n-th positive root of the spherical Bessel function
//! `j_l`, laid out row-major as `l * n_radial + (n - 1)`.
//!
//! `u` is the polynomial envelope
//! `1 − (p+1)(p+2)/2 x^p + p(p+2) x^{p+1} − p(p+1)/2 x^{p+2}`, which is 1 at
//! `x = 0` and vanishes with its first two derivatives at `x = 1`. Every
//! feature is identically zero for `d >= c`.

pub mod bessel;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use bessel::{legendre, spherical_jn, spherical_jn_roots};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisConfig {
    pub n_radial: usize,
    pub n_spherical: usize,
    pub envelope_exponent: u32,
    pub cutoff: f64,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            n_radial: 16,
            n_spherical: 7,
            envelope_exponent: 5,
            cutoff: 5.0,
        }
    }
}

impl BasisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_radial < 1 || self.n_spherical < 1 {
            return Err(Error::Config("basis sizes must be at least 1".into()));
        }
        if self.envelope_exponent < 2 {
            return Err(Error::Config("envelope exponent must be at least 2".into()));
        }
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(Error::Config(format!("basis cutoff must be positive, got {}", self.cutoff)));
        }
        Ok(())
    }

    pub fn angular_len(&self) -> usize {
        self.n_spherical * self.n_radial
    }
}

/// Smooth cutoff window, 1 at `d = 0` and 0 for `d >= cutoff`.
pub fn envelope(d: f64, cutoff: f64, p: u32) -> f64 {
    if d >= cutoff {
        return 0.0;
    }
    let x = d / cutoff;
    let pf = p as f64;
    let xp = x.powi(p as i32);
    1.0 - (pf + 1.0) * (pf + 2.0) / 2.0 * xp + pf * (pf + 2.0) * xp * x
        - pf * (pf + 1.0) / 2.0 * xp * x * x
}

/// Radial expansion of one distance.
pub fn radial_basis(d: f64, cfg: &BasisConfig) -> Result<Vec<f64>> {
    let mut out = vec![0.0; cfg.n_radial];
    radial_basis_into(d, cfg, &mut out)?;
    Ok(out)
}

pub(crate) fn radial_basis_into(d: f64, cfg: &BasisConfig, out: &mut [f64]) -> Result<()> {
    if !(d > 0.0) {
        return Err(Error::Domain(format!("radial basis needs d > 0, got {d}")));
    }
    let c = cfg.cutoff;
    if d >= c {
        out.fill(0.0);
        return Ok(());
    }
    let scale = envelope(d, c, cfg.envelope_exponent) * (2.0 / c).sqrt() / d;
    for (n, o) in out.iter_mut().enumerate() {
        *o = scale * ((n + 1) as f64 * std::f64::consts::PI * d / c).sin();
    }
    Ok(())
}

/// Angular expansion with the Bessel roots computed once up front.
#[derive(Debug, Clone)]
pub struct AngularBasis {
    cfg: BasisConfig,
    roots: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

impl AngularBasis {
    pub fn new(cfg: BasisConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            roots: spherical_jn_roots(cfg.n_spherical, cfg.n_radial),
            norms: (0..cfg.n_spherical)
                .map(|l| ((2 * l + 1) as f64 / 2.0).sqrt())
                .collect(),
            cfg,
        })
    }

    pub fn config(&self) -> &BasisConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.cfg.angular_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `z_{ln}` for `n` counted from 0.
    pub fn root(&self, l: usize, n: usize) -> f64 {
        self.roots[l][n]
    }

    pub fn eval(&self, d: f64, theta: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(d, theta, &mut out)?;
        Ok(out)
    }

    pub(crate) fn eval_into(&self, d: f64, theta: f64, out: &mut [f64]) -> Result<()> {
        if !(d > 0.0) {
            return Err(Error::Domain(format!("angular basis needs d > 0, got {d}")));
        }
        let pi = std::f64::consts::PI;
        if !(theta >= -1e-9 && theta <= pi + 1e-9) {
            return Err(Error::Domain(format!("angle {theta} outside [0, π]")));
        }
        let c = self.cfg.cutoff;
        if d >= c {
            out.fill(0.0);
            return Ok(());
        }
        let env = envelope(d, c, self.cfg.envelope_exponent);
        let cos_t = theta.clamp(0.0, pi).cos();
        let nr = self.cfg.n_radial;
        for l in 0..self.cfg.n_spherical {
            let ang = self.norms[l] * legendre(l, cos_t);
            for n in 0..nr {
                out[l * nr + n] = env * spherical_jn(l, self.roots[l][n] * d / c) * ang;
            }
        }
        Ok(())
    }
}
