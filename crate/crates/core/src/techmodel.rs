//! Technology scaling: relative feature-size factor, area and clock scaling
//! models, router-count scaling, and least-squares fitting of both models.
//!
//! The area model `s_f(Ξ) = (α + α̂) / (α/Ξ² + α̂)` depends on its parameters
//! only through the ratio `α̂/α`, and the clock model
//! `c_f(Ξ) = β / (1 + β̂·exp(−β̃(Ξ − β̄)))` only through `β̂·exp(β̃β̄)`. The
//! fitters therefore pin one parameter of each degenerate pair: `α` (default
//! 1) for the area model and either `β̄` (if supplied) or `β̂ = 1` for the
//! clock model, in which case `β̄` is reported as the sigmoid midpoint.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TechError {
    #[error("feature sizes must satisfy coarse ≥ fine > 0, got coarse={coarse} nm, fine={fine} nm")]
    InvalidScaling { coarse: f64, fine: f64 },
    #[error("scaling factor Ξ must be ≥ 1, got {0}")]
    XiBelowOne(f64),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("samples must contain at least {0} distinct Ξ values")]
    DegenerateSamples(usize),
    #[error("non-finite sample value")]
    NonFinite,
    #[error("fit did not converge to a finite solution")]
    NoConvergence,
    #[error("missing CSV column `{0}`")]
    MissingColumn(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Parameters of the area scaling model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaParams {
    pub alpha: f64,
    pub alpha_hat: f64,
}

impl AreaParams {
    /// Pure quadratic scaling: `s_f = Ξ²`.
    pub const IDEAL: AreaParams = AreaParams { alpha: 1.0, alpha_hat: 0.0 };
    /// Published fit for general-purpose (GP) libraries.
    pub const GP: AreaParams = AreaParams { alpha: 3462.7, alpha_hat: 29.8 };
    /// Published fit for ultra-low-voltage (ULV) libraries.
    pub const ULV: AreaParams = AreaParams { alpha: 13.2, alpha_hat: 0.124 };
}

/// Parameters of the sigmoid clock scaling model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockParams {
    pub beta: f64,
    pub beta_hat: f64,
    pub beta_tilde: f64,
    pub beta_bar: f64,
}

impl ClockParams {
    pub const GP: ClockParams = ClockParams { beta: 32.85, beta_hat: 7.88, beta_tilde: 0.76, beta_bar: 1.26 };
    pub const ULV: ClockParams = ClockParams { beta: 77.45, beta_hat: 2.48, beta_tilde: 0.76, beta_bar: 2.77 };

    /// Ξ at which the curve reaches half of `beta`.
    pub fn midpoint(&self) -> f64 {
        self.beta_bar + self.beta_hat.ln() / self.beta_tilde
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum FittedParams {
    Area(AreaParams),
    Clock(ClockParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitResult {
    pub params: FittedParams,
    pub rmse: f64,
}

impl FitResult {
    pub fn area(&self) -> Option<AreaParams> {
        match self.params {
            FittedParams::Area(p) => Some(p),
            FittedParams::Clock(_) => None,
        }
    }

    pub fn clock(&self) -> Option<ClockParams> {
        match self.params {
            FittedParams::Clock(p) => Some(p),
            FittedParams::Area(_) => None,
        }
    }

    /// `(name, value)` pairs in report order.
    pub fn named_params(&self) -> Vec<(&'static str, f64)> {
        match self.params {
            FittedParams::Area(p) => vec![("alpha", p.alpha), ("alpha_hat", p.alpha_hat)],
            FittedParams::Clock(p) => vec![
                ("beta", p.beta),
                ("beta_hat", p.beta_hat),
                ("beta_tilde", p.beta_tilde),
                ("beta_bar", p.beta_bar),
            ],
        }
    }

    /// Evaluate the fitted curve at `xi`.
    pub fn predict(&self, xi: f64) -> Result<f64, TechError> {
        match self.params {
            FittedParams::Area(p) => area_scaling(xi, &p),
            FittedParams::Clock(p) => clock_scaling(xi, &p),
        }
    }
}

/// `Ξ = τ_coarse / τ_fine`.
pub fn relative_scaling(tau_coarse: f64, tau_fine: f64) -> Result<f64, TechError> {
    if !(tau_fine > 0.0) || !(tau_coarse >= tau_fine) {
        return Err(TechError::InvalidScaling { coarse: tau_coarse, fine: tau_fine });
    }
    Ok(tau_coarse / tau_fine)
}

pub fn area_scaling(xi: f64, p: &AreaParams) -> Result<f64, TechError> {
    if !(xi >= 1.0) {
        return Err(TechError::XiBelowOne(xi));
    }
    Ok((p.alpha + p.alpha_hat) / (p.alpha / (xi * xi) + p.alpha_hat))
}

pub fn clock_scaling(xi: f64, p: &ClockParams) -> Result<f64, TechError> {
    if !(xi >= 1.0) {
        return Err(TechError::XiBelowOne(xi));
    }
    Ok(p.beta / (1.0 + p.beta_hat * (-p.beta_tilde * (xi - p.beta_bar)).exp()))
}

/// Routers a layer of the same area can hold after scaling by `s_f`.
pub fn scaled_router_count(base: u32, s_f: f64) -> u32 {
    // The tiny epsilon keeps products like 16 · 2.5 = 40 from landing at 39.999….
    (base as f64 * s_f + 1e-9).floor() as u32
}

/// A `(Ξ, value)` sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub xi: f64,
    pub value: f64,
}

fn check_samples(samples: &[Sample], needed: usize) -> Result<(), TechError> {
    if samples.len() < needed {
        return Err(TechError::TooFewSamples { needed, got: samples.len() });
    }
    if samples.iter().any(|s| !s.xi.is_finite() || !s.value.is_finite()) {
        return Err(TechError::NonFinite);
    }
    let mut xs: Vec<f64> = samples.iter().map(|s| s.xi).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let distinct = needed.min(3);
    if xs.len() < distinct {
        return Err(TechError::DegenerateSamples(distinct));
    }
    Ok(())
}

/// Fit the area model. `alpha_fixed` pins the scale of `(α, α̂)`; without it
/// `α = 1` is reported.
pub fn fit_area(samples: &[Sample], alpha_fixed: Option<f64>) -> Result<FitResult, TechError> {
    check_samples(samples, 3)?;
    let alpha = alpha_fixed.unwrap_or(1.0);
    let model = |p: &[f64], xi: f64| (alpha + p[0]) / (alpha / (xi * xi) + p[0]);
    let residuals = |p: &DVector<f64>| {
        DVector::from_iterator(samples.len(), samples.iter().map(|s| model(p.as_slice(), s.xi) - s.value))
    };
    let jacobian = |p: &DVector<f64>| {
        let h = p[0];
        DMatrix::from_fn(samples.len(), 1, |i, _| {
            let xi = samples[i].xi;
            let den = alpha / (xi * xi) + h;
            (alpha / (xi * xi) - alpha) / (den * den)
        })
    };
    let project = |p: &mut DVector<f64>| p[0] = p[0].max(0.0);
    let starts = [0.0, 1e-3, 1e-2, 0.1, 0.3, 1.0, 3.0, 10.0];
    let (best, rmse) = multi_start(starts.iter().map(|&s| DVector::from_vec(vec![s * alpha])), residuals, jacobian, project)?;
    Ok(FitResult { params: FittedParams::Area(AreaParams { alpha, alpha_hat: best[0] }), rmse })
}

/// Fit the clock model. `beta_fixed` pins the asymptote; `beta_bar_fixed`
/// pins the offset (otherwise `β̂ = 1` and `β̄` is the midpoint).
pub fn fit_clock(
    samples: &[Sample],
    beta_fixed: Option<f64>,
    beta_bar_fixed: Option<f64>,
) -> Result<FitResult, TechError> {
    check_samples(samples, if beta_fixed.is_some() { 3 } else { 4 })?;
    // Free parameter vector layout: [beta?] + [beta_tilde] + [beta_hat | beta_bar].
    let unpack = |p: &[f64]| -> ClockParams {
        let mut i = 0;
        let beta = match beta_fixed {
            Some(b) => b,
            None => {
                i += 1;
                p[0]
            }
        };
        let beta_tilde = p[i];
        match beta_bar_fixed {
            Some(bar) => ClockParams { beta, beta_hat: p[i + 1], beta_tilde, beta_bar: bar },
            None => ClockParams { beta, beta_hat: 1.0, beta_tilde, beta_bar: p[i + 1] },
        }
    };
    let residuals = |p: &DVector<f64>| {
        let c = unpack(p.as_slice());
        DVector::from_iterator(
            samples.len(),
            samples.iter().map(|s| c.beta / (1.0 + c.beta_hat * (-c.beta_tilde * (s.xi - c.beta_bar)).exp()) - s.value),
        )
    };
    let jacobian = |p: &DVector<f64>| {
        let c = unpack(p.as_slice());
        let mut j = DMatrix::zeros(samples.len(), p.len());
        for (row, s) in samples.iter().enumerate() {
            let e = (-c.beta_tilde * (s.xi - c.beta_bar)).exp();
            let d = 1.0 + c.beta_hat * e;
            let mut col = 0;
            if beta_fixed.is_none() {
                j[(row, 0)] = 1.0 / d;
                col = 1;
            }
            j[(row, col)] = c.beta * c.beta_hat * e * (s.xi - c.beta_bar) / (d * d);
            j[(row, col + 1)] = match beta_bar_fixed {
                Some(_) => -c.beta * e / (d * d),
                None => -c.beta * c.beta_hat * e * c.beta_tilde / (d * d),
            };
        }
        j
    };
    let project = |p: &mut DVector<f64>| {
        let mut i = 0;
        if beta_fixed.is_none() {
            p[0] = p[0].max(1.0);
            i = 1;
        }
        p[i] = p[i].max(1e-9);
        if beta_bar_fixed.is_some() {
            p[i + 1] = p[i + 1].max(1e-12);
        }
    };

    let max_v = samples.iter().map(|s| s.value).fold(f64::MIN, f64::max);
    let (lo, hi) = samples.iter().fold((f64::MAX, f64::MIN), |(a, b), s| (a.min(s.xi), b.max(s.xi)));
    let span = (hi - lo).max(1e-6);
    let beta0 = beta_fixed.unwrap_or(1.1 * max_v).max(1.0);
    let mut starts = Vec::with_capacity(8);
    for &steep in &[0.5, 1.0, 2.0, 4.0] {
        for &pos in &[0.25, 0.75] {
            let k = steep * 4.0 / span;
            let mid = lo + pos * span;
            let mut v = Vec::with_capacity(3);
            if beta_fixed.is_none() {
                v.push(beta0);
            }
            v.push(k);
            match beta_bar_fixed {
                // β̂ that puts the midpoint at `mid` for the pinned offset.
                Some(bar) => v.push((k * (mid - bar)).exp().clamp(1e-12, 1e12)),
                None => v.push(mid),
            }
            starts.push(DVector::from_vec(v));
        }
    }
    let (best, rmse) = multi_start(starts.into_iter(), residuals, jacobian, project)?;
    Ok(FitResult { params: FittedParams::Clock(unpack(best.as_slice())), rmse })
}

fn multi_start<R, J, P>(
    starts: impl Iterator<Item = DVector<f64>>,
    residuals: R,
    jacobian: J,
    project: P,
) -> Result<(DVector<f64>, f64), TechError>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
    P: Fn(&mut DVector<f64>),
{
    let mut best: Option<(DVector<f64>, f64)> = None;
    for p0 in starts {
        let (p, cost) = levenberg_marquardt(p0, &residuals, &jacobian, &project);
        if cost.is_finite() && best.as_ref().map_or(true, |(_, c)| cost < *c) {
            best = Some((p, cost));
        }
    }
    let (p, cost) = best.ok_or(TechError::NoConvergence)?;
    let m = residuals(&p).len() as f64;
    Ok((p, (2.0 * cost / m).sqrt()))
}

/// Damped Gauss–Newton with Marquardt's diagonal scaling. Returns the
/// parameters and `½‖r‖²`.
fn levenberg_marquardt<R, J, P>(mut p: DVector<f64>, residuals: &R, jacobian: &J, project: &P) -> (DVector<f64>, f64)
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
    P: Fn(&mut DVector<f64>),
{
    project(&mut p);
    let cost_of = |p: &DVector<f64>| 0.5 * residuals(p).norm_squared();
    let mut cost = cost_of(&p);
    let mut lambda = 1e-3;
    for _ in 0..1000 {
        if !cost.is_finite() {
            break;
        }
        let r = residuals(&p);
        let j = jacobian(&p);
        let g = j.transpose() * &r;
        let a = j.transpose() * &j;
        if g.amax() < 1e-30 {
            break;
        }
        let mut improved = false;
        while lambda < 1e20 {
            let mut damped = a.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda * a[(i, i)].max(1e-12);
            }
            let Some(step) = damped.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = &p + &step;
            project(&mut trial);
            let trial_cost = cost_of(&trial);
            if trial_cost.is_finite() && trial_cost < cost {
                let small_step = (&trial - &p).norm() <= 1e-15 * (p.norm() + 1e-15);
                let small_gain = cost - trial_cost <= 1e-18 * cost;
                p = trial;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-15);
                improved = !(small_step || small_gain);
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    (p, cost)
}

/// Read `(xi, value)` samples from CSV with a header row.
pub fn read_samples<R: Read>(input: R) -> Result<Vec<Sample>, TechError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| TechError::MissingColumn(name.to_string()))
    };
    let (ix, iv) = (col("xi")?, col("value")?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok()).ok_or(TechError::NonFinite);
        out.push(Sample { xi: parse(ix)?, value: parse(iv)? });
    }
    Ok(out)
}

/// Write a fit report: one row per parameter, columns `param,value,rmse`.
pub fn write_fit_report<W: Write>(fit: &FitResult, out: W) -> Result<(), TechError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["param", "value", "rmse"])?;
    for (name, v) in fit.named_params() {
        w.write_record([name.to_string(), format!("{v:.10}"), format!("{:.6e}", fit.rmse)])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
