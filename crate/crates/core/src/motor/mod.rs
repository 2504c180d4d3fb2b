//! Movement-time laws and their least-squares fits.
//!
//! Three models are covered:
//!
//! * the Shannon form of Fitts' law, `T = a + b·log2(A/W + 1)`;
//! * Meyer's sub-movement law, `T = a + b·n·(A/W)^(1/n)`;
//! * the steering law, `T = a + b·∫ ds/W(s)` (see [`path`]).
//!
//! Fitts and steering predictions share [`linear_law_time`]; they differ only
//! in how the difficulty is computed. A fitted slope `b > 0` yields the index
//! of performance `ip = 1/b` in bits (or difficulty units) per second.
//!
//! As `n` grows without bound Meyer's law approaches the logarithmic Fitts
//! form; that limit is not computed here.

pub mod path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use path::{PathSpec, Segment, WidthProfile};

/// Default upper bound for the sub-movement search in [`fit_meyer`].
pub const DEFAULT_MEYER_N_MAX: u32 = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singular design: {0}")]
    SingularDesign(String),
}

fn domain(msg: impl Into<String>) -> ModelError {
    ModelError::Domain(msg.into())
}

/// Coefficients of a movement law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawParams {
    /// Intercept, seconds.
    pub a: f64,
    /// Slope, seconds per unit of difficulty.
    pub b: f64,
    /// Number of sub-movements (Meyer's law only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
}

impl LawParams {
    pub fn linear(a: f64, b: f64) -> Self {
        Self { a, b, n: None }
    }

    pub fn meyer(a: f64, b: f64, n: u32) -> Self {
        Self { a, b, n: Some(n) }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.a.is_finite() || !self.b.is_finite() {
            return Err(domain("law coefficients must be finite"));
        }
        if self.n == Some(0) {
            return Err(domain("sub-movement count must be at least 1"));
        }
        Ok(())
    }
}

/// One measured (difficulty, time) pair, usually a per-condition mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub difficulty: f64,
    pub mean_time: f64,
}

impl Observation {
    pub fn new(difficulty: f64, mean_time: f64) -> Self {
        Self {
            difficulty,
            mean_time,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if !self.difficulty.is_finite() || self.difficulty < 0.0 {
            return Err(domain(format!(
                "difficulty must be finite and >= 0, got {}",
                self.difficulty
            )));
        }
        if !self.mean_time.is_finite() || self.mean_time <= 0.0 {
            return Err(domain(format!(
                "mean time must be finite and > 0, got {}",
                self.mean_time
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: LawParams,
    pub r_squared: f64,
    /// Index of performance `1/b`; `None` when the fitted slope is not positive.
    pub ip: Option<f64>,
    pub n_points: usize,
    /// Residual sum of squares, seconds².
    pub sse: f64,
}

impl FitResult {
    fn from_line(line: LineFit, n: Option<u32>) -> Self {
        let ip = (line.slope > 0.0).then(|| 1.0 / line.slope);
        Self {
            params: LawParams {
                a: line.intercept,
                b: line.slope,
                n,
            },
            r_squared: line.r_squared,
            ip,
            n_points: line.n,
            sse: line.sse,
        }
    }
}

/// Shannon index of difficulty `log2(A/W + 1)` in bits.
pub fn fitts_id(amplitude: f64, width: f64) -> Result<f64, ModelError> {
    if !amplitude.is_finite() || !width.is_finite() {
        return Err(domain("amplitude and width must be finite"));
    }
    if width <= 0.0 {
        return Err(domain(format!("width must be > 0, got {width}")));
    }
    if amplitude < 0.0 {
        return Err(domain(format!("amplitude must be >= 0, got {amplitude}")));
    }
    Ok((amplitude / width + 1.0).log2())
}

/// `a + b·difficulty`; used for both Fitts (ID) and steering (path integral).
pub fn linear_law_time(params: &LawParams, difficulty: f64) -> Result<f64, ModelError> {
    params.validate()?;
    if !difficulty.is_finite() || difficulty < 0.0 {
        return Err(domain(format!(
            "difficulty must be finite and >= 0, got {difficulty}"
        )));
    }
    Ok(params.a + params.b * difficulty)
}

/// Regressor `n·ratio^(1/n)` of Meyer's law.
pub fn meyer_regressor(n: u32, ratio: f64) -> Result<f64, ModelError> {
    if n == 0 {
        return Err(domain("sub-movement count must be at least 1"));
    }
    if !ratio.is_finite() || ratio <= 0.0 {
        return Err(domain(format!(
            "ratio A/W must be finite and > 0, got {ratio}"
        )));
    }
    if n == 1 {
        return Ok(ratio);
    }
    Ok(n as f64 * ratio.powf(1.0 / n as f64))
}

/// `a + b·n·ratio^(1/n)`.
pub fn meyer_time(params: &LawParams, ratio: f64) -> Result<f64, ModelError> {
    params.validate()?;
    let n = params
        .n
        .ok_or_else(|| domain("Meyer's law needs a sub-movement count"))?;
    Ok(params.a + params.b * meyer_regressor(n, ratio)?)
}

/// Ordinary least squares of mean time on difficulty.
pub fn fit_linear_law(observations: &[Observation]) -> Result<FitResult, ModelError> {
    let mut points = Vec::with_capacity(observations.len());
    for obs in observations {
        obs.validate()?;
        points.push((obs.difficulty, obs.mean_time));
    }
    Ok(FitResult::from_line(fit_line(&mut points)?, None))
}

/// Grid search over `n = 1..=n_max`; each `n` is an OLS fit of time on
/// `n·ratio^(1/n)`. The smallest SSE wins, ties going to the smaller `n`.
///
/// Observation difficulties are the ratios `A/W`.
pub fn fit_meyer(observations: &[Observation], n_max: u32) -> Result<FitResult, ModelError> {
    if n_max < 1 {
        return Err(domain("n_max must be at least 1"));
    }
    for obs in observations {
        obs.validate()?;
        if obs.difficulty <= 0.0 {
            return Err(domain("Meyer ratios must be > 0"));
        }
    }

    let mut best: Option<FitResult> = None;
    for n in 1..=n_max {
        let mut points = observations
            .iter()
            .map(|o| Ok((meyer_regressor(n, o.difficulty)?, o.mean_time)))
            .collect::<Result<Vec<_>, ModelError>>()?;
        let fit = FitResult::from_line(fit_line(&mut points)?, Some(n));
        if best.is_none_or(|b| fit.sse < b.sse) {
            best = Some(fit);
        }
    }
    Ok(best.expect("n_max >= 1 guarantees one candidate"))
}

/// Result of a straight-line least-squares fit `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
    pub sse: f64,
    pub n: usize,
}

/// OLS on `(x, y)` pairs. Points are sorted first so the result does not
/// depend on input order; means are accumulated as offsets from the first
/// point so constant inputs produce exactly zero deviations.
pub(crate) fn fit_line(points: &mut [(f64, f64)]) -> Result<LineFit, ModelError> {
    points.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
    let n = points.len();
    let distinct = points.windows(2).filter(|w| w[0].0 != w[1].0).count() + 1;
    if n < 2 || distinct < 2 {
        return Err(ModelError::SingularDesign(format!(
            "need at least 2 distinct regressor values, got {}",
            if n == 0 { 0 } else { distinct }
        )));
    }

    let (x0, y0) = points[0];
    let nf = n as f64;
    let mx = x0 + points.iter().map(|p| p.0 - x0).sum::<f64>() / nf;
    let my = y0 + points.iter().map(|p| p.1 - y0).sum::<f64>() / nf;

    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points.iter() {
        let dx = x - mx;
        let dy = y - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(ModelError::SingularDesign(
            "regressor has zero variance".into(),
        ));
    }

    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = points
        .iter()
        .map(|&(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (1.0 - sse / syy).clamp(0.0, 1.0)
    };

    Ok(LineFit {
        intercept,
        slope,
        r_squared,
        sse,
        n,
    })
}
