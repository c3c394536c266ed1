//! Wall-movement gain, the distance-dependent detection thresholds and the
//! psychometric fitting used to estimate them from forced-choice responses.
//!
//! The psychometric curve is `f(x) = 1 / (1 + exp(a*x + b))`, read as the
//! probability of answering "the room got larger" at gain `x`. Since that
//! rate rises with the gain, meaningful fits have `a < 0`.

use std::cmp::Ordering;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum GainError {
    #[error("gain undefined for a zero (or negative) pre-move distance {0}")]
    UndefinedGain(f64),
    #[error("invalid threshold table: {0}")]
    InvalidTable(String),
}

/// `t_after / t_before`: above 1 the wall moved away from the user.
pub fn wall_movement_gain(t_before: f64, t_after: f64) -> Result<f64, GainError> {
    if !(t_before > 0.0) {
        return Err(GainError::UndefinedGain(t_before));
    }
    Ok(t_after / t_before)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub distance: f64,
    pub lower: f64,
    pub pse: f64,
    pub upper: f64,
}

/// Per-distance (lower, PSE, upper) gain bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ThresholdRow>", into = "Vec<ThresholdRow>")]
pub struct GainThresholds {
    rows: Vec<ThresholdRow>,
}

impl GainThresholds {
    pub fn new(rows: Vec<ThresholdRow>) -> Result<Self, GainError> {
        if rows.is_empty() {
            return Err(GainError::InvalidTable("no rows".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            let vals = [r.distance, r.lower, r.pse, r.upper];
            if vals.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(GainError::InvalidTable(format!("row {i}: values must be positive")));
            }
            if !(r.lower < r.pse && r.pse < r.upper) {
                return Err(GainError::InvalidTable(format!("row {i}: need lower < pse < upper")));
            }
            if i > 0 && r.distance <= rows[i - 1].distance {
                return Err(GainError::InvalidTable(format!(
                    "row {i}: distances must be strictly increasing"
                )));
            }
        }
        Ok(GainThresholds { rows })
    }

    pub fn rows(&self) -> &[ThresholdRow] {
        &self.rows
    }
}

impl Default for GainThresholds {
    /// Measured bounds at 1 m, 2 m and 3 m from the moving wall.
    fn default() -> Self {
        GainThresholds {
            rows: vec![
                ThresholdRow {
                    distance: 1.0,
                    lower: 0.899,
                    pse: 1.020,
                    upper: 1.145,
                },
                ThresholdRow {
                    distance: 2.0,
                    lower: 0.868,
                    pse: 1.030,
                    upper: 1.200,
                },
                ThresholdRow {
                    distance: 3.0,
                    lower: 0.737,
                    pse: 0.974,
                    upper: 1.211,
                },
            ],
        }
    }
}

impl TryFrom<Vec<ThresholdRow>> for GainThresholds {
    type Error = GainError;
    fn try_from(rows: Vec<ThresholdRow>) -> Result<Self, GainError> {
        GainThresholds::new(rows)
    }
}

impl From<GainThresholds> for Vec<ThresholdRow> {
    fn from(t: GainThresholds) -> Self {
        t.rows
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    pub lower: f64,
    pub pse: f64,
    pub upper: f64,
}

/// Bounds at `distance`: exact on tabulated rows, linear in between, clamped
/// to the first/last row outside the table.
pub fn thresholds_at(t: &GainThresholds, distance: f64) -> Thresholds {
    let rows = &t.rows;
    let at = |r: &ThresholdRow| Thresholds {
        lower: r.lower,
        pse: r.pse,
        upper: r.upper,
    };
    let first = &rows[0];
    let last = &rows[rows.len() - 1];
    if distance <= first.distance {
        return at(first);
    }
    if distance >= last.distance {
        return at(last);
    }
    let hi = rows.partition_point(|r| r.distance < distance);
    let (r0, r1) = (&rows[hi - 1], &rows[hi]);
    if distance == r1.distance {
        return at(r1);
    }
    let w = (distance - r0.distance) / (r1.distance - r0.distance);
    let lerp = |a: f64, b: f64| a + (b - a) * w;
    Thresholds {
        lower: lerp(r0.lower, r1.lower),
        pse: lerp(r0.pse, r1.pse),
        upper: lerp(r0.upper, r1.upper),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Toward,
    Away,
}

/// Largest single out-of-view displacement of a wall `distance` away that
/// keeps the realized gain inside the detection bounds.
pub fn max_imperceptible_step(distance: f64, direction: Direction, t: &GainThresholds) -> f64 {
    if !(distance > 0.0) {
        return 0.0;
    }
    let th = thresholds_at(t, distance);
    let step = match direction {
        Direction::Away => distance * (th.upper - 1.0),
        Direction::Toward => distance * (1.0 - th.lower),
    };
    step.max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DistanceClass {
    Short,
    Middle,
    Long,
}

impl DistanceClass {
    pub const ALL: [DistanceClass; 3] = [DistanceClass::Long, DistanceClass::Middle, DistanceClass::Short];

    /// User-to-wall distance in meters at which the class was measured.
    pub fn distance(self) -> f64 {
        match self {
            DistanceClass::Short => 1.0,
            DistanceClass::Middle => 2.0,
            DistanceClass::Long => 3.0,
        }
    }

    /// Gains presented for this class in a threshold session.
    pub fn gains(self) -> [f64; 5] {
        match self {
            DistanceClass::Short => [0.9, 0.95, 1.0, 1.05, 1.1],
            DistanceClass::Middle | DistanceClass::Long => [0.8, 0.9, 1.0, 1.1, 1.2],
        }
    }

    pub fn parse(s: &str) -> Option<DistanceClass> {
        match s {
            "Short" => Some(DistanceClass::Short),
            "Middle" => Some(DistanceClass::Middle),
            "Long" => Some(DistanceClass::Long),
            _ => None,
        }
    }
}

impl fmt::Display for DistanceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseSample {
    pub gain: f64,
    pub distance_class: DistanceClass,
    pub answered_larger: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitWarning {
    /// Responses are (quasi-)separated by gain, the maximum-likelihood slope
    /// is unbounded and was clamped.
    Separation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsychometricFit {
    pub a: f64,
    pub b: f64,
    pub log_likelihood: f64,
    pub warning: Option<FitWarning>,
}

impl PsychometricFit {
    /// Probability of a "larger" answer at gain `x`.
    pub fn rate(&self, x: f64) -> f64 {
        psychometric(self.a, self.b, x)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("no samples")]
    Empty,
    #[error("need at least two distinct gains, got {0}")]
    TooFewGains(usize),
    #[error("gain must be positive and finite, got {0}")]
    BadGain(f64),
    #[error("fitted slope a = {0} > 0: \"larger\" answers fall as the gain rises")]
    InconsistentSlope(f64),
}

/// `1 / (1 + exp(a*x + b))`.
pub fn psychometric(a: f64, b: f64, x: f64) -> f64 {
    logistic_neg(a * x + b)
}

/// `1 / (1 + e^z)`
fn logistic_neg(z: f64) -> f64 {
    1.0 / (1.0 + z.exp())
}

/// `1 / (1 + e^-z)`
fn logistic_pos(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn pse(fit: &PsychometricFit) -> f64 {
    -fit.b / fit.a
}

/// Gains where the curve crosses 0.25 and 0.75, as (smaller, larger).
pub fn detection_range(fit: &PsychometricFit) -> (f64, f64) {
    let ln3 = 3f64.ln();
    let p = (ln3 - fit.b) / fit.a;
    let q = (-ln3 - fit.b) / fit.a;
    if p <= q {
        (p, q)
    } else {
        (q, p)
    }
}

/// Responses pooled per distinct gain: (gain, trials, "larger" count).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GainBin {
    pub gain: f64,
    pub trials: f64,
    pub larger: f64,
}

/// Pools samples by gain, sorted ascending; the fit only sees these bins so
/// sample order cannot matter.
pub fn aggregate(samples: &[ResponseSample]) -> Vec<GainBin> {
    let mut gains: Vec<(f64, bool)> = samples.iter().map(|s| (s.gain, s.answered_larger)).collect();
    gains.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut bins: Vec<GainBin> = Vec::new();
    for (g, larger) in gains {
        match bins.last_mut() {
            Some(bin) if bin.gain.total_cmp(&g) == Ordering::Equal => {
                bin.trials += 1.0;
                bin.larger += larger as u8 as f64;
            }
            _ => bins.push(GainBin {
                gain: g,
                trials: 1.0,
                larger: larger as u8 as f64,
            }),
        }
    }
    bins
}

/// Bernoulli negative log-likelihood of the binned responses.
pub fn negative_log_likelihood(bins: &[GainBin], a: f64, b: f64) -> f64 {
    bins.iter()
        .map(|bin| {
            let z = a * bin.gain + b;
            // -[k ln f + (n-k) ln(1-f)] with ln f = -sp(z), ln(1-f) = z - sp(z)
            bin.trials * softplus(z) - (bin.trials - bin.larger) * z
        })
        .sum()
}

/// Largest slope magnitude reported for separated data.
pub const MAX_SLOPE: f64 = 1e3;
const GRAD_TOL: f64 = 1e-10;
const MAX_NEWTON_ITERS: usize = 200;

fn gradient_hessian(bins: &[GainBin], a: f64, b: f64) -> ([f64; 2], [f64; 3]) {
    let mut g = [0.0; 2];
    let mut h = [0.0; 3];
    for bin in bins {
        let z = a * bin.gain + b;
        let f = logistic_neg(z);
        let s = logistic_pos(z);
        let dz = bin.larger * s - (bin.trials - bin.larger) * f;
        let w = bin.trials * f * s;
        g[0] += dz * bin.gain;
        g[1] += dz;
        h[0] += w * bin.gain * bin.gain;
        h[1] += w * bin.gain;
        h[2] += w;
    }
    (g, h)
}

enum Separation {
    None,
    AllLarger,
    AllSmaller,
    Increasing,
    Decreasing,
}

fn separation(bins: &[GainBin]) -> Separation {
    let full = |b: &GainBin| b.larger == b.trials;
    let empty = |b: &GainBin| b.larger == 0.0;
    if bins.iter().all(full) {
        return Separation::AllLarger;
    }
    if bins.iter().all(empty) {
        return Separation::AllSmaller;
    }
    // At most one mixed bin between a run of "smaller" and a run of "larger".
    let first_any_larger = bins.iter().position(|b| !empty(b)).unwrap();
    let last_any_smaller = bins.iter().rposition(|b| !full(b)).unwrap();
    if last_any_smaller <= first_any_larger {
        return Separation::Increasing;
    }
    let first_any_smaller = bins.iter().position(|b| !full(b)).unwrap();
    let last_any_larger = bins.iter().rposition(|b| !empty(b)).unwrap();
    if last_any_larger <= first_any_smaller {
        return Separation::Decreasing;
    }
    Separation::None
}

/// With the slope pinned, the intercept score is monotone in `b`; bisect it.
fn best_intercept(bins: &[GainBin], a: f64) -> f64 {
    let score = |b: f64| {
        bins.iter()
            .map(|bin| {
                let z = a * bin.gain + b;
                bin.larger * logistic_pos(z) - (bin.trials - bin.larger) * logistic_neg(z)
            })
            .sum::<f64>()
    };
    let xmin = bins.first().unwrap().gain;
    let xmax = bins.last().unwrap().gain;
    // b = -a * pse; bracket the PSE one unit beyond the presented gains.
    let (mut lo, mut hi) = {
        let b1 = -a * (xmin - 1.0);
        let b2 = -a * (xmax + 1.0);
        (b1.min(b2), b1.max(b2))
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if score(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn clamped_fit(bins: &[GainBin]) -> PsychometricFit {
    let a = -MAX_SLOPE;
    let b = best_intercept(bins, a);
    PsychometricFit {
        a,
        b,
        log_likelihood: -negative_log_likelihood(bins, a, b),
        warning: Some(FitWarning::Separation),
    }
}

/// Maximum-likelihood fit of the psychometric curve by damped Newton steps.
pub fn fit_psychometric(samples: &[ResponseSample]) -> Result<PsychometricFit, FitError> {
    if samples.is_empty() {
        return Err(FitError::Empty);
    }
    if let Some(s) = samples.iter().find(|s| !(s.gain > 0.0 && s.gain.is_finite())) {
        return Err(FitError::BadGain(s.gain));
    }
    let bins = aggregate(samples);
    if bins.len() < 2 {
        return Err(FitError::TooFewGains(bins.len()));
    }
    fit_bins(&bins)
}

pub fn fit_bins(bins: &[GainBin]) -> Result<PsychometricFit, FitError> {
    match separation(bins) {
        Separation::AllLarger | Separation::AllSmaller => {
            let all_larger = matches!(separation(bins), Separation::AllLarger);
            // Put the curve's midpoint at the edge of the presented gains.
            let edge = if all_larger {
                bins.first().unwrap().gain
            } else {
                bins.last().unwrap().gain
            };
            let a = -MAX_SLOPE;
            let b = -a * edge;
            return Ok(PsychometricFit {
                a,
                b,
                log_likelihood: -negative_log_likelihood(bins, a, b),
                warning: Some(FitWarning::Separation),
            });
        }
        Separation::Increasing => return Ok(clamped_fit(bins)),
        Separation::Decreasing => return Err(FitError::InconsistentSlope(f64::INFINITY)),
        Separation::None => {}
    }

    let n: f64 = bins.iter().map(|b| b.trials).sum();
    let mean_gain = bins.iter().map(|b| b.gain * b.trials).sum::<f64>() / n;
    let (mut a, mut b) = (-10.0, 10.0 * mean_gain);
    let mut nll = negative_log_likelihood(bins, a, b);

    for _ in 0..MAX_NEWTON_ITERS {
        let (g, h) = gradient_hessian(bins, a, b);
        if g[0].abs().max(g[1].abs()) < GRAD_TOL {
            break;
        }
        // Solve H d = -g, adding ridge damping until H is safely positive definite.
        let mut ridge = 0.0;
        let dir = loop {
            let (h00, h01, h11) = (h[0] + ridge, h[1], h[2] + ridge);
            let det = h00 * h11 - h01 * h01;
            if det > 1e-14 * (h00 * h11).max(1e-300) && h00 > 0.0 {
                break [(-g[0] * h11 + g[1] * h01) / det, (g[0] * h01 - g[1] * h00) / det];
            }
            ridge = if ridge == 0.0 {
                1e-8 * (1.0 + h[0] + h[2])
            } else {
                ridge * 10.0
            };
        };
        let slope = g[0] * dir[0] + g[1] * dir[1];
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let (na, nb) = (a + t * dir[0], b + t * dir[1]);
            let cand = negative_log_likelihood(bins, na, nb);
            if cand.is_finite() && cand <= nll + 1e-4 * t * slope {
                a = na;
                b = nb;
                nll = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    if a > 0.0 {
        return Err(FitError::InconsistentSlope(a));
    }
    if a < -MAX_SLOPE {
        return Ok(clamped_fit(bins));
    }
    Ok(PsychometricFit {
        a,
        b,
        log_likelihood: -nll,
        warning: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedTrial {
    pub distance_class: DistanceClass,
    pub gain: f64,
    pub repeat_index: u8,
}

pub const REPEATS_PER_GAIN: u8 = 3;

/// The 45-trial threshold session (3 classes x 5 gains x 3 repeats) in a
/// seed-determined random order.
pub fn plan_threshold_session(seed: u64) -> Vec<PlannedTrial> {
    let mut trials: Vec<PlannedTrial> = DistanceClass::ALL
        .iter()
        .flat_map(|&class| {
            class.gains().into_iter().flat_map(move |gain| {
                (0..REPEATS_PER_GAIN).map(move |repeat_index| PlannedTrial {
                    distance_class: class,
                    gain,
                    repeat_index,
                })
            })
        })
        .collect();
    trials.shuffle(&mut rng::stream(seed, Stream::SessionPlan));
    trials
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn fit(a: f64, b: f64) -> PsychometricFit {
        PsychometricFit {
            a,
            b,
            log_likelihood: 0.0,
            warning: None,
        }
    }

    fn sample(gain: f64, larger: bool) -> ResponseSample {
        ResponseSample {
            gain,
            distance_class: DistanceClass::Long,
            answered_larger: larger,
        }
    }

    #[test]
    fn gain_examples() {
        assert_eq!(wall_movement_gain(2.0, 2.0), Ok(1.0));
        assert_close!(wall_movement_gain(3.0, 3.633).unwrap(), 1.211, 1e-12);
        assert_close!(wall_movement_gain(3.0, 2.211).unwrap(), 0.737, 1e-12);
        assert_eq!(wall_movement_gain(0.0, 1.0), Err(GainError::UndefinedGain(0.0)));
    }

    #[test]
    fn thresholds_examples() {
        let t = GainThresholds::default();
        let th = thresholds_at(&t, 3.0);
        assert_eq!((th.lower, th.pse, th.upper), (0.737, 0.974, 1.211));
        let th = thresholds_at(&t, 2.5);
        // Midpoint of the 2 m and 3 m rows, worked by hand.
        assert_close!(th.lower, 0.8025, 1e-12);
        assert_close!(th.pse, 1.002, 1e-12);
        assert_close!(th.upper, 1.2055, 1e-12);
        let th = thresholds_at(&t, 0.2);
        assert_eq!((th.lower, th.pse, th.upper), (0.899, 1.020, 1.145));
        let th = thresholds_at(&t, 40.0);
        assert_eq!((th.lower, th.pse, th.upper), (0.737, 0.974, 1.211));
    }

    #[test]
    fn table_validation() {
        let row = |d: f64| ThresholdRow {
            distance: d,
            lower: 0.9,
            pse: 1.0,
            upper: 1.1,
        };
        assert!(GainThresholds::new(vec![row(1.0), row(1.0)]).is_err());
        assert!(GainThresholds::new(vec![]).is_err());
        let bad = ThresholdRow {
            distance: 1.0,
            lower: 1.0,
            pse: 0.9,
            upper: 1.1,
        };
        assert!(GainThresholds::new(vec![bad]).is_err());
        let json = serde_json::to_string(&GainThresholds::default()).unwrap();
        let back: GainThresholds = serde_json::from_str(&json).unwrap();
        assert_eq!(back, GainThresholds::default());
        assert!(serde_json::from_str::<GainThresholds>("[]").is_err());
    }

    #[test]
    fn step_examples() {
        let t = GainThresholds::default();
        assert_close!(max_imperceptible_step(3.0, Direction::Away, &t), 0.633, 1e-12);
        assert_close!(max_imperceptible_step(3.0, Direction::Toward, &t), 0.789, 1e-12);
        assert_close!(max_imperceptible_step(1.0, Direction::Toward, &t), 0.101, 1e-12);
        assert_eq!(max_imperceptible_step(0.0, Direction::Away, &t), 0.0);
    }

    #[test]
    fn pse_and_range_examples() {
        assert_close!(pse(&fit(-10.0, 10.0)), 1.0, 1e-15);
        assert_close!(pse(&fit(-10.0, 9.74)), 0.974, 1e-15);
        assert_close!(pse(&fit(-20.0, 19.48)), 0.974, 1e-15);
        let (lo, hi) = detection_range(&fit(-10.0, 10.0));
        assert_close!(lo, 0.8901, 1e-4);
        assert_close!(hi, 1.1099, 1e-4);
        let (lo, hi) = detection_range(&fit(-4.635, 4.515));
        assert_close!(lo, 0.737, 5e-4);
        assert_close!(hi, 1.211, 5e-4);
        // Substituting back lands on the quartiles.
        assert_close!(psychometric(-4.635, 4.515, lo), 0.25, 1e-12);
        assert_close!(psychometric(-4.635, 4.515, hi), 0.75, 1e-12);
    }

    #[test]
    fn all_larger_flags_separation() {
        let s: Vec<_> = [0.8, 0.9, 1.0, 1.1].iter().map(|&g| sample(g, true)).collect();
        let f = fit_psychometric(&s).unwrap();
        assert_eq!(f.warning, Some(FitWarning::Separation));
        assert!(f.a.abs() <= MAX_SLOPE);
    }

    #[test]
    fn symmetric_separated_design_gives_pse_one() {
        let mut s = vec![];
        for _ in 0..10 {
            s.push(sample(0.5, false));
            s.push(sample(1.5, true));
        }
        let f = fit_psychometric(&s).unwrap();
        assert_eq!(f.warning, Some(FitWarning::Separation));
        assert_eq!(f.a, -MAX_SLOPE);
        assert_close!(pse(&f), 1.0, 1e-9);
    }

    #[test]
    fn decreasing_responses_rejected() {
        let s = vec![
            sample(0.8, true),
            sample(0.9, true),
            sample(1.1, false),
            sample(1.2, false),
        ];
        assert!(matches!(fit_psychometric(&s), Err(FitError::InconsistentSlope(_))));
        // Mixed data whose best slope is positive is rejected as well.
        let mut s = vec![];
        for (g, k) in [(0.8, 7), (0.9, 6), (1.0, 5), (1.1, 4), (1.2, 3)] {
            for i in 0..10 {
                s.push(sample(g, i < k));
            }
        }
        assert!(matches!(fit_psychometric(&s), Err(FitError::InconsistentSlope(a)) if a > 0.0));
    }

    #[test]
    fn precondition_errors() {
        assert_eq!(fit_psychometric(&[]), Err(FitError::Empty));
        let one_gain = vec![sample(1.0, true), sample(1.0, false)];
        assert_eq!(fit_psychometric(&one_gain), Err(FitError::TooFewGains(1)));
        assert_eq!(fit_psychometric(&[sample(-1.0, true)]), Err(FitError::BadGain(-1.0)));
    }

    #[test]
    fn exact_rates_recover_parameters() {
        // Counts proportional to the true curve make the MLE the truth itself.
        let (a0, b0) = (-12.0, 12.3);
        let bins: Vec<GainBin> = [0.8, 0.9, 1.0, 1.1, 1.2]
            .iter()
            .map(|&g| GainBin {
                gain: g,
                trials: 1000.0,
                larger: 1000.0 * psychometric(a0, b0, g),
            })
            .collect();
        let f = fit_bins(&bins).unwrap();
        assert_close!(f.a, a0, 1e-6);
        assert_close!(f.b, b0, 1e-6);
        let (g, _) = gradient_hessian(&bins, f.a, f.b);
        assert!(g[0].abs().max(g[1].abs()) < 1e-8);
    }

    #[test]
    fn plan_has_expected_multiset() {
        let plan = plan_threshold_session(1);
        assert_eq!(plan.len(), 45);
        let mut counts: HashMap<(DistanceClass, u64), usize> = HashMap::new();
        for t in &plan {
            *counts.entry((t.distance_class, t.gain.to_bits())).or_default() += 1;
        }
        assert_eq!(counts.len(), 15);
        assert!(counts.values().all(|&c| c == 3));
        for class in DistanceClass::ALL {
            assert_eq!(plan.iter().filter(|t| t.distance_class == class).count(), 15);
        }
        assert!(plan
            .iter()
            .any(|t| t.distance_class == DistanceClass::Short && t.gain == 0.95));
        assert_eq!(plan, plan_threshold_session(1));
    }

    #[test]
    fn plan_order_depends_on_seed() {
        let differing = (0..100u64)
            .filter(|&s| plan_threshold_session(2 * s) != plan_threshold_session(2 * s + 1))
            .count();
        assert!(differing >= 99);
    }

    proptest! {
        #[test]
        fn quantiles_are_exact(a in -200.0..-0.05f64, pse0 in 0.3..2.0f64) {
            let f = fit(a, -a * pse0);
            let p = pse(&f);
            let (x25, x75) = detection_range(&f);
            prop_assert!((f.rate(p) - 0.5).abs() <= 1e-12);
            prop_assert!((f.rate(x25) - 0.25).abs() <= 1e-12);
            prop_assert!((f.rate(x75) - 0.75).abs() <= 1e-12);
            prop_assert!(((x75 - x25) - 2.0 * 3f64.ln() / a.abs()).abs() <= 1e-12);
        }

        #[test]
        fn pse_scale_invariant(a in -100.0..-0.1f64, b in 0.1..100.0f64, k in 0.1..10.0f64) {
            prop_assert!((pse(&fit(a, b)) - pse(&fit(k * a, k * b))).abs() <= 1e-12 * (1.0 + pse(&fit(a, b)).abs()));
        }

        #[test]
        fn thresholds_continuous_and_monotone_steps(d in 0.01..5.0f64, eps in 1e-9..1e-6f64) {
            let t = GainThresholds::default();
            let a = thresholds_at(&t, d);
            let b = thresholds_at(&t, d + eps);
            // Largest table slope is 0.131 per meter.
            prop_assert!((a.lower - b.lower).abs() <= 0.14 * eps);
            prop_assert!((a.upper - b.upper).abs() <= 0.14 * eps);
            prop_assert!(max_imperceptible_step(d, Direction::Away, &t) >= 0.0);
            prop_assert!(max_imperceptible_step(d, Direction::Toward, &t) >= 0.0);
        }

        #[test]
        fn step_linear_beyond_table(w in 0.0..1.0f64) {
            let t = GainThresholds::default();
            let d = 3.0 + 2.0 * w;
            let s = max_imperceptible_step(d, Direction::Away, &t);
            prop_assert!((s - d * 0.211).abs() < 1e-12);
        }

        #[test]
        fn fit_ignores_sample_order(
            responses in proptest::collection::vec((0usize..5, any::<bool>()), 10..60),
            rot in 0usize..60,
        ) {
            let gains = [0.8, 0.9, 1.0, 1.1, 1.2];
            let s: Vec<_> = responses.iter().map(|&(i, l)| sample(gains[i], l)).collect();
            let mut r = s.clone();
            r.rotate_left(rot % s.len());
            r.reverse();
            prop_assert_eq!(fit_psychometric(&s), fit_psychometric(&r));
        }
    }
}
