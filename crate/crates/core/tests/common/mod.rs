//! Test oracles shared by the integration suites. Nothing here calls the
//! fitter under test.

#![allow(dead_code)]

use std::path::PathBuf;

use blindwalk_core::gain::{GainBin, ResponseSample, ThresholdRow};
use blindwalk_core::rng::{stream, Stream};
use blindwalk_core::{plan_threshold_session, DistanceClass, GainThresholds};
use rand::Rng;

pub fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// Plain Bernoulli log-likelihood, written out directly from the model.
pub fn nll(bins: &[GainBin], a: f64, b: f64) -> f64 {
    bins.iter()
        .map(|bin| {
            let f = 1.0 / (1.0 + (a * bin.gain + b).exp());
            let mut s = 0.0;
            if bin.larger > 0.0 {
                s -= bin.larger * f.ln();
            }
            if bin.trials > bin.larger {
                s -= (bin.trials - bin.larger) * (1.0 - f).ln();
            }
            s
        })
        .sum()
}

pub fn bins_of(samples: &[ResponseSample]) -> Vec<GainBin> {
    let mut bins: Vec<GainBin> = Vec::new();
    for s in samples {
        let larger = if s.answered_larger { 1.0 } else { 0.0 };
        match bins.iter_mut().find(|b| b.gain == s.gain) {
            Some(b) => {
                b.trials += 1.0;
                b.larger += larger;
            }
            None => bins.push(GainBin {
                gain: s.gain,
                trials: 1.0,
                larger,
            }),
        }
    }
    bins
}

/// Exhaustive search: a coarse grid over a in [-100, 0), b in (0, 100],
/// followed by repeated zooms around the best cell.
pub fn grid_mle(bins: &[GainBin]) -> (f64, f64, f64) {
    let step = 0.05;
    let mut best = (f64::NAN, f64::NAN, f64::INFINITY);
    let n = (100.0 / step) as i64;
    for i in 0..n {
        let a = -100.0 + i as f64 * step;
        for j in 1..=n {
            let b = j as f64 * step;
            let v = nll(bins, a, b);
            if v < best.2 {
                best = (a, b, v);
            }
        }
    }
    // Recenter on the best point; shrink only once it sits at the center,
    // so narrow diagonal valleys are followed rather than cut off.
    let mut half = step;
    while half > 1e-13 {
        let (ca, cb) = (best.0, best.1);
        let mut moved = false;
        for i in -10..=10 {
            for j in -10..=10 {
                let a = ca + half * i as f64 / 10.0;
                let b = cb + half * j as f64 / 10.0;
                let v = nll(bins, a, b);
                if v < best.2 {
                    best = (a, b, v);
                    moved = true;
                }
            }
        }
        if !moved {
            half *= 0.5;
        }
    }
    best
}

/// Logistic parameters whose PSE is the row's and whose 25-75 % spread
/// equals `upper - lower`. A logistic is symmetric about its PSE, so both
/// quantiles cannot match an asymmetric row at once.
#[derive(Clone, Copy, Debug)]
pub struct Generator {
    pub a: f64,
    pub b: f64,
}

impl Generator {
    pub fn from_row(row: &ThresholdRow) -> Generator {
        let a = -2.0 * 3f64.ln() / (row.upper - row.lower);
        Generator { a, b: -a * row.pse }
    }

    pub fn rate(&self, x: f64) -> f64 {
        1.0 / (1.0 + (self.a * x + self.b).exp())
    }

    pub fn pse(&self) -> f64 {
        -self.b / self.a
    }

    pub fn x25(&self) -> f64 {
        (3f64.ln() - self.b) / self.a
    }

    pub fn x75(&self) -> f64 {
        (-(3f64.ln()) - self.b) / self.a
    }
}

pub fn generator(class: DistanceClass) -> Generator {
    let t = GainThresholds::default();
    let row = t
        .rows()
        .iter()
        .find(|r| r.distance == class.distance())
        .expect("table row for class");
    Generator::from_row(row)
}

/// Responses of one simulated participant following the planned trials.
pub fn synthetic_session(seed: u64) -> Vec<ResponseSample> {
    let mut rng = stream(seed, Stream::Synthetic);
    plan_threshold_session(seed)
        .into_iter()
        .map(|t| {
            let p = generator(t.distance_class).rate(t.gain);
            ResponseSample {
                gain: t.gain,
                distance_class: t.distance_class,
                answered_larger: rng.random::<f64>() < p,
            }
        })
        .collect()
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// A cloneable in-memory sink for traces and input logs.
#[derive(Clone, Default)]
pub struct SharedBuf(std::sync::Arc<std::sync::Mutex<Vec<u8>>>);

impl std::io::Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

impl SharedBuf {
    pub fn bytes(&self) -> Vec<u8> {
        self.0.lock().unwrap().clone()
    }

    pub fn text(&self) -> String {
        String::from_utf8(self.bytes()).unwrap()
    }
}
