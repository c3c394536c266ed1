mod common;

use blindwalk_core::gain::{detection_range, FitError, FitWarning};
use blindwalk_core::rng::{stream, Stream};
use blindwalk_core::{fit_psychometric, pse, DistanceClass, ResponseSample};
use common::{bins_of, generator, grid_mle, median, nll, synthetic_session};
use proptest::prelude::*;
use rand::Rng;

fn sample(gain: f64, answered_larger: bool) -> ResponseSample {
    ResponseSample {
        gain,
        distance_class: DistanceClass::Middle,
        answered_larger,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn fit_reaches_the_grid_minimum(counts in proptest::collection::vec(0u8..=6, 5)) {
        // Monotone-ish counts keep the fit away from separation.
        let gains = [0.8, 0.9, 1.0, 1.1, 1.2];
        let mut counts = counts;
        counts.sort_unstable();
        prop_assume!(counts[0] < 6 && counts[4] > 0 && counts[0] < counts[4]);
        prop_assume!(counts[0] > 0 || counts[1] > 0 || counts[4] < 6 || counts[3] < 6);
        let samples: Vec<_> = gains
            .iter()
            .zip(&counts)
            .flat_map(|(&g, &k)| (0..6).map(move |i| sample(g, i < k)))
            .collect();
        let fit = match fit_psychometric(&samples) {
            Ok(f) => f,
            Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
        };
        prop_assume!(fit.warning.is_none());
        let bins = bins_of(&samples);
        let (_, _, best) = grid_mle(&bins);
        prop_assert!((nll(&bins, fit.a, fit.b) - best).abs() <= 1e-6, "{} vs {best}", nll(&bins, fit.a, fit.b));
    }
}

#[test]
fn pooled_sessions_recover_each_row() {
    for class in DistanceClass::ALL {
        let samples: Vec<_> = (0..100u64)
            .flat_map(synthetic_session)
            .filter(|s| s.distance_class == class)
            .collect();
        assert_eq!(samples.len(), 1500);
        let truth = generator(class);
        let fit = fit_psychometric(&samples).unwrap();
        let (x25, x75) = detection_range(&fit);
        assert!(
            (pse(&fit) - truth.pse()).abs() <= 0.02,
            "{class}: {} vs {}",
            pse(&fit),
            truth.pse()
        );
        assert!((x25 - truth.x25()).abs() <= 0.05, "{class}");
        assert!((x75 - truth.x75()).abs() <= 0.05, "{class}");
    }
}

/// Asymptotic standard deviation of the fitted PSE for `reps` trials at
/// each gain, from the inverse Fisher information in (slope, PSE).
fn predicted_pse_sd(a: f64, m: f64, gains: &[f64], reps: f64) -> f64 {
    let (mut aa, mut am, mut mm) = (0.0, 0.0, 0.0);
    for &x in gains {
        let p = 1.0 / (1.0 + (a * (x - m)).exp());
        let w = reps * p * (1.0 - p);
        let (da, dm) = (x - m, -a);
        aa += w * da * da;
        am += w * da * dm;
        mm += w * dm * dm;
    }
    (aa / (aa * mm - am * am)).sqrt()
}

#[test]
fn per_session_error_matches_sampling_noise() {
    // With thirty repeats per gain the fit should be as precise as the
    // information in the design allows; the median of |N(0, sd)| is 0.6745 sd.
    let truth = generator(DistanceClass::Long);
    let gains = DistanceClass::Long.gains();
    let mut errors: Vec<f64> = (0..200u64)
        .map(|seed| {
            let mut rng = stream(seed, Stream::Synthetic);
            let samples: Vec<_> = gains
                .iter()
                .flat_map(|&g| std::iter::repeat_n(g, 30))
                .map(|g| sample(g, rng.random::<f64>() < truth.rate(g)))
                .collect();
            (pse(&fit_psychometric(&samples).unwrap()) - truth.pse()).abs()
        })
        .collect();
    let expected = 0.6745 * predicted_pse_sd(truth.a, truth.pse(), &gains, 30.0);
    let observed = median(&mut errors);
    assert!(
        observed > 0.75 * expected && observed < 1.33 * expected,
        "{observed} vs {expected}"
    );
}

#[test]
fn separated_data_is_flagged_not_fatal() {
    let samples: Vec<_> = [0.8, 0.9, 1.0, 1.1, 1.2]
        .iter()
        .flat_map(|&g| (0..3).map(move |_| sample(g, g > 0.95)))
        .collect();
    let fit = fit_psychometric(&samples).unwrap();
    assert_eq!(fit.warning, Some(FitWarning::Separation));
    let p = pse(&fit);
    assert!(p > 0.9 && p < 1.0, "{p}");
}

#[test]
fn reversed_data_is_rejected() {
    let samples: Vec<_> = [0.8, 0.9, 1.0, 1.1, 1.2]
        .iter()
        .flat_map(|&g| (0..3).map(move |_| sample(g, g < 0.95)))
        .collect();
    assert!(matches!(
        fit_psychometric(&samples),
        Err(FitError::InconsistentSlope(_))
    ));
}
