use proptest::prelude::*;

use proxaim::benchmark::Band;
use proxaim::measure::ParticleMeasure;
use proxaim::models::translation_value;
use proxaim::nonsmooth::{envelope_gap, proximal_pair_from_anchor, ValueDictionary, ValueFunction};

fn coarse() -> ValueDictionary {
    Band { per_unit: 20, ..Band::default() }.dictionary().unwrap()
}

fn query() -> impl Strategy<Value = (f64, ParticleMeasure)> {
    (0.0..1.0f64, prop::collection::vec(-1.8..1.8f64, 1..4))
        .prop_map(|(t, p)| (t, ParticleMeasure::uniform(1, p).unwrap()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stored_values_sit_between_the_envelopes(pick in 0.0..1.0f64, kappa in 0.1..1.0f64) {
        let dict = coarse();
        let k = ((pick * dict.len() as f64) as usize).min(dict.len() - 1);
        let e = &dict.entries()[k];
        let mu = dict.entry_measure(k);
        let lo = dict.inf_envelope(e.t, mu, kappa).unwrap();
        let hi = dict.sup_envelope(e.t, mu, kappa).unwrap();
        prop_assert!(lo.value <= e.value + 1e-12 && e.value <= hi.value + 1e-12);
    }

    #[test]
    fn inf_envelope_increases_as_kappa_shrinks((s, mu) in query(), kappa in 0.1..1.0f64) {
        let dict = coarse();
        let wide = dict.inf_envelope(s, &mu, kappa).unwrap().value;
        let narrow = dict.inf_envelope(s, &mu, kappa / 2.0).unwrap().value;
        prop_assert!(narrow >= wide - 1e-12);
    }

    #[test]
    fn proximal_time_component_matches_offset((s, mu) in query(), kappa in 0.1..1.0f64) {
        let dict = coarse();
        let my = dict.inf_envelope(s, &mu, kappa).unwrap();
        let pair = proximal_pair_from_anchor(&my).unwrap();
        prop_assert!((pair.a - (s - my.anchor_t) / (kappa * kappa)).abs() <= 1e-9);
        prop_assert_eq!(!pair.gamma.base().is_empty(), true);
    }
}

#[test]
fn gap_shrinks_with_kappa_and_respects_rho3() {
    let dict = coarse();
    let gaps: Vec<_> = [1.0, 0.5, 0.25, 0.125].iter().map(|&k| envelope_gap(&dict, k)).collect();
    for w in gaps.windows(2) {
        assert!(w[1].gap <= w[0].gap + 1e-15);
    }
    assert!(gaps.iter().all(|g| g.gap >= 0.0 && g.gap <= g.rho3));
}

#[test]
fn stored_values_are_returned() {
    let dict = coarse();
    let mu = ParticleMeasure::dirac(&[1.2]).unwrap();
    let v = dict.evaluate(0.0, &mu).unwrap();
    assert!((v - translation_value(1.0, &mu)).abs() < 1e-15);
}
