use csm_core::stats::{pearson, spearman};
use csm_core::{
    fit_basis_function, interaction_metric, optimize_composite_dpw, optimize_dpw, score, BasisFunction, Cem, CsmModel,
    Dm, Dpw, DpwFactor, DpwShape, FeatureSeries, Hinge, QualityTerm, MODEL_FORMAT_VERSION,
};
use proptest::prelude::*;

fn shape() -> impl Strategy<Value = DpwShape> {
    prop_oneof![
        (-64.0..64.0f64, -2.0..2.0f64).prop_map(|(steepness, midpoint)| DpwShape::Logistic { steepness, midpoint }),
        (-2.0..2.0f64, 0.01..3.0f64).prop_map(|(lo, w)| DpwShape::Ramp { lo, hi: lo + w }),
    ]
}

fn model() -> CsmModel {
    CsmModel {
        format_version: MODEL_FORMAT_VERSION.into(),
        config_hash: "h".into(),
        basis_functions: vec![
            BasisFunction {
                dm: Dm::LinDist,
                intercept: 90.0,
                hinges: vec![Hinge { knot: 0.2, slope: -30.0 }],
                x_min: 0.0,
                x_max: 3.0,
            },
            BasisFunction {
                dm: Dm::Ehs,
                intercept: 80.0,
                hinges: vec![Hinge { knot: 0.0, slope: -10.0 }],
                x_min: 0.0,
                x_max: 5.0,
            },
        ],
        dpws: vec![Dpw::logistic("DPW3", Cem::ProbSpeech, 8.0, 0.5, true)],
        terms: vec![
            QualityTerm::intercept(55.0),
            QualityTerm {
                id: "Q1".into(),
                bf: Some(Dm::LinDist),
                dpw: Some("DPW3".into()),
                coefficient: 3.0,
                z_mean: 40.0,
                z_std: 20.0,
            },
            QualityTerm {
                id: "Q2".into(),
                bf: Some(Dm::Ehs),
                dpw: None,
                coefficient: 5.0,
                z_mean: 60.0,
                z_std: 10.0,
            },
        ],
        provenance: Default::default(),
    }
}

fn frames(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<([f64; 5], [f64; 3])>> {
    prop::collection::vec(
        (prop::array::uniform5(0.0..4.0f64), prop::array::uniform3(0.0..1.0f64)),
        n,
    )
}

fn series(fr: &[([f64; 5], [f64; 3])]) -> FeatureSeries {
    FeatureSeries::new(
        "h",
        0.01,
        fr.iter().map(|f| f.0).collect(),
        fr.iter().map(|f| f.1).collect(),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn dpw_stays_in_unit_interval(a in shape(), b in shape(), inv in any::<bool>(),
                                  c in prop::array::uniform3(-10.0..10.0f64)) {
        let d = Dpw {
            id: "D".into(),
            factors: vec![DpwFactor { cem: Cem::Epn, shape: a }, DpwFactor { cem: Cem::Pdev, shape: b }],
            inverted: inv,
        };
        let w = d.eval(&c);
        prop_assert!((0.0..=1.0).contains(&w), "{w}");
    }

    #[test]
    fn dpw_factor_is_monotone(s in shape(), x in -5.0..5.0f64, dx in 0.0..5.0f64) {
        let (lo, hi) = (s.eval(x), s.eval(x + dx));
        let rising = match s {
            DpwShape::Logistic { steepness, .. } => steepness >= 0.0,
            DpwShape::Ramp { .. } => true,
        };
        if rising {
            prop_assert!(hi >= lo - 1e-12);
        } else {
            prop_assert!(hi <= lo + 1e-12);
        }
    }

    #[test]
    fn fitted_basis_function_is_non_increasing(
        pts in prop::collection::vec((0.0..5.0f64, 0.0..100.0f64), 10..60),
        probe in prop::collection::vec(-1.0..6.0f64, 2..20),
    ) {
        let bf = fit_basis_function(Dm::SegNmr, &pts).unwrap();
        // at most three knots inside the training range
        prop_assert!(bf.breakpoints().len() <= 5);
        prop_assert!(bf.is_non_increasing(), "{:?}", bf);
        let mut xs = probe;
        xs.sort_by(f64::total_cmp);
        for w in xs.windows(2) {
            prop_assert!(bf.eval(w[1]) <= bf.eval(w[0]) + 1e-9);
        }
    }

    #[test]
    fn score_ignores_frame_order(fr in frames(2..40), seed in any::<u64>()) {
        let m = model();
        let a = score(&series(&fr), &m).unwrap();
        let mut shuffled = fr.clone();
        // Deterministic Fisher-Yates driven by the seed.
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let b = score(&series(&shuffled), &m).unwrap();
        prop_assert!((a.unclamped - b.unclamped).abs() < 1e-9);
        prop_assert!((0.0..=100.0).contains(&a.score));
    }

    #[test]
    fn score_is_mean_of_term_sums(fr in frames(1..30)) {
        let m = model();
        let f = series(&fr);
        let s = score(&f, &m).unwrap();
        // Direct evaluation of the additive model, frame by frame.
        let mut total = 0.0;
        for (d, c) in &fr {
            let w = 1.0 - 1.0 / (1.0 + (-8.0 * (c[0] - 0.5)).exp());
            let q1 = 90.0 - 30.0 * (d[2].clamp(0.0, 3.0) - 0.2).max(0.0);
            let q2 = 80.0 - 10.0 * d[4].clamp(0.0, 5.0);
            total += 55.0 + 3.0 * (w * q1 - 40.0) / 20.0 + 5.0 * (q2 - 60.0) / 10.0;
        }
        prop_assert!((s.unclamped - total / fr.len() as f64).abs() < 1e-9);
    }

    #[test]
    fn pearson_is_affine_invariant(
        xy in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 3..50),
        a in 0.1..10.0f64, b in -50.0..50.0f64, flip in any::<bool>(),
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        if let Some(r) = pearson(&x, &y) {
            let sign = if flip { -1.0 } else { 1.0 };
            let x2: Vec<f64> = x.iter().map(|v| sign * a * v + b).collect();
            let r2 = pearson(&x2, &y).unwrap();
            prop_assert!((r2 - sign * r).abs() < 1e-9);
            prop_assert!(r.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn interaction_metric_in_unit_interval(
        rows in prop::collection::vec((prop::option::of(-1.0..1.0f64), 0.0..1.0f64), 3..30)
    ) {
        let (s, w): (Vec<Option<f64>>, Vec<f64>) = rows.into_iter().unzip();
        if let Ok(c) = interaction_metric(&s, &w) {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&c));
        }
    }

    #[test]
    fn dpw_search_never_loses_to_raw_cem(
        rows in prop::collection::vec((-1.0..1.0f64, 0.0..1.0f64, 0.0..3.0f64), 4..24)
    ) {
        let s: Vec<Option<f64>> = rows.iter().map(|r| Some(r.0)).collect();
        let c: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let p: Vec<f64> = rows.iter().map(|r| r.2).collect();
        if let Ok(cand) = optimize_dpw("D", Cem::ProbSpeech, Dm::LinDist, &c, &s) {
            prop_assert!(cand.c_after >= cand.c_before - 1e-12);
            prop_assert!(cand.c_after <= 1.0 + 1e-12);
        }
        if let Ok(cand) = optimize_composite_dpw("D", Dm::SegNmr, &c, &p, &s) {
            prop_assert!(cand.c_after >= cand.c_before - 1e-12);
        }
    }

    #[test]
    fn spearman_invariant_under_monotone_map(xy in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 3..40)) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        if let Some(r) = spearman(&x, &y) {
            let x2: Vec<f64> = x.iter().map(|v| v.exp() + v * v * v).collect();
            prop_assert!((spearman(&x2, &y).unwrap() - r).abs() < 1e-9);
        }
    }
}

#[test]
fn model_round_trips_through_validation() {
    let m = model();
    m.validate().unwrap();
    let mut bad = m.clone();
    bad.terms[1].dpw = Some("DPW9".into());
    assert!(bad.validate().is_err());
}
