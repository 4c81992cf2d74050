use fragility::oracles::*;
use proptest::prelude::*;

fn dist8() -> impl Strategy<Value = Dist8> {
    prop::array::uniform8(0.01f64..1.0).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.map(|x| x / s)
    })
}

fn cond(p: &Dist8, a: usize, yhat: usize) -> (f64, f64) {
    let pa = (0..2).flat_map(|h| (0..2).map(move |y| (h, y))).map(|(h, y)| p[dist8_index(a, h, y)]).sum::<f64>();
    let pah = p[dist8_index(a, yhat, 0)] + p[dist8_index(a, yhat, 1)];
    (pah / pa, p[dist8_index(a, yhat, 1)] / pah)
}

const CRITERIA: [FairCriterion; 3] = [FairCriterion::Dp, FairCriterion::Pvp, FairCriterion::Eo];

proptest! {
    #[test]
    fn projection_is_fair_distribution(p in dist8()) {
        for c in CRITERIA {
            let q = fair_projection(&p, c).unwrap();
            prop_assert!(q.iter().all(|v| *v >= 0.0));
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(independence_residual(&q, c) < 1e-12);
            // projecting a fair distribution is the identity
            let qq = fair_projection(&q, c).unwrap();
            for i in 0..8 {
                prop_assert!((q[i] - qq[i]).abs() < 1e-12);
            }
            for kind in [Divergence::Chi2, Divergence::Tv] {
                prop_assert!(f_divergence(&q, &qq, kind).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn divergence_zero_only_when_fair(p in dist8()) {
        for c in CRITERIA {
            let q = fair_projection(&p, c).unwrap();
            let d = f_divergence(&p, &q, Divergence::Chi2).unwrap();
            let fair = independence_residual(&p, c) < 1e-9;
            prop_assert_eq!(d < 1e-12, fair, "{:?} d={} residual={}", c, d, independence_residual(&p, c));
        }
    }

    #[test]
    fn attribute_shift_keeps_conditionals(p in dist8(), t in -1.0f64..1.0) {
        let pa1: f64 = p[..4].iter().sum();
        let lam = t * 0.5 * pa1.min(1.0 - pa1);
        let mut l = ShiftVector::default();
        l.0[0] = lam;
        let q = apply_adapted_shift(&p, &l).unwrap();
        prop_assert!((q[..4].iter().sum::<f64>() - pa1 - lam).abs() < 1e-12);
        prop_assert!(conditional_residual(&p, &q) < 1e-12);
    }

    #[test]
    fn printed_attribute_shift_on_uniform_conditionals(pa1 in 0.05f64..0.95, t in -1.0f64..1.0) {
        // the printed v0 keeps conditionals when they are uniform within A
        let mut p = [0.0; 8];
        for (i, v) in p.iter_mut().enumerate() {
            *v = if i < 4 { pa1 / 4.0 } else { (1.0 - pa1) / 4.0 };
        }
        let lam = t * 0.5 * pa1.min(1.0 - pa1);
        let mut l = ShiftVector::default();
        l.0[0] = lam;
        let q = apply_shift(&p, &l).unwrap();
        prop_assert!((q[..4].iter().sum::<f64>() - pa1 - lam).abs() < 1e-12);
        prop_assert!(conditional_residual(&p, &q) < 1e-12);
        prop_assert_eq!(adapted_basis(&p).unwrap(), shift_basis());
    }

    #[test]
    fn prediction_shift_moves_one_rate(p in dist8(), a in 0usize..2, t in -1.0f64..1.0) {
        let pa: f64 = if a == 1 { p[..4].iter().sum() } else { p[4..].iter().sum() };
        let p1 = p[dist8_index(a, 1, 0)] + p[dist8_index(a, 1, 1)];
        let lam = t * 0.5 * if t > 0.0 { pa - p1 } else { p1 };
        let mut l = ShiftVector::default();
        l.0[if a == 1 { 1 } else { 2 }] = lam;
        let q = apply_adapted_shift(&p, &l).unwrap();
        let (before, _) = cond(&p, a, 1);
        let (after, _) = cond(&q, a, 1);
        prop_assert!((after - before - lam / pa).abs() < 1e-12);
        for h in 0..2 {
            for a2 in 0..2 {
                prop_assert!((cond(&p, a2, h).1 - cond(&q, a2, h).1).abs() < 1e-12);
            }
        }
        let (other_before, _) = cond(&p, 1 - a, 1);
        let (other_after, _) = cond(&q, 1 - a, 1);
        prop_assert!((other_before - other_after).abs() < 1e-12);
    }

    #[test]
    fn label_shift_moves_one_conditional(p in dist8(), k in 0usize..4, t in -1.0f64..1.0) {
        let (a, h) = [(1, 1), (1, 0), (0, 1), (0, 0)][k];
        let pos = p[dist8_index(a, h, 1)];
        let neg = p[dist8_index(a, h, 0)];
        let lam = t * 0.5 * if t > 0.0 { neg } else { pos };
        let mut l = ShiftVector::default();
        l.0[3 + k] = lam;
        prop_assert_eq!(l.label_coefficient(a, h), lam);
        let q = apply_shift(&p, &l).unwrap();
        let pah = pos + neg;
        let (_, before) = cond(&p, a, h);
        let (_, after) = cond(&q, a, h);
        prop_assert!((after - before - lam / pah).abs() < 1e-12);
        // DP projection: only the (a, h) cells move, by lam P(a) P(h) / P(a, h)
        let fp = fair_projection(&p, FairCriterion::Dp).unwrap();
        let fq = fair_projection(&q, FairCriterion::Dp).unwrap();
        let pa: f64 = (0..2).flat_map(|h2| (0..2).map(move |y| (h2, y))).map(|(h2, y)| p[dist8_index(a, h2, y)]).sum();
        let ph: f64 = (0..2).flat_map(|a2| (0..2).map(move |y| (a2, y))).map(|(a2, y)| p[dist8_index(a2, h, y)]).sum();
        for a2 in 0..2 {
            for h2 in 0..2 {
                for y in 0..2 {
                    let i = dist8_index(a2, h2, y);
                    let expected = if (a2, h2) == (a, h) {
                        let s = if y == 1 { 1.0 } else { -1.0 };
                        fp[i] + s * lam * pa * ph / pah
                    } else {
                        fp[i]
                    };
                    prop_assert!((fq[i] - expected).abs() < 1e-12);
                }
            }
        }
        // EO and PVP projections stay fair after any shift
        for c in [FairCriterion::Pvp, FairCriterion::Eo] {
            prop_assert!(independence_residual(&fair_projection(&q, c).unwrap(), c) < 1e-12);
        }
    }

    #[test]
    fn proxy_intervals_grow_with_alpha(
        cells in prop::array::uniform4(0.02f64..1.0),
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
    ) {
        let s: f64 = cells.iter().sum();
        let c = cells.map(|x| x / s);
        let room = c[0] + c[1];
        let (a, b) = (a.min(b) * 0.9 * room, a.max(b) * 0.9 * room);
        for regime in [ProxyRegime::MissedPositives, ProxyRegime::SpuriousPositives] {
            let room = if regime == ProxyRegime::MissedPositives { c[0] + c[1] } else { c[2] + c[3] };
            let (a, b) = (a.min(0.9 * room), b.min(0.9 * room));
            let small = ProxyTable::new(c[0], c[1], c[2], c[3], a).unwrap();
            let large = ProxyTable::new(c[0], c[1], c[2], c[3], b).unwrap();
            for m in [ProxyMetric::Fpr, ProxyMetric::Fnr, ProxyMetric::Ppv, ProxyMetric::Npv] {
                let (l1, h1) = proxy_closed_form(&small, m, regime).unwrap();
                let (l2, h2) = proxy_closed_form(&large, m, regime).unwrap();
                prop_assert!(l2 <= l1 + 1e-15 && h2 >= h1 - 1e-15);
            }
            // the rate tied to the recorded side is identified
            let m = if regime == ProxyRegime::MissedPositives { ProxyMetric::Fnr } else { ProxyMetric::Fpr };
            let (l, h) = proxy_closed_form(&large, m, regime).unwrap();
            prop_assert!((h - l).abs() < 1e-12);
        }
    }
}

#[test]
fn flip_budget_on_dist8_reaches_threshold() {
    let p = [0.2, 0.05, 0.1, 0.15, 0.1, 0.1, 0.1, 0.2];
    let stat = FlipStatistic { criterion: FairCriterion::Dp, kind: Divergence::Chi2, scale: 1.0 };
    let t = stat.eval(&p) + 0.02;
    let got = min_flip_budget(&p, stat, t, &FlipOptions::default()).unwrap();
    assert!(got.budget > 0.0);
    let dist: f64 = got.witness.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    assert!(dist <= got.budget + 1e-3);
    assert!(stat.eval(&got.witness) >= t - 1e-3);
    // random points closer than the budget never reach the threshold
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20000 {
        let dir: Vec<f64> = (0..8).map(|_| rng.random::<f64>() - 0.5).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r = 0.95 * got.budget * rng.random::<f64>();
        let q = project_simplex(&p.iter().zip(&dir).map(|(a, d)| a + r * d / norm).collect::<Vec<_>>());
        let d: f64 = q.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if d <= 0.95 * got.budget {
            assert!(stat.eval(&q) < t, "closer point reaches threshold: d={d} budget={} T={} t={t}", got.budget, stat.eval(&q));
        }
    }
}
