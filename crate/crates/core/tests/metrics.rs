use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stenoseg::mask::Mask;
use stenoseg::metrics::*;
use stenoseg::tensor::Tensor;

fn random_mask(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Mask {
    Mask::from_fn(h, w, |_, _| rng.gen_bool(0.4))
}

#[test]
fn confusion_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (p, g) = (random_mask(16, 16, &mut rng), random_mask(16, 16, &mut rng));
    let c = confusion(&p, &g).unwrap();
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for r in 0..16 {
        for col in 0..16 {
            match (p.get(r, col), g.get(r, col)) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 1) => fn_ += 1,
                _ => tn += 1,
            }
        }
    }
    assert_eq!(c, ConfusionCounts { tp, fp, fn_, tn });
    assert_eq!(c.total(), 256);
}

#[test]
fn confusion_trivial_cases_and_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = random_mask(8, 8, &mut rng);
    let same = confusion(&g, &g).unwrap();
    assert_eq!((same.fp, same.fn_), (0, 0));
    let inv = confusion(&g.invert(), &g).unwrap();
    assert_eq!((inv.tp, inv.tn), (0, 0));
    assert!(confusion(&g, &Mask::zeros(8, 7)).is_err());
    assert!(confusion(&Mask::new(1, 2, vec![2, 0]).unwrap(), &Mask::zeros(1, 2)).is_err());
}

#[test]
fn reference_table_f1() {
    let f = f1_from_pr(0.6992, 0.6769).unwrap();
    assert!((f - 0.6879).abs() <= 1e-4, "{f}");
    let f = f1_from_pr(0.4912, 0.2829).unwrap();
    assert!((f - 0.3591).abs() <= 5e-4, "{f}");
}

#[test]
fn undefined_when_both_empty() {
    let m = precision_recall_f1(&ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 10 });
    assert_eq!(m, Prf { precision: None, recall: None, f1: None });
    let empty = ImageMetrics::new("e", ConfusionCounts { tn: 10, ..Default::default() });
    let full = ImageMetrics::new("f", ConfusionCounts { tp: 3, fp: 1, fn_: 0, tn: 6 });
    assert_eq!(macro_average(&[empty.clone(), full.clone()]), full.metrics);
    let agg = aggregate("m", 1, vec![empty, full.clone()]).unwrap();
    assert_eq!(agg.metrics, full.metrics);
    assert!(aggregate("m", 1, vec![]).is_err());
}

#[test]
fn aggregate_matches_summed_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let per: Vec<_> = (0..12)
        .map(|i| {
            let (p, g) = (random_mask(9, 11, &mut rng), random_mask(9, 11, &mut rng));
            ImageMetrics::new(format!("{i}"), confusion(&p, &g).unwrap())
        })
        .collect();
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for m in &per {
        tp += m.counts.tp;
        fp += m.counts.fp;
        fn_ += m.counts.fn_;
    }
    let agg = aggregate("m", 7, per.clone()).unwrap();
    assert_eq!(agg.metrics.precision, Some(tp as f64 / (tp + fp) as f64));
    assert_eq!(agg.metrics.recall, Some(tp as f64 / (tp + fn_) as f64));
    assert_eq!(agg.counts.total(), 12 * 99);

    let one = aggregate("m", 7, per[..1].to_vec()).unwrap();
    assert_eq!(one.metrics, per[0].metrics);
}

fn logits(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    // coarse values so exact ties occur
    let data = (0..2 * h * w).map(|_| rng.gen_range(-4i32..=4) as f64 * 0.5).collect();
    Tensor::new([2, h, w], data).unwrap()
}

#[test]
fn half_threshold_is_argmax_with_ties_to_foreground() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let l = logits(7, 9, &mut rng);
        let oracle = Mask::from_fn(7, 9, |r, c| l.get(&[1, r, c]) >= l.get(&[0, r, c]));
        assert_eq!(thresholded_mask(&l, 0.5).unwrap(), oracle);
        assert_eq!(argmax_mask(&l).unwrap(), oracle);
    }
}

#[test]
fn threshold_extremes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let l = logits(4, 4, &mut rng);
    assert_eq!(thresholded_mask(&l, 0.0).unwrap().count_ones(), 16);
    assert_eq!(thresholded_mask(&l, 1.01).unwrap().count_ones(), 0);
    let tie = Tensor::<f64>::from_f64([2, 1, 1], &[0.3, 0.3]).unwrap();
    assert_eq!(thresholded_mask(&tie, 0.5).unwrap().get(0, 0), 1);
}

#[test]
fn report_csv_round_trip() {
    let rows = vec![
        ReportRow { model: "A".into(), params: 5, precision: Some(0.5), recall: Some(0.25), f1: f1_from_pr(0.5, 0.25) },
        ReportRow { model: "B".into(), params: 9, precision: None, recall: None, f1: None },
    ];
    let mut buf = Vec::new();
    write_report_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("model,params,precision,recall,f1\n"));
    assert!(text.contains("B,9,,,\n"));
    let back = read_report_csv(&buf[..]).unwrap();
    assert_eq!(back[1], rows[1]);
    assert!((back[0].f1.unwrap() - rows[0].f1.unwrap()).abs() < 1e-6);
    assert!(read_report_csv("model,params,precision\n".as_bytes()).is_err());
}

fn counts() -> impl Strategy<Value = ConfusionCounts> {
    (0u64..500, 0u64..500, 0u64..500, 0u64..500).prop_map(|(tp, fp, fn_, tn)| ConfusionCounts { tp, fp, fn_, tn })
}

proptest! {
    #[test]
    fn f1_bounds(c in counts()) {
        let m = precision_recall_f1(&c);
        if let (Some(p), Some(r), Some(f)) = (m.precision, m.recall, m.f1) {
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert!(f <= p.max(r) + 1e-15 && f >= p.min(r) - 1e-15);
            prop_assert!((f - 2.0 * p * r / (p + r)).abs() < 1e-15);
        }
    }

    #[test]
    fn confusion_symmetry(seed in any::<u64>(), h in 1usize..12, w in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, g) = (random_mask(h, w, &mut rng), random_mask(h, w, &mut rng));
        let a = confusion(&p, &g).unwrap();
        let b = confusion(&g, &p).unwrap();
        prop_assert_eq!(a.tp, b.tp);
        prop_assert_eq!(a.fp, b.fn_);
        prop_assert_eq!(a.total() as usize, h * w);
        let ma = precision_recall_f1(&a);
        let mb = precision_recall_f1(&b);
        prop_assert_eq!(ma.precision, mb.recall);
    }

    #[test]
    fn aggregate_is_order_independent(all in prop::collection::vec(counts(), 1..10), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let per: Vec<_> = all.iter().enumerate().map(|(i, c)| ImageMetrics::new(i.to_string(), *c)).collect();
        let mut shuffled = per.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = aggregate("m", 0, per).unwrap();
        let b = aggregate("m", 0, shuffled).unwrap();
        prop_assert_eq!(a.counts, b.counts);
        prop_assert_eq!(a.metrics, b.metrics);
    }
}
