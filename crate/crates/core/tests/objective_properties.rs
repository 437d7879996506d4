use hce::objective::{cross_entropy, hce_loss, hce_loss_with_grad, kl_term, soften_rows, DistillTargets, HceLossConfig, TargetMode};
use hce::Tensor;
use proptest::prelude::*;

fn scores(n: usize, k: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-6.0f64..6.0, n * k).prop_map(move |d| Tensor::new(vec![n, k], d).unwrap())
}

/// Loss written out directly from its definition, sharing no code with the library.
fn naive_loss(s: &Tensor, labels: &[usize], o: &Tensor, q: &Tensor, alpha: f64, tau: f64) -> f64 {
    let softmax = |row: &[f64], t: f64| {
        let e: Vec<f64> = row.iter().map(|v| (v / t).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect::<Vec<_>>()
    };
    let n = s.rows();
    let (mut ce, mut kl) = (0.0, 0.0);
    for (i, &y) in labels.iter().enumerate() {
        ce -= softmax(s.row(i), 1.0)[y].ln();
        let (ps, po, pq) = (softmax(s.row(i), tau), softmax(o.row(i), tau), softmax(q.row(i), tau));
        for j in 0..ps.len() {
            kl += (po[j] - pq[j]) * ps[j].max(1e-12).ln();
        }
    }
    alpha * ce / n as f64 + (1.0 - alpha) * (-tau * tau * kl / n as f64)
}

fn targets(o: &Tensor, q: &Tensor, tau: f64) -> DistillTargets {
    DistillTargets::from_probabilities(soften_rows(o, tau).unwrap(), soften_rows(q, tau).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_matches_definition(
        s in scores(5, 4), o in scores(5, 4), q in scores(5, 4),
        labels in prop::collection::vec(0usize..4, 5),
        alpha in 0.0f64..=1.0, tau in 1.0f64..6.0,
    ) {
        let cfg = HceLossConfig { alpha, temperature: tau, target_mode: TargetMode::Signed };
        let got = hce_loss(&s, &labels, &targets(&o, &q, tau), &cfg).unwrap();
        let want = naive_loss(&s, &labels, &o, &q, alpha, tau);
        prop_assert!((got - want).abs() <= 1e-9 * (1.0 + want.abs()), "{got} vs {want}");
    }

    #[test]
    fn difference_rows_sum_to_zero(o in scores(8, 10), q in scores(8, 10), tau in 1.0f64..8.0) {
        let t = targets(&o, &q, tau);
        for i in 0..8 {
            prop_assert!(t.p_d.row(i).iter().sum::<f64>().abs() <= 1e-6);
        }
    }

    #[test]
    fn alpha_one_is_cross_entropy(s in scores(6, 5), o in scores(6, 5), q in scores(6, 5), labels in prop::collection::vec(0usize..5, 6)) {
        let cfg = HceLossConfig { alpha: 1.0, temperature: 4.0, target_mode: TargetMode::Signed };
        let b = hce_loss_with_grad(&s, &labels, &targets(&o, &q, 4.0), &cfg).unwrap();
        let (ce, grad) = cross_entropy(&s, &labels).unwrap();
        prop_assert_eq!(b.total, ce);
        prop_assert_eq!(b.grad, grad);
    }

    #[test]
    fn identical_teachers_vanish(s in scores(6, 5), o in scores(6, 5), tau in 1.0f64..8.0) {
        let t = targets(&o, &o, tau);
        let p_s = soften_rows(&s, tau).unwrap();
        prop_assert!(kl_term(&t.p_d, &p_s, tau).unwrap().abs() <= 1e-3);
    }

    #[test]
    fn gradient_matches_central_differences(
        s in scores(3, 4), o in scores(3, 4), q in scores(3, 4),
        labels in prop::collection::vec(0usize..4, 3),
        alpha in 0.0f64..=1.0, tau in 1.0f64..5.0,
    ) {
        let cfg = HceLossConfig { alpha, temperature: tau, target_mode: TargetMode::Signed };
        let t = targets(&o, &q, tau);
        let grad = hce_loss_with_grad(&s, &labels, &t, &cfg).unwrap().grad;
        let h = 1e-5;
        for i in 0..s.len() {
            let (mut up, mut dn) = (s.clone(), s.clone());
            up.data_mut()[i] += h;
            dn.data_mut()[i] -= h;
            let fd = (hce_loss(&up, &labels, &t, &cfg).unwrap() - hce_loss(&dn, &labels, &t, &cfg).unwrap()) / (2.0 * h);
            let a = grad.data()[i];
            prop_assert!((a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-3), "{a} vs {fd}");
        }
    }
}

#[test]
fn clamped_targets_are_distributions_or_zero() {
    let o = Tensor::new(vec![2, 3], vec![3.0, 0.0, -1.0, 1.0, 1.0, 1.0]).unwrap();
    let t = targets(&o, &o.clone(), 1.0);
    assert!(t.target(TargetMode::Clamped).data().iter().all(|&v| v == 0.0));
    let q = Tensor::new(vec![2, 3], vec![0.0, 3.0, -1.0, 2.0, 0.0, 1.0]).unwrap();
    let c = targets(&o, &q, 2.0).target(TargetMode::Clamped);
    for i in 0..2 {
        assert!((c.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(c.row(i).iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn rejects_out_of_range_settings() {
    let s = Tensor::zeros(&[1, 2]);
    let t = targets(&s, &s, 1.0);
    for (alpha, tau) in [(-0.1, 1.0), (1.1, 1.0), (0.5, 0.5)] {
        let cfg = HceLossConfig { alpha, temperature: tau, target_mode: TargetMode::Signed };
        let err = hce_loss(&s, &[0], &t, &cfg).unwrap_err();
        assert!(err.is_config(), "{err}");
    }
}
