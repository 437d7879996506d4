use hce::cost::{bops_of_quantized, count_macs, equivalent_flops, hce_cost, parse_totals_footer, CostReport};
use hce::nn::{build_model, NetworkSpec};
use hce::prune::{compact, kept_count, Granularity, PruneMask};
use hce::quant::QuantConfig;
use proptest::prelude::*;

/// (cin, cout, k, hout, wout)
type Conv = (usize, usize, usize, usize, usize);

/// Independent layer list for a CIFAR ResNet: every conv, then the fc's (in, out).
fn resnet_layers(depth: usize, hw: usize) -> (Vec<Conv>, (usize, usize)) {
    let n = (depth - 2) / 6;
    let mut convs = vec![(3, 16, 3, hw, hw)];
    let (mut c, mut s) = (16, hw);
    for (stage, width) in [16, 32, 64].into_iter().enumerate() {
        for block in 0..n {
            if stage > 0 && block == 0 {
                s = s.div_ceil(2);
            }
            convs.push((c, width, 3, s, s));
            convs.push((width, width, 3, s, s));
            c = width;
        }
    }
    (convs, (64, 10))
}

/// Counts one per multiply by walking every output element and its receptive field.
fn count_by_enumeration(cin: usize, cout: usize, k: usize, ho: usize, wo: usize) -> u64 {
    let mut count = 0u64;
    for _co in 0..cout {
        for _y in 0..ho {
            for _x in 0..wo {
                for _ci in 0..cin {
                    for _ky in 0..k {
                        for _kx in 0..k {
                            count += 1;
                        }
                    }
                }
            }
        }
    }
    count
}

#[test]
fn stem_conv_matches_enumeration() {
    let spec = NetworkSpec::residual(20, 10, [3, 32, 32]);
    assert_eq!(count_macs(&spec).unwrap()[0].1, count_by_enumeration(3, 16, 3, 32, 32));
    assert_eq!(count_by_enumeration(3, 16, 3, 32, 32), 442_368);
}

#[test]
fn resnet_totals_match_independent_layer_list() {
    for depth in [20, 56] {
        let spec = NetworkSpec::residual(depth, 10, [3, 32, 32]);
        let (convs, fc) = resnet_layers(depth, 32);
        let expected: u64 =
            convs.iter().map(|&(a, b, k, h, w)| (a * b * k * k * h * w) as u64).sum::<u64>() + (fc.0 * fc.1) as u64;
        let got: Vec<u64> = count_macs(&spec).unwrap().into_iter().map(|(_, m)| m).collect();
        assert_eq!(got.len(), convs.len() + 1);
        assert_eq!(got.iter().sum::<u64>(), expected);
    }
}

#[test]
fn resnet_totals_within_two_percent_of_reference_counts() {
    for (depth, reference) in [(20, 41.2e6), (56, 126.8e6)] {
        let total: u64 = count_macs(&NetworkSpec::residual(depth, 10, [3, 32, 32])).unwrap().iter().map(|l| l.1).sum();
        let rel = (total as f64 - reference).abs() / reference;
        assert!(rel <= 0.02, "ResNet{depth}: {total} vs {reference} ({:.2}%)", rel * 100.0);
    }
}

#[test]
fn equivalent_flop_examples() {
    assert_eq!(equivalent_flops(23), 1.0);
    assert_eq!(equivalent_flops(0), 0.0);
    assert_eq!(bops_of_quantized(1000, 3, 3).unwrap(), 9000);
    assert!((equivalent_flops(bops_of_quantized(1000, 3, 3).unwrap()) - 9000.0 / 23.0).abs() < 1e-12);
    assert_eq!(bops_of_quantized(5, 32, 32).unwrap(), 5 * 1024);
}

#[test]
fn pruning_filters_scales_both_affected_layers() {
    let spec = NetworkSpec::residual(20, 10, [3, 32, 32]);
    let store = build_model(&spec, 0).unwrap();
    let mut mask = PruneMask::keep_all(&store, Granularity::Filter);
    let block = &spec.blocks()[4];
    let f = block.inner;
    let k = 5;
    for i in 0..k {
        mask.layers[&block.conv1()][i * 2] = false;
    }
    let dense = CostReport::float("dense", &spec).unwrap();
    let (_, small_spec) = compact(&store, &mask).unwrap();
    let small = CostReport::float("small", &small_spec).unwrap();
    for (d, s) in dense.rows.iter().zip(&small.rows) {
        if d.layer == block.conv1() || d.layer == block.conv2() {
            assert_eq!(s.macs * f as u64, d.macs * (f - k) as u64, "{}", d.layer);
        } else {
            assert_eq!(s.macs, d.macs, "{}", d.layer);
        }
    }
    let masked = CostReport::masked("masked", &spec, &mask).unwrap();
    assert_eq!(masked.totals, small.totals);
}

#[test]
fn hce_row_consistency_uses_pruned_member_total() {
    // Reference point: HCE on ResNet56 at 60.6M FLOPs, 47.8% of 126.8M.
    let spec = NetworkSpec::residual(56, 10, [3, 32, 32]);
    let base = CostReport::float("resnet56", &spec).unwrap();
    let q = CostReport::quantized("q", &spec, &QuantConfig::bits(3, 3)).unwrap().with_baseline(&base);
    let best = (30..=70)
        .map(|p| {
            let keep = p as f64 / 100.0;
            let inner = spec.blocks().iter().map(|b| kept_count(keep, b.inner)).collect();
            let s = CostReport::float("s", &NetworkSpec { inner_widths: Some(inner), ..spec.clone() })
                .unwrap()
                .with_baseline(&base);
            hce_cost(&s, Some(&q), &base).unwrap()
        })
        .min_by(|a, b| (a.pruned_only_ratio() - 0.478).abs().total_cmp(&(b.pruned_only_ratio() - 0.478).abs()))
        .unwrap();
    let rel = (best.pruned_equivalent_flops - 60.6e6).abs() / 60.6e6;
    assert!(rel <= 0.05, "S-only total {:.2}M", best.pruned_equivalent_flops / 1e6);
    // The 3-bit Q alone costs about 49M equivalent FLOPs, so S + Q cannot land near 60.6M.
    assert!(best.total() > 100e6);
}

#[test]
fn combined_report_totals_are_sums() {
    let spec = NetworkSpec::residual(20, 10, [3, 32, 32]);
    let base = CostReport::float("b", &spec).unwrap();
    let q = CostReport::quantized("q", &spec, &QuantConfig::bits(4, 4)).unwrap();
    let h = hce_cost(&base, Some(&q), &base).unwrap();
    assert_eq!(h.combined.rows.len(), base.rows.len() + q.rows.len());
    assert_eq!(h.combined.totals.macs, base.totals.macs + q.totals.macs);
    assert_eq!(h.combined.totals.bops, q.totals.bops);
    assert!((h.total() - h.combined.totals.equivalent_flops).abs() < 1e-6);
    let alone = hce_cost(&CostReport::float("s", &spec).unwrap(), None, &base).unwrap();
    assert_eq!(alone.ratio(), 1.0);
}

proptest! {
    #[test]
    fn footer_round_trips_and_ratios_stay_in_unit_interval(keep in 0.05f64..=1.0, bits in 2u32..=4) {
        let spec = NetworkSpec::residual(20, 10, [3, 32, 32]);
        let base = CostReport::float("b", &spec).unwrap();
        let inner = spec.blocks().iter().map(|b| kept_count(keep, b.inner)).collect();
        let s = CostReport::float("s", &NetworkSpec { inner_widths: Some(inner), ..spec.clone() }).unwrap().with_baseline(&base);
        let q = CostReport::quantized("q", &spec, &QuantConfig::bits(bits, bits)).unwrap().with_baseline(&base);
        for r in [&s, &q] {
            let ratio = r.ratio().unwrap();
            prop_assert!(ratio > 0.0 && ratio <= 1.0);
            prop_assert_eq!(parse_totals_footer(&r.to_table()).unwrap(), r.totals);
            let row_sum: u64 = r.rows.iter().map(|x| x.macs).sum();
            prop_assert_eq!(row_sum, r.totals.macs);
        }
    }
}
