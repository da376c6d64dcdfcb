//! Property tests for the forward pass, model files, splits and reports.

use approxcnn::dataset::{Dataset, Provenance, Sample};
use approxcnn::eval::{accuracy_of, aoc_from_kilo_ops, evaluate, EvalConfig};
use approxcnn::model_io::{decode_model, encode_model};
use approxcnn::network::{network_forward, Conv2d, Dense, Layer};
use approxcnn::report::{emit_table, parse_report, ReportFormat, ReportRow, ReportTable};
use approxcnn::trainer::init_weights;
use approxcnn::{LayerAssignment, MulKernel, NetworkSpec, OpCount, Tensor};
use proptest::prelude::*;

fn small_net(c1: usize, k: usize, side: usize, classes: usize, seed: u64) -> NetworkSpec {
    let conv_out = side - k + 1;
    let mut net = NetworkSpec::new(
        "small",
        vec![2, side, side],
        vec![
            Layer::Conv2d(Conv2d::zeros(2, c1, k, k)),
            Layer::Relu,
            Layer::Flatten,
            Layer::Dense(Dense::zeros(c1 * conv_out * conv_out, classes)),
            Layer::Softmax,
        ],
    )
    .unwrap();
    init_weights(&mut net, seed);
    net
}

fn image(side: usize, values: &[f64]) -> Tensor {
    Tensor::chw(2, side, side, values.iter().cycle().take(2 * side * side).copied().collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layer_counts_add_up(
        c1 in 1usize..4, k in 1usize..4, extra in 0usize..4, seed in any::<u64>(),
        values in proptest::collection::vec(0.0..1.0f64, 8),
        kernel in (0..MulKernel::CANONICAL.len()).prop_map(|i| MulKernel::CANONICAL[i]),
    ) {
        let side = k + extra;
        let net = small_net(c1, k, side, 3, seed);
        let x = image(side, &values);
        let assign = LayerAssignment::from_conv(&[kernel]).with_dense(kernel);
        let (_, per_layer) = net.forward_traced(&assign, &x).unwrap();
        let (_, total) = network_forward(&net, &assign, &x).unwrap();
        prop_assert_eq!(per_layer.iter().copied().sum::<OpCount>(), total);

        let (_, exact) = network_forward(&net, &LayerAssignment::exact(), &x).unwrap();
        prop_assert_eq!(exact.mul, net.mac_count().unwrap());
    }

    #[test]
    fn model_round_trip(c1 in 1usize..4, k in 1usize..4, extra in 0usize..3, seed in any::<u64>()) {
        let net = small_net(c1, k, k + extra, 4, seed);
        let first = encode_model(&net, "m.bin").unwrap();
        let second = encode_model(&decode_model(&first).unwrap(), "m.bin").unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn split_partitions(n in 1usize..60, fraction in 0.0..1.0f64, seed in any::<u64>()) {
        let items = (0..n).map(|i| Sample { image: Tensor::flat(vec![i as f64]).unwrap(), label: i % 2 }).collect();
        let ds = Dataset::new(items, 2, Provenance::Ingested).unwrap();
        let (a, b) = ds.split(fraction, seed).unwrap();
        prop_assert_eq!(a.len() + b.len(), n);
        let mut seen: Vec<f64> = a.items.iter().chain(&b.items).map(|s| s.image.data()[0]).collect();
        seen.sort_by(f64::total_cmp);
        prop_assert_eq!(seen, (0..n).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn aoc_is_monotone(acc in 0.0..99.0f64, bump in 0.01..1.0f64, kilo in 0.1..1e4f64, more in 0.01..100.0f64) {
        let base = aoc_from_kilo_ops(acc, kilo).unwrap();
        prop_assert!(aoc_from_kilo_ops(acc + bump, kilo).unwrap() > base);
        if acc > 0.0 {
            prop_assert!(aoc_from_kilo_ops(acc, kilo + more).unwrap() < base);
        }
    }

    #[test]
    fn report_round_trip(rows in proptest::collection::vec((0.0..=100.0f64, 1e-3..1e6f64, 0usize..50), 0..8)) {
        let table = ReportTable {
            rows: rows
                .iter()
                .enumerate()
                .map(|(i, &(acc, kilo, sat))| ReportRow {
                    rank: i + 1,
                    pattern: "HLH".into(),
                    layer1: "famm".into(),
                    layer2: "rounded".into(),
                    layer3: "lns".into(),
                    layer4: "exact".into(),
                    accuracy_percent: acc,
                    kilo_ops: kilo,
                    aoc: acc / kilo,
                    saturations: sat,
                })
                .collect(),
            pattern_stats: Vec::new(),
        };
        for format in [ReportFormat::Csv, ReportFormat::Json] {
            let bytes = emit_table(&table, format);
            let parsed = parse_report(&bytes, format).unwrap();
            for r in &parsed.rows {
                prop_assert!((r.aoc - r.accuracy_percent / r.kilo_ops).abs() <= 1e-6 * r.aoc.max(1.0));
            }
            prop_assert_eq!(emit_table(&parsed, format), bytes);
        }
    }
}

#[test]
fn accuracy_matches_recount_and_workers_agree() {
    let net = small_net(2, 3, 6, 3, 11);
    let items: Vec<Sample> = (0..30)
        .map(|i| {
            let vals: Vec<f64> = (0..8).map(|j| ((i * 7 + j * 3) % 11) as f64 / 10.0).collect();
            Sample { image: image(6, &vals), label: i % 3 }
        })
        .collect();
    let data = Dataset::new(items, 3, Provenance::Ingested).unwrap();
    let assign = LayerAssignment::from_conv(&[MulKernel::TIRUD]).with_dense(MulKernel::LNS);
    let one = evaluate(&net, &assign, &data, &EvalConfig::with_workers(1)).unwrap();
    let eight = evaluate(&net, &assign, &data, &EvalConfig::with_workers(8)).unwrap();
    assert_eq!(one, eight);
    let correct = one.outcomes.iter().zip(&data.items).filter(|(o, s)| o.predicted == Some(s.label)).count();
    assert_eq!(one.accuracy_percent, 100.0 * correct as f64 / 30.0);
    assert_eq!(accuracy_of(&one.outcomes), one.accuracy_percent);
}
