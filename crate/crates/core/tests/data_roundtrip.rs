use proptest::prelude::*;
use qber_risk::data::{partition_indices, read_qber_csv, write_qber_csv, CsvSchema, FoldMode, QberSample, QberSeries};

fn sample() -> impl Strategy<Value = QberSample> {
    (
        0i64..1_000_000,
        0.0f64..=0.11,
        proptest::option::of(0.9f64..=1.0),
        proptest::option::of(0.0f64..1e6),
        proptest::option::of(any::<bool>()),
    )
        .prop_map(|(timestamp, qber, visibility, key_rate, attack_label)| QberSample {
            timestamp,
            qber,
            visibility,
            key_rate,
            attack_label,
        })
}

proptest! {
    #[test]
    fn csv_round_trip_is_lossless(mut samples in proptest::collection::vec(sample(), 1..40)) {
        samples.sort_by_key(|s| s.timestamp);
        let series = QberSeries::new(samples, "prop").unwrap();
        let mut buf = Vec::new();
        write_qber_csv(&series, &mut buf, true).unwrap();
        let back = read_qber_csv(buf.as_slice(), &CsvSchema::default(), "prop").unwrap();
        prop_assert_eq!(back.samples(), series.samples());
    }

    #[test]
    fn partition_covers_every_index_once(n in 2usize..500, k in 2usize..20, strided in any::<bool>()) {
        prop_assume!(k <= n);
        let mode = if strided { FoldMode::Strided } else { FoldMode::Contiguous };
        let folds = partition_indices(n, k, mode).unwrap();
        let mut all: Vec<usize> = folds.folds().iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes = folds.sizes();
        let (lo, hi) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
        prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
    }
}
