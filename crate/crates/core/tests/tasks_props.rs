use ernn::numerics::{Rng, Vector};
use ernn::tasks::{
    gen_noise_padded, read_csv_sequences, write_csv_sequences, SequenceDataset, TaskSpec,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Ridge least-squares classifier on flattened sequences (±1 targets).
fn linear_probe_accuracy(train: &SequenceDataset, test: &SequenceDataset) -> f64 {
    let features = |seq: &[Vector]| -> Vec<f64> {
        let mut f: Vec<f64> = seq.iter().flat_map(|v| v.as_slice().to_vec()).collect();
        f.push(1.0);
        f
    };
    let width = train.seq_len * train.input_dim + 1;
    let rows: Vec<f64> = train.sequences.iter().flat_map(|s| features(s)).collect();
    let x = DMatrix::from_row_slice(train.len(), width, &rows);
    let y = DVector::from_iterator(
        train.len(),
        train
            .labels
            .iter()
            .map(|&l| if l == 1 { 1.0 } else { -1.0 }),
    );
    let gram = x.transpose() * &x + DMatrix::identity(width, width);
    let w = gram.lu().solve(&(x.transpose() * y)).unwrap();
    let hits = test
        .sequences
        .iter()
        .zip(&test.labels)
        .filter(|(s, &l)| {
            let score: f64 = features(s).iter().zip(w.iter()).map(|(a, b)| a * b).sum();
            (score > 0.0) == (l == 1)
        })
        .count();
    hits as f64 / test.len() as f64
}

/// Permutes the informative steps across samples, keeping labels in place.
fn shuffle_informative(data: &SequenceDataset, tau: usize, rng: &mut Rng) -> SequenceDataset {
    let mut order: Vec<usize> = (0..data.len()).collect();
    rng.shuffle(&mut order);
    let mut out = data.clone();
    for (i, &j) in order.iter().enumerate() {
        out.sequences[i][..tau].clone_from_slice(&data.sequences[j][..tau]);
    }
    out
}

#[test]
fn label_information_sits_in_the_informative_steps() {
    let tau = 5;
    let spec = TaskSpec::noise_padded(30, 4, 2, tau, 1.0);
    let all = gen_noise_padded(&spec, 1600, &mut Rng::new(11)).unwrap();
    let idx: Vec<usize> = (0..all.len()).collect();
    let (train, test) = (all.subset(&idx[..1000]), all.subset(&idx[1000..]));
    let plain = linear_probe_accuracy(&train, &test);
    assert!(plain >= 0.99, "probe on intact data: {plain}");

    let mut rng = Rng::new(12);
    let (strain, stest) = (
        shuffle_informative(&train, tau, &mut rng),
        shuffle_informative(&test, tau, &mut rng),
    );
    let shuffled = linear_probe_accuracy(&strain, &stest);
    assert!(
        shuffled <= 0.60,
        "probe after shuffling informative steps: {shuffled}"
    );
}

fn dataset_strategy() -> impl Strategy<Value = SequenceDataset> {
    (1usize..5, 1usize..4, 1usize..6, 2usize..5).prop_flat_map(|(t, d, n, c)| {
        let value = prop_oneof![
            any::<f64>().prop_filter("finite", |v| v.is_finite()),
            -1e3f64..1e3,
            Just(0.0),
            Just(-0.0),
            Just(f64::MIN_POSITIVE),
            Just(5e-324),
        ];
        (
            prop::collection::vec(prop::collection::vec(prop::collection::vec(value, d), t), n),
            prop::collection::vec(0..c, n),
        )
            .prop_map(move |(seqs, labels)| {
                let sequences = seqs
                    .into_iter()
                    .map(|s| s.into_iter().map(|v| Vector::new(v).unwrap()).collect())
                    .collect();
                SequenceDataset::new(sequences, labels, c).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn csv_round_trip_is_exact(data in dataset_strategy(), header in any::<bool>()) {
        let mut buf = Vec::new();
        write_csv_sequences(&data, &mut buf, header).unwrap();
        let back = read_csv_sequences(buf.as_slice(), data.seq_len, data.input_dim, header).unwrap();
        prop_assert_eq!(&back.labels, &data.labels);
        for (a, b) in back.sequences.iter().flatten().zip(data.sequences.iter().flatten()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn generators_are_pure(seed in any::<u64>(), t in 2usize..12, tau in 1usize..3, c in 2usize..5) {
        let spec = TaskSpec::noise_padded(t, 3, c, tau, 0.7);
        let a = gen_noise_padded(&spec, 20, &mut Rng::new(seed)).unwrap();
        let b = gen_noise_padded(&spec, 20, &mut Rng::new(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}
