use ndarray::Array2;
use proptest::prelude::*;

use qclusformer::clusterset::{knn_clusters, prune_and_link, FeatureSet, UnionFind};
use qclusformer::io;
use qclusformer::pqc::{build_ansatz, Entangler};
use qclusformer::qsim::{amplitude_encode, angle_encode, bloch_vector, PauliAxis};
use qclusformer::qtransformer::{layer_norm, softmax_rows};

fn features(rows: usize, dim: usize) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(prop_oneof![-1.0..-0.05f64, 0.05..1.0f64], rows * dim)
        .prop_map(move |v| Array2::from_shape_vec((rows, dim), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn circuits_preserve_norm(
        n in 1usize..=4,
        layers in 0usize..=3,
        ring in any::<bool>(),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let ent = if ring { Entangler::Ring } else { Entangler::Line };
        let circuit = build_ansatz(n, layers, ent);
        let theta: Vec<f64> = (0..circuit.n_params).map(|_| rng.random_range(-6.0..6.0)).collect();
        let input: Vec<f64> = (0..1 << n).map(|_| rng.random_range(0.1..1.0)).collect();
        let out = circuit.run(&theta, &amplitude_encode(&input).unwrap()).unwrap();
        prop_assert!((out.norm() - 1.0).abs() < 1e-12);
        for axis in PauliAxis::ALL {
            for e in out.expectations(axis) {
                prop_assert!(e.abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn angle_encoded_qubits_lie_on_xz_great_circle(z in -6.0..6.0f64) {
        let r = bloch_vector(&angle_encode(&[z]).unwrap()).unwrap();
        prop_assert!((r[0] - z.sin()).abs() < 1e-12);
        prop_assert!(r[1].abs() < 1e-12);
        prop_assert!((r[2] - z.cos()).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_are_distributions(v in proptest::collection::vec(-50.0..50.0f64, 12)) {
        let a = softmax_rows(&Array2::from_shape_vec((3, 4), v).unwrap());
        for row in a.outer_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn layer_norm_centers_rows(x in features(3, 5)) {
        let y = layer_norm(&x, &[1.0; 5], &[0.0; 5]);
        for row in y.outer_iter() {
            prop_assert!(row.mean().unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn knn_clusters_are_well_formed(x in features(12, 3), k in 1usize..=12) {
        let f = FeatureSet::new(x, None).unwrap();
        for c in knn_clusters(&f, k).unwrap() {
            prop_assert_eq!(c.members.len(), k);
            prop_assert_eq!(c.members[0], c.center);
            let mut seen = c.members.clone();
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), k);
            prop_assert!(c.sims.windows(2).skip(1).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn linking_is_monotone_in_tau(
        x in features(15, 3),
        scores in proptest::collection::vec(0.0..1.0f64, 15 * 4),
        lo in 0.05..0.5f64,
        hi in 0.5..0.95f64,
    ) {
        let f = FeatureSet::new(x, None).unwrap();
        let cl = knn_clusters(&f, 4).unwrap();
        let preds: Vec<Vec<f64>> = scores.chunks(4).map(<[f64]>::to_vec).collect();
        let coarse = prune_and_link(15, &cl, &preds, lo).unwrap();
        let fine = prune_and_link(15, &cl, &preds, hi).unwrap();
        // a higher threshold only splits clusters
        for i in 0..15 {
            for j in 0..15 {
                if fine[i] == fine[j] {
                    prop_assert_eq!(coarse[i], coarse[j]);
                }
            }
        }
    }

    #[test]
    fn union_find_labels_are_dense(edges in proptest::collection::vec((0usize..20, 0usize..20), 0..30)) {
        let mut uf = UnionFind::new(20);
        for (a, b) in &edges {
            uf.union(*a, *b);
        }
        let labels = uf.labels();
        let max = *labels.iter().max().unwrap();
        for l in 0..=max {
            prop_assert!(labels.contains(&l));
        }
        prop_assert_eq!(labels[0], 0);
    }

    #[test]
    fn feature_files_round_trip(x in features(4, 3)) {
        let x = x.mapv(|v| v as f32 as f64);
        let bytes = io::encode_features(&x).unwrap();
        prop_assert_eq!(io::decode_features(&bytes).unwrap(), x);
    }

    #[test]
    fn label_files_reject_corruption(labels in proptest::collection::vec(any::<u32>(), 1..20), cut in 0usize..100) {
        let bytes = io::encode_labels(&labels).unwrap();
        prop_assert_eq!(io::decode_labels(&bytes).unwrap(), labels);
        let cut = cut % bytes.len();
        prop_assert!(io::decode_labels(&bytes[..cut]).is_err());
    }
}
