//! End-to-end library flow: synthesize, split, train both networks, encode
//! every partition, and check that retrieval beats random codes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dsmhn_core::codes::BinaryCodes;
use dsmhn_core::data::{
    LabelMode, MultimodalDataset, QuerySelect, SplitSpec, SynthSpec, generate_synthetic, split,
};
use dsmhn_core::model::NetworkConfig;
use dsmhn_core::numerics::Matrix;
use dsmhn_core::objective::PairwiseLossKind;
use dsmhn_core::retrieval::evaluate;
use dsmhn_core::trainer::{Modality, TrainConfig, encode_dataset, train};

fn random_codes(n: usize, bits: usize, seed: u64) -> BinaryCodes {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Matrix::from_fn(bits, n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
    BinaryCodes::quantize(&z)
}

fn eval_map(
    q: &BinaryCodes,
    q_ds: &MultimodalDataset,
    db: &BinaryCodes,
    db_ds: &MultimodalDataset,
) -> f64 {
    evaluate(q, q_ds.labels(), db, db_ds.labels(), &[10]).unwrap().map
}

#[test]
fn trained_codes_retrieve_better_than_random_ones() {
    let spec = SynthSpec {
        n: 200,
        d_x: 16,
        d_y: 12,
        classes: 4,
        noise: 0.15,
        label_mode: LabelMode::Single,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let ds = generate_synthetic(&spec, &mut rng).unwrap();
    let parts = split(
        &ds,
        &SplitSpec { query: QuerySelect::Fraction(0.2), train_size: None },
        &mut rng,
    )
    .unwrap();
    assert_eq!(parts.query.len(), 40);
    let train_ds = parts.database.subset(&parts.train_indices).unwrap();

    let bits = 16;
    let cfg_x = NetworkConfig::feedforward(spec.d_x, &[32], bits, spec.classes);
    let cfg_y = NetworkConfig::feedforward(spec.d_y, &[32], bits, spec.classes);
    let tc = TrainConfig {
        loss: PairwiseLossKind::contrastive_for_bits(bits),
        alpha: 1.0,
        beta: 0.5,
        gamma: 0.5,
        learning_rate: 1e-3,
        batch_size: 32,
        iterations: 500,
        positive_fraction: 0.5,
        seed: 9,
    };
    let mut train_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let (px, py, log) = train(&train_ds, &cfg_x, &cfg_y, &tc, &mut train_rng).unwrap();
    assert_eq!(log.reports.len(), tc.iterations);
    assert_eq!(log.sampling_shortfalls, 0);

    let q_x = encode_dataset(&px, &parts.query, Modality::X).unwrap();
    let q_y = encode_dataset(&py, &parts.query, Modality::Y).unwrap();
    let db_x = encode_dataset(&px, &parts.database, Modality::X).unwrap();
    let db_y = encode_dataset(&py, &parts.database, Modality::Y).unwrap();
    assert_eq!(q_x.bits(), bits);
    assert_eq!(db_y.len(), parts.database.len());

    // Image-query-text, text-query-image, image-query-image.
    let ixt = eval_map(&q_x, &parts.query, &db_y, &parts.database);
    let txi = eval_map(&q_y, &parts.query, &db_x, &parts.database);
    let ixi = eval_map(&q_x, &parts.query, &db_x, &parts.database);

    let rand_q = random_codes(parts.query.len(), bits, 1000);
    let rand_db = random_codes(parts.database.len(), bits, 2000);
    let baseline = eval_map(&rand_q, &parts.query, &rand_db, &parts.database);

    for (name, map) in [("ixt", ixt), ("txi", txi), ("ixi", ixi)] {
        assert!(
            map >= baseline + 0.2,
            "{name} mAP {map} vs random baseline {baseline}"
        );
    }
}
