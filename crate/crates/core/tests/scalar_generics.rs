//! The numeric kernels are generic over the scalar type; exercise the main
//! paths at f32 to keep that property honest.

use bems_core::cluster::{agglomerate, cut};
use bems_core::data::{generate_synthetic_corpus, CorpusParams, TariffSchedule};
use bems_core::env::{BuildingEnv, EnvConfig};
use bems_core::features::{corpus_distance_matrix, dtw_distance, spectrum, trend_spectrum};
use bems_core::lstm::LstmStack;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[test]
fn transform_pipeline_runs_at_f32() {
    let x: Vec<f32> = (0..64).map(|t| ((t % 24) as f32 / 24.0).sin()).collect();
    let s = spectrum(&x).unwrap();
    assert_eq!(s.len(), 33);
    let ts = trend_spectrum(&x).unwrap();
    assert!(ts.iter().all(|v| v.is_finite() && *v >= 0.0));
    let d = dtw_distance(&x, &x).unwrap();
    assert_eq!(d, 0.0f32);
}

#[test]
fn clustering_recovers_structure_at_f32() {
    let corpus =
        generate_synthetic_corpus::<f32>(6, 336, 2, 11, &CorpusParams::exact()).unwrap();
    let raw: Vec<Vec<f32>> = corpus.iter().map(|(b, _)| b.load.values.clone()).collect();
    let ids = corpus.iter().map(|(b, _)| b.id().to_string()).collect();
    let matrix = corpus_distance_matrix(&raw, ids).unwrap();
    let dendrogram = agglomerate(&matrix).unwrap();
    let assignments = cut(&dendrogram, 2).unwrap();
    for (i, (_, label)) in corpus.iter().enumerate() {
        for (j, (_, other)) in corpus.iter().enumerate() {
            if label == other {
                assert_eq!(assignments[i], assignments[j]);
            }
        }
    }
}

#[test]
fn environment_steps_at_f32() {
    let corpus =
        generate_synthetic_corpus::<f32>(2, 96, 1, 5, &CorpusParams::default()).unwrap();
    let tariff =
        TariffSchedule::<f32>::time_of_use(4, 0.1, 0.6, 0.04, 0.08, 17, 21).unwrap();
    let mut env = BuildingEnv::new(
        corpus[0].0.clone(),
        tariff,
        EnvConfig {
            episode_hours: 96,
            ..Default::default()
        },
    )
    .unwrap();
    env.reset(0).unwrap();
    while !env.is_terminal() {
        let bounds = env.bounds();
        env.step_fraction(bounds.high).unwrap();
    }
    let soc = env.esu().soc_kwh;
    assert!((0.0..=env.esu().capacity_kwh).contains(&soc));
}

#[test]
fn lstm_forward_backward_at_f32() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let stack = LstmStack::<f32>::new(3, 4, 2, 1, &mut rng);
    let seq: Vec<Vec<f32>> = (0..5).map(|t| vec![t as f32 * 0.1, 0.5, -0.2]).collect();
    let out = stack.forward(&seq);
    assert_eq!(out.len(), 1);
    assert!(out[0].is_finite());
}
