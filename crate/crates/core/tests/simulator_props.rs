use gsi_core::analytics::{summarize, SummaryOptions};
use gsi_core::simulator::{run_experiment, subject_models, SimConfig, Timing, UserModel};
use gsi_core::{Catalog, GsiKind, SuiteConfig, SuiteFile};

fn suite(seed: u64, n_sets: u32) -> SuiteFile {
    SuiteFile::build(
        &SuiteConfig {
            seed,
            n_sets,
            ..SuiteConfig::default()
        },
        &Catalog::default(),
    )
    .unwrap()
}

#[test]
fn practice_decay_is_recovered_by_the_experience_fit() {
    let suite = suite(5, 30);
    for (i, b) in [0.815, 0.869, 0.9, 0.935].into_iter().enumerate() {
        let mut model = UserModel {
            practice_b: Some(b),
            ..UserModel::default()
        };
        model.visual_search = Timing::lognormal(0.6, 0.1);
        model.tap = Timing::lognormal(0.4, 0.1);
        model.correction_latency = Timing::lognormal(0.45, 0.1);
        let sim = SimConfig {
            gsis: vec![GsiKind::App],
            seed: 100 + i as u64,
            ..SimConfig::default()
        };
        let logs = run_experiment(&sim, &suite, &subject_models(&sim, &model)).unwrap();
        let report = summarize(&logs, &SummaryOptions::default()).unwrap();
        let fit = report.gsi(GsiKind::App).unwrap().le.unwrap();
        assert!((fit.b - b).abs() <= 0.02, "b = {b}: fitted {}", fit.b);
    }
}

#[test]
fn experiment_counts_and_determinism() {
    let suite = suite(9, 2);
    let sim = SimConfig {
        n_subjects: 2,
        seed: 3,
        ..SimConfig::default()
    };
    let models = subject_models(&sim, &UserModel::default());
    let a = run_experiment(&sim, &suite, &models).unwrap();
    assert_eq!(a.len(), 2 * 4 * 2);
    let scored: usize = a
        .iter()
        .map(|l| l.trials().filter(|t| t.scored).count())
        .sum();
    assert_eq!(scored, 2 * 4 * 2 * 23);
    let b = run_experiment(&sim, &suite, &models).unwrap();
    let text =
        |logs: &[gsi_core::SessionLog]| logs.iter().map(|l| l.to_jsonl()).collect::<String>();
    assert_eq!(text(&a), text(&b));
    let other = SimConfig { seed: 4, ..sim };
    assert_ne!(
        text(&a),
        text(&run_experiment(&other, &suite, &models).unwrap())
    );
}

#[test]
fn model_count_must_match_subjects() {
    let sim = SimConfig::default();
    assert!(run_experiment(&sim, &suite(9, 2), &[UserModel::default()]).is_err());
}
