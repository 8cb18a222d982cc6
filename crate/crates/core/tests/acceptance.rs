//! Acceptance suite: every test checks one release criterion at its stated
//! tolerance and prints a PASS line (visible with `--nocapture`).

mod common;

use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Instant;

use common::{
    entropy_of_eigenvalues, jacobi_eigenvalues, random_sample_matrix, random_unit, FrozenClock,
};
use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;
use spectral_uncertainty::evaluation::{aupr, auroc};
use spectral_uncertainty::gateway::{Gateway, GatewaySettings};
use spectral_uncertainty::kernel::{gram_matrix, Embedding, KernelSpec};
use spectral_uncertainty::pipeline::{
    run_benchmark, write_run_dir, Method, QuestionInput, TaskKind,
};
use spectral_uncertainty::spectral::{
    covariance_oracle, decompose, nonzero_eigenvalues_match, spectrum_of, vne, SampleMatrix,
};
use spectral_uncertainty::synthetic::{
    build_separable_world, exact_uncertainties, simulate_and_estimate, synthetic_benchmark,
    SyntheticQuestion, SyntheticWorld, WorldProvider,
};
use spectral_uncertainty::RunConfig;

const LN_2: f64 = std::f64::consts::LN_2;

struct CorpusCase {
    samples: SampleMatrix,
    spec: KernelSpec,
    n: usize,
    m: usize,
}

/// Shared random corpus: n <= 10, m <= 10, d <= 32, both kernel families.
fn random_corpus(count: usize) -> Vec<CorpusCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    (0..count)
        .map(|index| {
            let n = rng.gen_range(1..=10);
            let m = rng.gen_range(1..=10);
            let d = rng.gen_range(1..=32);
            let spec = if index % 2 == 0 {
                KernelSpec::Linear
            } else {
                let gamma = [0.5, 1.0, 2.0, 100.0][rng.gen_range(0..4)];
                KernelSpec::Rbf { gamma }
            };
            CorpusCase {
                samples: random_sample_matrix(n, m, d, &mut rng),
                spec,
                n,
                m,
            }
        })
        .collect()
}

#[test]
fn decomposition_identity_on_random_corpus() {
    let started = Instant::now();
    let corpus = random_corpus(1000);
    for case in &corpus {
        let report = decompose(&case.samples, case.spec).unwrap();
        let identity_gap = (report.total - report.aleatoric - report.epistemic).abs();
        assert!(
            identity_gap < 1e-10,
            "identity gap {identity_gap} for n={} m={}",
            case.n,
            case.m
        );
        let outer_gap = (report.total - vne(&report.outer_spectrum)).abs();
        assert!(outer_gap < 1e-10, "outer entropy gap {outer_gap}");
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 30.0,
        "corpus took {elapsed:?}, budget is 30s"
    );
    println!(
        "PASS: decomposition identity holds to 1e-10 on 1000 random sample matrices ({elapsed:?})"
    );
}

#[test]
fn covariance_and_gram_routes_share_nonzero_spectra() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xBEEF);
    for _ in 0..500 {
        let n = rng.gen_range(1..=20);
        let d = rng.gen_range(1..=8);
        let samples: Vec<Embedding> = (0..n).map(|_| random_unit(d, &mut rng)).collect();
        let via_covariance = covariance_oracle(&samples).unwrap();
        let via_gram = spectrum_of(&gram_matrix(&samples, KernelSpec::Linear).unwrap()).unwrap();
        assert!(
            nonzero_eigenvalues_match(&via_covariance, &via_gram, 1e-8),
            "spectra diverge for n={n} d={d}: {:?} vs {:?}",
            via_covariance.eigenvalues(),
            via_gram.eigenvalues()
        );
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 10.0,
        "equivalence check took {elapsed:?}, budget is 10s"
    );
    println!("PASS: explicit covariance and scaled Gram matrices share nonzero eigenvalues to 1e-8 on 500 sample sets ({elapsed:?})");
}

#[test]
fn bounds_signs_and_degenerate_case() {
    for case in random_corpus(1000) {
        let report = decompose(&case.samples, case.spec).unwrap();
        assert!(
            report.aleatoric >= -1e-9,
            "aleatoric {} below tolerance",
            report.aleatoric
        );
        assert!(report.epistemic >= 0.0);
        assert!(report.epistemic <= (case.m as f64).ln() + 1e-9);
        assert!(report.total >= 0.0);
        assert!(report.total <= ((case.n * case.m) as f64).ln() + 1e-9);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let point = random_unit(16, &mut rng);
    let degenerate = SampleMatrix::new(vec![vec![point; 7]; 5]).unwrap();
    for spec in [KernelSpec::Linear, KernelSpec::Rbf { gamma: 1.0 }] {
        let report = decompose(&degenerate, spec).unwrap();
        assert!(report.total.abs() < 1e-9);
        assert!(report.aleatoric.abs() < 1e-9);
        assert!(report.epistemic.abs() < 1e-9);
    }
    println!("PASS: bounds and signs hold on the corpus; all-identical input scores (0, 0, 0) within 1e-9");
}

#[test]
fn closed_form_two_block_cases() {
    let e1 = Embedding::basis(2, 0);
    let e2 = Embedding::basis(2, 1);

    // Unanimous but different per group: everything aleatoric.
    let blocks = SampleMatrix::new(vec![
        vec![e1.clone(), e1.clone()],
        vec![e2.clone(), e2.clone()],
    ])
    .unwrap();
    let report = decompose(&blocks, KernelSpec::Linear).unwrap();
    assert!((report.total - LN_2).abs() < 1e-9);
    assert!((report.aleatoric - LN_2).abs() < 1e-9);
    assert!(report.epistemic.abs() < 1e-9);

    // Same spread in every group: everything epistemic.
    let shared = SampleMatrix::new(vec![vec![e1.clone(), e2.clone()], vec![e1, e2]]).unwrap();
    let report = decompose(&shared, KernelSpec::Linear).unwrap();
    assert!((report.total - LN_2).abs() < 1e-9);
    assert!(report.aleatoric.abs() < 1e-9);
    assert!((report.epistemic - LN_2).abs() < 1e-9);

    println!(
        "PASS: closed-form two-block cases match (ln 2, ln 2, 0) and (ln 2, 0, ln 2) within 1e-9"
    );
}

fn orthogonal_two_profile_world() -> SyntheticWorld {
    SyntheticWorld {
        vocabulary: vec![
            ("alpha".to_string(), Embedding::basis(2, 0)),
            ("beta".to_string(), Embedding::basis(2, 1)),
        ],
        questions: vec![SyntheticQuestion {
            id: "orthogonal".into(),
            text: "orthogonal".into(),
            profiles: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            ambiguous: true,
        }],
        seed: 11,
    }
}

fn mixed_world() -> SyntheticWorld {
    // Profiles with overlapping support: the aleatoric estimate then has
    // genuine finite-sample error instead of collapsing to an identity.
    SyntheticWorld {
        vocabulary: vec![
            ("a".to_string(), Embedding::basis(4, 0)),
            ("b".to_string(), Embedding::basis(4, 1)),
            ("c".to_string(), Embedding::basis(4, 2)),
            ("d".to_string(), Embedding::basis(4, 3)),
        ],
        questions: vec![SyntheticQuestion {
            id: "mixed".into(),
            text: "mixed".into(),
            profiles: vec![vec![0.5, 0.3, 0.2, 0.0], vec![0.0, 0.2, 0.3, 0.5]],
            ambiguous: true,
        }],
        seed: 13,
    }
}

#[test]
fn estimator_consistency_over_inner_sample_size() {
    let started = Instant::now();
    let seeds_per_m = 100;
    let inner_sizes = [5usize, 20, 80];

    let mixed = mixed_world();
    let exact = exact_uncertainties(&mixed, "mixed").unwrap();
    let mut mean_errors = Vec::new();
    for &m in &inner_sizes {
        let mut sums = [0.0f64; 3];
        for seed in 0..seeds_per_m {
            let report = simulate_and_estimate(&mixed, "mixed", 2, m, seed).unwrap();
            sums[0] += (report.total - exact.0).abs();
            sums[1] += (report.aleatoric - exact.1).abs();
            sums[2] += (report.epistemic - exact.2).abs();
        }
        mean_errors.push(sums.map(|s| s / seeds_per_m as f64));
    }
    for component in 0..3 {
        let name = ["total", "aleatoric", "epistemic"][component];
        assert!(
            mean_errors[0][component] >= mean_errors[1][component]
                && mean_errors[1][component] >= mean_errors[2][component],
            "{name} mean error not nonincreasing: {:?}",
            mean_errors.iter().map(|e| e[component]).collect::<Vec<_>>()
        );
    }

    let orthogonal = orthogonal_two_profile_world();
    let exact = exact_uncertainties(&orthogonal, "orthogonal").unwrap();
    let mut sums = [0.0f64; 3];
    for seed in 0..seeds_per_m {
        let report = simulate_and_estimate(&orthogonal, "orthogonal", 2, 80, seed).unwrap();
        sums[0] += (report.total - exact.0).abs();
        sums[1] += (report.aleatoric - exact.1).abs();
        sums[2] += (report.epistemic - exact.2).abs();
    }
    for (component, sum) in sums.iter().enumerate() {
        let mean = sum / seeds_per_m as f64;
        assert!(
            mean < 0.05,
            "component {component} mean error {mean} exceeds 0.05 nats"
        );
    }

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 120.0,
        "consistency run took {elapsed:?}, budget is 2min"
    );
    println!(
        "PASS: mean estimation error nonincreasing over m in {{5, 20, 80}} and < 0.05 nats at m=80 ({elapsed:?})"
    );
}

/// Exhaustive pairwise oracle; must agree with the ranking implementation
/// bit for bit.
fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut numerator = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                numerator += 1.0;
            } else if scores[i] == scores[j] {
                numerator += 0.5;
            }
        }
    }
    numerator / pairs
}

#[test]
fn ranking_metrics_match_their_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAB);
    for _ in 0..200 {
        let n = rng.gen_range(2..=200);
        // Quantized scores force plenty of ties.
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 / 4.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        labels[0] = true;
        labels[n - 1] = false;

        let fast = auroc(&scores, &labels).unwrap();
        let slow = pairwise_auroc(&scores, &labels);
        assert_eq!(
            fast, slow,
            "rank-based AUROC must equal the pairwise oracle exactly"
        );

        let mapped: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 3.0).collect();
        assert!((auroc(&mapped, &labels).unwrap() - fast).abs() <= 1e-12);
    }

    // Hand-computed average-precision fixtures.
    assert_eq!(
        aupr(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap(),
        1.0
    );
    assert_eq!(
        aupr(&[0.9, 0.8, 0.7, 0.1], &[false, false, false, true]).unwrap(),
        0.25
    );
    for position in 0..4usize {
        let mut labels = [false; 4];
        labels[position] = true;
        assert_eq!(
            aupr(&[1.0; 4], &labels).unwrap(),
            1.0 / (position + 1) as f64
        );
    }

    println!("PASS: AUROC equals the brute-force oracle exactly on 200 tied instances; AUPR matches fixtures");
}

fn benchmark_config(cache_root: std::path::PathBuf) -> RunConfig {
    RunConfig {
        cache_root,
        methods: vec![Method::Spectral, Method::PredictiveKernelEntropy],
        ..RunConfig::default()
    }
}

#[test]
fn synthetic_ambiguity_benchmark_separates_and_beats_predictive_entropy() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = benchmark_config(dir.path().join("cache"));
    let benchmark = synthetic_benchmark(40, 0.5, 2024, &dir.path().join("cache"), &config).unwrap();
    assert!(
        benchmark.outcome.failures.is_empty(),
        "failures: {:?}",
        benchmark.outcome.failures
    );
    assert_eq!(benchmark.eval_records.len(), 40);

    let labels: Vec<bool> = benchmark.eval_records.iter().map(|r| r.label).collect();
    let spectral: Vec<f64> = benchmark
        .eval_records
        .iter()
        .map(|r| r.scores["spectral"])
        .collect();
    let pke: Vec<f64> = benchmark
        .eval_records
        .iter()
        .map(|r| r.scores["pke"])
        .collect();

    let spectral_auroc = auroc(&spectral, &labels).unwrap();
    let pke_auroc = auroc(&pke, &labels).unwrap();
    assert!(
        spectral_auroc >= 0.95,
        "spectral aleatoric AUROC {spectral_auroc} below 0.95"
    );
    assert!(
        spectral_auroc > pke_auroc,
        "spectral ({spectral_auroc}) must strictly exceed predictive kernel entropy ({pke_auroc})"
    );

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 60.0,
        "benchmark took {elapsed:?}, budget is 1min"
    );
    println!(
        "PASS: synthetic ambiguity benchmark, spectral aleatoric AUROC {spectral_auroc:.3} >= 0.95 and > predictive kernel entropy {pke_auroc:.3} ({elapsed:?})"
    );
}

#[test]
fn mocked_pipeline_is_reproducible_and_cache_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let config = benchmark_config(cache.clone());
    let world = build_separable_world(10, 0.5, 99);
    let inputs: Vec<QuestionInput> = world
        .questions
        .iter()
        .map(|q| QuestionInput {
            id: q.id.clone(),
            question: q.text.clone(),
            task_kind: TaskKind::AmbigQa,
        })
        .collect();

    let mut run_bytes = Vec::new();
    let mut score_bytes = Vec::new();
    let mut second_run_calls = usize::MAX;
    for pass in 0..2 {
        let provider = WorldProvider::new(world.clone());
        let chat_calls = provider.chat_call_counter();
        let gateway = Gateway::new(
            Box::new(provider),
            GatewaySettings::new(&cache),
            Arc::new(FrozenClock),
        )
        .unwrap();
        let outcome = run_benchmark(&gateway, &config, &FrozenClock, &inputs);
        assert!(
            outcome.failures.is_empty(),
            "failures: {:?}",
            outcome.failures
        );
        let run_dir = dir.path().join(format!("run-{pass}"));
        write_run_dir(&run_dir, &config, &outcome).unwrap();

        let dataset: Vec<spectral_uncertainty::evaluation::DatasetItem> = world
            .questions
            .iter()
            .map(|q| spectral_uncertainty::evaluation::DatasetItem {
                id: q.id.clone(),
                question: q.text.clone(),
                ambiguous: Some(q.ambiguous),
                gold_answers: None,
                task_kind: Some(TaskKind::AmbigQa),
            })
            .collect();
        let (records, _) = spectral_uncertainty::evaluation::build_eval_records(
            None,
            &config,
            &dataset,
            &outcome.records,
        )
        .unwrap();
        let report_dir = run_dir.join("report");
        spectral_uncertainty::evaluation::export_report(
            &records,
            &["spectral".to_string(), "pke".to_string()],
            &report_dir,
            Some(&config),
            0,
        )
        .unwrap();

        run_bytes.push(std::fs::read(run_dir.join("questions.jsonl")).unwrap());
        let mut pass_scores = Vec::new();
        for method in ["spectral", "pke"] {
            pass_scores
                .push(std::fs::read(report_dir.join(format!("scores_{method}.csv"))).unwrap());
        }
        score_bytes.push(pass_scores);
        if pass == 1 {
            second_run_calls = chat_calls.load(Ordering::SeqCst);
        }
    }

    assert_eq!(
        run_bytes[0], run_bytes[1],
        "question records must be byte-identical"
    );
    assert_eq!(
        score_bytes[0], score_bytes[1],
        "score files must be byte-identical"
    );
    assert_eq!(
        second_run_calls, 0,
        "second run must be served entirely from cache"
    );
    println!("PASS: 10-question mocked run reproduces byte-identical outputs with zero provider calls on rerun");
}

#[test]
fn spectrum_and_entropy_of_hundred_samples_is_fast() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let samples: Vec<Embedding> = (0..100).map(|_| random_unit(768, &mut rng)).collect();
    let gram = gram_matrix(&samples, KernelSpec::Rbf { gamma: 1.0 }).unwrap();

    // Warm up once, then time the eigendecomposition + entropy path.
    let _ = vne(&spectrum_of(&gram).unwrap());
    let repetitions = 20;
    let started = Instant::now();
    for _ in 0..repetitions {
        let spectrum = spectrum_of(&gram).unwrap();
        std::hint::black_box(vne(&spectrum));
    }
    let per_question = started.elapsed().as_secs_f64() / repetitions as f64;
    assert!(
        per_question < 0.050,
        "eigendecomposition + entropy took {:.1} ms per question, budget is 50 ms",
        per_question * 1e3
    );
    println!(
        "PASS: eigendecomposition + entropy for 100 samples runs in {:.2} ms per question",
        per_question * 1e3
    );
}

#[test]
fn two_by_two_spectrum_agrees_with_jacobi_oracle() {
    // Independent eigensolver route for the smallest nontrivial case.
    let e1 = Embedding::basis(2, 0);
    let tilted = Embedding::new(vec![0.5, 3.0f64.sqrt() / 2.0]).unwrap();
    let gram = gram_matrix(&[e1, tilted], KernelSpec::Linear).unwrap();
    let spectrum = spectrum_of(&gram).unwrap();

    let scaled = vec![vec![0.5, 0.25], vec![0.25, 0.5]];
    let oracle = jacobi_eigenvalues(scaled);
    for (library, reference) in spectrum.eigenvalues().iter().zip(&oracle) {
        assert!((library - reference).abs() < 1e-10);
    }
    assert!((vne(&spectrum) - entropy_of_eigenvalues(&oracle)).abs() < 1e-10);
    println!("PASS: library spectrum matches the independent Jacobi route");
}

/// Live smoke test. Requires network credentials and a config file; run
/// explicitly with:
///
/// ```text
/// SPECU_SMOKE_CONFIG=path/to/config.toml cargo test -p spectral-uncertainty \
///     --test acceptance live_smoke -- --ignored --nocapture
/// ```
#[test]
#[ignore = "requires provider credentials and a small API budget"]
fn live_smoke_ten_questions() {
    let config_path = std::env::var("SPECU_SMOKE_CONFIG")
        .expect("set SPECU_SMOKE_CONFIG to a TOML config with live endpoints");
    let mut config = RunConfig::from_toml_path(std::path::Path::new(&config_path)).unwrap();
    config.methods = vec![Method::Spectral];
    config.validate().unwrap();

    let questions = [
        "Who won the most World Series in baseball?",
        "When was the first iPhone released?",
        "What is the largest city in the Americas?",
        "Who discovered oxygen?",
        "What is the longest river?",
        "When did the war end?",
        "Who wrote the most famous detective novels?",
        "What is the tallest building?",
        "Which team won the cup in 2010?",
        "What is the fastest animal?",
    ];
    let inputs: Vec<QuestionInput> = questions
        .iter()
        .enumerate()
        .map(|(i, q)| QuestionInput {
            id: format!("smoke-{i}"),
            question: q.to_string(),
            task_kind: TaskKind::AmbigQa,
        })
        .collect();

    let endpoints = &config.endpoints;
    let provider = spectral_uncertainty::gateway::HttpProvider::new(
        spectral_uncertainty::gateway::HttpEndpoint::from_env(
            &endpoints.chat_base_url,
            Some(&endpoints.api_key_env),
        ),
        spectral_uncertainty::gateway::HttpEndpoint::from_env(
            &endpoints.embedding_base_url,
            Some(&endpoints.embedding_api_key_env),
        ),
        std::time::Duration::from_secs(endpoints.timeout_seconds),
    );
    let gateway = Gateway::new(
        Box::new(provider),
        GatewaySettings::new(&config.cache_root),
        Arc::new(spectral_uncertainty::gateway::SystemClock::new()),
    )
    .unwrap();
    let clock = spectral_uncertainty::gateway::SystemClock::new();

    let outcome = run_benchmark(&gateway, &config, &clock, &inputs);
    assert!(
        outcome.failures.is_empty(),
        "failures: {:?}",
        outcome.failures
    );

    let mut total_samples = 0u32;
    let mut total_warnings = 0u32;
    for record in &outcome.records {
        let n = record.clarifications.clarifications.len();
        assert!(
            (1..=10).contains(&n),
            "clarification count {n} out of range"
        );
        total_samples += (n * config.sampling.answers_per_clarification) as u32;
        total_warnings += record.parse_warnings;
        let report = &record.report;
        for value in [report.total, report.aleatoric, report.epistemic] {
            assert!(value.is_finite());
        }
        assert!(report.total >= 0.0);
        assert!(report.aleatoric >= -1e-9);
        assert!(report.epistemic >= 0.0);
    }
    let warning_rate = f64::from(total_warnings) / f64::from(total_samples);
    assert!(
        warning_rate < 0.2,
        "parse warning rate {warning_rate} exceeds 20%"
    );
    println!("PASS: live smoke run healthy (warning rate {warning_rate:.3})");
}
