#![allow(clippy::needless_range_loop)]

use std::collections::BTreeSet;

use metalearn::bench::output::to_stable_json;
use metalearn::bench::tasksets::{
    blobs_pool, class_range, get_tasksets, glyphs_pool, split_interval, SineTask, SineTasks, Split, SplitName,
    BLOB_DIM, GLYPH_FLIP, NUM_CLASSES, SAMPLES_PER_CLASS, SINE_AMPLITUDE,
};
use metalearn::bench::{list_tasksets, run_experiment, ExperimentConfig, RunOptions, RunResult};
use metalearn::seed::rng;
use rand::Rng;

#[test]
fn registry_is_sorted_and_closed() {
    assert_eq!(list_tasksets(), vec!["blobs", "glyphs", "particles2d", "sine"]);
    assert!(list_tasksets().contains(&"sine"));
    let err = get_tasksets("miniimagenet", 5, 1, None, None, 5, 0)
        .unwrap_err()
        .to_string();
    assert!(err.contains("blobs, glyphs, particles2d, sine"));
}

#[test]
fn sine_target_mean_matches_closed_form() {
    let mut r = rng(8);
    let n = 1_000_000;
    let mut sum = 0.0;
    for _ in 0..n {
        let t = SineTask {
            amplitude: r.gen_range(SINE_AMPLITUDE.0..SINE_AMPLITUDE.1),
            phase: r.gen_range(0.0..std::f64::consts::PI),
        };
        sum += t.eval(r.gen_range(-5.0..5.0));
    }
    // E[A]·E_φ[sin(x+φ)] averaged over x: E[A]·(2/π)·sin(5)/5
    let mean_a = (SINE_AMPLITUDE.0 + SINE_AMPLITUDE.1) / 2.0;
    let exact = mean_a * 2.0 / std::f64::consts::PI * 5f64.sin() / 5.0;
    assert!((sum / n as f64 - exact).abs() < 0.01, "{} vs {exact}", sum / n as f64);
}

#[test]
fn sine_episodes_follow_their_task() {
    let tasks = SineTasks::new(SplitName::Train, 5, 7, 1);
    let ep = tasks.episode(3).unwrap();
    let p = tasks.params(3);
    assert_eq!(ep.support.x.shape(), &[5, 1]);
    assert_eq!(ep.query.x.shape(), &[7, 1]);
    if let metalearn::batch::Targets::Real(y) = &ep.query.y {
        for (x, y) in ep.query.x.data().iter().zip(y.data()) {
            assert_eq!(*y, p.eval(*x));
        }
    } else {
        panic!("sine targets are real-valued");
    }
}

#[test]
fn sine_splits_partition_the_amplitude_range() {
    let ranges: Vec<(f64, f64)> = SplitName::ALL
        .iter()
        .map(|&s| split_interval(SINE_AMPLITUDE.0, SINE_AMPLITUDE.1, s))
        .collect();
    assert_eq!(ranges[0].0, SINE_AMPLITUDE.0);
    assert_eq!(ranges[2].1, SINE_AMPLITUDE.1);
    for seed in 0..5 {
        for (s, range) in SplitName::ALL.iter().zip(&ranges) {
            let tasks = SineTasks::new(*s, 1, 1, seed);
            for i in 0..100 {
                let a = tasks.params(i).amplitude;
                assert!(a >= range.0 && a < range.1);
            }
        }
    }
}

#[test]
fn blob_classes_concentrate_around_their_means() {
    let pool = blobs_pool(4, 0.15).unwrap();
    assert_eq!(pool.labels().len(), NUM_CLASSES * SAMPLES_PER_CLASS);
    let noiseless = blobs_pool(4, 0.0).unwrap();
    for c in [0, 17, 63] {
        let true_mean = noiseless.row(c * SAMPLES_PER_CLASS).unwrap();
        for d in 0..BLOB_DIM {
            let m: f64 = (0..SAMPLES_PER_CLASS)
                .map(|s| pool.row(c * SAMPLES_PER_CLASS + s).unwrap()[d])
                .sum::<f64>()
                / SAMPLES_PER_CLASS as f64;
            assert!((m - true_mean[d]).abs() < 0.1);
            assert!((-1.0..1.0).contains(&true_mean[d]));
        }
    }
}

#[test]
fn glyph_noise_flips_about_three_pixels() {
    let pool = glyphs_pool(6, GLYPH_FLIP).unwrap();
    let clean = glyphs_pool(6, 0.0).unwrap();
    let mut flips = 0usize;
    for i in 0..pool.labels().len() {
        let a = pool.row(i).unwrap();
        let b = clean.row(i).unwrap();
        assert!(a.iter().all(|v| *v == 0.0 || *v == 1.0));
        flips += a.iter().zip(b).filter(|(x, y)| x != y).count();
    }
    let mean = flips as f64 / pool.labels().len() as f64;
    // binomial(64, 0.05): mean 3.2, sd of the average over 2560 samples ≈ 0.035
    assert!((mean - 3.2).abs() < 0.15, "{mean}");
}

fn classes_seen(split: &Split, tasks: usize) -> BTreeSet<usize> {
    let Split::Classes(c) = split else {
        panic!("classification split expected")
    };
    let meta = c.tasks.meta();
    let mut out = BTreeSet::new();
    for i in 0..tasks {
        for &(idx, _) in &c.tasks.description(i).unwrap().entries {
            out.insert(meta.label_of(idx).unwrap());
        }
    }
    out
}

#[test]
fn classification_splits_share_no_classes() {
    for name in ["blobs", "glyphs"] {
        for seed in [0, 42] {
            let b = get_tasksets(name, 5, 1, None, None, 3, seed).unwrap();
            let train = classes_seen(&b.train, 300);
            let valid = classes_seen(&b.validation, 100);
            let test = classes_seen(&b.test, 100);
            assert!(train.is_disjoint(&test) && train.is_disjoint(&valid) && valid.is_disjoint(&test));
            assert!(train.iter().all(|c| class_range(SplitName::Train).contains(c)));
            assert!(test.iter().all(|c| class_range(SplitName::Test).contains(c)));
        }
    }
}

#[test]
fn blobs_tasks_have_the_requested_layout() {
    let b = get_tasksets("blobs", 5, 1, None, None, 4, 42).unwrap();
    let task = b.train.task(0).unwrap();
    let metalearn::bench::tasksets::BenchTask::Supervised(ep) = task else {
        panic!("supervised task expected")
    };
    assert_eq!(ep.support.x.shape(), &[5, BLOB_DIM]);
    assert_eq!(ep.query.x.shape(), &[20, BLOB_DIM]);
    let again = get_tasksets("blobs", 5, 1, None, None, 4, 42).unwrap();
    let metalearn::bench::tasksets::BenchTask::Supervised(ep2) = again.train.task(0).unwrap() else {
        unreachable!()
    };
    assert_eq!(ep.support.x.data(), ep2.support.x.data());
    assert_eq!(ep.query.x.data(), ep2.query.x.data());
}

#[test]
fn test_settings_default_to_train_settings() {
    let b = get_tasksets("blobs", 5, 2, Some(3), None, 4, 0).unwrap();
    let (Split::Classes(train), Split::Classes(test)) = (&b.train, &b.test) else {
        panic!()
    };
    assert_eq!((train.ways, train.shots), (5, 2));
    assert_eq!((test.ways, test.shots), (3, 2));
}

#[test]
fn particle_splits_use_disjoint_goal_ranges() {
    let b = get_tasksets("particles2d", 1, 2, None, None, 2, 3).unwrap();
    let mut ranges = Vec::new();
    for s in SplitName::ALL {
        let Split::Particles(p) = b.split(s) else { panic!() };
        for i in 0..200 {
            let g = p.task(i).goal;
            assert!(g[0] >= p.goal_x.0 && g[0] < p.goal_x.1);
        }
        ranges.push(p.goal_x);
    }
    assert!(ranges[0].1 <= ranges[1].0 && ranges[1].1 <= ranges[2].0);
}

fn config(benchmark: &str, algorithm: &str) -> ExperimentConfig {
    ExperimentConfig {
        benchmark: benchmark.into(),
        algorithm: algorithm.into(),
        ways: 3,
        shots: 1,
        query_shots: 3,
        adapt_steps: 1,
        inner_lr: 0.1,
        outer_lr: 0.01,
        iterations: 3,
        task_batch: 2,
        seed: 9,
    }
}

fn schema() -> serde_json::Value {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/schema/run_result.schema.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn results_validate_against_the_schema() {
    let validator = jsonschema::validator_for(&schema()).unwrap();
    let options = || RunOptions {
        eval_tasks: 3,
        ..RunOptions::default()
    };
    for (benchmark, algorithm) in [
        ("sine", "maml"),
        ("blobs", "metakfo"),
        ("glyphs", "anil"),
        ("particles2d", "fomaml"),
    ] {
        let mut c = config(benchmark, algorithm);
        if benchmark == "particles2d" {
            c.iterations = 1;
        }
        let r = run_experiment(&c, &options()).unwrap();
        assert_eq!(r.records.len(), c.iterations);
        let doc: serde_json::Value = serde_json::from_slice(&r.to_json().unwrap()).unwrap();
        let errors: Vec<String> = validator.iter_errors(&doc).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{benchmark}: {errors:?}");
    }
    let timed = run_experiment(
        &config("blobs", "maml"),
        &RunOptions {
            record_time: true,
            ..options()
        },
    )
    .unwrap();
    assert!(timed.wall_clock_seconds.is_some());
    let doc: serde_json::Value = serde_json::from_slice(&timed.to_json().unwrap()).unwrap();
    assert!(validator.is_valid(&doc));
}

#[test]
fn runs_are_deterministic_across_worker_counts() {
    let serial = run_experiment(
        &config("blobs", "maml"),
        &RunOptions {
            eval_tasks: 5,
            ..RunOptions::default()
        },
    )
    .unwrap();
    let parallel = run_experiment(
        &config("blobs", "maml"),
        &RunOptions {
            eval_tasks: 5,
            workers: metalearn::parallel::Workers::new(3).unwrap(),
            record_time: false,
        },
    )
    .unwrap();
    assert_eq!(serial.to_json().unwrap(), parallel.to_json().unwrap());
}

#[test]
fn result_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/run.json");
    let r = run_experiment(
        &config("sine", "hypergrad"),
        &RunOptions {
            eval_tasks: 3,
            ..RunOptions::default()
        },
    )
    .unwrap();
    r.write(&path).unwrap();
    assert_eq!(RunResult::read(&path).unwrap(), r);
    assert_eq!(std::fs::read(&path).unwrap(), to_stable_json(&r).unwrap());
}
