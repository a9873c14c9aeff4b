//! Acceptance checklist: one test per criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them). Heavy
//! synthetic datasets are built once and shared across criteria.
//!
//! Run: `cargo test -p dasmon-cli --test acceptance -- --nocapture`

use dasmon::dsp::{bandpass, hamming, preprocess_matrix, WindowGrid};
use dasmon::engine::{grad_check, Graph};
use dasmon::eval::{ri_acc, rpi, transfer_eval};
use dasmon::features::{
    align_labels, append_deltas, majority_label, FeatureSet, FeatureStore,
};
use dasmon::layers::{compose, AttentionWeights, Model, ModelSpec, StageKind, ARCHITECTURES};
use dasmon::sim::{
    generate_scene, sample_duration, DurationModel, EventAnnotation, EventClass, SiteConfig,
};
use dasmon::train::{kfold, train_model, TrainConfig};
use ndarray::Array2;
use rand::Rng;
use std::sync::OnceLock;
use std::time::Instant;

fn pass(criterion: &str, detail: String) {
    println!("[acceptance] {criterion}: PASS: {detail}");
}

/// Shared 2 h Palacio dataset (criteria 8, 9, 10).
fn palacio_store() -> &'static FeatureStore {
    static STORE: OnceLock<FeatureStore> = OnceLock::new();
    STORE.get_or_init(|| {
        let site = SiteConfig::palacio();
        let (scene, annotations) = generate_scene(&site, 7200.0, 42).unwrap();
        let clean = preprocess_matrix(&scene, 0.1, 30.0).unwrap();
        let grid = WindowGrid::defaults(site.fs);
        FeatureStore::build(&site.name, &clean, &annotations, &grid).unwrap()
    })
}

/// Shared SA-bi-TA model trained on the Palacio dataset (criteria 9, 10).
fn trained_sa_bi_ta() -> &'static (Model, Vec<dasmon::features::FeatureSequence>) {
    static MODEL: OnceLock<(Model, Vec<dasmon::features::FeatureSequence>)> = OnceLock::new();
    MODEL.get_or_init(|| {
        let store = palacio_store();
        let segments = store
            .segments(store.center_sp(), FeatureSet::WithDeltas, 90.0)
            .unwrap();
        let ids: Vec<usize> = (0..segments.len()).collect();
        let plan = kfold(&ids, 5, dasmon::rng::substream_seed(42, "folds")).unwrap();
        let split = &plan.folds[0];
        let train_refs: Vec<_> = split.train.iter().map(|&i| &segments[i]).collect();
        let val_refs: Vec<_> = split.val.iter().map(|&i| &segments[i]).collect();
        let config = TrainConfig {
            lr: 5e-4,
            layers: 1,
            hidden: 48,
            dropout: 0.1,
            l2: 1e-5,
            epochs_max: 30,
            patience: 30,
            batch_segments: 4,
            seed: 42,
            stop_at_val_acc: Some(0.94),
        };
        let spec = ModelSpec {
            d_k: Some(32),
            ..config.to_spec("SA-bi-TA", segments[0].dim())
        };
        let (model, _) = train_model(&spec, &train_refs, &val_refs, &config).unwrap();
        let val_owned: Vec<_> = val_refs.into_iter().cloned().collect();
        (model, val_owned)
    })
}

#[test]
fn acceptance_01_gradient_correctness_all_archs() {
    // h = 5e-4 balances central-difference truncation (~h^2) against
    // f64 roundoff (~eps/h) for graphs this deep; the checker's
    // sensitivity to a wrong rule is O(1) regardless of h.
    let t0 = Instant::now();
    let mut worst: (f64, &str) = (0.0, "");
    for arch in ARCHITECTURES {
        let mut spec = ModelSpec::new(arch, 9, 6, 1);
        spec.d_k = Some(4);
        let model = compose(&spec, 77).unwrap();
        let mut rng = dasmon::rng::from_seed(78);
        let input = Array2::from_shape_fn((6, 9), |_| rng.gen_range(-1.0..1.0));
        let labels: Vec<usize> = (0..6).map(|_| rng.gen_range(0..3)).collect();
        let theta: Vec<Array2<f64>> = model.params.iter().map(|p| p.value.clone()).collect();
        let err = grad_check(
            |t| {
                let mut m = model.clone();
                for (p, v) in m.params.iter_mut().zip(t) {
                    p.value = v.clone();
                }
                let mut g = Graph::new();
                let pass = m.forward(&mut g, &input, false).unwrap();
                let loss = g.cross_entropy(pass.logits, &labels).unwrap();
                g.backward(loss).unwrap();
                (
                    g.value(loss)[[0, 0]],
                    pass.param_vars
                        .iter()
                        .map(|v| g.grad(*v).unwrap().clone())
                        .collect(),
                )
            },
            &theta,
            5e-4,
            400,
            79,
        );
        assert!(err < 1e-4, "{arch}: grad check err {err}");
        if err > worst.0 {
            worst = (err, arch);
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "grad checks took {elapsed:.1} s");
    pass(
        "01 gradient correctness",
        format!(
            "12 architectures, worst rel err {:.2e} ({}) in {elapsed:.1} s",
            worst.0, worst.1
        ),
    );
}

#[test]
fn acceptance_02_attention_invariants() {
    use dasmon::layers::{spatial_attention, temporal_attention};
    let mut rng = dasmon::rng::from_seed(5);
    let mut rows_checked = 0usize;
    for _ in 0..5000 {
        // temporal
        let t = rng.gen_range(1..8usize);
        let d = rng.gen_range(1..6usize);
        let d_k = rng.gen_range(1..5usize);
        let mut g = Graph::new();
        let f = g
            .leaf(Array2::from_shape_fn((t, d), |_| rng.gen_range(-4.0..4.0)), false)
            .unwrap();
        let mk = |g: &mut Graph, r: usize, c: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            let m = Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0));
            g.leaf(m, false).unwrap()
        };
        let wq = mk(&mut g, d, d_k, &mut rng);
        let wk = mk(&mut g, d, d_k, &mut rng);
        let wv = mk(&mut g, d, d_k, &mut rng);
        let wo = mk(&mut g, d_k, d, &mut rng);
        let (_, a) = temporal_attention(&mut g, f, wq, wk, wv, wo, d_k).unwrap();
        let av = g.value(a);
        for row in av.rows() {
            assert!((row.sum() - 1.0).abs() <= 1e-12);
            assert!(row.iter().all(|&w| w > 0.0));
            rows_checked += 1;
        }
        if t == 1 {
            assert_eq!(av[[0, 0]], 1.0, "single-frame weight must be exactly 1");
        }

        // spatial
        let d_sp = rng.gen_range(1..5usize);
        let mut g = Graph::new();
        let identical = rng.gen::<bool>();
        let f = if identical {
            let token: Vec<f64> = (0..d_sp).map(|_| rng.gen_range(-2.0..2.0)).collect();
            g.leaf(
                Array2::from_shape_fn((t, 3 * d_sp), |(_, j)| token[j % d_sp]),
                false,
            )
            .unwrap()
        } else {
            g.leaf(
                Array2::from_shape_fn((t, 3 * d_sp), |_| rng.gen_range(-4.0..4.0)),
                false,
            )
            .unwrap()
        };
        let wq = mk(&mut g, d_sp, d_k, &mut rng);
        let wk = mk(&mut g, d_sp, d_k, &mut rng);
        let wv = mk(&mut g, d_sp, d_k, &mut rng);
        let wo = mk(&mut g, d_k, d_sp, &mut rng);
        let (_, ws) = spatial_attention(&mut g, f, wq, wk, wv, wo, d_k).unwrap();
        for w in ws {
            let wv2 = g.value(w);
            for row in wv2.rows() {
                assert!((row.sum() - 1.0).abs() <= 1e-12);
                assert!(row.iter().all(|&x| x > 0.0));
                if identical {
                    for &x in row {
                        assert!((x - 1.0 / 3.0).abs() <= 1e-15, "identical tokens row {x}");
                    }
                }
                rows_checked += 1;
            }
        }
    }
    // uniform rows for identical temporal frames
    let mut g = Graph::new();
    let f = g.leaf(Array2::from_elem((5, 4), 0.7), false).unwrap();
    let w = g.leaf(Array2::from_elem((4, 3), 0.2), false).unwrap();
    let wo = g.leaf(Array2::from_elem((3, 4), 0.2), false).unwrap();
    let (_, a) = dasmon::layers::temporal_attention(&mut g, f, w, w, w, wo, 3).unwrap();
    for row in g.value(a).rows() {
        for &x in row {
            assert!((x - 0.2).abs() <= 1e-15);
        }
    }
    pass(
        "02 attention invariants",
        format!("10^4 evaluations, {rows_checked} stochastic rows verified"),
    );
}

#[test]
fn acceptance_03_metric_arithmetic_vs_reference() {
    struct Check {
        name: &'static str,
        got: f64,
        want: f64,
        tol: f64,
    }
    let checks = [
        Check {
            name: "RI-Acc(88.47, 88.08) vs 0.45",
            got: ri_acc(88.47, 88.08).unwrap(),
            want: 0.45,
            tol: 0.05,
        },
        Check {
            name: "RPI(0.25M, 0.41M) vs -38.85",
            got: rpi(0.25, 0.41).unwrap(),
            want: -38.85,
            tol: 0.5,
        },
        Check {
            name: "RI-Acc(89.05, 88.08) vs 1.10",
            got: ri_acc(89.05, 88.08).unwrap(),
            want: 1.10,
            tol: 0.05,
        },
        Check {
            name: "RPI(0.84M, 0.41M) vs 103.50",
            got: rpi(0.84, 0.41).unwrap(),
            want: 103.50,
            tol: 0.5,
        },
    ];
    let mut failures = Vec::new();
    for c in &checks {
        let diff = (c.got - c.want).abs();
        if diff <= c.tol {
            println!(
                "[acceptance] 03 metric arithmetic, {}: PASS (got {:.4}, |diff| {:.4})",
                c.name, c.got, diff
            );
        } else {
            println!(
                "[acceptance] 03 metric arithmetic, {}: FAIL (got {:.4}, |diff| {:.4} > {})",
                c.name, c.got, diff, c.tol
            );
            failures.push(format!(
                "{}: got {:.4}, want {} +/- {} (off by {:.4})",
                c.name, c.got, c.want, c.tol, diff
            ));
        }
    }
    assert!(
        failures.is_empty(),
        "reference-row arithmetic out of tolerance: {failures:?}\n\
         note: the reference RPI for the fourth row was printed from unrounded \
         parameter counts; from the 2-decimal table inputs (0.84, 0.41) the \
         ratio is 104.88, which no correct implementation can bring within \
         0.5 of 103.50"
    );
}

#[test]
fn acceptance_04_parameter_counting() {
    let mut rng = dasmon::rng::from_seed(91);
    let mut checked = 0usize;
    for arch in ARCHITECTURES {
        for _ in 0..50 {
            let spec = ModelSpec {
                arch: arch.to_string(),
                input_dim: 3 * rng.gen_range(2..20usize),
                hidden: rng.gen_range(2..32),
                layers: rng.gen_range(1..4),
                dropout: 0.1,
                d_k: if rng.gen::<bool>() {
                    Some(rng.gen_range(1..32))
                } else {
                    None
                },
                num_classes: 3,
                residual: false,
            };
            let model = compose(&spec, rng.gen()).unwrap();
            let enumerated: usize = model.params.iter().map(|p| p.value.len()).sum();
            assert_eq!(
                model.count_params(),
                enumerated,
                "{arch}: closed form vs enumeration for {spec:?}"
            );
            checked += 1;
        }
    }
    // bidirectional recurrent block is exactly twice the unidirectional
    // one at L=1 (stacked layers feed the 2h-wide concatenation into
    // the next layer, so the factor only holds for the single layer)
    for _ in 0..20 {
        let d_in = rng.gen_range(4..40usize);
        let h = rng.gen_range(2..32usize);
        let uni = compose(&ModelSpec::new("lstm", d_in, h, 1), 1).unwrap();
        let bi = compose(&ModelSpec::new("bi", d_in, h, 1), 1).unwrap();
        let recurrent = |m: &Model| -> usize {
            m.params
                .iter()
                .filter(|p| p.name.contains(".rnn."))
                .map(|p| p.value.len())
                .sum()
        };
        assert_eq!(2 * recurrent(&uni), recurrent(&bi), "d_in={d_in} h={h}");
    }
    // the worked reference pair: 231936 recurrent params doubling
    let uni = compose(&ModelSpec::new("lstm", 324, 128, 1), 1).unwrap();
    let bi = compose(&ModelSpec::new("bi", 324, 128, 1), 1).unwrap();
    let recurrent = |m: &Model| -> usize {
        m.params
            .iter()
            .filter(|p| p.name.contains(".rnn."))
            .map(|p| p.value.len())
            .sum()
    };
    assert_eq!(recurrent(&uni), 231_936);
    assert_eq!(recurrent(&bi), 463_872);
    pass(
        "04 parameter counting",
        format!("{checked} random specs exact; bi doubles lstm recurrent count"),
    );
}

#[test]
fn acceptance_05_pipeline_oracles() {
    // 90 s at 250 Hz -> exactly 177 frames
    let grid = WindowGrid::defaults(250.0);
    assert_eq!(grid.frame_count(22_500), 177);

    // label alignment vs an independent per-sample oracle
    let mut rng = dasmon::rng::from_seed(55);
    for round in 0..1000 {
        let total_s = 20.0;
        let mut anns = Vec::new();
        let n_events = rng.gen_range(0..8);
        for _ in 0..n_events {
            let start = rng.gen_range(0.0..total_s);
            let len = rng.gen_range(0.2..6.0);
            let class = if rng.gen::<bool>() {
                EventClass::Car
            } else {
                EventClass::Bus
            };
            anns.push(EventAnnotation {
                class,
                start_s: start,
                end_s: start + len,
                lane: 0,
            });
        }
        let got = align_labels(&anns, &grid, total_s);

        // oracle: naive per-sample simulation over all annotations
        let n = (total_s * grid.fs).round() as usize;
        let frames = grid.frame_count(n);
        assert_eq!(got.len(), frames);
        for index in 0..frames {
            let off = index * grid.n_shift;
            let mut counts = [0usize; 3];
            for k in off..off + grid.n_win {
                let t = k as f64 / grid.fs;
                let mut cls = EventClass::Noise;
                for a in &anns {
                    if a.start_s <= t && t < a.end_s {
                        match a.class {
                            EventClass::Bus => {
                                cls = EventClass::Bus;
                                break;
                            }
                            EventClass::Car => cls = EventClass::Car,
                            EventClass::Noise => {}
                        }
                    }
                }
                counts[cls.index()] += 1;
            }
            // same tie rule, spelled out independently
            let max = *counts.iter().max().unwrap();
            let expect = if counts[2] == max {
                EventClass::Bus
            } else if counts[1] == max {
                EventClass::Car
            } else {
                EventClass::Noise
            };
            assert_eq!(
                got[index], expect,
                "round {round}, frame {index}: {counts:?}"
            );
            assert_eq!(majority_label(counts), expect);
        }
    }

    // derivative closed form
    let col = Array2::from_shape_vec((3, 1), vec![1.0, 2.0, 4.0]).unwrap();
    let out = append_deltas(&col);
    assert_eq!(
        (0..3).map(|t| out[[t, 1]]).collect::<Vec<_>>(),
        vec![0.5, 1.5, 1.0]
    );
    assert_eq!(
        (0..3).map(|t| out[[t, 2]]).collect::<Vec<_>>(),
        vec![0.5, 0.25, -0.25]
    );

    // hamming(5) closed form
    let w = hamming(5).unwrap();
    for (a, e) in w.iter().zip([0.08, 0.54, 1.0, 0.54, 0.08]) {
        assert!((a - e).abs() < 1e-15, "{a} vs {e}");
    }
    pass(
        "05 pipeline oracles",
        "177 frames; 1000 label-alignment sets match the per-sample oracle; \
         derivative and window closed forms exact"
            .to_string(),
    );
}

#[test]
fn acceptance_06_dsp_attenuation() {
    let fs = 250.0;
    let sine = |freq: f64| -> Vec<f64> {
        (0..(30.0 * fs) as usize)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / fs).sin())
            .collect()
    };
    let rms = |x: &[f64]| (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    let steady = 5 * 250..25 * 250;

    let x10 = sine(10.0);
    let y10 = bandpass(&x10, fs, 0.1, 30.0).unwrap();
    let db10 = 20.0 * (rms(&y10[steady.clone()]) / rms(&x10[steady.clone()])).log10();
    assert!(db10.abs() < 1.0, "10 Hz changed by {db10:.3} dB");

    let x60 = sine(60.0);
    let y60 = bandpass(&x60, fs, 0.1, 30.0).unwrap();
    let db60 = 20.0 * (rms(&y60[steady.clone()]) / rms(&x60[steady])).log10();
    assert!(db60 <= -20.0, "60 Hz only attenuated {db60:.1} dB");
    pass(
        "06 dsp attenuation",
        format!("10 Hz {db10:+.3} dB (|.| < 1); 60 Hz {db60:.1} dB (<= -20)"),
    );
}

#[test]
fn acceptance_07_simulator_duration_statistics() {
    let mut details = Vec::new();
    for (class, target) in [
        (EventClass::Bus, 15.86),
        (EventClass::Car, 5.72),
        (EventClass::Noise, 11.73),
    ] {
        let model = DurationModel::for_class(class);
        assert_eq!(model.mean_s, target);
        let mut rng = dasmon::rng::from_seed(0);
        let mean: f64 =
            (0..500).map(|_| sample_duration(&model, &mut rng)).sum::<f64>() / 500.0;
        let rel = (mean - target).abs() / target;
        assert!(
            rel < 0.05,
            "{}: mean {mean:.3} vs {target} ({:.2}% off)",
            class.name(),
            rel * 100.0
        );
        details.push(format!("{} {mean:.2}s ({:+.1}%)", class.name(), 100.0 * (mean - target) / target));
    }
    pass("07 simulator statistics", details.join(", "));
}

#[test]
fn acceptance_08_end_to_end_learning() {
    let t0 = Instant::now();
    let store = palacio_store();
    let segments = store
        .segments(store.center_sp(), FeatureSet::WithDeltas, 90.0)
        .unwrap();
    let ids: Vec<usize> = (0..segments.len()).collect();
    let plan = kfold(&ids, 5, dasmon::rng::substream_seed(42, "folds")).unwrap();
    let split = &plan.folds[0];
    let train_refs: Vec<_> = split.train.iter().map(|&i| &segments[i]).collect();
    let val_refs: Vec<_> = split.val.iter().map(|&i| &segments[i]).collect();

    let config = TrainConfig {
        lr: 5e-5,
        layers: 1,
        hidden: 128,
        dropout: 0.1,
        l2: 1e-5,
        epochs_max: 50,
        patience: 50,
        batch_segments: 1,
        seed: 42,
        stop_at_val_acc: Some(0.92),
    };
    let spec = config.to_spec("bi", segments[0].dim());
    let (_, history) = train_model(&spec, &train_refs, &val_refs, &config).unwrap();
    let best = history
        .epochs
        .iter()
        .map(|e| e.val_acc)
        .fold(0.0f64, f64::max);
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(history.epochs.len() <= 50);
    assert!(
        best >= 0.90,
        "held-out accuracy {best:.4} under 0.90 after {} epochs",
        history.epochs.len()
    );
    assert!(elapsed <= 1200.0, "end-to-end run took {elapsed:.0} s");
    pass(
        "08 end-to-end learning",
        format!(
            "bi h=128 lr=5e-5: held-out acc {:.2}% in {} epochs, {elapsed:.0} s total",
            100.0 * best,
            history.epochs.len()
        ),
    );
}

#[test]
fn acceptance_09_spatial_attention_tracks_bus_lane() {
    let (model, val_segments) = trained_sa_bi_ta();
    let sa_stage = model
        .stages
        .iter()
        .position(|s| matches!(s.kind, StageKind::SpatialAttention { .. }))
        .expect("SA-bi-TA has a spatial stage");

    // mean attention mass each key column receives during Bus frames
    let mut mass = [0.0f64; 3];
    let mut bus_frames = 0usize;
    for seg in val_segments {
        let mut g = Graph::new();
        let pass_fwd = model.forward(&mut g, &seg.features, true).unwrap();
        let trace = pass_fwd
            .attention
            .iter()
            .find(|tr| tr.stage == sa_stage)
            .expect("spatial trace recorded");
        let frames = match &trace.weights {
            AttentionWeights::Spatial(f) => f,
            _ => panic!("stage {sa_stage} should be spatial"),
        };
        for (t, w) in frames.iter().enumerate() {
            if seg.labels[t] == EventClass::Bus {
                for key in 0..3 {
                    let col_mean = (0..3).map(|q| w[[q, key]]).sum::<f64>() / 3.0;
                    mass[key] += col_mean;
                }
                bus_frames += 1;
            }
        }
    }
    assert!(bus_frames > 50, "only {bus_frames} bus frames in holdout");
    for m in &mut mass {
        *m /= bus_frames as f64;
    }
    assert!(
        mass[2] > mass[0] && mass[2] > mass[1],
        "SP2 key mass {mass:?} not dominant over {bus_frames} bus frames"
    );
    pass(
        "09 attention physics",
        format!(
            "bus-frame SA key mass [SP0 {:.3}, SP1 {:.3}, SP2 {:.3}] over {bus_frames} frames",
            mass[0], mass[1], mass[2]
        ),
    );
}

#[test]
fn acceptance_10_transfer_protocol() {
    let (model, val_segments) = trained_sa_bi_ta();

    // target site: a fresh simulated scene at the other geometry
    let site = SiteConfig::acera();
    let (scene, annotations) = generate_scene(&site, 1800.0, 77).unwrap();
    let clean = preprocess_matrix(&scene, 0.1, 30.0).unwrap();
    let grid = WindowGrid::defaults(site.fs);
    let target_store = FeatureStore::build(&site.name, &clean, &annotations, &grid).unwrap();

    let groups = vec![
        ("A".to_string(), [0usize, 1, 2]),
        ("B".to_string(), [2usize, 3, 4]),
        ("C".to_string(), [4usize, 5, 6]),
    ];
    let report = transfer_eval(model, &target_store, &groups, Some(val_segments), 90.0).unwrap();

    let source = report.source.as_ref().expect("source matrix present");
    assert_eq!(report.groups.len(), 3);
    for g in &report.groups {
        assert!(g.cm.total() > 0);
        assert!(
            g.acc < source.acc,
            "group {} acc {:.2} not below in-site {:.2}",
            g.name,
            g.acc,
            source.acc
        );
    }
    let gaps: Vec<String> = report
        .groups
        .iter()
        .map(|g| format!("{} {:.2}% (gap {:.2} pp)", g.name, g.acc, source.acc - g.acc))
        .collect();
    // under the default site configs the mean degradation sits in a
    // moderate band rather than collapsing or vanishing
    let mean_gap = report
        .groups
        .iter()
        .map(|g| source.acc - g.acc)
        .sum::<f64>()
        / report.groups.len() as f64;
    assert!(
        (5.0..=25.0).contains(&mean_gap),
        "mean cross-site gap {mean_gap:.2} pp outside the expected band"
    );
    pass(
        "10 transfer protocol",
        format!(
            "in-site {:.2}%; cross-site {}; mean gap {mean_gap:.2} pp",
            source.acc,
            gaps.join(", ")
        ),
    );
}

#[test]
fn acceptance_11_ablate_determinism() {
    let bin = env!("CARGO_BIN_EXE_dasmon");
    let base = std::env::temp_dir().join(format!("dasmon-acc11-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&base);
    std::fs::create_dir_all(&base).unwrap();

    let run = |args: &[&str]| {
        let out = std::process::Command::new(bin).args(args).output().unwrap();
        assert!(
            out.status.success(),
            "dasmon {args:?} failed:\n{}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let sim = base.join("sim");
    let prep = base.join("prep");
    let feat = base.join("feat");
    run(&[
        "simulate", "--site", "palacio", "--hours", "0.5", "--seed", "7",
        "--out", sim.to_str().unwrap(),
    ]);
    run(&[
        "preprocess", "--scene", sim.join("scene.dasb").to_str().unwrap(),
        "--out", prep.to_str().unwrap(),
    ]);
    run(&[
        "featurize", "--scene", prep.join("processed.dasb").to_str().unwrap(),
        "--annotations", sim.join("annotations.jsonl").to_str().unwrap(),
        "--deltas", "--spatial", "--site", "palacio",
        "--out", feat.to_str().unwrap(),
    ]);
    // folds and epochs stay small: the property under test is byte
    // determinism of the artifacts, not model quality
    for tag in ["a", "b"] {
        run(&[
            "ablate", "--features", feat.to_str().unwrap(),
            "--archs", "lstm,bi,bi-TA", "--trials", "3", "--folds", "3",
            "--epochs", "1", "--seed", "7",
            "--out", base.join(tag).to_str().unwrap(),
        ]);
    }
    let report_a = std::fs::read(base.join("a/report.csv")).unwrap();
    let report_b = std::fs::read(base.join("b/report.csv")).unwrap();
    assert_eq!(report_a, report_b, "report.csv differs between runs");
    let trials_a = std::fs::read(base.join("a/trials.csv")).unwrap();
    let trials_b = std::fs::read(base.join("b/trials.csv")).unwrap();
    assert_eq!(trials_a, trials_b, "trials.csv differs between runs");

    let rows = String::from_utf8(report_a).unwrap();
    // 3 archs x 2 feature sets + header
    assert_eq!(rows.lines().count(), 7, "unexpected report shape:\n{rows}");
    let _ = std::fs::remove_dir_all(&base);
    pass(
        "11 determinism",
        "two ablate invocations produced byte-identical report.csv and trials.csv".to_string(),
    );
}
