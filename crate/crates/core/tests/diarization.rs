use compemb::diarization::{run_benchmark, segments_of, simulated_overlap_detector, BenchmarkConfig, Strategy};
use compemb::nets::{CompositionalModel, Dims, Variant};
use compemb::seed::rng_for;
use compemb::synth::{SpeakerBank, SpeakerSet, SpeakerSplit, StreamParams, Timeline, TurnSpan};
use compemb::training::{train, train_single_embedding, TrainConfig};

#[test]
fn overlap_detector_flip_rates_match_configuration() {
    // Alternating 1 s single-speaker and 1 s overlapped segments.
    let frames: Vec<SpeakerSet> = (0..200_000)
        .map(|i| {
            if (i / 10) % 2 == 0 {
                SpeakerSet::singleton(3)
            } else {
                SpeakerSet::new(vec![3, 7])
            }
        })
        .collect();
    let reference = Timeline::new(0.1, frames).unwrap();
    let segs = segments_of(&[TurnSpan { start: 0, end: 200_000 }], 10);
    assert_eq!(segs.len(), 20_000);
    let flags = simulated_overlap_detector(&reference, &segs, 0.1, 0.1, &mut rng_for(11, "detector")).unwrap();
    let (mut fa, mut miss) = (0usize, 0usize);
    for (i, &f) in flags.iter().enumerate() {
        let truth = i % 2 == 1;
        if truth && !f {
            miss += 1;
        }
        if !truth && f {
            fa += 1;
        }
    }
    let per_class = 10_000.0;
    assert!(
        (fa as f64 / per_class - 0.1).abs() <= 0.01,
        "false alarm rate {}",
        fa as f64 / per_class
    );
    assert!(
        (miss as f64 / per_class - 0.1).abs() <= 0.01,
        "miss rate {}",
        miss as f64 / per_class
    );
}

#[test]
fn strategies_agree_without_overlap() {
    let dims = Dims {
        input: 64,
        hidden: 128,
        embed: 32,
    };
    let split = SpeakerSplit {
        train: 200,
        val: 20,
        test: 40,
    };
    let bank = SpeakerBank::generate(4, split.total(), dims.input, 0.3).unwrap();
    let cfg = TrainConfig {
        episodes_train: 2000,
        episodes_val: 50,
        val_every: 1000,
        ..TrainConfig::default()
    };
    let cmp = CompositionalModel::init(dims, Variant::CmpEm, &mut rng_for(1, "cmp")).unwrap();
    let cmp = train(&cmp, &bank, &split, &cfg).unwrap().best;
    let single = CompositionalModel::init(dims, Variant::SingleEm, &mut rng_for(1, "single")).unwrap();
    let single_cfg = TrainConfig {
        variant: Variant::SingleEm,
        ..cfg
    };
    let single = train_single_embedding(&single, &bank, &split, &single_cfg)
        .unwrap()
        .best;

    let bc = BenchmarkConfig {
        streams: 3,
        stream: StreamParams {
            duration_s: 300.0,
            overlap_fraction: 0.0,
            ..StreamParams::default()
        },
        ..BenchmarkConfig::default()
    };
    let pool: Vec<usize> = split.test_ids().collect();
    let report = run_benchmark(&bank, &pool, &single, &cmp, &Strategy::ALL, &bc).unwrap();
    for s in &report.streams {
        assert_eq!(s.reference.overlap_share(), 0.0);
    }
    let means: Vec<f64> = Strategy::ALL.iter().map(|&s| report.der_stats(s).unwrap().0).collect();
    let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(hi - lo <= 0.01, "mean DER per strategy: {means:?}");
}
