use fflc_core::eval::{evaluate_indices, Metric, MetricsReport};
use fflc_core::model::{ModelConfig, Variant};
use fflc_core::pipeline::DataPipe;
use fflc_core::synth::dataset::{build_manifest, Split, SynthConfig};
use fflc_core::train::{train, TrainConfig};

fn main() {
    let t0 = std::time::Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig {
        counts_override: Some([16, 0, 16, 0, 0, 0, 0, 0, 16, 0]),
        root_seed: 11,
        ..Default::default()
    };
    let (manifest, _) = build_manifest(&synth, &dir.path().join("data")).unwrap();
    println!("dataset built in {:.1}s", t0.elapsed().as_secs_f64());
    for variant in [Variant::Soft, Variant::Share, Variant::Hard] {
        let t1 = std::time::Instant::now();
        let cfg = TrainConfig {
            model: ModelConfig {
                num_classes: 3,
                input_size: (32, 32),
                variant,
                use_landmarks: true,
                base_channels: 16,
                lambda: 100.0,
            },
            root_seed: 11,
            steps: 500,
            batch_size: 64,
            alpha: 1e-3,
            checkpoint_interval: 0,
            log_every: 100,
            ..Default::default()
        };
        let out = dir.path().join(format!("run-{}", variant.name()));
        let state = train(&manifest, &cfg, &out, None).unwrap();
        let pipe = DataPipe::new(&manifest, &cfg.model).unwrap();
        let all: Vec<usize> = (0..manifest.len()).collect();
        let samples = evaluate_indices(&state.params, &pipe, &all).unwrap();
        let report = MetricsReport::aggregate(pipe.classes(), &samples);
        println!(
            "{}: src acc {:.3} iou {:.3} meanloss {:.4} in {:.1}s",
            variant.name(),
            report.total(Metric::Fsc).unwrap(),
            report.total(Metric::Iou).unwrap(),
            state.mean_loss(),
            t1.elapsed().as_secs_f64()
        );
    }
    let _ = Split::Train;
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}
