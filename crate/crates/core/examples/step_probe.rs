use fflc_core::model::{ModelConfig, Variant};
use fflc_core::pipeline::DataPipe;
use fflc_core::synth::dataset::{build_manifest, Split, SynthConfig};
use fflc_core::synth::BalancedSampler;
use fflc_core::train::{train_step, TrainConfig, TrainState};
use std::time::Instant;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig {
        counts_override: Some([16; 10]),
        root_seed: 11,
        ..Default::default()
    };
    let (manifest, _) = build_manifest(&synth, &dir.path().join("data")).unwrap();
    for lm in [true, false] {
        let cfg = TrainConfig {
            model: ModelConfig { use_landmarks: lm, ..Default::default() },
            ..Default::default()
        };
        let pipe = DataPipe::new(&manifest, &cfg.model).unwrap();
        let sampler = BalancedSampler::new(&manifest, Split::Train).unwrap();
        let mut rng = fflc_core::seed::stream(1, 2, 0, 0);
        let mut state = TrainState::init(&cfg).unwrap();
        let mut prep_t = 0.0;
        let mut step_t = 0.0;
        let reps = 8;
        for i in 0..reps + 2 {
            let idx = sampler.next_batch(&mut rng, 64);
            let t = Instant::now();
            let batch = pipe.batch(&idx, &vec![1.05; 64]).unwrap();
            let p = t.elapsed().as_secs_f64();
            let t = Instant::now();
            train_step(&mut state, &cfg, batch).unwrap();
            let s = t.elapsed().as_secs_f64();
            if i >= 2 { prep_t += p; step_t += s; }
        }
        println!("landmarks {}: prep {:.3}s step {:.3}s total {:.3}s/iter",
            lm, prep_t / reps as f64, step_t / reps as f64, (prep_t + step_t) / reps as f64);
    }
}
