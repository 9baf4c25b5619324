use fflc_core::model::{combined_loss, forward, BoundParams, BranchMode, ModelConfig, Variant};
use fflc_core::pipeline::DataPipe;
use fflc_core::synth::dataset::{build_manifest, SynthConfig};
use fflc_core::synth::BalancedSampler;
use fflc_core::tensor::{adam_step, AdamState, Graph, Tensor};
use fflc_core::train::TrainConfig;
use std::time::Instant;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig {
        counts_override: Some([16, 16, 16, 16, 16, 16, 16, 16, 16, 16]),
        root_seed: 11,
        ..Default::default()
    };
    let (manifest, _) = build_manifest(&synth, &dir.path().join("data")).unwrap();
    for (size, bc) in [(32usize, 16usize), (128, 16)] {
        let cfg = TrainConfig {
            model: ModelConfig {
                num_classes: 10,
                input_size: (size, size),
                variant: Variant::Soft,
                use_landmarks: true,
                base_channels: bc,
                lambda: 100.0,
            },
            ..Default::default()
        };
        let pipe = DataPipe::new(&manifest, &cfg.model).unwrap();
        let sampler = BalancedSampler::new(&manifest, fflc_core::synth::dataset::Split::Train).unwrap();
        let mut rng = fflc_core::seed::stream(1, 2, 0, 0);
        let mut params = fflc_core::model::ModelParams::<f32>::init(&cfg.model, 3).unwrap();
        let mut adam = AdamState::new(&params.shapes(), 1e-3);
        let reps = 3;
        let (mut t_prep, mut t_fwd, mut t_loss, mut t_bwd, mut t_adam) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..reps {
            let idx = sampler.next_batch(&mut rng, 64);
            let t = Instant::now();
            let batch = pipe.batch(&idx, &vec![1.1; 64]).unwrap();
            t_prep += t.elapsed().as_secs_f64();

            let t = Instant::now();
            let g = Graph::new();
            let bound = BoundParams::bind(&params, &g, true);
            let image = g.leaf(batch.images.clone());
            let maps = batch.landmark_maps.as_ref().map(|m| g.leaf(m.clone()));
            let out = forward(&bound, &cfg.model, image, maps).unwrap();
            t_fwd += t.elapsed().as_secs_f64();

            let t = Instant::now();
            let loss = combined_loss(&out, &cfg.model, &batch.labels, &batch.masks, BranchMode::Both).unwrap();
            t_loss += t.elapsed().as_secs_f64();

            let t = Instant::now();
            let grads = g.backward(loss).unwrap();
            t_bwd += t.elapsed().as_secs_f64();

            let t = Instant::now();
            let gt: Vec<Tensor<f32>> = bound.ordered().map(|(_, v)| grads.tensor(v)).collect();
            let mut refs: Vec<&mut Tensor<f32>> = params.tensors_mut().collect();
            adam_step(&mut refs, &gt, &mut adam).unwrap();
            t_adam += t.elapsed().as_secs_f64();
        }
        let r = reps as f64;
        println!(
            "size {size}: prep {:.3}s fwd {:.3}s loss {:.3}s bwd {:.3}s adam {:.3}s | total {:.3}s/step",
            t_prep / r, t_fwd / r, t_loss / r, t_bwd / r, t_adam / r,
            (t_prep + t_fwd + t_loss + t_bwd + t_adam) / r
        );
    }
}
