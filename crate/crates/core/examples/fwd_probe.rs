use fflc_core::model::{forward, BoundParams, ModelConfig, ModelParams, Variant};
use fflc_core::tensor::{Graph, Tensor};
use std::time::Instant;

fn main() {
    let cfg = ModelConfig {
        num_classes: 10,
        input_size: (128, 128),
        variant: Variant::Soft,
        use_landmarks: true,
        base_channels: 16,
        lambda: 100.0,
    };
    let params = ModelParams::<f32>::init(&cfg, 3).unwrap();
    let mut rng = fflc_core::seed::stream(1, 2, 0, 0);
    let image = fflc_core::tensor::uniform_tensor::<f32, _>(&[64, 3, 128, 128], 0.5, &mut rng);
    let mut maps = Tensor::<f32>::zeros(&[64, 68, 128, 128]);
    for s in 0..64 { for k in 0..68 { let i = (s*68+k)*16384 + (s*97+k*131)%16384; maps.data_mut()[i] = 1.0; } }

    for rep in 0..3 {
        let t = Instant::now();
        let img2 = image.clone();
        let maps2 = maps.clone();
        let t_clone = t.elapsed();
        let t = Instant::now();
        let g = Graph::new();
        let p = BoundParams::bind(&params, &g, true);
        let iv = g.leaf(img2);
        let mv = g.leaf(maps2);
        let t_leaf = t.elapsed();
        let t = Instant::now();
        let _out = forward(&p, &cfg, iv, Some(mv)).unwrap();
        let t_fwd = t.elapsed();
        if rep > 0 {
            println!("clone {:.0}ms leaf {:.0}ms forward {:.0}ms", t_clone.as_secs_f64()*1e3, t_leaf.as_secs_f64()*1e3, t_fwd.as_secs_f64()*1e3);
        }
    }
}
