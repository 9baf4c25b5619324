use fflc_core::model::{BoundParams, ModelConfig, ModelParams, Variant};
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

    // stage-by-stage timing (forward only), 2 reps
    for rep in 0..2 {
        let g = Graph::new();
        let p = BoundParams::bind(&params, &g, true);
        let img = g.leaf(image.clone());
        let lmv = g.leaf(maps.clone());
        let t0 = Instant::now();
        let i1 = img.conv2d(p.get("img1.w"), Some(p.get("img1.b")), 2, 1, false).unwrap().relu().unwrap();
        let t1 = Instant::now();
        let i2 = i1.dwconv2d(p.get("img2.dw"), 2, 1).unwrap().conv2d(p.get("img2.pw"), Some(p.get("img2.b")), 1, 0, true).unwrap().relu().unwrap();
        let i3 = i2.dwconv2d(p.get("img3.dw"), 2, 1).unwrap().conv2d(p.get("img3.pw"), Some(p.get("img3.b")), 1, 0, true).unwrap().relu().unwrap();
        let t2 = Instant::now();
        let l1 = lmv.conv2d(p.get("lm1.w"), Some(p.get("lm1.b")), 2, 1, false).unwrap().relu().unwrap();
        let t3 = Instant::now();
        let l2 = l1.dwconv2d(p.get("lm2.dw"), 2, 1).unwrap().conv2d(p.get("lm2.pw"), Some(p.get("lm2.b")), 1, 0, false).unwrap().relu().unwrap();
        let l3 = l2.dwconv2d(p.get("lm3.dw"), 2, 1).unwrap().conv2d(p.get("lm3.pw"), Some(p.get("lm3.b")), 1, 0, false).unwrap().relu().unwrap();
        let t4 = Instant::now();
        let f1 = fflc_core::model::fuse_skip(&p, 1, i1, l1).unwrap();
        let t5 = Instant::now();
        let f2 = fflc_core::model::fuse_skip(&p, 2, i2, l2).unwrap();
        let f3 = fflc_core::model::fuse_skip(&p, 3, i3, l3).unwrap();
        let t6 = Instant::now();
        let r1 = {
            let h = f3.dwconv2d(p.get("res1.dw"), 1, 1).unwrap().conv2d(p.get("res1.pw"), Some(p.get("res1.b")), 1, 0, false).unwrap();
            f3.add(h).unwrap().relu().unwrap()
        };
        let r2 = {
            let h = r1.dwconv2d(p.get("res2.dw"), 1, 1).unwrap().conv2d(p.get("res2.pw"), Some(p.get("res2.b")), 1, 0, false).unwrap();
            r1.add(h).unwrap().relu().unwrap()
        };
        let t7 = Instant::now();
        let _cls = r2.global_avg_pool().unwrap().dense(p.get("cls.w"), Some(p.get("cls.b")), false).unwrap();
        let m = r2.concat_channels(&[r1]).unwrap()
            .conv2d_transpose(p.get("up1.w"), Some(p.get("up1.b")), 2, false).unwrap().relu().unwrap();
        let t8 = Instant::now();
        let m = m.concat_channels(&[f2]).unwrap()
            .conv2d_transpose(p.get("up2.w"), Some(p.get("up2.b")), 2, false).unwrap().relu().unwrap();
        let t9 = Instant::now();
        let m = m.concat_channels(&[f1]).unwrap()
            .conv2d_transpose(p.get("up3.w"), Some(p.get("up3.b")), 2, false).unwrap().relu().unwrap();
        let t10 = Instant::now();
        let _logits = m.conv2d(p.get("mask.w"), Some(p.get("mask.b")), 1, 0, false).unwrap();
        let t11 = Instant::now();
        if rep == 1 {
            println!("img1+relu {:.0}ms  img2/3 {:.0}ms  lm1 {:.0}ms  lm2/3 {:.0}ms  ssma1 {:.0}ms  ssma2/3 {:.0}ms  res {:.0}ms  up1 {:.0}ms  up2 {:.0}ms  up3 {:.0}ms  maskconv {:.0}ms",
                (t1-t0).as_secs_f64()*1e3, (t2-t1).as_secs_f64()*1e3, (t3-t2).as_secs_f64()*1e3,
                (t4-t3).as_secs_f64()*1e3, (t5-t4).as_secs_f64()*1e3, (t6-t5).as_secs_f64()*1e3,
                (t7-t6).as_secs_f64()*1e3, (t8-t7).as_secs_f64()*1e3, (t9-t8).as_secs_f64()*1e3,
                (t10-t9).as_secs_f64()*1e3, (t11-t10).as_secs_f64()*1e3);
        }
    }
}
