//! Whole-network checks: budget, end-to-end gradients, persistence,
//! training determinism and Grad-CAM geometry.

use mpoxmamba::gradcheck::model_gradcheck;
use mpoxmamba::model::checkpoint::{decode, encode, load, save};
use mpoxmamba::model::grad_cam::{grad_cam, overlay};
use mpoxmamba::model::{budget, Ablation, ModelConfig, MpoxMamba};
use mpoxmamba::train::{cross_validate, synthetic_dataset, AdamWConfig, TrainConfig};
use mpoxmamba::Tensor;

fn reduced(divisor: usize, size: usize) -> ModelConfig {
    ModelConfig {
        input_size: size,
        ..ModelConfig::default().scaled(divisor)
    }
}

#[test]
fn default_budget_and_ladder() {
    let b = budget(&ModelConfig::default()).unwrap();
    assert!((b.params() as f64 - 0.77e6).abs() <= 0.077e6, "params {}", b.params());
    assert!((b.macs() as f64 - 0.53e9).abs() <= 0.15 * 0.53e9, "macs {}", b.macs());
    let cost = |a: Ablation| budget(&ModelConfig::default().with_ablation(a)).unwrap();
    let [basic, g4, g3, g2, vf] = [Ablation::Basic, Ablation::G4, Ablation::G3, Ablation::G2, Ablation::VmFusion].map(cost);
    assert!(basic.params() < g4.params() && g4.params() < g3.params());
    assert!(g3.params() < g2.params() && g2.params() < vf.params());
    assert!(g4.macs() < g3.macs() && g3.macs() < g2.macs() && g2.macs() < vf.macs());
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let r = model_gradcheck(reduced(8, 32), 24, 5, 1e-4).unwrap();
    assert_eq!(r.entries.len(), 24);
    assert!(r.passed(), "max {:e} at {:?}", r.max_rel_error(), r.worst());
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.mpxm");
    let model = MpoxMamba::<f32>::build(reduced(8, 32).with_ablation(Ablation::G3), 12).unwrap();
    let names = vec!["a".to_string(), "b".to_string()];
    save(&model, &names, &path).unwrap();
    let back = load::<f32>(&path).unwrap();
    let x = Tensor::full(&[2, 3, 32, 32], 0.5f32);
    assert_eq!(model.predict(&x).unwrap().data(), back.model.predict(&x).unwrap().data());

    // f32 weights read back as f64 carry the same values
    let wide = decode::<f64>(&encode(&model, &names).unwrap()).unwrap();
    let (_, p32) = model.store.iter().next().unwrap();
    let (_, p64) = wide.model.store.iter().next().unwrap();
    assert!(p32.value.data().iter().zip(p64.value.data()).all(|(a, b)| *a as f64 == *b));
}

#[test]
fn cross_validation_is_deterministic_to_the_byte() {
    let cfg = ModelConfig {
        stage_depths: vec![1, 1],
        ..reduced(8, 16)
    };
    let data = synthetic_dataset::<f32>(10, 16, 3);
    let tc = TrainConfig {
        epochs: 1,
        batch_size: 4,
        folds: 5,
        optimizer: AdamWConfig::default(),
        seed: 21,
    };
    let run = || cross_validate(&cfg, &data, &tc, |_, _| {}).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.len(), 5);
    for (fa, fb) in a.iter().zip(&b) {
        assert_eq!(fa.history, fb.history);
        assert_eq!(encode(&fa.model, &data.classes).unwrap(), encode(&fb.model, &data.classes).unwrap());
        assert_eq!(fa.history.eval_size, 2);
    }
}

#[test]
fn cam_overlay_matches_image_size() {
    let model = MpoxMamba::<f32>::build(reduced(8, 32), 2).unwrap();
    let img = image::RgbImage::from_fn(45, 37, |x, y| image::Rgb([(x * 5) as u8, (y * 6) as u8, 90]));
    let input = mpoxmamba::train::dataset::image_to_tensor::<f32>(&img, 32);
    let cam = grad_cam(&model, &input, 0).unwrap();
    let out = overlay(&img, &cam.heatmap, 0.4).unwrap();
    assert_eq!(out.dimensions(), (45, 37));
}
