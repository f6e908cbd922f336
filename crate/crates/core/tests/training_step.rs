use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stsm_core::{Model, ModelConfig, ModelParams};

fn cfg() -> ModelConfig {
    ModelConfig {
        time_steps: 5,
        channels: 2,
        stem_features: 4,
        height: 5,
        width: 5,
        hidden_dim: 6,
        state_dim: 3,
        num_classes: 3,
        ..ModelConfig::default()
    }
}

fn batch(cfg: &ModelConfig, n: usize) -> (Vec<f32>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y: Vec<usize> = (0..n).map(|i| i % cfg.num_classes).collect();
    // class k shifts every value by k, so the batch is separable
    let x = y
        .iter()
        .flat_map(|&k| (0..cfg.input_len()).map(move |_| k as f32))
        .map(|v| v + rng.gen_range(-0.2..0.2))
        .collect();
    (x, y)
}

#[test]
fn plain_gradient_descent_fits_a_separable_batch() {
    let cfg = cfg();
    let mut model = Model::<f32>::new(cfg.clone(), 2).unwrap();
    let (x, y) = batch(&cfg, 9);
    let first = model.batch_loss(&x, &y).unwrap();
    let mut grads = ModelParams::zeros(&cfg);
    for _ in 0..120 {
        grads.fill_zero();
        let stats = model.accumulate_gradients(&x, &y, 1.0 / 9.0, &mut grads).unwrap();
        model.bn.update(&stats.batch_stats);
        for ((_, p), (_, g)) in model.params.tensors_mut().into_iter().zip(grads.tensors()) {
            for (w, d) in p.data.iter_mut().zip(&g.data) {
                *w -= 0.05 * d;
            }
        }
    }
    let last = model.batch_loss(&x, &y).unwrap();
    assert!(last < 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn dense_and_sparse_models_share_shapes() {
    let sparse = cfg();
    let dense = sparse.dense_baseline();
    let a = Model::<f64>::new(sparse.clone(), 1).unwrap();
    let b = Model::<f64>::new(dense, 1).unwrap();
    let shapes = |m: &Model<f64>| -> Vec<(String, Vec<usize>)> {
        m.params.tensors().into_iter().map(|(n, t)| (n, t.shape.clone())).collect()
    };
    assert_eq!(shapes(&a), shapes(&b));
    let x: Vec<f64> = (0..2 * sparse.input_len()).map(|i| (i % 5) as f64).collect();
    assert_eq!(a.logits(&x, 2).unwrap().len(), b.logits(&x, 2).unwrap().len());
}
