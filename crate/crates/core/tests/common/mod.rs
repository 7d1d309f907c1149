#![allow(dead_code)]

use brain3d::autograd::{Graph, NodeId};
use brain3d::langmodel::{Vocabulary, CANONICAL_PROMPT};
use brain3d::model::{Model, ModelConfig};
use brain3d::params::{Binder, ParamStore};
use brain3d::synth::{generate_subject, Side, SubjectClass, SubjectRecord};
use brain3d::volume::Dims;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TINY_DIMS: Dims = Dims {
    depth: 8,
    height: 16,
    width: 16,
};

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        input_dims: TINY_DIMS,
        patch: Dims::new(4, 8, 8),
        d_v: 8,
        encoder_heads: 2,
        encoder_layers: 1,
        encoder_mlp: 16,
        k: 4,
        d_llm: 8,
        lm_heads: 2,
        lm_layers: 1,
        lm_mlp: 16,
        max_len: 80,
        lora_rank: 2,
        lora_alpha: 4.0,
    }
}

/// Three subjects (left, right, healthy) at tiny dims.
pub fn tiny_subjects(seed: u64) -> Vec<SubjectRecord> {
    vec![
        generate_subject("a", seed, SubjectClass::Pathological, Some(Side::Left), TINY_DIMS).unwrap(),
        generate_subject("b", seed + 1, SubjectClass::Pathological, Some(Side::Right), TINY_DIMS).unwrap(),
        generate_subject("c", seed + 2, SubjectClass::Healthy, None, TINY_DIMS).unwrap(),
    ]
}

pub fn tiny_model(subjects: &[SubjectRecord], seed: u64) -> Model<f64> {
    let vocab = Vocabulary::build(std::iter::once(CANONICAL_PROMPT).chain(subjects.iter().map(|s| s.report.as_str())));
    Model::init(tiny_config(), vocab, seed).unwrap()
}

/// Adds N(0, std) noise to every parameter in groups matching `pred`.
pub fn jitter(store: &mut ParamStore<f64>, pred: impl Fn(&str) -> bool, std: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (k, a) in store.iter_mut() {
        if pred(brain3d::params::group_of(k)) {
            a.mapv_inplace(|v| v + std * (rng.random::<f64>() * 2.0 - 1.0));
        }
    }
}

/// Largest relative error between analytic and central-difference
/// gradients, over up to `per_tensor` sampled entries of every trainable
/// tensor. Returns (error, number of entries checked).
pub fn grad_check(
    store: &ParamStore<f64>,
    trainable: &dyn Fn(&str) -> bool,
    loss: &dyn Fn(&mut Graph<f64>, &mut Binder<'_, f64>) -> NodeId,
    per_tensor: usize,
    seed: u64,
) -> (f64, usize) {
    let mut g = Graph::new();
    let mut b = Binder::new(store, trainable);
    let l = loss(&mut g, &mut b);
    let mut grads = g.backward(l);
    let analytic = b.collect(&mut grads);
    assert!(!analytic.is_empty(), "no trainable parameter reached the loss");
    let eval = |s: &ParamStore<f64>| {
        let mut g = Graph::new();
        let mut b = Binder::new(s, &brain3d::params::frozen);
        let l = loss(&mut g, &mut b);
        g.scalar(l)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut checked = 0;
    let h = 1e-6;
    for (key, grad) in &analytic {
        let n = grad.len();
        let picks: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| rng.random_range(0..n)).collect()
        };
        for flat in picks {
            let (r, c) = (flat / grad.ncols(), flat % grad.ncols());
            let mut plus = store.clone();
            plus.get_mut(key).unwrap()[[r, c]] += h;
            let mut minus = store.clone();
            minus.get_mut(key).unwrap()[[r, c]] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = grad[[r, c]];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (worst, checked)
}
