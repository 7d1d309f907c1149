mod common;

use brain3d::autograd::{Graph, NodeId};
use brain3d::langmodel::tokens_key;
use brain3d::model::{tau_key, Model};
use brain3d::params::Binder;
use brain3d::synth::SubjectRecord;
use brain3d::trainer::{infonce_graph, text_embedding, visual_embedding_graph};
use common::{grad_check, jitter, tiny_model, tiny_subjects};
use ndarray::Array2;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const TOL: f64 = 1e-3;

fn report_loss<'m>(
    model: &'m Model<f64>,
    subject: &'m SubjectRecord,
) -> impl Fn(&mut Graph<f64>, &mut Binder<'_, f64>) -> NodeId + 'm {
    move |g, b| {
        let z = model.encode_graph(g, b, &subject.volume).unwrap();
        let ids = model.report_ids(&subject.report);
        model.report_loss_graph(g, b, z, &ids).unwrap()
    }
}

fn check(model: &Model<f64>, subject: &SubjectRecord, trainable: &dyn Fn(&str) -> bool, seed: u64) {
    let loss = report_loss(model, subject);
    let (err, n) = grad_check(&model.store, trainable, &loss, 6, seed);
    assert!(n > 0);
    assert!(err < TOL, "seed {seed}: relative error {err:.3e} over {n} entries");
}

/// Model with every group perturbed away from its initial values so that
/// zero-initialised tensors (positional depth table, LoRA B) carry signal.
fn perturbed(seed: u64, lora: bool) -> (Model<f64>, Vec<SubjectRecord>) {
    let subjects = tiny_subjects(100 + seed);
    let mut m = tiny_model(&subjects, seed);
    if lora {
        m.inject_lora(seed).unwrap();
    }
    jitter(&mut m.store, |_| true, 0.05, seed);
    (m, subjects)
}

#[test]
fn projector_and_gate() {
    for seed in SEEDS {
        let (m, s) = perturbed(seed, false);
        check(&m, &s[(seed % 3) as usize], &|g| g.starts_with("bridge."), seed);
        check(&m, &s[0], &|g| g == "bridge.gate", seed);
    }
}

#[test]
fn positional_depth_and_patch_kernel() {
    for seed in SEEDS {
        let (m, s) = perturbed(seed, false);
        check(&m, &s[(seed % 3) as usize], &|g| g == "encoder.pos_depth", seed);
        check(&m, &s[(seed % 3) as usize], &|g| g == "encoder.patch3d", seed);
    }
}

#[test]
fn language_model() {
    for seed in SEEDS {
        let (m, s) = perturbed(seed, false);
        check(&m, &s[(seed % 3) as usize], &|g| g.starts_with("lm."), seed);
    }
}

#[test]
fn adapters() {
    for seed in SEEDS {
        let (m, s) = perturbed(seed, true);
        check(&m, &s[(seed % 3) as usize], &|g| g.starts_with("lora."), seed);
    }
}

#[test]
fn contrastive_objective() {
    for seed in SEEDS {
        let (m, s) = perturbed(seed, false);
        let table = m.store.get(&tokens_key()).unwrap().clone();
        let loss = |g: &mut Graph<f64>, b: &mut Binder<'_, f64>| {
            let rows: Vec<NodeId> = s
                .iter()
                .map(|x| {
                    let z = m.encode_graph(g, b, &x.volume).unwrap();
                    let zv = m.visual_graph(g, b, z).unwrap();
                    visual_embedding_graph(g, zv).unwrap()
                })
                .collect();
            let v = g.concat_rows(&rows);
            let mut t = Array2::zeros((s.len(), table.ncols()));
            for (i, x) in s.iter().enumerate() {
                t.row_mut(i).assign(&text_embedding(&m.report_ids(&x.report), &table).unwrap());
            }
            let t = g.constant(t);
            let tau = b.get(g, &tau_key()).unwrap();
            infonce_graph(g, v, t, tau).unwrap()
        };
        let trainable = |g: &str| {
            matches!(g, "encoder.patch3d" | "encoder.pos_depth" | "contrastive.tau") || g.starts_with("bridge.")
        };
        let (err, n) = grad_check(&m.store, &trainable, &loss, 6, seed);
        assert!(err < TOL, "seed {seed}: relative error {err:.3e} over {n} entries");
    }
}
