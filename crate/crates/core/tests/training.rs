use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stenoseg::autodiff::Tape;
use stenoseg::config::RunConfig;
use stenoseg::data::synth::{self, SynthConfig};
use stenoseg::gradcheck::{check, random};
use stenoseg::mask::Mask;
use stenoseg::models::{ModelSpec, Model, Variant};
use stenoseg::params::ParamStore;
use stenoseg::tensor::Tensor;
use stenoseg::train::*;
use stenoseg::Error;

fn random_masks(b: usize, h: usize, w: usize, seed: u64) -> Vec<Mask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..b).map(|_| Mask::from_fn(h, w, |_, _| rng.gen_bool(0.3))).collect()
}

fn softmax2(l0: f64, l1: f64) -> (f64, f64) {
    let m = l0.max(l1);
    let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
    (e0 / (e0 + e1), e1 / (e0 + e1))
}

fn dice_oracle(logits: &Tensor<f64>, masks: &[Mask], eps: f64) -> f64 {
    let (b, h, w) = (logits.shape()[0], logits.shape()[2], logits.shape()[3]);
    let (mut inter, mut ps, mut ms) = (0.0, 0.0, 0.0);
    for n in 0..b {
        for r in 0..h {
            for c in 0..w {
                let (_, p) = softmax2(logits.get(&[n, 0, r, c]), logits.get(&[n, 1, r, c]));
                let m = masks[n].get(r, c) as f64;
                inter += p * m;
                ps += p;
                ms += m;
            }
        }
    }
    1.0 - (2.0 * inter + eps) / (ps + ms + eps)
}

fn ce_oracle(logits: &Tensor<f64>, masks: &[Mask]) -> f64 {
    let (b, h, w) = (logits.shape()[0], logits.shape()[2], logits.shape()[3]);
    let mut total = 0.0;
    for n in 0..b {
        for r in 0..h {
            for c in 0..w {
                let (p0, p1) = softmax2(logits.get(&[n, 0, r, c]), logits.get(&[n, 1, r, c]));
                total -= if masks[n].get(r, c) == 1 { p1.ln() } else { p0.ln() };
            }
        }
    }
    total / (b * h * w) as f64
}

fn eval_loss(f: impl for<'t> Fn(stenoseg::autodiff::Var<'t, f64>) -> stenoseg::Result<stenoseg::autodiff::Var<'t, f64>>, l: &Tensor<f64>) -> f64 {
    let tape = Tape::inference();
    f(tape.constant(l.clone())).unwrap().value().item()
}

#[test]
fn dice_matches_scalar_loop() {
    let logits = random(&[2, 2, 5, 6], 3.0, 1);
    let masks = random_masks(2, 5, 6, 2);
    let target = mask_batch::<f64>(&masks).unwrap();
    let got = eval_loss(|l| dice_loss(l, &target, 1.0), &logits);
    assert!((got - dice_oracle(&logits, &masks, 1.0)).abs() < 1e-12);
}

#[test]
fn cross_entropy_matches_scalar_loop() {
    let logits = random(&[3, 2, 4, 4], 3.0, 3);
    let masks = random_masks(3, 4, 4, 4);
    let target = mask_batch::<f64>(&masks).unwrap();
    let got = eval_loss(|l| cross_entropy_loss(l, &target), &logits);
    assert!((got - ce_oracle(&logits, &masks)).abs() < 1e-10);
}

#[test]
fn combined_loss_weights_levels() {
    let masks = random_masks(2, 8, 8, 5);
    let (l0, l1, l2) = (random(&[2, 2, 8, 8], 2.0, 6), random(&[2, 2, 4, 4], 2.0, 7), random(&[2, 2, 2, 2], 2.0, 8));
    let cfg = LossConfig::default();
    let tape = Tape::inference();
    let got = combined_loss(tape.constant(l0.clone()), &[tape.constant(l1.clone()), tape.constant(l2.clone())], &masks, &cfg)
        .unwrap()
        .value()
        .item();
    let level = |l: &Tensor<f64>, s: usize| {
        let small: Vec<Mask> = masks.iter().map(|m| m.resize_nearest(s, s)).collect();
        dice_oracle(l, &small, 1.0) + ce_oracle(l, &small)
    };
    let want = (level(&l0, 8) + 0.5 * level(&l1, 4) + 0.25 * level(&l2, 2)) / 1.75;
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    assert_eq!(level_weights(3, 0.5), vec![1.0 / 1.75, 0.5 / 1.75, 0.25 / 1.75]);
}

#[test]
fn loss_gradients() {
    let masks = random_masks(2, 4, 4, 9);
    let target = mask_batch::<f64>(&masks).unwrap();
    let inputs = [random(&[2, 2, 4, 4], 2.0, 10), random(&[2, 2, 2, 2], 2.0, 11)];
    let cfg = LossConfig::default();
    let cases: Vec<Box<dyn for<'t> Fn(&'t Tape<f64>, &[stenoseg::autodiff::Var<'t, f64>]) -> stenoseg::Result<stenoseg::autodiff::Var<'t, f64>>>> = vec![
        Box::new(|_, v| dice_loss(v[0], &target, 1.0)),
        Box::new(|_, v| cross_entropy_loss(v[0], &target)),
        Box::new(|_, v| combined_loss(v[0], &[v[1]], &masks, &cfg)),
    ];
    for (i, f) in cases.iter().enumerate() {
        let r = check(f, &inputs, 1e-5, usize::MAX).unwrap();
        assert!(r.max_rel_err < 1e-6, "case {i}: {r:?}");
    }
}

proptest! {
    #[test]
    fn dice_decreases_as_mass_moves_onto_mask(seed in any::<u64>(), pixel in 0usize..20, delta in 0.05f64..2.0) {
        let logits = random(&[1, 2, 4, 5], 2.0, seed);
        let masks = random_masks(1, 4, 5, seed ^ 1);
        let target = mask_batch::<f64>(&masks).unwrap();
        let before = eval_loss(|l| dice_loss(l, &target, 1.0), &logits);
        let mut moved = logits.clone();
        let fg = 20 + pixel;
        if masks[0].data()[pixel] == 1 {
            moved.data_mut()[fg] += delta;
        } else {
            moved.data_mut()[fg] -= delta;
        }
        let after = eval_loss(|l| dice_loss(l, &target, 1.0), &moved);
        prop_assert!(after < before, "{} !< {}", after, before);
    }
}

#[test]
fn sgd_matches_geometric_decay() {
    let (a, lr, w0) = (3.0, 0.05, 2.0);
    let mut store = ParamStore::<f64>::new();
    let id = store.insert("w", Tensor::from_f64([1], &[w0]).unwrap()).unwrap();
    let cfg = OptimConfig { algorithm: Algorithm::Sgd, lr, momentum: 0.0, weight_decay: 0.0, clip_norm: 0.0, ..Default::default() };
    let mut state = OptimState::default();
    for t in 1..=30 {
        let w = store.get(id).data()[0];
        state.apply(&cfg, &mut store, &[Some(Tensor::from_f64([1], &[a * w]).unwrap())]).unwrap();
        let want = w0 * (1.0 - lr * a).powi(t);
        assert!((store.get(id).data()[0] - want).abs() < 1e-12);
    }
}

#[test]
fn clipping_and_norm() {
    let g = vec![Some(Tensor::from_f64([2], &[30.0, 40.0]).unwrap()), None];
    assert_eq!(global_norm(&g), 50.0);
    let mut store = ParamStore::<f64>::new();
    store.insert("a", Tensor::zeros(vec![2])).unwrap();
    store.insert("b", Tensor::zeros(vec![1])).unwrap();
    let cfg = OptimConfig { algorithm: Algorithm::Sgd, lr: 1.0, momentum: 0.0, weight_decay: 0.0, ..Default::default() };
    OptimState::default().apply(&cfg, &mut store, &g).unwrap();
    let p = store.get(store.id_of("a").unwrap()).data().to_vec();
    assert!((p[0] + 12.0 * 0.6).abs() < 1e-12 && (p[1] + 12.0 * 0.8).abs() < 1e-12);
}

fn tiny_samples(count: usize, size: usize, seed: u64) -> Vec<stenoseg::data::Sample> {
    synth::samples(&SynthConfig::new(count, size, seed))
}

#[test]
fn zero_learning_rate_leaves_parameters_bitwise() {
    let samples = tiny_samples(2, 16, 1);
    let mut model = Model::<f32>::build(&ModelSpec::tiny(Variant::UMambaBot), 0).unwrap();
    let before = model.params.clone();
    let mut state = TrainState::new(0);
    let batch = Batch::from_samples(&samples).unwrap();
    let cfg = OptimConfig { lr: 0.0, ..Default::default() };
    let loss = train_step(&mut model, &mut state, &batch, &cfg, &LossConfig::default()).unwrap();
    assert!(loss.is_finite());
    for id in before.ids() {
        let (a, b) = (before.get(id).data(), model.params.get(id).data());
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(state.step, 1);
}

#[test]
fn non_finite_input_is_reported() {
    let mut samples = tiny_samples(1, 16, 2);
    samples[0].image.data_mut()[5] = f32::NAN;
    let mut model = Model::<f32>::build(&ModelSpec::tiny(Variant::UMambaBot), 0).unwrap();
    let batch = Batch::from_samples(&samples).unwrap();
    let err = train_step(&mut model, &mut TrainState::new(0), &batch, &OptimConfig::default(), &LossConfig::default());
    assert!(matches!(err, Err(Error::NonFiniteLoss { .. })), "{err:?}");
}

fn run_config(out: &Path, steps: u64) -> RunConfig {
    let text = format!(
        "model.variant = umamba_bot\ndata.size = 16\ndata.overfit = true\ntrain.steps = {steps}\n\
         train.batch_size = 2\ntrain.seed = 4\ntrain.eval_every = 1\nout.dir = {}\n",
        out.display()
    );
    RunConfig::parse(&text).unwrap()
}

#[test]
fn seeded_runs_are_identical() {
    let samples = tiny_samples(4, 16, 3);
    let dir = tempfile::tempdir().unwrap();
    let a = run_training(&run_config(&dir.path().join("a"), 6), &samples, false).unwrap();
    let b = run_training(&run_config(&dir.path().join("b"), 6), &samples, false).unwrap();
    assert_eq!(a[0].losses, b[0].losses);
    assert_eq!(a[0].losses.len(), 6);
    let read = |d: &str, f: &str| std::fs::read(dir.path().join(d).join("fold-0").join(f)).unwrap();
    assert_eq!(read("a", "losses.csv"), read("b", "losses.csv"));
    // the embedded config differs only in out.dir
    let ck = |d: &str| load_checkpoint::<f32>(&dir.path().join(d).join("fold-0").join("last.ckpt")).unwrap();
    let (ca, cb) = (ck("a"), ck("b"));
    assert_eq!(ca.params, cb.params);
    assert_eq!(ca.state, cb.state);
}

#[test]
fn resume_continues_trajectory() {
    let samples = tiny_samples(3, 16, 5);
    let dir = tempfile::tempdir().unwrap();
    let straight = run_training(&run_config(&dir.path().join("s"), 7), &samples, false).unwrap();
    let out = dir.path().join("r");
    run_training(&run_config(&out, 3), &samples, false).unwrap();
    let resumed = run_training(&run_config(&out, 7), &samples, true).unwrap();
    // epochs of 2 batches: the first run stopped mid-epoch at step 3
    assert_eq!(resumed[0].losses[..], straight[0].losses[3..]);
    let read = |d: &str| std::fs::read(dir.path().join(d).join("fold-0").join("losses.csv")).unwrap();
    assert_eq!(read("s"), read("r"));
    let (a, b) = (load_checkpoint::<f32>(&dir.path().join("s/fold-0/last.ckpt")).unwrap(), load_checkpoint::<f32>(&out.join("fold-0/last.ckpt")).unwrap());
    assert_eq!(a.params, b.params);
    assert_eq!(a.state.optim, b.state.optim);
}

#[test]
fn resume_rejects_changed_config() {
    let samples = tiny_samples(2, 16, 6);
    let dir = tempfile::tempdir().unwrap();
    run_training(&run_config(dir.path(), 2), &samples, false).unwrap();
    let mut cfg = run_config(dir.path(), 4);
    cfg.set("optim.lr", "0.5").unwrap();
    assert!(matches!(run_training(&cfg, &samples, true), Err(Error::Config { .. })));
}

#[test]
fn checkpoint_round_trip() {
    let model = Model::<f32>::build(&ModelSpec::tiny(Variant::LightMUNet), 7).unwrap();
    let mut state = TrainState::<f32>::new(8);
    state.step = 11;
    state.epoch = 3;
    state.best_f1 = Some(0.25);
    state.stats.record(0.5);
    state.next_batch(5, 2);
    state.optim.t = 11;
    state.optim.first = model.params.ids().map(|id| model.params.get(id).map(|v| v * 0.5)).collect();
    state.optim.second = model.params.ids().map(|id| model.params.get(id).map(|v| v * v)).collect();
    let bytes = encode_checkpoint("a = 1\n", &model.params, &state).unwrap();
    let ck = decode_checkpoint::<f32>(&bytes).unwrap();
    assert_eq!(ck.state, state);
    assert_eq!(ck.config, "a = 1\n");
    assert_eq!(encode_checkpoint(&ck.config, &model.params, &ck.state).unwrap(), bytes);
    let mut other = Model::<f32>::build(&ModelSpec::tiny(Variant::LightMUNet), 99).unwrap();
    ck.restore_params(&mut other.params).unwrap();
    assert!(model.params.ids().all(|id| model.params.get(id) == other.params.get(id)));

    let mut wrong = Model::<f32>::build(&ModelSpec::tiny(Variant::UMambaBot), 0).unwrap();
    assert!(matches!(ck.restore_params(&mut wrong.params), Err(Error::CheckpointMismatch(_))));

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint::<f32>(&bad), Err(Error::Version { .. })));
    assert!(matches!(decode_checkpoint::<f32>(&bytes[..bytes.len() / 2]), Err(Error::Format(_))));
}
