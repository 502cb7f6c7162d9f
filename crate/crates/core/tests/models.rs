use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stenoseg::autodiff::Tape;
use stenoseg::blocks::BlockKind;
use stenoseg::gradcheck::{random, rel_err};
use stenoseg::models::*;
use stenoseg::nn::Conv2d;
use stenoseg::params::{Builder, Ctx, ParamStore};
use stenoseg::tensor::Tensor;

fn image(size: usize, seed: u64) -> Tensor<f64> {
    random(&[1, 1, size, size], 0.5, seed).map(|v| v + 0.5)
}

#[test]
fn placement_table() {
    let spec = ModelSpec { stage_channels: vec![8, 16], depths: vec![1, 1], ..ModelSpec::tiny(Variant::UMambaBot) };
    let m = Model::<f32>::build(&spec, 0).unwrap();
    assert!(m.net.encoder_kinds().iter().flatten().all(|&k| k == BlockKind::ResidualConv));
    assert!(m.net.bottleneck_kinds().contains(&BlockKind::UMambaBlock));
    assert!(m.net.decoder_kinds().iter().flatten().all(|&k| k == BlockKind::ResidualConv));

    let m = Model::<f32>::build(&ModelSpec::tiny(Variant::LightMUNet), 0).unwrap();
    assert_eq!(m.net.bottleneck_kinds(), vec![BlockKind::RvmLayer; 4]);

    let d = Model::<f32>::build(&ModelSpec::tiny(Variant::SwinUMambaD), 0).unwrap();
    assert!(d.net.decoder_kinds().iter().all(|s| s.contains(&BlockKind::Vss)));
    let s = Model::<f32>::build(&ModelSpec::tiny(Variant::SwinUMamba), 0).unwrap();
    assert!(!s.net.decoder_kinds().iter().flatten().any(|&k| k == BlockKind::Vss));

    for v in Variant::ALL {
        let m = Model::<f32>::build(&ModelSpec::tiny(v), 0).unwrap();
        let [enc, bot, dec] = placement(v);
        assert!(m.net.encoder_kinds().iter().flatten().all(|&k| k == enc), "{v}");
        assert!(m.net.bottleneck_kinds().iter().all(|&k| k == bot), "{v}");
        assert!(m.net.decoder_kinds().iter().flatten().all(|&k| k == dec), "{v}");
        assert_eq!(m.net.aux_heads.is_empty(), !v.forces_deep_supervision(), "{v}");
        let mut names = m.params.names().to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), m.params.len());
    }
}

#[test]
fn primary_and_auxiliary_shapes() {
    let m = Model::<f32>::build(&ModelSpec::tiny(Variant::SwinUMamba), 1).unwrap();
    let tape = Tape::inference();
    let ctx = Ctx::new(&tape, &m.params, false);
    let out = m.net.forward(&ctx, tape.constant(image(64, 2).cast())).unwrap();
    assert_eq!(out.logits.shape(), [1, 2, 64, 64]);
    let aux: Vec<_> = out.aux.iter().map(|a| a.shape()).collect();
    assert_eq!(aux, vec![vec![1, 2, 32, 32], vec![1, 2, 16, 16]]);
    let p = out.logits.softmax(1).unwrap().value();
    for i in 0..64 * 64 {
        assert!((p.data()[i] + p.data()[64 * 64 + i] - 1.0).abs() < 1e-6);
    }
}

#[test]
fn stage_extents_and_channels() {
    for v in Variant::ALL {
        let spec = ModelSpec { deep_supervision: true, ..ModelSpec::tiny(v) };
        let m = Model::<f64>::build(&spec, 3).unwrap();
        let tape = Tape::inference();
        let ctx = Ctx::new(&tape, &m.params, false);
        let x = tape.constant(image(16, 4));
        let mut h = m.net.stem.forward(&ctx, x).unwrap();
        for (i, stage) in m.net.encoder.iter().enumerate() {
            if let Some(down) = &stage.down {
                h = down.forward(&ctx, h).unwrap();
            }
            for b in &stage.blocks {
                h = b.forward(&ctx, h).unwrap();
            }
            assert_eq!(h.shape(), [1, spec.stage_channels[i], 16 >> i, 16 >> i], "{v} encoder {i}");
        }
        let out = m.net.forward(&ctx, tape.constant(image(16, 4))).unwrap();
        assert_eq!(out.logits.shape(), [1, 2, 16, 16]);
        for (k, a) in out.aux.iter().enumerate() {
            assert_eq!(a.shape(), [1, 2, 16 >> (k + 1), 16 >> (k + 1)], "{v} aux {k}");
        }
    }
}

#[test]
fn indivisible_input_is_rejected() {
    let m = Model::<f32>::build(&ModelSpec::tiny(Variant::UMambaBot), 0).unwrap();
    let tape = Tape::inference();
    let ctx = Ctx::new(&tape, &m.params, false);
    assert!(m.net.forward(&ctx, tape.constant(Tensor::zeros(vec![1, 1, 18, 18]))).is_err());
}

fn summed_logits(m: &Model<f64>, store: &ParamStore<f64>, x: &Tensor<f64>) -> f64 {
    let tape = Tape::inference();
    let ctx = Ctx::new(&tape, store, false);
    m.net.forward(&ctx, tape.constant(x.clone())).unwrap().logits.sum().unwrap().value().item()
}

#[test]
fn parameter_slice_gradient() {
    let h = 1e-5;
    for v in Variant::ALL {
        let m = Model::<f64>::build(&ModelSpec::tiny(v), 5).unwrap();
        let x = image(8, 6);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &m.params, true);
        let loss = m.net.forward(&ctx, tape.constant(x.clone())).unwrap().logits.sum().unwrap();
        let grads = ctx.param_grads(tape.backward(loss).unwrap());
        let ids: Vec<_> = m.params.ids().collect();
        let mut worst: f64 = 0.0;
        for id in ids.iter().step_by(ids.len() / 6).copied() {
            let g = grads[id.0].clone().unwrap_or_else(|| Tensor::zeros(m.params.shape(id).to_vec()));
            let n = g.len();
            for i in (0..n).step_by(n.div_ceil(3)) {
                let mut store = m.params.clone();
                let orig = store.get(id).data()[i];
                store.get_mut(id).data_mut()[i] = orig + h;
                let up = summed_logits(&m, &store, &x);
                store.get_mut(id).data_mut()[i] = orig - h;
                let down = summed_logits(&m, &store, &x);
                worst = worst.max(rel_err(g.data()[i], (up - down) / (2.0 * h)));
            }
        }
        assert!(worst < 1e-4, "{v}: {worst:e}");
    }
}

#[test]
fn single_conv_count() {
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Conv2d::same(&mut Builder::new(&mut store, &mut rng), 1, 8, 3).unwrap();
    assert_eq!(store.count(), 80);
}

#[test]
fn tiny_umamba_bot_closed_form_count() {
    let conv = |i: usize, o: usize, k: usize| o * i * k * k + o;
    let norm = |c: usize| 2 * c;
    let residual = |c: usize| 2 * norm(c) + 2 * conv(c, c, 3);
    let (expand, state) = (2, 4);
    let mamba = |c: usize| {
        let e = expand * c;
        let ssm = e * state + e + e * e + e + 2 * e * state;
        norm(c) + c * 2 * e + (e * 4 + e) + ssm + e * c
    };
    let umamba = |c: usize| 2 * residual(c) + mamba(c);
    let want = conv(1, 8, 3)
        + residual(8)
        + conv(8, 16, 3)
        + residual(16)
        + conv(16, 32, 3)
        + residual(32)
        + umamba(32)
        + (conv(64, 32, 1) + residual(32))
        + (conv(32, 16, 1) + conv(32, 16, 1) + residual(16))
        + (conv(16, 8, 1) + conv(16, 8, 1) + residual(8))
        + conv(8, 2, 1);
    let spec = ModelSpec::tiny(Variant::UMambaBot);
    assert_eq!(count_params(&spec).unwrap(), want);
    assert_eq!(Model::<f32>::build(&spec, 0).unwrap().count_params(), want);
}

#[test]
fn lightm_full_preset_near_five_million() {
    let n = count_params(&ModelSpec::full(Variant::LightMUNet)).unwrap() as f64;
    assert!((n - 5e6).abs() <= 0.2 * 5e6, "{n}");
}

#[test]
fn seeded_build_is_deterministic() {
    let spec = ModelSpec::tiny(Variant::SwinUNetR);
    let a = Model::<f64>::build(&spec, 9).unwrap();
    let b = Model::<f64>::build(&spec, 9).unwrap();
    let c = Model::<f64>::build(&spec, 10).unwrap();
    let x = image(16, 7);
    assert_eq!(summed_logits(&a, &a.params, &x).to_bits(), summed_logits(&b, &b.params, &x).to_bits());
    assert!(a.params.ids().any(|id| a.params.get(id) != c.params.get(id)));
}
