//! End-to-end training of a small transformer block through the public API.

use gsd_netkit::layers::{init_attention, init_layernorm, init_linear, init_mlp};
use gsd_netkit::{attach_lora, merge_lora, AdamW, AdamWConfig, AttnLayout, Layers, Lora, LoraConfig, ParamStore, Tape, Tensor};

const TOKENS: usize = 6;
const DIM: usize = 8;

fn block(seed: u64) -> ParamStore<f64> {
    let mut s = ParamStore::new("block", seed);
    init_linear(&mut s, "inp", 3, DIM, false).unwrap();
    init_attention(&mut s, "attn", DIM, None).unwrap();
    init_mlp(&mut s, "mlp", DIM).unwrap();
    init_layernorm(&mut s, "ln", DIM).unwrap();
    init_linear(&mut s, "out", DIM, 2, false).unwrap();
    s
}

fn input() -> Tensor<f64> {
    Tensor::from_vec(TOKENS, 3, (0..TOKENS * 3).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect()).unwrap()
}

fn target() -> Vec<f64> {
    (0..TOKENS * 2).map(|i| (i as f64 * 0.4).cos() * 0.5).collect()
}

/// Mean squared error of the block output and its gradient for the tape.
fn step_loss<T: gsd_netkit::Scalar>(net: Layers<'_, T>, store: &ParamStore<T>, x: &Tensor<T>, y: &[f64]) -> (f64, std::collections::BTreeMap<String, Tensor<T>>) {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let h = net.linear(&mut tape, "inp", xv).unwrap();
    let h = net.attention_block(&mut tape, "attn", h, None, AttnLayout::global(2)).unwrap();
    let h = net.mlp_block(&mut tape, "mlp", h).unwrap();
    let h = net.layernorm(&mut tape, "ln", h).unwrap();
    let out = net.linear(&mut tape, "out", h).unwrap();
    let pred = tape.value(out).clone();
    let n = y.len() as f64;
    let mut loss = 0.0;
    let mut seed = Tensor::zeros(pred.rows, pred.cols);
    for (i, (&p, &t)) in pred.data.iter().zip(y).enumerate() {
        let d = p.to_f64().unwrap() - t;
        loss += d * d / n;
        seed.data[i] = T::lit(2.0 * d / n);
    }
    let grads = tape.backward(&[(out, seed)]).unwrap();
    (loss, grads.for_store(&tape, store))
}

fn adam(lr: f64) -> AdamW<f64> {
    AdamW::new(AdamWConfig {
        lr,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    })
}

#[test]
fn regression_loss_drops_and_frozen_base_survives_adapter_training() {
    let (x, y) = (input(), target());
    let mut store = block(3);
    let mut opt = adam(1e-2);
    let (first, _) = step_loss(Layers::new(&store), &store, &x, &y);
    for _ in 0..200 {
        let (_, g) = step_loss(Layers::new(&store), &store, &x, &y);
        opt.step(&mut store, &g).unwrap();
    }
    let (trained, _) = step_loss(Layers::new(&store), &store, &x, &y);
    assert!(trained < first * 0.1, "{first} -> {trained}");

    let targets: Vec<String> = ["attn.q.w", "attn.k.w", "attn.v.w", "attn.o.w"].map(String::from).to_vec();
    let mut lora: Lora<f64> = attach_lora(&mut store, &targets, LoraConfig::default(), 9).unwrap();
    let before = store.checksum(true);
    let base = store.clone();
    let shifted: Vec<f64> = y.iter().map(|v| v + 0.1).collect();
    let mut opt = adam(5e-3);
    for _ in 0..30 {
        let (_, g) = step_loss(Layers::with_lora(&store, Some(&lora)), &lora.store, &x, &shifted);
        opt.step(&mut lora.store, &g).unwrap();
    }
    assert_eq!(store.checksum(true), before);
    for (name, p) in store.iter() {
        assert_eq!(p.value, base.tensor(name).unwrap().clone(), "{name}");
    }
    let (adapted, _) = step_loss(Layers::with_lora(&store, Some(&lora)), &store, &x, &shifted);
    let merged = merge_lora(&store, &lora).unwrap();
    let (folded, _) = step_loss(Layers::new(&merged), &merged, &x, &shifted);
    assert!((adapted - folded).abs() < 1e-12, "{adapted} vs {folded}");
}

#[test]
fn checkpoint_reload_reproduces_outputs_at_single_precision() {
    let dir = tempfile::tempdir().unwrap();
    let store: ParamStore<f32> = block(4).cast();
    let stem = dir.path().join("block");
    store.save(&stem).unwrap();
    let loaded = ParamStore::<f32>::load(&stem, 4).unwrap();
    loaded.check_compatible(&store).unwrap();
    let x = input().cast::<f32>();
    let y = target();
    let (a, ga) = step_loss(Layers::new(&store), &store, &x, &y);
    let (b, gb) = step_loss(Layers::new(&loaded), &loaded, &x, &y);
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(ga, gb);
}
