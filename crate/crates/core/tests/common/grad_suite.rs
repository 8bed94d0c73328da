//! Finite-difference checks for every layer type and the full network.
//! Each check builds one random instance from `seed`.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pathloss_lab::ci::CiModel;
use pathloss_lab::model::{HybridNet, ModelConfig, ModelVariant, PreparedInput};
use pathloss_lab::nn::{ConvEncoder, ConvEncoderConfig, GradSet, Mhsa, Mlp, ParamStore, Tape, Tensor, Var};
use pathloss_lab::train::batch_gradients;

use super::{check_store, check_vector, FdReport};

pub type Check = fn(u64) -> Result<FdReport, String>;

/// Layer name and check, in reporting order.
pub const SUITE: &[(&str, Check)] = &[
    ("conv block", conv_block),
    ("conv encoder", conv_encoder),
    ("pooling", pooling),
    ("mlp", mlp),
    ("mhsa", mhsa),
    ("heads", heads),
    ("combination", combination),
    ("rmse loss", rmse_loss),
    ("full model", full_model),
];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Re-draws every parameter so biases are non-zero too.
fn jitter(store: &mut ParamStore<f64>, rng: &mut impl Rng, scale: f64) {
    for p in store.iter_mut() {
        p.value.data.iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
    }
}

type Module<'a> = &'a dyn Fn(&mut Tape<'_, f64>, Var) -> Var;

/// Records `sum(r * f(x))` for a fixed random `r`.
fn module_loss<'s>(store: &'s ParamStore<f64>, x: &Tensor<f64>, r_seed: u64, f: Module<'_>) -> (Tape<'s, f64>, Var, Var) {
    let mut tape = Tape::new(store);
    let xv = tape.input(x.clone());
    let y = f(&mut tape, xv);
    let n = tape.value(y).len();
    let r = Tensor::new(tape.shape(y), uniform(&mut rng(r_seed), n, 1.0)).unwrap();
    let rv = tape.constant(r);
    let prod = tape.mul(y, rv).unwrap();
    let l = tape.sum_all(prod);
    (tape, xv, l)
}

/// Checks `sum(r * f(x))` with respect to the parameters and to `x`.
fn check_module(store: &mut ParamStore<f64>, x: Tensor<f64>, r_seed: u64, f: Module<'_>) -> Result<FdReport, String> {
    let (gx, gp) = {
        let (tape, xv, l) = module_loss(store, &x, r_seed, f);
        let grads = tape.backward(l).map_err(|e| e.to_string())?;
        (grads.wrt(xv).ok_or("no input gradient")?.data.clone(), grads.to_grad_set(store))
    };
    let mut rep = check_store(store, &gp, &mut |s| {
        let (t, _, l) = module_loss(s, &x, r_seed, f);
        (t.value(l).item(), t.relu_signature())
    })?;
    let frozen: &ParamStore<f64> = store;
    let mut xs = x.data.clone();
    rep.add(check_vector(
        &mut xs,
        &gx,
        &mut |v| {
            let (t, _, l) = module_loss(frozen, &Tensor::new(&x.shape, v.to_vec()).unwrap(), r_seed, f);
            (t.value(l).item(), t.relu_signature())
        },
        "input",
    )?);
    Ok(rep)
}

pub fn conv_block(seed: u64) -> Result<FdReport, String> {
    let mut r = rng(seed);
    let (c, o) = (r.gen_range(1..=3), r.gen_range(1..=4));
    let (h, w) = (r.gen_range(3..=7), r.gen_range(3..=7));
    let (stride, pad) = (r.gen_range(1..=2), r.gen_range(0..=1));
    let mut store = ParamStore::new();
    let wid = store.add("w", Tensor::new(&[o, c, 3, 3], uniform(&mut r, o * c * 9, 0.5)).unwrap());
    let bid = store.add("b", Tensor::new(&[o], uniform(&mut r, o, 0.5)).unwrap());
    let x = Tensor::new(&[c, h, w], uniform(&mut r, c * h * w, 1.0)).unwrap();
    check_module(&mut store, x, seed ^ 0xa5, &|t, x| {
        let (wv, bv) = (t.param(wid), t.param(bid));
        let y = t.conv2d(x, wv, bv, stride, pad).unwrap();
        t.relu(y)
    })
}

pub fn conv_encoder(seed: u64) -> Result<FdReport, String> {
    let mut r = rng(seed);
    let c = r.gen_range(1..=3);
    let cfg = ConvEncoderConfig { in_channels: c, channels: vec![r.gen_range(2..=3), r.gen_range(2..=3)], out_dim: 4 };
    let mut store = ParamStore::new();
    let enc = ConvEncoder::new(&mut store, &mut r, "enc", cfg);
    jitter(&mut store, &mut r, 0.5);
    let (h, w) = (r.gen_range(4..=8), r.gen_range(4..=8));
    let x = Tensor::new(&[c, h, w], uniform(&mut r, c * h * w, 1.0)).unwrap();
    check_module(&mut store, x, seed ^ 0xa5, &|t, x| enc.forward(t, x).unwrap())
}

pub fn pooling(seed: u64) -> Result<FdReport, String> {
    let mut r = rng(seed);
    let (c, h, w) = (r.gen_range(1..=4), r.gen_range(1..=6), r.gen_range(1..=6));
    let mut store = ParamStore::new();
    let x = Tensor::new(&[c, h, w], uniform(&mut r, c * h * w, 1.0)).unwrap();
    check_module(&mut store, x, seed ^ 0xa5, &|t, x| t.global_avg_pool(x).unwrap())
}

pub fn mlp(seed: u64) -> Result<FdReport, String> {
    let mut r = rng(seed);
    let sizes = [r.gen_range(1..=6), r.gen_range(2..=8), r.gen_range(1..=5)];
    let mut store = ParamStore::new();
    let net = Mlp::new(&mut store, &mut r, "mlp", &sizes);
    jitter(&mut store, &mut r, 0.7);
    let m = r.gen_range(1..=3);
    let x = Tensor::new(&[m, sizes[0]], uniform(&mut r, m * sizes[0], 1.0)).unwrap();
    check_module(&mut store, x, seed ^ 0xa5, &|t, x| net.forward(t, x).unwrap())
}

pub fn mhsa(seed: u64) -> Result<FdReport, String> {
    let mut r = rng(seed);
    let heads = [1, 2, 4][r.gen_range(0..3)];
    let dim = heads * r.gen_range(1..=3);
    let mut store = ParamStore::new();
    let att = Mhsa::new(&mut store, &mut r, "att", dim, heads).map_err(|e| e.to_string())?;
    let t = r.gen_range(1..=4);
    let x = Tensor::new(&[t, dim], uniform(&mut r, t * dim, 1.0)).unwrap();
    check_module(&mut store, x, seed ^ 0xa5, &|tp, x| att.forward(tp, x).unwrap())
}

/// PLE head (with its output ReLU) and compensation head side by side.
pub fn heads(seed: u64) -> Result<FdReport, String> {
    let mut r = rng(seed);
    let d = r.gen_range(2..=8);
    let mut store = ParamStore::new();
    let ple = Mlp::new(&mut store, &mut r, "ple", &[d, 4, 1]);
    let comp = Mlp::new(&mut store, &mut r, "comp", &[d, 4, 1]);
    jitter(&mut store, &mut r, 0.7);
    let x = Tensor::new(&[1, d], uniform(&mut r, d, 1.0)).unwrap();
    check_module(&mut store, x, seed ^ 0xa5, &|t, x| {
        let p = ple.forward(t, x).unwrap();
        let p = t.relu(p);
        let c = comp.forward(t, x).unwrap();
        t.concat_cols(&[p, c]).unwrap()
    })
}

/// `pl = intercept + relu(n) * 10 log10(d / d0) + comp` over `[n, comp]`.
pub fn combination(seed: u64) -> Result<FdReport, String> {
    let mut r = rng(seed);
    let ci = CiModel::new(1.21e9, 1.0, r.gen_range(1.5..4.0)).unwrap();
    let d = r.gen_range(10.0..3000.0);
    let log_d = ci.log_distance(d).unwrap();
    let mut store = ParamStore::new();
    let x = Tensor::new(&[1, 2], vec![r.gen_range(0.5..5.0), r.gen_range(-10.0..10.0)]).unwrap();
    check_module(&mut store, x, seed ^ 0xa5, &|t, x| {
        let n = t.slice_cols(x, 0, 1).unwrap();
        let n = t.relu(n);
        let comp = t.slice_cols(x, 1, 1).unwrap();
        let trend = t.scale(n, log_d);
        let trend = t.add_scalar(trend, ci.intercept_db());
        t.add(trend, comp).unwrap()
    })
}

pub fn rmse_loss(seed: u64) -> Result<FdReport, String> {
    let mut r = rng(seed);
    let n = r.gen_range(1..=9);
    let target = Tensor::new(&[n, 1], uniform(&mut r, n, 20.0)).unwrap();
    let pred = uniform(&mut r, n, 20.0);
    let store = ParamStore::<f64>::new();
    let loss = |p: &[f64]| {
        let mut tape = Tape::new(&store);
        let pv = tape.input(Tensor::new(&[n, 1], p.to_vec()).unwrap());
        let tv = tape.constant(target.clone());
        let l = tape.rmse(pv, tv).unwrap();
        (tape, pv, l)
    };
    let (tape, pv, l) = loss(&pred);
    let g = tape.backward(l).map_err(|e| e.to_string())?.wrt(pv).ok_or("no gradient")?.data.clone();
    let mut p = pred.clone();
    check_vector(&mut p, &g, &mut |v| {
        let (t, _, l) = loss(v);
        (t.value(l).item(), vec![])
    }, "pred")
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        conv_channels: vec![3, 4],
        model_dim: 8,
        heads: 2,
        system_hidden: 6,
        fusion_hidden: 6,
        fused_dim: 5,
        head_hidden: 4,
        head_init_scale: 1.0,
    }
}

/// Whole network on a random batch (the variant cycles with the seed),
/// using the training code's per-sample gradient path.
pub fn full_model(seed: u64) -> Result<FdReport, String> {
    let mut r = rng(seed);
    let ci = CiModel::new(1.21e9, 1.0, 3.0).unwrap();
    let variant = ModelVariant::ALL.iter().copied().filter(|v| v.is_trainable()).nth((seed % 3) as usize).unwrap();
    let mut store = ParamStore::<f64>::new();
    let net = HybridNet::new(&mut store, seed, variant, &tiny_config(), 4, &ci, 110.0).map_err(|e| e.to_string())?;
    let n = r.gen_range(2..=4);
    let inputs: Vec<PreparedInput> = (0..n)
        .map(|_| PreparedInput {
            image_shape: [4, 8, 8],
            image: (0..256).map(|_| r.gen_range(-1.0f32..1.0)).collect(),
            system: std::array::from_fn(|_| r.gen_range(0.0..1.0)),
            d3d_m: r.gen_range(50.0..2000.0),
        })
        .collect();
    let targets: Vec<f64> = inputs.iter().map(|i| ci.predict(i.d3d_m).unwrap() + r.gen_range(-8.0..8.0)).collect();
    let refs: Vec<&PreparedInput> = inputs.iter().collect();
    let (_, _, grads) = batch_gradients(&net, &store, &refs, &targets).map_err(|e| e.to_string())?;
    let grads: GradSet<f64> = grads.ok_or("non-finite loss")?;
    check_store(&mut store, &grads, &mut |s| {
        let mut sig = Vec::new();
        let mut preds = Vec::new();
        for inp in &inputs {
            let mut tape = Tape::new(s);
            let image = tape.constant(Tensor::from_f32(&inp.image_shape, &inp.image).unwrap());
            let sys = tape.constant(Tensor::from_f64(&[1, 6], &inp.system).unwrap());
            let pl = net.forward(&mut tape, image, sys, inp.d3d_m).unwrap().pl;
            preds.push(tape.value(pl).item());
            sig.extend(tape.relu_signature());
        }
        let mse = preds.iter().zip(&targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n as f64;
        (mse.sqrt(), sig)
    })
}

/// Runs `instances` seeds of one check; fails if too many coordinates sat
/// on a ReLU kink to be checked.
pub fn run(check: Check, instances: u64) -> Result<FdReport, String> {
    let mut total = FdReport::default();
    for i in 0..instances {
        let rep = check(1000 + i).map_err(|e| format!("instance {i}: {e}"))?;
        total.add(rep);
    }
    if total.checked == 0 || total.skipped * 10 > total.checked + total.skipped {
        return Err(format!("only {} of {} coordinates checkable", total.checked, total.checked + total.skipped));
    }
    Ok(total)
}
