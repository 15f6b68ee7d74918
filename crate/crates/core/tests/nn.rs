use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use waypoint_flow::nn::layers::{init_attention, init_mlp, mlp, self_attention, AttentionConfig};
use waypoint_flow::nn::{Graph, ParamStore};
use waypoint_flow::{Error, Tensor, Tensor64};

fn randn(shape: &[usize], seed: u64) -> Tensor64 {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn rms(x: Vec<f64>) -> Vec<f64> {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::frozen(&store);
    let n = x.len();
    let v = g.constant(Tensor::new(vec![1, n], x).unwrap());
    let gain = g.constant(Tensor::full(&[n], 1.0));
    let y = g.rms_norm(v, Some(gain)).unwrap();
    g.value(y).data().to_vec()
}

#[test]
fn rms_norm_examples() {
    assert!(rms(vec![1.0; 4]).iter().all(|v| (v - 1.0).abs() < 1e-6));
    let y = rms(vec![3.0, 4.0]);
    assert!((y[0] - 0.84853).abs() < 1e-4 && (y[1] - 1.13137).abs() < 1e-4, "{y:?}");
    assert_eq!(rms(vec![0.0, 0.0]), vec![0.0, 0.0]);

    let store = ParamStore::<f64>::new();
    let mut g = Graph::frozen(&store);
    let x = g.constant(randn(&[5, 16], 1).scale(30.0));
    let y = g.rms_norm(x, None).unwrap();
    for row in g.value(y).data().chunks(16) {
        let r = (row.iter().map(|v| v * v).sum::<f64>() / 16.0).sqrt();
        assert!((r - 1.0).abs() < 1e-6);
    }
}

#[test]
fn rms_norm_gradient_matches_finite_differences() {
    let theta = randn(&[3], 2);
    let mut store = ParamStore::new();
    store.insert("x", theta.clone()).unwrap();
    let weights = [0.3, -1.2, 2.0];
    let loss = |x: &[f64]| {
        let r = (x.iter().map(|v| v * v).sum::<f64>() / 3.0 + 1e-6).sqrt();
        x.iter().zip(weights).map(|(v, w)| w * v / r).sum::<f64>()
    };
    let mut g = Graph::new(&store);
    let x = g.param("x").unwrap();
    let y = g.rms_norm(x, None).unwrap();
    let w = g.constant(Tensor::vector(weights.to_vec()));
    let y = g.mul(y, w).unwrap();
    let l = g.sum(y);
    let grads = g.backward(l).unwrap();
    let h = 1e-5;
    for i in 0..3 {
        let mut up = theta.data().to_vec();
        let mut down = up.clone();
        up[i] += h;
        down[i] -= h;
        let fd = (loss(&up) - loss(&down)) / (2.0 * h);
        let a = grads["x"].data()[i];
        assert!((a - fd).abs() <= 1e-6 * fd.abs().max(1.0), "{i}: {a} vs {fd}");
    }
}

fn attention_store(d: usize, seed: u64) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    init_attention(&mut store, "attn", d, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for (k, name) in names.iter().enumerate() {
        let shape = store.get(name).unwrap().shape().to_vec();
        store.set(name, randn(&shape, seed + 1 + k as u64).scale(0.4)).unwrap();
    }
    store
}

fn attend(store: &ParamStore<f64>, h: &Tensor64, heads: usize) -> Tensor64 {
    let cfg = AttentionConfig {
        hidden_dim: h.shape()[1],
        heads,
        depth: 1,
    };
    let mut g = Graph::frozen(store);
    let x = g.constant(h.clone());
    let y = self_attention(&mut g, x, "attn", &cfg).unwrap();
    g.value(y).clone()
}

fn rows(t: &Tensor64, order: &[usize]) -> Tensor64 {
    let d = t.shape()[1];
    let data = order.iter().flat_map(|&i| t.row(i).to_vec()).collect();
    Tensor::new(vec![order.len(), d], data).unwrap()
}

#[test]
fn attention_is_permutation_equivariant() {
    let store = attention_store(8, 10);
    let h = randn(&[5, 8], 11);
    let perm = [3, 0, 4, 1, 2];
    let a = rows(&attend(&store, &h, 2), &perm);
    let b = attend(&store, &rows(&h, &perm), 2);
    assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
}

#[test]
fn attention_degenerate_cases() {
    let store = attention_store(4, 20);
    // One token: the softmax weight is 1, so the output is out(v(h)).
    let h = randn(&[1, 4], 21);
    let y = attend(&store, &h, 2);
    let qkv = h.matmul(store.get("attn.qkv.weight").unwrap()).unwrap();
    let v: Vec<f64> = (0..4).map(|j| qkv.data()[8 + j] + store.get("attn.qkv.bias").unwrap().data()[8 + j]).collect();
    let out = Tensor::new(vec![1, 4], v).unwrap().matmul(store.get("attn.out.weight").unwrap()).unwrap();
    let expected = out.add(&store.get("attn.out.bias").unwrap().clone().reshape(&[1, 4]).unwrap()).unwrap();
    assert!(y.max_abs_diff(&expected).unwrap() < 1e-12);

    // Identical tokens give identical outputs.
    let same = Tensor::new(vec![3, 4], h.data().repeat(3)).unwrap();
    let y = attend(&store, &same, 2);
    assert!(y.row(0) == y.row(1) && y.row(1) == y.row(2));

    let cfg = AttentionConfig {
        hidden_dim: 6,
        heads: 2,
        depth: 1,
    };
    let mut g = Graph::frozen(&store);
    let x = g.constant(randn(&[2, 4], 22));
    assert!(matches!(self_attention(&mut g, x, "attn", &cfg), Err(Error::Dimension(_))));
}

#[test]
fn mlp_cases() {
    let mut store = ParamStore::<f64>::new();
    init_mlp(&mut store, "mlp", 2, 1, &mut ChaCha8Rng::seed_from_u64(30)).unwrap();
    let h = Tensor::new(vec![1, 2], vec![0.3, -0.2]).unwrap();
    let run = |store: &ParamStore<f64>| {
        let mut g = Graph::frozen(store);
        let x = g.constant(h.clone());
        let y = mlp(&mut g, x, "mlp").unwrap();
        g.value(y).clone()
    };
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for n in &names {
        let shape = store.get(n).unwrap().shape().to_vec();
        store.set(n, Tensor::zeros(&shape)).unwrap();
    }
    assert_eq!(run(&store).data(), &[0.0, 0.0]);

    // Hand-evaluated 2-wide instance with the tanh-form GELU.
    let w1 = [1.0, 0.5, -0.25, 2.0];
    let w2 = [0.5, -1.0, 1.5, 0.25];
    store.set("mlp.fc1.weight", Tensor::new(vec![2, 2], w1.to_vec()).unwrap()).unwrap();
    store.set("mlp.fc2.weight", Tensor::new(vec![2, 2], w2.to_vec()).unwrap()).unwrap();
    let gelu = |x: f64| 0.5 * x * (1.0 + (0.7978845608028654 * (x + 0.044715 * x.powi(3))).tanh());
    let a = [gelu(0.3 * w1[0] - 0.2 * w1[2]), gelu(0.3 * w1[1] - 0.2 * w1[3])];
    let expected = [a[0] * w2[0] + a[1] * w2[2], a[0] * w2[1] + a[1] * w2[3]];
    let y = run(&store);
    for (u, v) in y.data().iter().zip(expected) {
        assert!((u - v).abs() < 1e-12);
    }
    assert!(y.is_finite());
}
