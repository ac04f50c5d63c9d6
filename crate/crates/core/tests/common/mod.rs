//! Shared test oracles. Everything here is written independently of the
//! library's engine, in plain f64 loops.

#![allow(dead_code)]

use dgst_core::neural::ParamStore;
use dgst_core::Sentence;

const BOS: u32 = 1;
const EOS: u32 = 2;

/// f64 copy of a parameter store, addressable by name.
pub struct Weights {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub dims: Vec<Vec<usize>>,
}

impl Weights {
    pub fn from_store(store: &ParamStore) -> Weights {
        let mut w = Weights {
            names: Vec::new(),
            values: Vec::new(),
            dims: Vec::new(),
        };
        for id in store.ids() {
            w.names.push(store.name(id).to_string());
            w.values.push(store.value(id).data().iter().map(|&x| x as f64).collect());
            w.dims.push(store.value(id).dims().to_vec());
        }
        w
    }

    pub fn get(&self, name: &str) -> &[f64] {
        let i = self.names.iter().position(|n| n == name).unwrap_or_else(|| panic!("no tensor {name}"));
        &self.values[i]
    }

    pub fn shape(&self, name: &str) -> &[usize] {
        let i = self.names.iter().position(|n| n == name).unwrap();
        &self.dims[i]
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `[x | h] · W + b`, then the i, f, g, o gate nonlinearities.
fn lstm(w: &[f64], b: &[f64], x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hid = h.len();
    let xh: Vec<f64> = x.iter().chain(h).copied().collect();
    let mut gates = b.to_vec();
    for (r, &v) in xh.iter().enumerate() {
        for (k, g) in gates.iter_mut().enumerate() {
            *g += v * w[r * 4 * hid + k];
        }
    }
    let mut hn = vec![0.0; hid];
    let mut cn = vec![0.0; hid];
    for j in 0..hid {
        let i = sigmoid(gates[j]);
        let f = sigmoid(gates[hid + j]);
        let g = gates[2 * hid + j].tanh();
        let o = sigmoid(gates[3 * hid + j]);
        cn[j] = f * c[j] + i * g;
        hn[j] = o * cn[j].tanh();
    }
    (hn, cn)
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let out = b.len();
    let mut y = b.to_vec();
    for (r, &v) in x.iter().enumerate() {
        for (k, y) in y.iter_mut().enumerate() {
            *y += v * w[r * out + k];
        }
    }
    y
}

/// Teacher-forced loss of one (input, target) pair: summed negative log
/// likelihood and the number of predicted tokens.
fn pair_nll(w: &Weights, p: &str, layers: usize, input: &[u32], target: &[u32]) -> (f64, usize) {
    let emb = w.get(&format!("{p}embedding"));
    let e = w.shape(&format!("{p}embedding"))[1];
    let v = w.shape(&format!("{p}out.w"))[1];
    let h_dim = w.shape(&format!("{p}out.w"))[0];
    let embed = |id: u32| emb[id as usize * e..(id as usize + 1) * e].to_vec();

    let mut seq: Vec<Vec<f64>> = input.iter().map(|&t| embed(t)).collect();
    let mut init_h = Vec::new();
    let mut init_c = Vec::new();
    for l in 0..layers {
        let run = |dir: &str, order: Vec<usize>| {
            let wt = w.get(&format!("{p}enc.{l}.{dir}.w"));
            let bt = w.get(&format!("{p}enc.{l}.{dir}.b"));
            let (mut h, mut c) = (vec![0.0; h_dim], vec![0.0; h_dim]);
            let mut outs = vec![Vec::new(); seq.len()];
            for t in order {
                let (hn, cn) = lstm(wt, bt, &seq[t], &h, &c);
                h = hn;
                c = cn;
                outs[t] = h.clone();
            }
            (h, c, outs)
        };
        let (hf, cf, of) = run("fwd", (0..seq.len()).collect());
        let (hb, cb, ob) = run("bwd", (0..seq.len()).rev().collect());
        let hcat: Vec<f64> = hf.iter().chain(&hb).copied().collect();
        let ccat: Vec<f64> = cf.iter().chain(&cb).copied().collect();
        let bridge = |part: &str, x: &[f64]| {
            affine(
                w.get(&format!("{p}bridge.{l}.{part}.w")),
                w.get(&format!("{p}bridge.{l}.{part}.b")),
                x,
            )
            .into_iter()
            .map(f64::tanh)
            .collect::<Vec<f64>>()
        };
        init_h.push(bridge("h", &hcat));
        init_c.push(bridge("c", &ccat));
        seq = of.iter().zip(&ob).map(|(a, b)| a.iter().chain(b).copied().collect()).collect();
    }

    let (mut h, mut c) = (init_h, init_c);
    let feed: Vec<u32> = std::iter::once(BOS).chain(target.iter().copied()).collect();
    let gold: Vec<u32> = target.iter().copied().chain(std::iter::once(EOS)).collect();
    let mut nll = 0.0;
    for (x_id, y_id) in feed.iter().zip(&gold) {
        let mut x = embed(*x_id);
        for l in 0..layers {
            let (hn, cn) = lstm(
                w.get(&format!("{p}dec.{l}.w")),
                w.get(&format!("{p}dec.{l}.b")),
                &x,
                &h[l],
                &c[l],
            );
            h[l] = hn.clone();
            c[l] = cn;
            x = hn;
        }
        let logits = affine(w.get(&format!("{p}out.w")), w.get(&format!("{p}out.b")), &x);
        assert_eq!(logits.len(), v);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        nll += z.ln() + max - logits[*y_id as usize];
    }
    (nll, gold.len())
}

/// Mean per-token cross-entropy over a batch, the quantity the library's
/// teacher-forced loss computes.
pub fn reference_loss(w: &Weights, prefix: &str, layers: usize, inputs: &[Sentence], targets: &[Sentence]) -> f64 {
    let (mut total, mut count) = (0.0, 0);
    for (i, t) in inputs.iter().zip(targets) {
        let (nll, n) = pair_nll(w, prefix, layers, i.ids(), t.ids());
        total += nll;
        count += n;
    }
    total / count as f64
}

/// Central-difference derivative of `reference_loss` with respect to one
/// scalar of one named tensor.
pub fn numeric_grad(
    w: &mut Weights,
    name: &str,
    index: usize,
    eps: f64,
    loss: &dyn Fn(&Weights) -> f64,
) -> f64 {
    let i = w.names.iter().position(|n| n == name).unwrap();
    let orig = w.values[i][index];
    w.values[i][index] = orig + eps;
    let up = loss(w);
    w.values[i][index] = orig - eps;
    let down = loss(w);
    w.values[i][index] = orig;
    (up - down) / (2.0 * eps)
}

/// Relative error with an absolute floor so near-zero gradients are not
/// judged on noise alone.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-4)
}

/// Plain recursive Levenshtein distance, exponential time.
pub fn brute_edit_distance(a: &[u32], b: &[u32]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = brute_edit_distance(ra, rb) + usize::from(x != y);
            let del = brute_edit_distance(ra, b) + 1;
            let ins = brute_edit_distance(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}
