//! One style transferrer: a stacked bidirectional LSTM encoder whose final
//! states are bridged into a stacked unidirectional LSTM decoder.

use rand::Rng;

use crate::corpus::{Sentence, Vocab, BOS, EOS, PAD, UNK};
use crate::error::{Error, Result};
use crate::neural::{Graph, LstmWeights, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransferrerDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl TransferrerDims {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 5 || self.embed == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config(format!("invalid transferrer dimensions {self:?}")));
        }
        Ok(())
    }
}

/// Greedy decoding limits: an output may be at most `len(input) + max_len_extra` tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenerationConfig {
    pub max_len_extra: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig { max_len_extra: 5 }
    }
}

impl GenerationConfig {
    pub fn max_len(&self, input_len: usize) -> usize {
        (input_len + self.max_len_extra).max(1)
    }
}

#[derive(Clone, Copy, Debug)]
struct CellIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct BridgeIds {
    hw: ParamId,
    hb: ParamId,
    cw: ParamId,
    cb: ParamId,
}

#[derive(Clone, Debug)]
struct Layout {
    embedding: ParamId,
    enc_fwd: Vec<CellIds>,
    enc_bwd: Vec<CellIds>,
    dec: Vec<CellIds>,
    bridge: Vec<BridgeIds>,
    out_w: ParamId,
    out_b: ParamId,
}

/// Initial decoder state, one `[B × H]` pair per layer.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Transferrer {
    prefix: String,
    dims: TransferrerDims,
    store: ParamStore,
    layout: Layout,
}

fn names(prefix: &str, dims: &TransferrerDims) -> Vec<String> {
    let mut n = vec![format!("{prefix}embedding")];
    for l in 0..dims.layers {
        for dir in ["fwd", "bwd"] {
            n.push(format!("{prefix}enc.{l}.{dir}.w"));
            n.push(format!("{prefix}enc.{l}.{dir}.b"));
        }
    }
    for l in 0..dims.layers {
        n.push(format!("{prefix}dec.{l}.w"));
        n.push(format!("{prefix}dec.{l}.b"));
    }
    for l in 0..dims.layers {
        for part in ["h", "c"] {
            n.push(format!("{prefix}bridge.{l}.{part}.w"));
            n.push(format!("{prefix}bridge.{l}.{part}.b"));
        }
    }
    n.push(format!("{prefix}out.w"));
    n.push(format!("{prefix}out.b"));
    n
}

impl Transferrer {
    /// Randomly initialized transferrer with parameter names under `prefix`.
    pub fn new<R: Rng>(prefix: &str, dims: TransferrerDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let (v, e, h) = (dims.vocab, dims.embed, dims.hidden);
        let mut store = ParamStore::new();
        let lstm_scale = 1.0 / (h as f32).sqrt();
        let cell = |store: &mut ParamStore, name: &str, input: usize, rng: &mut R| -> Result<()> {
            store.add_uniform(format!("{name}.w"), &[input + h, 4 * h], lstm_scale, rng)?;
            // Forget-gate bias starts at 1.
            let mut b = vec![0.0; 4 * h];
            b[h..2 * h].iter_mut().for_each(|x| *x = 1.0);
            store.add(format!("{name}.b"), Tensor::from_vec(&[4 * h], b)?)?;
            Ok(())
        };
        store.add_normal(format!("{prefix}embedding"), &[v, e], 1.0, rng)?;
        for l in 0..dims.layers {
            let input = if l == 0 { e } else { 2 * h };
            cell(&mut store, &format!("{prefix}enc.{l}.fwd"), input, rng)?;
            cell(&mut store, &format!("{prefix}enc.{l}.bwd"), input, rng)?;
        }
        for l in 0..dims.layers {
            let input = if l == 0 { e } else { h };
            cell(&mut store, &format!("{prefix}dec.{l}"), input, rng)?;
        }
        let bridge_scale = 1.0 / (2.0 * h as f32).sqrt();
        for l in 0..dims.layers {
            for part in ["h", "c"] {
                store.add_uniform(format!("{prefix}bridge.{l}.{part}.w"), &[2 * h, h], bridge_scale, rng)?;
                store.add(format!("{prefix}bridge.{l}.{part}.b"), Tensor::zeros(&[h]))?;
            }
        }
        store.add_uniform(format!("{prefix}out.w"), &[h, v], lstm_scale, rng)?;
        store.add(format!("{prefix}out.b"), Tensor::zeros(&[v]))?;
        Self::from_store(prefix, store)
    }

    /// Wraps an existing store, inferring dimensions from tensor shapes.
    pub fn from_store(prefix: &str, store: ParamStore) -> Result<Self> {
        let missing = |n: String| Error::MissingTensor(n);
        let emb = store.id(&format!("{prefix}embedding")).ok_or_else(|| missing(format!("{prefix}embedding")))?;
        let out_w = store.id(&format!("{prefix}out.w")).ok_or_else(|| missing(format!("{prefix}out.w")))?;
        let (vocab, embed) = (store.value(emb).rows(), store.value(emb).cols());
        let hidden = store.value(out_w).rows();
        let layers = (0..)
            .take_while(|l| store.id(&format!("{prefix}enc.{l}.fwd.w")).is_some())
            .count();
        let dims = TransferrerDims {
            vocab,
            embed,
            hidden,
            layers,
        };
        dims.validate()?;
        let expected = names(prefix, &dims);
        if let Some(extra) = store
            .names()
            .iter()
            .find(|n| !expected.contains(n))
        {
            return Err(Error::UnexpectedTensor(extra.clone()));
        }
        let get = |n: String| store.id(&n).ok_or(Error::MissingTensor(n));
        let cell = |n: String| -> Result<CellIds> {
            Ok(CellIds {
                w: get(format!("{n}.w"))?,
                b: get(format!("{n}.b"))?,
            })
        };
        let mut layout = Layout {
            embedding: emb,
            enc_fwd: Vec::new(),
            enc_bwd: Vec::new(),
            dec: Vec::new(),
            bridge: Vec::new(),
            out_w,
            out_b: get(format!("{prefix}out.b"))?,
        };
        for l in 0..layers {
            layout.enc_fwd.push(cell(format!("{prefix}enc.{l}.fwd"))?);
            layout.enc_bwd.push(cell(format!("{prefix}enc.{l}.bwd"))?);
            layout.dec.push(cell(format!("{prefix}dec.{l}"))?);
            layout.bridge.push(BridgeIds {
                hw: get(format!("{prefix}bridge.{l}.h.w"))?,
                hb: get(format!("{prefix}bridge.{l}.h.b"))?,
                cw: get(format!("{prefix}bridge.{l}.c.w"))?,
                cb: get(format!("{prefix}bridge.{l}.c.b"))?,
            });
        }
        let t = Transferrer {
            prefix: prefix.to_string(),
            dims,
            store,
            layout,
        };
        t.check_shapes()?;
        Ok(t)
    }

    fn check_shapes(&self) -> Result<()> {
        let d = self.dims;
        let h = d.hidden;
        let expect = |id: ParamId, dims: &[usize]| -> Result<()> {
            let actual = self.store.value(id).dims();
            if actual != dims {
                return Err(Error::Shape {
                    op: "transferrer layout",
                    left: actual.to_vec(),
                    right: dims.to_vec(),
                });
            }
            Ok(())
        };
        expect(self.layout.out_b, &[d.vocab])?;
        for l in 0..d.layers {
            let enc_in = if l == 0 { d.embed } else { 2 * h };
            let dec_in = if l == 0 { d.embed } else { h };
            for c in [self.layout.enc_fwd[l], self.layout.enc_bwd[l]] {
                expect(c.w, &[enc_in + h, 4 * h])?;
                expect(c.b, &[4 * h])?;
            }
            expect(self.layout.dec[l].w, &[dec_in + h, 4 * h])?;
            expect(self.layout.dec[l].b, &[4 * h])?;
            let br = self.layout.bridge[l];
            for (w, b) in [(br.hw, br.hb), (br.cw, br.cb)] {
                expect(w, &[2 * h, h])?;
                expect(b, &[h])?;
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> TransferrerDims {
        self.dims
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn into_store(self) -> ParamStore {
        self.store
    }

    fn cell(&self, g: &mut Graph, ids: CellIds) -> LstmWeights {
        LstmWeights {
            w: g.param(&self.store, ids.w),
            b: g.param(&self.store, ids.b),
        }
    }

    fn check_batch(&self, batch: &[Sentence]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        for s in batch {
            if s.is_empty() {
                return Err(Error::Invalid("cannot encode an empty sentence".into()));
            }
            if let Some(&id) = s.ids().iter().find(|&&id| id as usize >= self.dims.vocab) {
                return Err(Error::TokenId {
                    id,
                    size: self.dims.vocab,
                });
            }
        }
        Ok(())
    }

    /// Runs the encoder over a batch and returns the bridged initial
    /// decoder state. Padded steps leave a row's state untouched, so each
    /// direction ends on the sentence's own boundary token.
    pub fn encode(&self, g: &mut Graph, batch: &[Sentence]) -> Result<DecoderState> {
        self.check_batch(batch)?;
        let b = batch.len();
        let h = self.dims.hidden;
        let steps = batch.iter().map(Sentence::len).max().unwrap_or(0);
        let valid: Vec<Vec<bool>> = (0..steps)
            .map(|t| batch.iter().map(|s| t < s.len()).collect())
            .collect();
        let emb = g.param(&self.store, self.layout.embedding);
        let mut inputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let ids: Vec<u32> = batch.iter().map(|s| s.ids().get(t).copied().unwrap_or(PAD)).collect();
            inputs.push(g.embed(emb, &ids)?);
        }
        let zero = g.input(Tensor::zeros(&[b, h]))?;
        let mut state = DecoderState {
            h: Vec::new(),
            c: Vec::new(),
        };
        for l in 0..self.dims.layers {
            let fw = self.cell(g, self.layout.enc_fwd[l]);
            let bw = self.cell(g, self.layout.enc_bwd[l]);
            let run = |g: &mut Graph, order: &mut dyn Iterator<Item = usize>, w: LstmWeights, outs: &mut [Option<Var>]| -> Result<(Var, Var)> {
                let (mut hs, mut cs) = (zero, zero);
                for t in order {
                    let (hn, cn) = g.lstm_step(inputs[t], hs, cs, w)?;
                    if valid[t].iter().all(|&v| v) {
                        hs = hn;
                        cs = cn;
                    } else {
                        hs = g.blend(hn, hs, &valid[t])?;
                        cs = g.blend(cn, cs, &valid[t])?;
                    }
                    outs[t] = Some(hs);
                }
                Ok((hs, cs))
            };
            let mut fwd_out = vec![None; steps];
            let mut bwd_out = vec![None; steps];
            let (hf, cf) = run(g, &mut (0..steps), fw, &mut fwd_out)?;
            let (hb, cb) = run(g, &mut (0..steps).rev(), bw, &mut bwd_out)?;

            let br = self.layout.bridge[l];
            let hcat = g.concat_cols(&[hf, hb])?;
            let ccat = g.concat_cols(&[cf, cb])?;
            let (hw, hbias) = (g.param(&self.store, br.hw), g.param(&self.store, br.hb));
            let (cw, cbias) = (g.param(&self.store, br.cw), g.param(&self.store, br.cb));
            let h0 = g.linear(hcat, hw, Some(hbias))?;
            let c0 = g.linear(ccat, cw, Some(cbias))?;
            state.h.push(g.tanh(h0)?);
            state.c.push(g.tanh(c0)?);

            if l + 1 < self.dims.layers {
                for t in 0..steps {
                    let (f, bk) = (fwd_out[t].unwrap(), bwd_out[t].unwrap());
                    inputs[t] = g.concat_cols(&[f, bk])?;
                }
            }
        }
        Ok(state)
    }

    /// Final decoder states as `[L × B × H]` tensors `(h, c)`.
    pub fn encode_states(&self, batch: &[Sentence]) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let st = self.encode(&mut g, batch)?;
        let stack = |vars: &[Var]| -> Result<Tensor> {
            let mut data = Vec::new();
            for &v in vars {
                data.extend_from_slice(g.value(v).data());
            }
            Tensor::from_vec(&[self.dims.layers, batch.len(), self.dims.hidden], data)
        };
        Ok((stack(&st.h)?, stack(&st.c)?))
    }

    fn decoder_step(&self, g: &mut Graph, x: Var, h: &mut [Var], c: &mut [Var]) -> Result<Var> {
        let mut input = x;
        for l in 0..self.dims.layers {
            let w = self.cell(g, self.layout.dec[l]);
            let (hn, cn) = g.lstm_step(input, h[l], c[l], w)?;
            h[l] = hn;
            c[l] = cn;
            input = hn;
        }
        Ok(input)
    }

    /// Masked mean cross-entropy of predicting `target + EOS` from
    /// `BOS + target` given the encoding of `input`, recorded on `g`.
    pub fn teacher_forced_loss(&self, g: &mut Graph, inputs: &[Sentence], targets: &[Sentence]) -> Result<Var> {
        if inputs.len() != targets.len() {
            return Err(Error::Invalid(format!(
                "{} inputs for {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        self.check_batch(targets)?;
        let state = self.encode(g, inputs)?;
        let (mut h, mut c) = (state.h, state.c);
        let steps = targets.iter().map(Sentence::len).max().unwrap_or(0) + 1;
        let emb = g.param(&self.store, self.layout.embedding);
        let mut tops = Vec::with_capacity(steps);
        let mut gold = Vec::with_capacity(steps * targets.len());
        let mut valid = Vec::with_capacity(steps * targets.len());
        for t in 0..steps {
            let ids: Vec<u32> = targets
                .iter()
                .map(|s| {
                    if t == 0 {
                        BOS
                    } else {
                        s.ids().get(t - 1).copied().unwrap_or(PAD)
                    }
                })
                .collect();
            let x = g.embed(emb, &ids)?;
            tops.push(self.decoder_step(g, x, &mut h, &mut c)?);
            for s in targets {
                gold.push(match t.cmp(&s.len()) {
                    std::cmp::Ordering::Less => s.ids()[t],
                    std::cmp::Ordering::Equal => EOS,
                    std::cmp::Ordering::Greater => PAD,
                });
                valid.push(t <= s.len());
            }
        }
        let stacked = g.stack_rows(&tops)?;
        let ow = g.param(&self.store, self.layout.out_w);
        let ob = g.param(&self.store, self.layout.out_b);
        let logits = g.linear(stacked, ow, Some(ob))?;
        g.softmax_cross_entropy(logits, &gold, &valid)
    }

    /// Greedy decoding for a batch. Specials other than EOS are never
    /// emitted; decoding stops at EOS or the length cap.
    pub fn transfer_batch(&self, inputs: &[Sentence], cfg: &GenerationConfig) -> Result<Vec<Sentence>> {
        let mut g = Graph::new();
        let state = self.encode(&mut g, inputs)?;
        let (mut h, mut c) = (state.h, state.c);
        let caps: Vec<usize> = inputs.iter().map(|s| cfg.max_len(s.len())).collect();
        let longest = caps.iter().copied().max().unwrap_or(0);
        let emb = g.param(&self.store, self.layout.embedding);
        let ow = g.param(&self.store, self.layout.out_w);
        let ob = g.param(&self.store, self.layout.out_b);
        let mut outputs = vec![Vec::new(); inputs.len()];
        let mut done = vec![false; inputs.len()];
        let mut prev = vec![BOS; inputs.len()];
        for _ in 0..longest {
            let x = g.embed(emb, &prev)?;
            let top = self.decoder_step(&mut g, x, &mut h, &mut c)?;
            let logits = g.linear(top, ow, Some(ob))?;
            let lv = g.value(logits);
            for (b, out) in outputs.iter_mut().enumerate() {
                if done[b] {
                    prev[b] = PAD;
                    continue;
                }
                let row = lv.row(b);
                let mut best = EOS;
                for id in EOS as usize..row.len() {
                    if id as u32 != UNK && row[id] > row[best as usize] {
                        best = id as u32;
                    }
                }
                if best == EOS {
                    done[b] = true;
                } else {
                    out.push(best);
                    if out.len() >= caps[b] {
                        done[b] = true;
                    }
                }
                prev[b] = best;
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(outputs.into_iter().map(Sentence).collect())
    }

    pub fn transfer(&self, s: &Sentence, cfg: &GenerationConfig) -> Result<Sentence> {
        Ok(self.transfer_batch(std::slice::from_ref(s), cfg)?.remove(0))
    }

    /// Transfers every sentence, `batch_size` at a time.
    pub fn transfer_all(&self, inputs: &[Sentence], cfg: &GenerationConfig, batch_size: usize) -> Result<Vec<Sentence>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(batch_size.max(1)) {
            out.extend(self.transfer_batch(chunk, cfg)?);
        }
        Ok(out)
    }

    /// Checks that this transferrer's vocabulary size matches `vocab`.
    pub fn check_vocab(&self, vocab: &Vocab) -> Result<()> {
        if vocab.len() != self.dims.vocab {
            return Err(Error::Invalid(format!(
                "vocabulary mismatch: checkpoint expects {} tokens, vocabulary file has {}",
                self.dims.vocab,
                vocab.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::AdamConfig;
    use crate::rng::RngState;

    fn dims() -> TransferrerDims {
        TransferrerDims {
            vocab: 12,
            embed: 6,
            hidden: 8,
            layers: 2,
        }
    }

    fn model(seed: u64) -> Transferrer {
        Transferrer::new("f.", dims(), &mut RngState::new(seed)).unwrap()
    }

    #[test]
    fn state_shapes() {
        let m = model(1);
        let batch = vec![Sentence(vec![4, 5, 6]), Sentence(vec![7])];
        let (h, c) = m.encode_states(&batch).unwrap();
        assert_eq!(h.dims(), &[2, 2, 8]);
        assert_eq!(c.dims(), &[2, 2, 8]);
    }

    #[test]
    fn zero_weights_zero_state() {
        let mut m = model(2);
        for id in m.store.ids().collect::<Vec<_>>() {
            m.store.value_mut(id).fill(0.0);
        }
        let (h, c) = m.encode_states(&[Sentence(vec![4, 5])]).unwrap();
        assert!(h.data().iter().chain(c.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn padding_does_not_change_encoding() {
        let m = model(3);
        let short = Sentence(vec![4, 5]);
        let alone = m.encode_states(std::slice::from_ref(&short)).unwrap();
        let padded = m.encode_states(&[short, Sentence(vec![6, 7, 8, 9, 10])]).unwrap();
        let hidden = m.dims().hidden;
        for l in 0..2 {
            let a = &alone.0.data()[l * hidden..(l + 1) * hidden];
            let b = &padded.0.data()[l * 2 * hidden..l * 2 * hidden + hidden];
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn empty_sentence_rejected() {
        let m = model(4);
        assert!(m.encode_states(&[Sentence(vec![])]).is_err());
    }

    #[test]
    fn uniform_logits_give_ln_v() {
        let mut m = model(5);
        for name in ["f.out.w", "f.out.b"] {
            let id = m.store.id(name).unwrap();
            m.store.value_mut(id).fill(0.0);
        }
        let mut g = Graph::new();
        let loss = m
            .teacher_forced_loss(&mut g, &[Sentence(vec![4, 5])], &[Sentence(vec![6, 7, 8])])
            .unwrap();
        assert!((g.value(loss).item() - (12f32).ln()).abs() < 1e-5);
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let mut m = model(6);
        let mut g = Graph::new();
        let inputs = vec![Sentence(vec![4, 5, 6]), Sentence(vec![7, 8])];
        let targets = vec![Sentence(vec![9, 10]), Sentence(vec![11, 4, 5])];
        let loss = m.teacher_forced_loss(&mut g, &inputs, &targets).unwrap();
        assert!(g.value(loss).item() > 0.0);
        g.backward(loss, &mut m.store).unwrap();
        for id in m.store.ids() {
            let nz = m.store.grad(id).data().iter().any(|&v| v != 0.0);
            assert!(nz, "no gradient for {}", m.store.name(id));
        }
    }

    #[test]
    fn generation_is_deterministic_and_bounded() {
        let m = model(7);
        let cfg = GenerationConfig { max_len_extra: 2 };
        let inputs = vec![Sentence(vec![4, 5, 6]), Sentence(vec![9])];
        let a = m.transfer_batch(&inputs, &cfg).unwrap();
        let b = m.transfer_batch(&inputs, &cfg).unwrap();
        assert_eq!(a, b);
        for (o, i) in a.iter().zip(&inputs) {
            assert!(o.len() <= i.len() + 2);
            assert!(o.ids().iter().all(|&id| !Vocab::is_special(id)));
        }
    }

    #[test]
    fn overfits_single_pair() {
        let mut m = Transferrer::new(
            "f.",
            TransferrerDims {
                vocab: 12,
                embed: 16,
                hidden: 32,
                layers: 1,
            },
            &mut RngState::new(8),
        )
        .unwrap();
        let input = vec![Sentence(vec![4, 5, 6, 7])];
        let target = vec![Sentence(vec![8, 9, 10, 11, 4])];
        let cfg = AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        };
        let mut last = f32::MAX;
        for _ in 0..500 {
            let mut g = Graph::new();
            let loss = m.teacher_forced_loss(&mut g, &input, &target).unwrap();
            last = g.value(loss).item();
            g.backward(loss, &mut m.store).unwrap();
            m.store.clip_grad_norm(5.0);
            m.store.adam_step(&cfg);
        }
        assert!(last < 0.01, "loss {last}");
        let out = m.transfer(&input[0], &GenerationConfig::default()).unwrap();
        assert_eq!(out, target[0]);
    }

    #[test]
    fn from_store_round_trip() {
        let m = model(9);
        let again = Transferrer::from_store("f.", m.store().clone()).unwrap();
        assert_eq!(again.dims(), dims());
        assert!(Transferrer::from_store("g.", m.store().clone()).is_err());
    }
}
