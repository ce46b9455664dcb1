use std::collections::BTreeMap;

use super::{head_names, ModelConfig, ModelError, Result};
use crate::numerics::{ParamSet, Tape, Tensor, Var};
use crate::orthography::LanguageId;
use crate::tokenization::AlignedTokens;

/// A batch with every sequence's rows stacked, no padding. Attention is
/// computed per sequence over its own row range.
#[derive(Debug, Clone, PartialEq)]
pub struct Packed {
    pub bpe: Vec<usize>,
    pub wp: Vec<usize>,
    /// Per row, the `(start, len)` range of its pieces in `wp`.
    pub wp_segments: Vec<(usize, usize)>,
    pub positions: Vec<usize>,
    /// Per sequence, the `(start, len)` range of its rows.
    pub seqs: Vec<(usize, usize)>,
}

impl Packed {
    /// Sequences longer than `max_len` lose their tail (with a warning).
    pub fn new<'t>(batch: impl IntoIterator<Item = &'t AlignedTokens>, max_len: usize) -> Self {
        let mut p = Packed {
            bpe: Vec::new(),
            wp: Vec::new(),
            wp_segments: Vec::new(),
            positions: Vec::new(),
            seqs: Vec::new(),
        };
        for toks in batch {
            let real = toks.real();
            if real.len() > max_len {
                log::warn!("sequence of {} positions truncated to {max_len}", real.len());
            }
            let real = &real[..real.len().min(max_len)];
            p.seqs.push((p.bpe.len(), real.len()));
            for (i, pos) in real.iter().enumerate() {
                p.bpe.push(pos.bpe_id as usize);
                p.wp_segments.push((p.wp.len(), pos.wp_ids.len()));
                p.wp.extend(pos.wp_ids.iter().map(|&id| id as usize));
                p.positions.push(i);
            }
        }
        p
    }

    pub fn rows(&self) -> usize {
        self.bpe.len()
    }

    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }

    /// Row index of each sequence's CLS position.
    pub fn cls_rows(&self) -> Vec<usize> {
        self.seqs.iter().map(|&(s, _)| s).collect()
    }
}

/// One forward (and optional backward) pass: a tape plus the parameters bound
/// to it so far. Parameters are bound lazily on first use; only those for
/// which `trainable` holds receive gradients.
pub struct Graph<'a> {
    pub tape: Tape,
    pub cfg: &'a ModelConfig,
    params: &'a ParamSet,
    vars: BTreeMap<String, Var>,
    trainable: fn(&str) -> bool,
}

impl<'a> Graph<'a> {
    pub fn new(cfg: &'a ModelConfig, params: &'a ParamSet, trainable: fn(&str) -> bool) -> Self {
        Self {
            tape: Tape::new(),
            cfg,
            params,
            vars: BTreeMap::new(),
            trainable,
        }
    }

    /// Nothing tracked.
    pub fn inference(cfg: &'a ModelConfig, params: &'a ParamSet) -> Self {
        Self::new(cfg, params, |_| false)
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let t = self.params.get(name)?.clone();
        let v = self.tape.leaf(t, (self.trainable)(name));
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    /// Gradients of a scalar `loss` for every bound trainable parameter it
    /// reaches, keyed by parameter name.
    pub fn gradients(&self, loss: Var) -> Result<ParamSet> {
        let mut g = self.tape.backward(loss)?;
        let mut out = ParamSet::new();
        for (name, &v) in &self.vars {
            if !self.tape.requires_grad(v) {
                continue;
            }
            if let Some(data) = g.take(v) {
                let shape = self.params.get(name)?.shape().to_vec();
                out.insert(name.clone(), Tensor::new(shape, data)?);
            }
        }
        Ok(out)
    }

    fn linear(&mut self, x: Var, w: &str, b: &str) -> Result<Var> {
        let (w, b) = (self.param(w)?, self.param(b)?);
        let y = self.tape.matmul(x, w)?;
        Ok(self.tape.add_row(y, b)?)
    }

    /// `H⁽⁰⁾[i] = ½ (Emb_BPE[x_i] + mean of Emb_WP over the position's pieces) + P[i]`,
    /// or `Emb_BPE[x_i] + P[i]` in single-tokenizer mode.
    pub fn fuse(&mut self, batch: &Packed) -> Result<Var> {
        let bpe_table = self.param("emb.bpe")?;
        let bpe = self.tape.embedding(bpe_table, &batch.bpe)?;
        let tok = if self.cfg.dual_tokenizer {
            let wp_table = self.param("emb.wp")?;
            let pieces = self.tape.embedding(wp_table, &batch.wp)?;
            let wp = self.tape.segment_mean(pieces, &batch.wp_segments)?;
            let sum = self.tape.add(bpe, wp)?;
            self.tape.scale(sum, 0.5)
        } else {
            bpe
        };
        let pos_table = self.param("emb.pos")?;
        let pos = self.tape.embedding(pos_table, &batch.positions)?;
        Ok(self.tape.add(tok, pos)?)
    }

    fn attention(&mut self, h: Var, i: usize, batch: &Packed) -> Result<Var> {
        let p = |s: &str| format!("layer{i}.attn.{s}");
        let q = self.linear(h, &p("q.w"), &p("q.b"))?;
        let k = self.linear(h, &p("k.w"), &p("k.b"))?;
        let v = self.linear(h, &p("v.w"), &p("v.b"))?;
        let dh = self.cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut per_seq = Vec::with_capacity(batch.len());
        for &(start, len) in &batch.seqs {
            let (qs, ks, vs) = (
                self.tape.slice_rows(q, start, len)?,
                self.tape.slice_rows(k, start, len)?,
                self.tape.slice_rows(v, start, len)?,
            );
            let mut heads = Vec::with_capacity(self.cfg.heads);
            for hd in 0..self.cfg.heads {
                let qh = self.tape.slice_cols(qs, hd * dh, dh)?;
                let kh = self.tape.slice_cols(ks, hd * dh, dh)?;
                let vh = self.tape.slice_cols(vs, hd * dh, dh)?;
                let scores = self.tape.matmul_t(qh, kh)?;
                let scores = self.tape.scale(scores, scale);
                let attn = self.tape.softmax_rows(scores);
                heads.push(self.tape.matmul(attn, vh)?);
            }
            per_seq.push(self.tape.concat_cols(&heads)?);
        }
        let ctx = self.tape.concat_rows(&per_seq)?;
        self.linear(ctx, &p("o.w"), &p("o.b"))
    }

    /// One post-LN transformer layer.
    pub fn transformer_layer(&mut self, h: Var, i: usize, batch: &Packed) -> Result<Var> {
        let p = |s: &str| format!("layer{i}.{s}");
        let a = self.attention(h, i, batch)?;
        let h = self.tape.add(h, a)?;
        let (g1, b1) = (self.param(&p("ln1.g"))?, self.param(&p("ln1.b"))?);
        let h = self.tape.layer_norm(h, g1, b1)?;
        let f = self.linear(h, &p("ffn.w1"), &p("ffn.b1"))?;
        let f = self.tape.gelu(f);
        let f = self.linear(f, &p("ffn.w2"), &p("ffn.b2"))?;
        let h2 = self.tape.add(h, f)?;
        let (g2, b2) = (self.param(&p("ln2.g"))?, self.param(&p("ln2.b"))?);
        Ok(self.tape.layer_norm(h2, g2, b2)?)
    }

    /// `H + GeLU(H·D)·U`, the bottleneck adapter of layer `i`.
    pub fn adapter(&mut self, h: Var, i: usize) -> Result<Var> {
        let down = self.param(&format!("layer{i}.oca.down"))?;
        let up = self.param(&format!("layer{i}.oca.up"))?;
        let z = self.tape.matmul(h, down)?;
        let z = self.tape.gelu(z);
        let z = self.tape.matmul(z, up)?;
        Ok(self.tape.add(h, z)?)
    }

    /// The encoder stack; each layer is followed by its adapter when the
    /// config has adapters.
    pub fn encode(&mut self, h0: Var, batch: &Packed) -> Result<Var> {
        let mut h = h0;
        for i in 0..self.cfg.layers {
            h = self.transformer_layer(h, i, batch)?;
            if self.cfg.adapters {
                h = self.adapter(h, i)?;
            }
            if !self.tape.value(h).all_finite() {
                return Err(ModelError::NonFinite { layer: i });
            }
        }
        Ok(h)
    }

    /// Fuse then encode.
    pub fn forward(&mut self, batch: &Packed) -> Result<Var> {
        let h0 = self.fuse(batch)?;
        self.encode(h0, batch)
    }

    /// CLS vectors, one row per sequence.
    pub fn cls(&mut self, h: Var, batch: &Packed) -> Result<Var> {
        Ok(self.tape.select_rows(h, &batch.cls_rows())?)
    }

    /// `h_DA = GeLU(h_CLS · W_DA + b_DA)`, row-wise.
    pub fn project(&mut self, cls: Var) -> Result<Var> {
        let z = self.linear(cls, "da.w", "da.b")?;
        Ok(self.tape.gelu(z))
    }

    /// `h_DA · W_ℓ + b_ℓ` for every row of `h_da`.
    pub fn head_logits(&mut self, h_da: Var, lang: LanguageId) -> Result<Var> {
        let (w, b) = head_names(lang);
        if !self.params.contains(&w) {
            return Err(ModelError::UnknownHead(lang));
        }
        self.linear(h_da, &w, &b)
    }

    /// Log-probabilities from `lang`'s head for every row of `h_da`.
    pub fn head_log_probs(&mut self, h_da: Var, lang: LanguageId) -> Result<Var> {
        let logits = self.head_logits(h_da, lang)?;
        Ok(self.tape.log_softmax_rows(logits))
    }

    /// Log-distributions over the BPE vocabulary at the given rows of `h`,
    /// through the output layer tied to `emb.bpe`. `None` for no rows.
    pub fn mlm_log_probs(&mut self, h: Var, rows: &[usize]) -> Result<Option<Var>> {
        if rows.is_empty() {
            return Ok(None);
        }
        let sel = self.tape.select_rows(h, rows)?;
        let table = self.param("emb.bpe")?;
        let bias = self.param("mlm.bias")?;
        let logits = self.tape.matmul_t(sel, table)?;
        let logits = self.tape.add_row(logits, bias)?;
        Ok(Some(self.tape.log_softmax_rows(logits)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::numerics::gelu;
    use crate::tokenization::{encode_aligned, BpeModel, WordPieceModel};

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            layers: 1,
            hidden: 4,
            heads: 1,
            ffn: 8,
            proj: 2,
            adapter: 2,
            bpe_vocab: 8,
            wp_vocab: 8,
            classes: [3, 2, 2, 2],
            max_len: 6,
            dual_tokenizer: true,
            adapters: true,
        }
    }

    fn packed(rows: &[(u32, Vec<u32>)]) -> Packed {
        let mut p = Packed {
            bpe: vec![],
            wp: vec![],
            wp_segments: vec![],
            positions: vec![],
            seqs: vec![(0, rows.len())],
        };
        for (i, (b, w)) in rows.iter().enumerate() {
            p.bpe.push(*b as usize);
            p.wp_segments.push((p.wp.len(), w.len()));
            p.wp.extend(w.iter().map(|&x| x as usize));
            p.positions.push(i);
        }
        p
    }

    fn set(params: &mut ParamSet, name: &str, rows: usize, cols: usize, f: impl Fn(usize) -> f64) {
        let t = Tensor::matrix(rows, cols, (0..rows * cols).map(f).collect()).unwrap();
        params.insert(name, t);
    }

    #[test]
    fn fusion_is_the_positionwise_mean() {
        let cfg = ModelConfig { hidden: 2, heads: 1, proj: 1, ..tiny_cfg() };
        let mut p = init_params(&cfg, 0).unwrap();
        set(&mut p, "emb.bpe", 8, 2, |i| i as f64);
        set(&mut p, "emb.wp", 8, 2, |i| 10.0 * i as f64);
        set(&mut p, "emb.pos", 6, 2, |_| 0.0);
        let batch = packed(&[(2, vec![2]), (5, vec![4, 6]), (7, vec![1, 3, 5])]);
        let mut g = Graph::inference(&cfg, &p);
        let h0 = g.fuse(&batch).unwrap();
        // row 1: bpe[5] = (10, 11); wp mean of rows 4, 6 = (100, 110)
        let want = [
            [0.5 * (4.0 + 40.0), 0.5 * (5.0 + 50.0)],
            [0.5 * (10.0 + 100.0), 0.5 * (11.0 + 110.0)],
            [0.5 * (14.0 + 60.0), 0.5 * (15.0 + 70.0)],
        ];
        for (r, w) in want.iter().enumerate() {
            assert_eq!(g.value(h0).row_slice(r), w);
        }
    }

    #[test]
    fn zero_wordpiece_table_halves_bpe() {
        let cfg = tiny_cfg();
        let mut p = init_params(&cfg, 1).unwrap();
        set(&mut p, "emb.wp", 8, 4, |_| 0.0);
        let batch = packed(&[(2, vec![2]), (4, vec![5, 6])]);
        let mut g = Graph::inference(&cfg, &p);
        let h0 = g.fuse(&batch).unwrap();
        for (r, &id) in batch.bpe.iter().enumerate() {
            for c in 0..4 {
                let want = 0.5 * p.get("emb.bpe").unwrap().get(id, c) + p.get("emb.pos").unwrap().get(r, c);
                assert_eq!(g.value(h0).get(r, c), want);
            }
        }
    }

    /// Straight-line re-implementation of one layer plus adapter, no tape.
    fn reference_layer(p: &ParamSet, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let g = |n: &str| p.get(n).unwrap();
        let lin = |x: &[Vec<f64>], w: &str, b: &str| -> Vec<Vec<f64>> {
            let (w, b) = (g(w), g(b));
            x.iter()
                .map(|row| {
                    (0..w.cols())
                        .map(|j| b.data()[j] + (0..w.rows()).map(|k| row[k] * w.get(k, j)).sum::<f64>())
                        .collect()
                })
                .collect()
        };
        let ln = |x: &[Vec<f64>], gn: &str, bn: &str| -> Vec<Vec<f64>> {
            x.iter()
                .map(|row| {
                    let n = row.len() as f64;
                    let mu = row.iter().sum::<f64>() / n;
                    let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
                    row.iter()
                        .enumerate()
                        .map(|(j, v)| (v - mu) / (var + 1e-5).sqrt() * g(gn).data()[j] + g(bn).data()[j])
                        .collect()
                })
                .collect()
        };
        let add = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
            a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
        };
        let q = lin(x, "layer0.attn.q.w", "layer0.attn.q.b");
        let k = lin(x, "layer0.attn.k.w", "layer0.attn.k.b");
        let v = lin(x, "layer0.attn.v.w", "layer0.attn.v.b");
        let n = x.len();
        let mut ctx = vec![vec![0.0; 4]; n];
        for i in 0..n {
            let s: Vec<f64> = (0..n)
                .map(|j| (0..4).map(|c| q[i][c] * k[j][c]).sum::<f64>() / 2.0)
                .collect();
            let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..n {
                for c in 0..4 {
                    ctx[i][c] += e[j] / z * v[j][c];
                }
            }
        }
        let a = lin(&ctx, "layer0.attn.o.w", "layer0.attn.o.b");
        let h = ln(&add(x, &a), "layer0.ln1.g", "layer0.ln1.b");
        let f: Vec<Vec<f64>> = lin(&h, "layer0.ffn.w1", "layer0.ffn.b1")
            .into_iter()
            .map(|r| r.into_iter().map(gelu).collect())
            .collect();
        let f = lin(&f, "layer0.ffn.w2", "layer0.ffn.b2");
        let h = ln(&add(&h, &f), "layer0.ln2.g", "layer0.ln2.b");
        let (d, u) = (g("layer0.oca.down"), g("layer0.oca.up"));
        h.iter()
            .map(|row| {
                let z: Vec<f64> = (0..2)
                    .map(|r| gelu((0..4).map(|c| row[c] * d.get(c, r)).sum()))
                    .collect();
                (0..4).map(|c| row[c] + (0..2).map(|r| z[r] * u.get(r, c)).sum::<f64>()).collect()
            })
            .collect()
    }

    #[test]
    fn encoder_matches_straight_line_reference() {
        let cfg = tiny_cfg();
        let mut p = init_params(&cfg, 5).unwrap();
        // larger weights so the comparison is not dominated by the near-identity regime
        let names: Vec<String> = p.names().cloned().collect();
        for (k, name) in names.iter().enumerate() {
            let t = p.get_mut(name).unwrap();
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v += 0.3 * ((i * 7 + k * 13) as f64).sin();
            }
        }
        let batch = packed(&[(2, vec![2]), (4, vec![5, 6]), (6, vec![7])]);
        let mut g = Graph::inference(&cfg, &p);
        let h0 = g.fuse(&batch).unwrap();
        let x: Vec<Vec<f64>> = (0..3).map(|r| g.value(h0).row_slice(r).to_vec()).collect();
        let h = g.encode(h0, &batch).unwrap();
        let want = reference_layer(&p, &x);
        for r in 0..3 {
            for c in 0..4 {
                assert!((g.value(h).get(r, c) - want[r][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn packed_sequences_do_not_attend_across() {
        let cfg = tiny_cfg();
        let p = init_params(&cfg, 9).unwrap();
        let a = packed(&[(2, vec![2]), (4, vec![5])]);
        let b = packed(&[(2, vec![2]), (7, vec![6, 1]), (3, vec![3])]);
        let mut both = a.clone();
        both.bpe.extend(&b.bpe);
        both.wp_segments.extend(b.wp_segments.iter().map(|&(s, l)| (s + a.wp.len(), l)));
        both.wp.extend(&b.wp);
        both.positions.extend(&b.positions);
        both.seqs = vec![(0, 2), (2, 3)];
        let run = |batch: &Packed| {
            let mut g = Graph::inference(&cfg, &p);
            let h = g.forward(batch).unwrap();
            g.value(h).clone()
        };
        let (ha, hb, hab) = (run(&a), run(&b), run(&both));
        assert_eq!(&hab.data()[..8], ha.data());
        assert_eq!(&hab.data()[8..], hb.data());
    }

    #[test]
    fn zero_layers_is_identity_and_zero_heads_are_uniform() {
        let cfg = ModelConfig { layers: 0, ..tiny_cfg() };
        let p = init_params(&cfg, 2).unwrap();
        let batch = packed(&[(2, vec![2]), (4, vec![5])]);
        let mut g = Graph::inference(&cfg, &p);
        let h0 = g.fuse(&batch).unwrap();
        let h = g.encode(h0, &batch).unwrap();
        assert_eq!(h, h0);
        let cls = g.cls(h, &batch).unwrap();
        let hda = g.project(cls).unwrap();
        assert_eq!(g.value(hda).shape(), &[1, 2]);
        let mut zeroed = p.clone();
        for n in ["head.ckb.w", "head.ckb.b"] {
            let t = zeroed.get_mut(n).unwrap();
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::inference(&cfg, &zeroed);
        let h = g.forward(&batch).unwrap();
        let cls = g.cls(h, &batch).unwrap();
        let hda = g.project(cls).unwrap();
        let lp = g.head_log_probs(hda, LanguageId::Kurdish).unwrap();
        for v in g.value(lp).data() {
            assert!((v.exp() - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(g.mlm_log_probs(h, &[]).unwrap().is_none());
    }

    #[test]
    fn projection_hand_case() {
        let cfg = ModelConfig { hidden: 2, heads: 1, proj: 1, ..tiny_cfg() };
        let mut p = init_params(&cfg, 0).unwrap();
        p.insert("da.w", Tensor::matrix(2, 1, vec![0.5, -1.0]).unwrap());
        p.insert("da.b", Tensor::row(vec![0.25]));
        let mut g = Graph::inference(&cfg, &p);
        let x = g.tape.constant(Tensor::row(vec![2.0, 0.5]));
        let h = g.project(x).unwrap();
        // 0.5*2 - 1*0.5 + 0.25 = 0.75
        assert_eq!(g.value(h).item(), gelu(0.75));
    }

    #[test]
    fn real_tokens_pack_and_truncate() {
        let corpus = ["سڵاو لە هەموو", "سڵاو لە تۆ"];
        let bpe = BpeModel::train(corpus, 30, 0).unwrap();
        let wp = WordPieceModel::train(corpus, 40, 0).unwrap();
        let a = encode_aligned("سڵاو لە هەموو تۆ", &bpe, &wp);
        let b = encode_aligned("لە", &bpe, &wp);
        let p = Packed::new([&a, &b], 3);
        assert_eq!(p.seqs, vec![(0, 3), (3, b.len())]);
        assert_eq!(p.cls_rows(), vec![0, 3]);
        assert_eq!(p.positions[3], 0);
        assert_eq!(p.wp_segments.len(), p.rows());
    }
}
