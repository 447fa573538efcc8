use std::collections::HashMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FakeFlowConfig, Mode, ModelError};
use crate::corpus::{encode, segment, Label, SegmentedDocument, TokenizedDocument, Vocabulary};
use crate::lexicon::{extract_affect, AffectFeatureMatrix, LexiconSet, NUM_FEATURES};
use crate::tensor::init::{glorot_uniform, uniform};
use crate::tensor::{Activation, Array, AttentionWeights, Checkpoint, GruWeights, ParamId, ParamStore, Tape, Var};

/// Model input: segmented token ids plus the affect matrix of the same
/// document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedDocument {
    pub id: String,
    pub ids: SegmentedDocument<usize>,
    pub affect: AffectFeatureMatrix,
    pub label: Option<Label>,
}

pub fn encode_document(
    id: impl Into<String>,
    tokens: &TokenizedDocument,
    vocab: &Vocabulary,
    lexicons: &LexiconSet,
    n_segments: usize,
    max_seg_len: usize,
    label: Option<Label>,
) -> Result<EncodedDocument, crate::corpus::CorpusError> {
    let seg = segment(tokens, n_segments, max_seg_len)?;
    Ok(EncodedDocument {
        id: id.into(),
        ids: encode(&seg, vocab),
        affect: extract_affect(&seg, lexicons),
        label,
    })
}

/// Tokenizes, segments and encodes labelled or unlabelled articles.
pub fn encode_articles(
    articles: &[crate::corpus::RawArticle],
    vocab: &Vocabulary,
    lexicons: &LexiconSet,
    n_segments: usize,
    max_seg_len: usize,
) -> Result<Vec<EncodedDocument>, crate::corpus::CorpusError> {
    articles
        .iter()
        .map(|a| {
            let tokens = crate::corpus::tokenize(&a.text)?;
            encode_document(a.id.clone(), &tokens, vocab, lexicons, n_segments, max_seg_len, a.label)
        })
        .collect()
}

#[derive(Clone, Debug)]
struct TopicParams {
    embedding: ParamId,
    convs: Vec<(ParamId, ParamId)>,
    w_a: ParamId,
    b_a: ParamId,
}

#[derive(Clone, Debug)]
struct FusionParams {
    w_c: ParamId,
    b_c: ParamId,
    query: ParamId,
    key: ParamId,
    att_bias: ParamId,
    score: ParamId,
}

#[derive(Clone, Debug)]
struct GruParams {
    input: ParamId,
    recurrent: ParamId,
    bias: ParamId,
}

/// Parameter handles for one configuration. Only the parameters the mode
/// uses are allocated.
#[derive(Clone, Debug)]
pub struct Layout {
    topic: Option<TopicParams>,
    fusion: Option<FusionParams>,
    flow: Option<(GruParams, GruParams)>,
    w_d: ParamId,
    b_d: ParamId,
    w_out: ParamId,
    b_out: ParamId,
}

impl Layout {
    /// Parameters grouped by role, for gradient checks and reporting.
    pub fn groups(&self) -> Vec<(&'static str, ParamId)> {
        let mut out = Vec::new();
        if let Some(t) = &self.topic {
            out.push(("embedding", t.embedding));
            for (f, b) in &t.convs {
                out.push(("conv_filters", *f));
                out.push(("conv_bias", *b));
            }
            out.push(("W_a", t.w_a));
            out.push(("b_a", t.b_a));
        }
        if let Some(f) = &self.fusion {
            out.extend([
                ("W_c", f.w_c),
                ("b_c", f.b_c),
                ("attention_query", f.query),
                ("attention_key", f.key),
                ("attention_bias", f.att_bias),
                ("attention_score", f.score),
            ]);
        }
        if let Some((fw, bw)) = &self.flow {
            for g in [fw, bw] {
                out.push(("gru_input", g.input));
                out.push(("gru_recurrent", g.recurrent));
                out.push(("gru_bias", g.bias));
            }
        }
        out.extend([("W_d", self.w_d), ("b_d", self.b_d), ("W_out", self.w_out), ("b_out", self.b_out)]);
        out
    }
}

/// Recorded handles of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub v_topic: Option<Var>,
    pub v_affect: Var,
    pub v_concat: Option<Var>,
    pub v_fc: Option<Var>,
    pub l_t: Option<Var>,
    pub attention: Option<Array>,
    pub v_flow: Option<Var>,
    pub v_compact: Var,
    pub v_final: Var,
    pub probabilities: Var,
}

/// Intermediate representations of one document, serializable as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    pub mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_topic: Option<Vec<Vec<f64>>>,
    pub v_affect: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_concat: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_fc: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attention_weights: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_t: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_flow: Option<Vec<Vec<f64>>>,
    pub v_compact: Vec<f64>,
    pub v_final: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl ForwardTrace {
    pub fn predicted_class(&self) -> usize {
        argmax_class(&self.probabilities)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_class(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl ForwardVars {
    pub fn trace(&self, tape: &Tape<'_>, mode: Mode) -> ForwardTrace {
        let rows = |v: Var| tape.value(v).to_rows();
        let vec = |v: Var| tape.value(v).data().to_vec();
        ForwardTrace {
            mode,
            v_topic: self.v_topic.map(rows),
            v_affect: rows(self.v_affect),
            v_concat: self.v_concat.map(rows),
            v_fc: self.v_fc.map(rows),
            attention_weights: self.attention.as_ref().map(Array::to_rows),
            l_t: self.l_t.map(rows),
            v_flow: self.v_flow.map(rows),
            v_compact: vec(self.v_compact),
            v_final: vec(self.v_final),
            probabilities: vec(self.probabilities),
        }
    }
}

const MAGIC_HEADER: &str = "fakeflow-model";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    config: FakeFlowConfig,
}

/// Configuration, parameter layout and parameter values.
#[derive(Clone, Debug)]
pub struct FakeFlowModel {
    pub config: FakeFlowConfig,
    pub layout: Layout,
    pub params: ParamStore,
}

impl FakeFlowModel {
    pub fn new(config: FakeFlowConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let c = &config;
        let dense = |params: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, out: usize, inp: usize| {
            let w = params.add(format!("{name}.weight"), glorot_uniform(rng, &[out, inp], inp, out));
            let b = params.add(format!("{name}.bias"), Array::zeros(&[out]));
            (w, b)
        };

        let topic = if c.mode.uses_topic() {
            let embedding = params.add("embedding", uniform(&mut rng, &[c.vocab_size, c.embed_dim], -0.05, 0.05));
            params.get_mut(embedding).trainable = c.trainable_embeddings;
            let mut convs = Vec::new();
            for &w in &c.cnn_filter_widths {
                let k = c.cnn_filter_count;
                let f = params.add(
                    format!("conv{w}.filters"),
                    glorot_uniform(&mut rng, &[k, w, c.embed_dim], w * c.embed_dim, w * k),
                );
                let b = params.add(format!("conv{w}.bias"), Array::zeros(&[k]));
                convs.push((f, b));
            }
            let (w_a, b_a) = dense(&mut params, &mut rng, "topic_dense", c.topic_dense_dim, c.cnn_output_dim());
            Some(TopicParams {
                embedding,
                convs,
                w_a,
                b_a,
            })
        } else {
            None
        };

        let fusion = if c.mode.uses_topic() {
            let d = c.fused_dense_dim;
            let (w_c, b_c) = dense(&mut params, &mut rng, "fusion_dense", d, c.concat_dim());
            let query = params.add("attention.query", glorot_uniform(&mut rng, &[d, d], d, d));
            let key = params.add("attention.key", glorot_uniform(&mut rng, &[d, d], d, d));
            let att_bias = params.add("attention.bias", Array::zeros(&[d]));
            let score = params.add("attention.score", glorot_uniform(&mut rng, &[d], d, 1));
            Some(FusionParams {
                w_c,
                b_c,
                query,
                key,
                att_bias,
                score,
            })
        } else {
            None
        };

        let flow = if c.mode.uses_affect() {
            let h = c.gru_units;
            let mut gru = |params: &mut ParamStore, dir: &str| GruParams {
                input: params.add(
                    format!("gru_{dir}.input"),
                    glorot_uniform(&mut rng, &[3 * h, NUM_FEATURES], NUM_FEATURES, 3 * h),
                ),
                recurrent: params.add(format!("gru_{dir}.recurrent"), glorot_uniform(&mut rng, &[3 * h, h], h, 3 * h)),
                bias: params.add(format!("gru_{dir}.bias"), Array::zeros(&[3 * h])),
            };
            let fw = gru(&mut params, "fwd");
            let bw = gru(&mut params, "bwd");
            Some((fw, bw))
        } else {
            None
        };

        let (w_d, b_d) = dense(&mut params, &mut rng, "final_dense", c.final_dense_dim, c.compact_dim());
        let (w_out, b_out) = dense(&mut params, &mut rng, "output", c.n_classes, c.final_dense_dim);
        let layout = Layout {
            topic,
            fusion,
            flow,
            w_d,
            b_d,
            w_out,
            b_out,
        };
        Ok(Self { config, layout, params })
    }

    /// Overwrites embedding rows for words that have a pretrained vector.
    /// Returns the number of rows replaced.
    pub fn load_embeddings(
        &mut self,
        vocab: &Vocabulary,
        vectors: &HashMap<String, Vec<f64>>,
    ) -> Result<usize, ModelError> {
        let topic = self
            .layout
            .topic
            .as_ref()
            .ok_or_else(|| ModelError::UnsupportedMode("affect_only has no embedding table".into()))?;
        let d = self.config.embed_dim;
        let table = &mut self.params.get_mut(topic.embedding).value;
        let mut replaced = 0;
        for (i, word) in vocab.words().iter().enumerate() {
            if let Some(v) = vectors.get(word) {
                if v.len() != d {
                    return Err(ModelError::Shape(format!("vector for `{word}` has {} dims, expected {d}", v.len())));
                }
                table.data_mut()[i * d..(i + 1) * d].copy_from_slice(v);
                replaced += 1;
            }
        }
        Ok(replaced)
    }

    fn check_input(&self, doc: &EncodedDocument) -> Result<(), ModelError> {
        let n = self.config.n_segments;
        if doc.affect.n_segments() != n || doc.ids.n_segments != n {
            return Err(ModelError::Shape(format!(
                "document `{}` has {} segments and {} feature rows, model expects {n}",
                doc.id,
                doc.ids.n_segments,
                doc.affect.n_segments()
            )));
        }
        if self.config.mode.uses_topic() && doc.ids.max_seg_len != self.config.max_seg_len {
            return Err(ModelError::Shape(format!(
                "segment length {} differs from configured {}",
                doc.ids.max_seg_len, self.config.max_seg_len
            )));
        }
        Ok(())
    }

    /// `v_topic` rows for every segment of one document.
    fn topic_branch(&self, tape: &mut Tape<'_>, doc: &EncodedDocument, p: &TopicParams) -> Result<Var, ModelError> {
        let c = &self.config;
        let (n, l) = (c.n_segments, c.max_seg_len);
        let ids: Vec<usize> = doc.ids.segments.iter().flatten().copied().collect();
        let emb = tape.embedding(&ids, &[n, l], p.embedding)?;
        let widest = *c.cnn_filter_widths.iter().max().expect("validated non-empty");
        // Segments shorter than the widest filter count as all padding.
        let lens: Vec<usize> = doc
            .ids
            .lengths
            .iter()
            .map(|&len| if len < widest { 0 } else { len })
            .collect();
        let mut features: Option<Var> = None;
        for (&w, &(filters, bias)) in c.cnn_filter_widths.iter().zip(&p.convs) {
            let pooled = if l < w {
                tape.constant(Array::zeros(&[n, c.cnn_filter_count]))
            } else {
                let f = tape.param(filters);
                let b = tape.param(bias);
                let conv = tape.conv1d(emb, f, b)?;
                let valid: Vec<usize> = lens.iter().map(|&len| (len + 1).saturating_sub(w)).collect();
                let (windows, counts) = tape.maxpool1d(conv, c.pool_size, Some(&valid))?;
                tape.global_maxpool(windows, Some(&counts))?
            };
            features = Some(match features {
                None => pooled,
                Some(acc) => tape.concat(acc, pooled)?,
            });
        }
        let cnn_v = features.expect("at least one filter width");
        let w_a = tape.param(p.w_a);
        let b_a = tape.param(p.b_a);
        Ok(tape.dense(cnn_v, w_a, b_a, c.activation)?)
    }

    /// Records one document's forward pass on `tape`. The tape may borrow any
    /// store laid out like `self.params`, which is how finite-difference
    /// checks perturb parameters.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        doc: &EncodedDocument,
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardVars, ModelError> {
        self.check_input(doc)?;
        let c = &self.config;
        let l = &self.layout;
        let affect = Array::new(vec![c.n_segments, NUM_FEATURES], doc.affect.flatten())?;
        let v_affect = tape.constant(affect);

        let mut v_topic = None;
        let mut v_concat = None;
        let mut v_fc = None;
        let mut l_t = None;
        let mut attention = None;
        if let (Some(tp), Some(fp)) = (&l.topic, &l.fusion) {
            let topic = self.topic_branch(tape, doc, tp)?;
            let concat = match c.mode {
                Mode::Full => tape.concat(topic, v_affect)?,
                _ => topic,
            };
            let dropped = tape.dropout(concat, c.dropout_rate, training, rng)?;
            let w_c = tape.param(fp.w_c);
            let b_c = tape.param(fp.b_c);
            let fc = tape.dense(dropped, w_c, b_c, c.activation)?;
            let weights = AttentionWeights {
                query: tape.param(fp.query),
                key: tape.param(fp.key),
                bias: tape.param(fp.att_bias),
                score: tape.param(fp.score),
            };
            let (context, w) = tape.attention(fc, weights)?;
            v_topic = Some(topic);
            v_concat = Some(concat);
            v_fc = Some(fc);
            l_t = Some(context);
            attention = Some(w);
        }

        let mut v_flow = None;
        if let Some((fw, bw)) = &l.flow {
            let gru = |tape: &mut Tape<'_>, g: &GruParams| GruWeights {
                input: tape.param(g.input),
                recurrent: tape.param(g.recurrent),
                bias: tape.param(g.bias),
            };
            let fwd = gru(tape, fw);
            let bwd = gru(tape, bw);
            v_flow = Some(tape.bigru(v_affect, fwd, bwd)?);
        }

        let merged = match (v_flow, l_t) {
            (Some(flow), Some(ctx)) => tape.mul(flow, ctx)?,
            (Some(flow), None) => flow,
            (None, Some(ctx)) => ctx,
            (None, None) => unreachable!("every mode uses at least one branch"),
        };
        let v_compact = tape.mean_rows(merged)?;
        let dropped = tape.dropout(v_compact, c.dropout_rate, training, rng)?;
        let w_d = tape.param(l.w_d);
        let b_d = tape.param(l.b_d);
        let v_final = tape.dense(dropped, w_d, b_d, c.activation)?;
        let w_out = tape.param(l.w_out);
        let b_out = tape.param(l.b_out);
        let logits = tape.dense(v_final, w_out, b_out, Activation::Identity)?;
        let probabilities = tape.softmax(logits)?;
        Ok(ForwardVars {
            v_topic,
            v_affect,
            v_concat,
            v_fc,
            l_t,
            attention,
            v_flow,
            v_compact,
            v_final,
            probabilities,
        })
    }

    /// Mean cross-entropy over a batch of labelled documents, each recorded
    /// as its own subgraph on the shared tape.
    pub fn batch_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        docs: &[&EncodedDocument],
        training: bool,
        rng: &mut R,
    ) -> Result<(Var, Vec<Var>), ModelError> {
        let mut losses = Vec::with_capacity(docs.len());
        let mut probs = Vec::with_capacity(docs.len());
        for doc in docs {
            let label = doc
                .label
                .ok_or_else(|| ModelError::Shape(format!("document `{}` has no label", doc.id)))?;
            let vars = self.forward(tape, doc, training, rng)?;
            losses.push(tape.cross_entropy(vars.probabilities, label.index())?);
            probs.push(vars.probabilities);
        }
        Ok((tape.mean(&losses)?, probs))
    }

    /// Inference-mode trace of one document.
    pub fn predict(&self, doc: &EncodedDocument) -> Result<ForwardTrace, ModelError> {
        let mut tape = Tape::new(&self.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let vars = self.forward(&mut tape, doc, false, &mut rng)?;
        Ok(vars.trace(&tape, self.config.mode))
    }

    /// Class probabilities without keeping the trace.
    pub fn predict_proba(&self, doc: &EncodedDocument) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new(&self.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let vars = self.forward(&mut tape, doc, false, &mut rng)?;
        Ok(tape.value(vars.probabilities).data().to_vec())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let header = Header {
            format: MAGIC_HEADER.into(),
            config: self.config.clone(),
        };
        Checkpoint::from_store(serde_json::to_string(&header).expect("config serializes"), &self.params)
    }

    pub fn save<W: Write>(&self, w: W) -> Result<(), ModelError> {
        Ok(self.checkpoint().write_to(w)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.checkpoint().to_bytes()
    }

    pub fn load<R: Read>(r: R) -> Result<Self, ModelError> {
        let ckpt = Checkpoint::read_from(r)?;
        let header: Header = serde_json::from_str(&ckpt.header).map_err(|e| ModelError::Format(e.to_string()))?;
        if header.format != MAGIC_HEADER {
            return Err(ModelError::Format(format!("unexpected header `{}`", header.format)));
        }
        let mut model = Self::new(header.config, 0)?;
        ckpt.load_into(&mut model.params)?;
        Ok(model)
    }
}
