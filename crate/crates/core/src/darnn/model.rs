use super::{AttributionRecord, DarnnParams, EncodedSequence, LstmIds, MlpIds};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Source of the previous-click input fed to the decoder.
#[derive(Clone, Copy, Debug)]
pub enum ClickFeed<'a> {
    /// Ground-truth labels (training).
    Teacher(&'a [bool]),
    /// The decoder's own prediction, thresholded at 0.5 (inference).
    Predicted,
}

/// Graph nodes of one sequence's forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub x_last: Var,
    pub encoder_states: Vec<Var>,
    /// One `[1]` node per touch point; empty in ARNN mode.
    pub click_probs: Vec<Var>,
    pub a_i2v: Var,
    pub c_i2v: Var,
    pub a_c2v: Option<Var>,
    pub lambda: Option<Var>,
    /// `None` when the conversion head was not requested.
    pub conversion_prob: Option<Var>,
}

fn lstm_step(g: &mut Graph, ids: LstmIds, hidden: usize, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let w = g.param(ids.w);
    let b = g.param(ids.b);
    let xh = g.concat(&[x, h])?;
    let z = g.matmul(w, xh)?;
    let z = g.add(z, b)?;
    let i = g.slice(z, 0, hidden)?;
    let i = g.sigmoid(i);
    let f = g.slice(z, hidden, hidden)?;
    let f = g.sigmoid(f);
    let cand = g.slice(z, 2 * hidden, hidden)?;
    let cand = g.tanh(cand);
    let o = g.slice(z, 3 * hidden, hidden)?;
    let o = g.sigmoid(o);
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// Linear scalar output of a one-hidden-layer tanh network.
fn mlp(g: &mut Graph, ids: MlpIds, x: Var) -> Result<Var> {
    let w1 = g.param(ids.w1);
    let b1 = g.param(ids.b1);
    let w2 = g.param(ids.w2);
    let b2 = g.param(ids.b2);
    let h = g.matmul(w1, x)?;
    let h = g.add(h, b1)?;
    let h = g.tanh(h);
    let o = g.matmul(w2, h)?;
    g.add(o, b2)
}

/// Concatenated embedding rows of one touch point.
pub fn embed(g: &mut Graph, params: &DarnnParams, rows: &[usize]) -> Result<Var> {
    let dims = params.dims();
    if rows.len() != dims.num_fields {
        return Err(Error::Contract(format!(
            "touch point has {} fields, model expects {}",
            rows.len(),
            dims.num_fields
        )));
    }
    let parts = rows
        .iter()
        .map(|&r| g.lookup(params.ids().embedding, r))
        .collect::<Result<Vec<_>>>()?;
    g.concat(&parts)
}

/// Encoder states `h_1..h_m` from zero initial state.
pub fn encode(g: &mut Graph, params: &DarnnParams, xs: &[Var]) -> Result<Vec<Var>> {
    if xs.is_empty() {
        return Err(Error::Contract("cannot encode an empty sequence".into()));
    }
    let hidden = params.config().hidden_size;
    let mut h = g.constant(Tensor::zeros(&[hidden]));
    let mut c = h;
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        (h, c) = lstm_step(g, params.ids().encoder, hidden, x, h, c)?;
        out.push(h);
    }
    Ok(out)
}

/// Decoder states `s_1..s_m` and click probabilities `ẑ_1..ẑ_m`. The input
/// at step j is `[z_{j-1}; h_m]` with `z_0 = 0`.
pub fn decode(
    g: &mut Graph,
    params: &DarnnParams,
    encoder_states: &[Var],
    feed: ClickFeed,
) -> Result<(Vec<Var>, Vec<Var>)> {
    let dual = params
        .ids()
        .dual
        .ok_or_else(|| Error::Contract("ARNN mode has no decoder".into()))?;
    let m = encoder_states.len();
    let Some(&h_last) = encoder_states.last() else {
        return Err(Error::Contract("cannot decode an empty sequence".into()));
    };
    if let ClickFeed::Teacher(z) = feed {
        if z.len() != m {
            return Err(Error::Contract(format!(
                "{} click labels for {m} encoder states",
                z.len()
            )));
        }
    }
    let hidden = params.config().hidden_size;
    let mut s = g.constant(Tensor::zeros(&[hidden]));
    let mut c = s;
    let mut prev = 0.0;
    let (mut states, mut probs) = (Vec::with_capacity(m), Vec::with_capacity(m));
    for j in 0..m {
        let z_prev = g.constant(Tensor::scalar(prev));
        let input = g.concat(&[z_prev, h_last])?;
        (s, c) = lstm_step(g, dual.decoder, hidden, input, s, c)?;
        let head_in = g.concat(&[z_prev, s])?;
        let logit = mlp(g, dual.click, head_in)?;
        let p = g.sigmoid(logit);
        prev = match feed {
            ClickFeed::Teacher(z) => f64::from(u8::from(z[j])),
            ClickFeed::Predicted => f64::from(u8::from(g.scalar(p) >= 0.5)),
        };
        states.push(s);
        probs.push(p);
    }
    Ok((states, probs))
}

/// Softmax attention of `states` keyed on the last touch point's embedding;
/// returns the weights and the context vector.
pub fn attention(g: &mut Graph, states: &[Var], x_last: Var, energy: MlpIdsRef) -> Result<(Var, Var)> {
    if states.is_empty() {
        return Err(Error::Contract("attention over zero states".into()));
    }
    let energies = states
        .iter()
        .map(|&s| {
            let input = g.concat(&[s, x_last])?;
            mlp(g, energy.0, input)
        })
        .collect::<Result<Vec<_>>>()?;
    let e = g.concat(&energies)?;
    let a = g.softmax(e)?;
    let hs = g.stack(states)?;
    let c = g.matmul(a, hs)?;
    Ok((a, c))
}

/// Opaque handle to one of the model's energy networks.
#[derive(Clone, Copy, Debug)]
pub struct MlpIdsRef(pub(crate) MlpIds);

impl DarnnParams {
    pub fn energy_i2v(&self) -> MlpIdsRef {
        MlpIdsRef(self.ids().energy_i2v)
    }

    /// `None` in ARNN mode.
    pub fn energy_c2v(&self) -> Option<MlpIdsRef> {
        self.ids().dual.map(|d| MlpIdsRef(d.energy_c2v))
    }
}

/// Weight of the click-level context: the second component of a two-way
/// softmax over `f_λ([x_m; c_i2v])` and `f_λ([x_m; c_c2v])`.
pub fn lambda_gate(g: &mut Graph, params: &DarnnParams, x_last: Var, c_i2v: Var, c_c2v: Var) -> Result<Var> {
    let dual = params
        .ids()
        .dual
        .ok_or_else(|| Error::Contract("ARNN mode has no gate".into()))?;
    let in_i = g.concat(&[x_last, c_i2v])?;
    let s_i = mlp(g, dual.lambda, in_i)?;
    let in_c = g.concat(&[x_last, c_c2v])?;
    let s_c = mlp(g, dual.lambda, in_c)?;
    let scores = g.concat(&[s_i, s_c])?;
    let w = g.softmax(scores)?;
    g.slice(w, 1, 1)
}

/// Builds the forward pass of one sequence. With `conversion` false only the
/// click path is evaluated.
pub fn forward(
    g: &mut Graph,
    params: &DarnnParams,
    seq: &EncodedSequence,
    feed: ClickFeed,
    conversion: bool,
) -> Result<Forward> {
    if seq.is_empty() {
        return Err(Error::Contract("empty sequence".into()));
    }
    let xs = seq
        .features
        .iter()
        .map(|rows| embed(g, params, rows))
        .collect::<Result<Vec<_>>>()?;
    let x_last = xs[xs.len() - 1];
    let enc = encode(g, params, &xs)?;
    let (dec, click_probs) = match params.ids().dual {
        Some(_) => decode(g, params, &enc, feed)?,
        None => (Vec::new(), Vec::new()),
    };
    let (a_i2v, c_i2v) = attention(g, &enc, x_last, params.energy_i2v())?;
    let mut out = Forward {
        x_last,
        encoder_states: enc,
        click_probs,
        a_i2v,
        c_i2v,
        a_c2v: None,
        lambda: None,
        conversion_prob: None,
    };
    let conv = params.ids().conv;
    let mixed = match params.energy_c2v() {
        Some(energy) => {
            let (a_c2v, c_c2v) = attention(g, &dec, x_last, energy)?;
            let lambda = lambda_gate(g, params, x_last, c_i2v, c_c2v)?;
            out.a_c2v = Some(a_c2v);
            out.lambda = Some(lambda);
            if !conversion {
                return Ok(out);
            }
            let keep = g.one_minus(lambda);
            let part_i = g.scalar_mul(keep, c_i2v)?;
            let part_c = g.scalar_mul(lambda, c_c2v)?;
            g.add(part_i, part_c)?
        }
        None if !conversion => return Ok(out),
        None => c_i2v,
    };
    let logit = mlp(g, conv, mixed)?;
    out.conversion_prob = Some(g.sigmoid(logit));
    Ok(out)
}

/// Summed cross-entropy of the click predictions against the labels.
pub fn click_loss(g: &mut Graph, click_probs: &[Var], clicks: &[bool]) -> Result<Var> {
    if click_probs.len() != clicks.len() {
        return Err(Error::Contract(format!(
            "{} click predictions for {} labels",
            click_probs.len(),
            clicks.len()
        )));
    }
    if click_probs.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let p = g.concat(click_probs)?;
    let z: Vec<f64> = clicks.iter().map(|&c| f64::from(u8::from(c))).collect();
    g.bce(p, &z)
}

pub fn conversion_loss(g: &mut Graph, conversion_prob: Var, converted: bool) -> Result<Var> {
    g.bce(conversion_prob, &[f64::from(u8::from(converted))])
}

fn record(g: &Graph, f: &Forward) -> Result<AttributionRecord> {
    let a_i2v = g.value(f.a_i2v).data().to_vec();
    let a_c2v = f.a_c2v.map(|a| g.value(a).data().to_vec());
    let lambda = f.lambda.map_or(0.0, |l| g.scalar(l));
    let conversion_prob = f
        .conversion_prob
        .map(|p| g.scalar(p))
        .ok_or_else(|| Error::Contract("forward pass built without conversion head".into()))?;
    let click_probs = f.click_probs.iter().map(|&p| g.scalar(p)).collect();
    if !conversion_prob.is_finite() || !lambda.is_finite() || a_i2v.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("model output".into()));
    }
    let (attr, a_i2v, a_c2v) = AttributionRecord::combine(a_i2v, a_c2v, lambda);
    Ok(AttributionRecord {
        a_i2v,
        a_c2v,
        lambda,
        attr,
        conversion_prob,
        click_probs,
    })
}

/// Inference on one encoded sequence, feeding back predicted clicks.
pub fn predict_encoded(params: &DarnnParams, seq: &EncodedSequence) -> Result<AttributionRecord> {
    let mut g = Graph::new(params.store());
    let f = forward(&mut g, params, seq, ClickFeed::Predicted, true)?;
    record(&g, &f)
}

/// Conversion probability of a sequence together with its attribution.
pub fn predict_conversion(
    params: &DarnnParams,
    seq: &crate::seqdata::Sequence,
    vocab: &crate::seqdata::FeatureVocab,
) -> Result<(f64, AttributionRecord)> {
    if vocab.size() != params.dims().vocab_size || vocab.num_fields() != params.dims().num_fields {
        return Err(Error::Contract("vocabulary does not match the model".into()));
    }
    let r = predict_encoded(params, &EncodedSequence::new(seq, vocab))?;
    Ok((r.conversion_prob, r))
}

pub fn attribute_encoded(params: &DarnnParams, seqs: &[EncodedSequence]) -> Result<Vec<AttributionRecord>> {
    seqs.iter().map(|s| predict_encoded(params, s)).collect()
}

pub fn attribute(
    params: &DarnnParams,
    seqs: &[crate::seqdata::Sequence],
    vocab: &crate::seqdata::FeatureVocab,
) -> Result<Vec<AttributionRecord>> {
    seqs.iter()
        .map(|s| predict_conversion(params, s, vocab).map(|(_, r)| r))
        .collect()
}
