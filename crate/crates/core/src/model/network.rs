//! Stream encoders, fusion head, and the per-sample forward/backward pass.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::DecisionSample;
use crate::error::{OscaError, Result};
use crate::labels::{ActionLabel, StateChangeClass, NUM_CLASSES};
use crate::mix_seed;

use super::layers::{BiLstm, BiLstmCache, Embedding, Mlp, MlpCache};
use super::{ModelConfig, PredictionDistribution, PROB_CLAMP};

const INIT_SALT: u64 = 0x1217_ab8c_90de_44f3;
/// The final fusion layer starts near zero so an untrained model predicts
/// close to the uniform distribution.
const FINAL_LAYER_SCALE: f64 = 0.01;

/// Handling of history tokens outside the trained vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OovPolicy {
    /// Reject with an error (training).
    Strict,
    /// Map to the reserved unknown row (inference).
    MapUnknown,
}

/// Histories supplied by a recognizer in place of the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct RecognizedHistories {
    pub action_history: Vec<ActionLabel>,
    pub state_history: Vec<StateChangeClass>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct VisualParams {
    pub lstm: BiLstm,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ActionParams {
    pub verb_emb: Embedding,
    pub noun_emb: Embedding,
    pub lstm: BiLstm,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StateParams {
    pub emb: Embedding,
    pub lstm: BiLstm,
    pub mlp: Mlp,
}

/// All trainable tensors of one model.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParamTree {
    pub visual: Option<VisualParams>,
    pub action: Option<ActionParams>,
    pub state: Option<StateParams>,
    pub fusion: Mlp,
}

impl ParamTree {
    /// Fresh parameters. Tensors are initialized in a fixed order (visual,
    /// action, state, fusion), so equal seeds give equal models.
    fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let visual = cfg.streams.visual.then(|| {
            let lstm = BiLstm::init(cfg.visual.hidden_size, cfg.feature_dim, rng);
            let mlp = Mlp::init(lstm.out_dim(), &cfg.visual.mlp_sizes, true, 1.0, rng);
            VisualParams { lstm, mlp }
        });
        let action = cfg.streams.action.then(|| {
            let e = cfg.action.embedding_dim;
            // One extra row per table for unknown tokens at inference.
            let verb_emb = Embedding::init(cfg.num_verbs + 1, e, rng);
            let noun_emb = Embedding::init(cfg.num_nouns + 1, e, rng);
            let lstm = BiLstm::init(cfg.action.hidden_size, 2 * e, rng);
            let mlp = Mlp::init(lstm.out_dim(), &cfg.action.mlp_sizes, true, 1.0, rng);
            ActionParams { verb_emb, noun_emb, lstm, mlp }
        });
        let state = cfg.streams.state.then(|| {
            let e = cfg.state.embedding_dim;
            let emb = Embedding::init(NUM_CLASSES, e, rng);
            let lstm = BiLstm::init(cfg.state.hidden_size, e, rng);
            let mlp = Mlp::init(lstm.out_dim(), &cfg.state.mlp_sizes, true, 1.0, rng);
            StateParams { emb, lstm, mlp }
        });
        let fusion = Mlp::init(
            cfg.fusion_in_dim(),
            &cfg.fusion_mlp,
            false,
            FINAL_LAYER_SCALE,
            rng,
        );
        ParamTree { visual, action, state, fusion }
    }

    pub(crate) fn zeros_like(other: &ParamTree) -> Self {
        ParamTree {
            visual: other.visual.as_ref().map(|v| VisualParams {
                lstm: BiLstm::zeros_like(&v.lstm),
                mlp: Mlp::zeros_like(&v.mlp),
            }),
            action: other.action.as_ref().map(|a| ActionParams {
                verb_emb: Embedding::zeros_like(&a.verb_emb),
                noun_emb: Embedding::zeros_like(&a.noun_emb),
                lstm: BiLstm::zeros_like(&a.lstm),
                mlp: Mlp::zeros_like(&a.mlp),
            }),
            state: other.state.as_ref().map(|s| StateParams {
                emb: Embedding::zeros_like(&s.emb),
                lstm: BiLstm::zeros_like(&s.lstm),
                mlp: Mlp::zeros_like(&s.mlp),
            }),
            fusion: Mlp::zeros_like(&other.fusion),
        }
    }

    pub(crate) fn zero(&mut self) {
        for (_, _, slice) in self.tensors_mut() {
            slice.fill(0.0);
        }
    }

    /// Named flat views of every tensor, in a fixed order shared with
    /// [`ParamTree::tensors_mut`]. Names look like `visual.lstm.fwd.w_x`.
    pub(crate) fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        fn mat<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, name: String, a: &'a Array2<f64>) {
            out.push((name, vec![a.nrows(), a.ncols()], a.as_slice().expect("standard layout")));
        }
        fn vec1<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, name: String, a: &'a Array1<f64>) {
            out.push((name, vec![a.len()], a.as_slice().expect("standard layout")));
        }
        fn lstm<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, prefix: &str, l: &'a BiLstm) {
            for (dir, p) in [("fwd", &l.fwd), ("bwd", &l.bwd)] {
                mat(out, format!("{prefix}.{dir}.w_x"), &p.w_x);
                mat(out, format!("{prefix}.{dir}.w_h"), &p.w_h);
                vec1(out, format!("{prefix}.{dir}.b"), &p.b);
            }
        }
        fn mlp<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, prefix: &str, m: &'a Mlp) {
            for (i, layer) in m.layers.iter().enumerate() {
                mat(out, format!("{prefix}.{i}.w"), &layer.w);
                vec1(out, format!("{prefix}.{i}.b"), &layer.b);
            }
        }
        if let Some(v) = &self.visual {
            lstm(&mut out, "visual.lstm", &v.lstm);
            mlp(&mut out, "visual.mlp", &v.mlp);
        }
        if let Some(a) = &self.action {
            mat(&mut out, "action.verb_emb.table".into(), &a.verb_emb.table);
            mat(&mut out, "action.noun_emb.table".into(), &a.noun_emb.table);
            lstm(&mut out, "action.lstm", &a.lstm);
            mlp(&mut out, "action.mlp", &a.mlp);
        }
        if let Some(s) = &self.state {
            mat(&mut out, "state.emb.table".into(), &s.emb.table);
            lstm(&mut out, "state.lstm", &s.lstm);
            mlp(&mut out, "state.mlp", &s.mlp);
        }
        mlp(&mut out, "fusion", &self.fusion);
        out
    }

    /// Mutable counterpart of [`ParamTree::tensors`], same order.
    pub(crate) fn tensors_mut(&mut self) -> Vec<(String, Vec<usize>, &mut [f64])> {
        let mut out: Vec<(String, Vec<usize>, &mut [f64])> = Vec::new();
        fn mat<'a>(
            out: &mut Vec<(String, Vec<usize>, &'a mut [f64])>,
            name: String,
            a: &'a mut Array2<f64>,
        ) {
            let shape = vec![a.nrows(), a.ncols()];
            out.push((name, shape, a.as_slice_mut().expect("standard layout")));
        }
        fn vec1<'a>(
            out: &mut Vec<(String, Vec<usize>, &'a mut [f64])>,
            name: String,
            a: &'a mut Array1<f64>,
        ) {
            let shape = vec![a.len()];
            out.push((name, shape, a.as_slice_mut().expect("standard layout")));
        }
        fn lstm<'a>(
            out: &mut Vec<(String, Vec<usize>, &'a mut [f64])>,
            prefix: &str,
            l: &'a mut BiLstm,
        ) {
            for (dir, p) in [("fwd", &mut l.fwd), ("bwd", &mut l.bwd)] {
                mat(out, format!("{prefix}.{dir}.w_x"), &mut p.w_x);
                mat(out, format!("{prefix}.{dir}.w_h"), &mut p.w_h);
                vec1(out, format!("{prefix}.{dir}.b"), &mut p.b);
            }
        }
        fn mlp<'a>(
            out: &mut Vec<(String, Vec<usize>, &'a mut [f64])>,
            prefix: &str,
            m: &'a mut Mlp,
        ) {
            for (i, layer) in m.layers.iter_mut().enumerate() {
                mat(out, format!("{prefix}.{i}.w"), &mut layer.w);
                vec1(out, format!("{prefix}.{i}.b"), &mut layer.b);
            }
        }
        if let Some(v) = &mut self.visual {
            lstm(&mut out, "visual.lstm", &mut v.lstm);
            mlp(&mut out, "visual.mlp", &mut v.mlp);
        }
        if let Some(a) = &mut self.action {
            mat(&mut out, "action.verb_emb.table".into(), &mut a.verb_emb.table);
            mat(&mut out, "action.noun_emb.table".into(), &mut a.noun_emb.table);
            lstm(&mut out, "action.lstm", &mut a.lstm);
            mlp(&mut out, "action.mlp", &mut a.mlp);
        }
        if let Some(s) = &mut self.state {
            mat(&mut out, "state.emb.table".into(), &mut s.emb.table);
            lstm(&mut out, "state.lstm", &mut s.lstm);
            mlp(&mut out, "state.mlp", &mut s.mlp);
        }
        mlp(&mut out, "fusion", &mut self.fusion);
        out
    }
}

/// Trained (or trainable) model parameters bound to a vocabulary fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    cfg: ModelConfig,
    vocab_fingerprint: String,
    seed: u64,
    tree: ParamTree,
}

impl ModelParams {
    /// Randomly initialized parameters; deterministic in (config, seed).
    pub fn init(cfg: ModelConfig, vocab_fingerprint: &str, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, INIT_SALT));
        let tree = ParamTree::init(&cfg, &mut rng);
        Ok(ModelParams {
            cfg,
            vocab_fingerprint: vocab_fingerprint.to_string(),
            seed,
            tree,
        })
    }

    /// All-zero parameters of the given shape (checkpoint loading target).
    pub(crate) fn zeros(cfg: ModelConfig, vocab_fingerprint: &str, seed: u64) -> Result<Self> {
        let mut params = ModelParams::init(cfg, vocab_fingerprint, seed)?;
        params.tree.zero();
        Ok(params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn vocab_fingerprint(&self) -> &str {
        &self.vocab_fingerprint
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Named shapes and flat values of every tensor.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        self.tree.tensors()
    }

    /// Mutable counterpart of [`ModelParams::tensors`], same order. Intended
    /// for custom optimizers and weight surgery.
    pub fn tensors_mut(&mut self) -> Vec<(String, Vec<usize>, &mut [f64])> {
        self.tree.tensors_mut()
    }

    pub(crate) fn tree(&self) -> &ParamTree {
        &self.tree
    }

    pub(crate) fn tree_mut(&mut self) -> &mut ParamTree {
        &mut self.tree
    }

    /// True iff every parameter is finite.
    pub fn all_finite(&self) -> bool {
        self.tree
            .tensors()
            .iter()
            .all(|(_, _, s)| s.iter().all(|v| v.is_finite()))
    }
}

struct VisualCache {
    lstm: BiLstmCache,
    mlp: MlpCache,
}

struct LexicalCache {
    /// Embedding row per step: (verb row, noun row) for actions, the class
    /// row alone for states.
    rows: Vec<(usize, usize)>,
    lstm: BiLstmCache,
    mlp: MlpCache,
}

/// Intermediate values of one forward pass, consumed by the backward pass.
pub struct ForwardCache {
    visual: Option<VisualCache>,
    action: Option<LexicalCache>,
    state: Option<LexicalCache>,
    fusion: MlpCache,
    probs: PredictionDistribution,
}

impl ForwardCache {
    pub fn probs(&self) -> &PredictionDistribution {
        &self.probs
    }
}

fn resolve_token(id: usize, known: usize, what: &str, oov: OovPolicy) -> Result<usize> {
    if id < known {
        Ok(id)
    } else {
        match oov {
            OovPolicy::Strict => Err(OscaError::Validation(format!(
                "{what} index {id} outside vocabulary of {known}"
            ))),
            // The reserved unknown row sits directly after the vocabulary.
            OovPolicy::MapUnknown => Ok(known),
        }
    }
}

fn run_visual(params: &VisualParams, window: &Array2<f64>, dim: usize) -> Result<VisualCache> {
    if window.ncols() != dim {
        return Err(OscaError::Shape(format!(
            "visual window has D={}, model expects D={dim}",
            window.ncols()
        )));
    }
    if window.nrows() == 0 {
        return Err(OscaError::Validation("visual window has no rows".into()));
    }
    if let Some(bad) = window.iter().find(|v| !v.is_finite()) {
        return Err(OscaError::Validation(format!(
            "visual window contains non-finite value {bad}"
        )));
    }
    let mut lstm = BiLstmCache::new();
    let lstm_out = params.lstm.forward(window, &mut lstm);
    let mut mlp = MlpCache::new();
    params.mlp.forward(&lstm_out, &mut mlp);
    Ok(VisualCache { lstm, mlp })
}

fn run_action(
    params: &ActionParams,
    history: &[ActionLabel],
    num_verbs: usize,
    num_nouns: usize,
    oov: OovPolicy,
) -> Result<LexicalCache> {
    if history.is_empty() {
        return Err(OscaError::Validation(
            "action history must have at least one token".into(),
        ));
    }
    let e = params.verb_emb.table.ncols();
    let mut rows = Vec::with_capacity(history.len());
    let mut embedded = Array2::zeros((history.len(), 2 * e));
    for (t, a) in history.iter().enumerate() {
        let vr = resolve_token(a.verb_id, num_verbs, "verb", oov)?;
        let nr = resolve_token(a.noun_id, num_nouns, "noun", oov)?;
        rows.push((vr, nr));
        embedded
            .row_mut(t)
            .slice_mut(ndarray::s![..e])
            .assign(&params.verb_emb.forward(vr));
        embedded
            .row_mut(t)
            .slice_mut(ndarray::s![e..])
            .assign(&params.noun_emb.forward(nr));
    }
    let mut lstm = BiLstmCache::new();
    let lstm_out = params.lstm.forward(&embedded, &mut lstm);
    let mut mlp = MlpCache::new();
    params.mlp.forward(&lstm_out, &mut mlp);
    Ok(LexicalCache { rows, lstm, mlp })
}

fn run_state(params: &StateParams, history: &[StateChangeClass]) -> Result<LexicalCache> {
    if history.is_empty() {
        return Err(OscaError::Validation(
            "state history must have at least one token".into(),
        ));
    }
    let e = params.emb.table.ncols();
    let mut rows = Vec::with_capacity(history.len());
    let mut embedded = Array2::zeros((history.len(), e));
    for (t, &s) in history.iter().enumerate() {
        let row = s.index();
        rows.push((row, 0));
        embedded.row_mut(t).assign(&params.emb.forward(row));
    }
    let mut lstm = BiLstmCache::new();
    let lstm_out = params.lstm.forward(&embedded, &mut lstm);
    let mut mlp = MlpCache::new();
    params.mlp.forward(&lstm_out, &mut mlp);
    Ok(LexicalCache { rows, lstm, mlp })
}

/// Full forward pass over the enabled streams of one sample.
pub fn forward_sample(
    params: &ModelParams,
    window: Option<&Array2<f64>>,
    action_history: &[ActionLabel],
    state_history: &[StateChangeClass],
    oov: OovPolicy,
) -> Result<(PredictionDistribution, ForwardCache)> {
    let cfg = &params.cfg;
    let visual = match &params.tree.visual {
        Some(v) => {
            let window = window.ok_or_else(|| {
                OscaError::Validation("model has a visual stream but no window was given".into())
            })?;
            Some(run_visual(v, window, cfg.feature_dim)?)
        }
        None => None,
    };
    let action = match &params.tree.action {
        Some(a) => Some(run_action(a, action_history, cfg.num_verbs, cfg.num_nouns, oov)?),
        None => None,
    };
    let state = match &params.tree.state {
        Some(s) => Some(run_state(s, state_history)?),
        None => None,
    };

    let mut fusion_input = Array1::zeros(cfg.fusion_in_dim());
    let mut cursor = 0;
    let mut append = |out: &Array1<f64>, fusion_input: &mut Array1<f64>| {
        fusion_input
            .slice_mut(ndarray::s![cursor..cursor + out.len()])
            .assign(out);
        cursor += out.len();
    };
    if let Some(v) = &visual {
        append(v.mlp.output(), &mut fusion_input);
    }
    if let Some(a) = &action {
        append(a.mlp.output(), &mut fusion_input);
    }
    if let Some(s) = &state {
        append(s.mlp.output(), &mut fusion_input);
    }

    let mut fusion = MlpCache::new();
    let logits = params.tree.fusion.forward(&fusion_input, &mut fusion);
    let probs = PredictionDistribution::from_logits(logits.as_slice().expect("contiguous"))?;
    Ok((
        probs.clone(),
        ForwardCache {
            visual,
            action,
            state,
            fusion,
            probs,
        },
    ))
}

/// Accumulates `scale * d(cross-entropy)/d(params)` for one sample into
/// `grads`, which must mirror the parameter tree's shape.
pub(crate) fn backward_sample(
    params: &ModelParams,
    cache: &ForwardCache,
    target: StateChangeClass,
    scale: f64,
    grads: &mut ParamTree,
) {
    // Softmax plus cross-entropy collapses to probs minus one-hot.
    let mut dlogits = Array1::from_iter(cache.probs.probs().iter().copied());
    dlogits[target.index()] -= 1.0;
    dlogits *= scale;

    let dfusion_in = params
        .tree
        .fusion
        .backward(&cache.fusion, &dlogits, &mut grads.fusion);

    let mut cursor = 0;
    if let (Some(vc), Some(vp)) = (&cache.visual, &params.tree.visual) {
        let gp = grads.visual.as_mut().expect("grads mirror params");
        let width = vp.mlp.out_dim(vp.lstm.out_dim());
        let dout = dfusion_in.slice(ndarray::s![cursor..cursor + width]).to_owned();
        cursor += width;
        let dlstm_out = vp.mlp.backward(&vc.mlp, &dout, &mut gp.mlp);
        vp.lstm.backward(&vc.lstm, &dlstm_out, &mut gp.lstm);
    }
    if let (Some(ac), Some(ap)) = (&cache.action, &params.tree.action) {
        let gp = grads.action.as_mut().expect("grads mirror params");
        let width = ap.mlp.out_dim(ap.lstm.out_dim());
        let dout = dfusion_in.slice(ndarray::s![cursor..cursor + width]).to_owned();
        cursor += width;
        let dlstm_out = ap.mlp.backward(&ac.mlp, &dout, &mut gp.mlp);
        let dembedded = ap.lstm.backward(&ac.lstm, &dlstm_out, &mut gp.lstm);
        let e = ap.verb_emb.table.ncols();
        for (t, &(vr, nr)) in ac.rows.iter().enumerate() {
            let drow = dembedded.row(t);
            ap.verb_emb
                .backward(vr, &drow.slice(ndarray::s![..e]), &mut gp.verb_emb);
            ap.noun_emb
                .backward(nr, &drow.slice(ndarray::s![e..]), &mut gp.noun_emb);
        }
    }
    if let (Some(sc), Some(sp)) = (&cache.state, &params.tree.state) {
        let gp = grads.state.as_mut().expect("grads mirror params");
        let width = sp.mlp.out_dim(sp.lstm.out_dim());
        let dout = dfusion_in.slice(ndarray::s![cursor..cursor + width]).to_owned();
        let dlstm_out = sp.mlp.backward(&sc.mlp, &dout, &mut gp.mlp);
        let dembedded = sp.lstm.backward(&sc.lstm, &dlstm_out, &mut gp.lstm);
        for (t, &(row, _)) in sc.rows.iter().enumerate() {
            sp.emb.backward(row, &dembedded.row(t), &mut gp.emb);
        }
    }
}

/// Cross-entropy loss of one sample and its gradient with respect to every
/// tensor. The gradient comes back as a second [`ModelParams`] of the same
/// shape, so [`ModelParams::tensors`] on both sides pairs each value with its
/// derivative. Meant for external optimizers and numeric gradient checks.
pub fn loss_and_gradients(
    params: &ModelParams,
    sample: &DecisionSample,
    oov: OovPolicy,
) -> Result<(f64, ModelParams)> {
    let (probs, cache) = forward_sample(
        params,
        Some(&sample.visual_window),
        &sample.action_history,
        &sample.state_history,
        oov,
    )?;
    let p = probs.prob(sample.target);
    if !p.is_finite() {
        return Err(OscaError::Train(format!(
            "non-finite prediction for video '{}', decision {}",
            sample.video_id, sample.decision_index
        )));
    }
    let loss = -p.max(PROB_CLAMP).ln();
    let mut tree = ParamTree::zeros_like(&params.tree);
    backward_sample(params, &cache, sample.target, 1.0, &mut tree);
    let grads = ModelParams {
        cfg: params.cfg.clone(),
        vocab_fingerprint: params.vocab_fingerprint.clone(),
        seed: params.seed,
        tree,
    };
    Ok((loss, grads))
}

/// Embedding of a feature window by the visual stream alone.
pub fn encode_visual(params: &ModelParams, window: &Array2<f64>) -> Result<Array1<f64>> {
    let vp = params.tree.visual.as_ref().ok_or_else(|| {
        OscaError::Validation("this model has no visual stream".into())
    })?;
    let cache = run_visual(vp, window, params.cfg.feature_dim)?;
    Ok(cache.mlp.output().clone())
}

/// Embedding of an action history by the action stream alone.
pub fn encode_action_history(
    params: &ModelParams,
    history: &[ActionLabel],
    oov: OovPolicy,
) -> Result<Array1<f64>> {
    let ap = params.tree.action.as_ref().ok_or_else(|| {
        OscaError::Validation("this model has no action stream".into())
    })?;
    let cache = run_action(ap, history, params.cfg.num_verbs, params.cfg.num_nouns, oov)?;
    Ok(cache.mlp.output().clone())
}

/// Embedding of a state history by the state stream alone.
pub fn encode_state_history(
    params: &ModelParams,
    history: &[StateChangeClass],
) -> Result<Array1<f64>> {
    let sp = params.tree.state.as_ref().ok_or_else(|| {
        OscaError::Validation("this model has no state stream".into())
    })?;
    let cache = run_state(sp, history)?;
    Ok(cache.mlp.output().clone())
}

/// Classifies from already-encoded stream vectors. Exactly the enabled
/// streams must be supplied, each with its trained width.
pub fn fuse_predict(
    params: &ModelParams,
    visual: Option<&Array1<f64>>,
    action: Option<&Array1<f64>>,
    state: Option<&Array1<f64>>,
) -> Result<PredictionDistribution> {
    let cfg = &params.cfg;
    let mut fusion_input = Array1::zeros(cfg.fusion_in_dim());
    let mut cursor = 0;
    for (name, enabled, width, vec) in [
        ("visual", cfg.streams.visual, cfg.visual.out_dim(), visual),
        ("action", cfg.streams.action, cfg.action.out_dim(), action),
        ("state", cfg.streams.state, cfg.state.out_dim(), state),
    ] {
        match (enabled, vec) {
            (true, Some(v)) => {
                if v.len() != width {
                    return Err(OscaError::Shape(format!(
                        "{name} vector has width {}, expected {width}",
                        v.len()
                    )));
                }
                fusion_input
                    .slice_mut(ndarray::s![cursor..cursor + width])
                    .assign(v);
                cursor += width;
            }
            (true, None) => {
                return Err(OscaError::Validation(format!(
                    "{name} stream is enabled but no vector was supplied"
                )))
            }
            (false, Some(_)) => {
                return Err(OscaError::Validation(format!(
                    "{name} stream is disabled for this model"
                )))
            }
            (false, None) => {}
        }
    }
    let mut cache = MlpCache::new();
    let logits = params.tree.fusion.forward(&fusion_input, &mut cache);
    PredictionDistribution::from_logits(logits.as_slice().expect("contiguous"))
}

/// Inference on one decision sample.
///
/// `recognized` histories, when given, replace the sample's ground-truth
/// histories (they must have the same length); unknown tokens map to the
/// reserved row. Disabled streams ignore their inputs entirely.
pub fn predict(
    sample: &DecisionSample,
    params: &ModelParams,
    recognized: Option<&RecognizedHistories>,
) -> Result<PredictionDistribution> {
    let (actions, states): (&[ActionLabel], &[StateChangeClass]) = match recognized {
        Some(r) => {
            if r.action_history.len() != sample.action_history.len()
                || r.state_history.len() != sample.state_history.len()
            {
                return Err(OscaError::Validation(format!(
                    "recognized history lengths ({}, {}) disagree with the sample's ({}, {})",
                    r.action_history.len(),
                    r.state_history.len(),
                    sample.action_history.len(),
                    sample.state_history.len()
                )));
            }
            (&r.action_history, &r.state_history)
        }
        None => (&sample.action_history, &sample.state_history),
    };
    let (probs, _) = forward_sample(
        params,
        Some(&sample.visual_window),
        actions,
        states,
        OovPolicy::MapUnknown,
    )?;
    Ok(probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::LabelVocabulary;
    use crate::model::{loss, EncoderConfig, StreamSet};
    use rand::Rng;

    fn tiny_vocab() -> LabelVocabulary {
        LabelVocabulary::new(
            vec!["open".into(), "close".into(), "lift".into()],
            vec!["cup".into(), "lid".into()],
        )
        .unwrap()
    }

    fn tiny_cfg(streams: StreamSet) -> ModelConfig {
        let enc = |h, e| EncoderConfig {
            hidden_size: h,
            mlp_sizes: vec![3],
            embedding_dim: e,
        };
        ModelConfig {
            streams,
            visual: enc(2, 1),
            action: enc(2, 2),
            state: enc(2, 2),
            fusion_mlp: vec![4, NUM_CLASSES],
            feature_dim: 3,
            num_verbs: 3,
            num_nouns: 2,
        }
    }

    fn tiny_params(streams: StreamSet, seed: u64) -> ModelParams {
        ModelParams::init(tiny_cfg(streams), &tiny_vocab().fingerprint(), seed).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_window(r: &mut ChaCha8Rng, t: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((t, d), |_| r.random_range(-1.0..=1.0))
    }

    fn sample_histories() -> (Vec<ActionLabel>, Vec<StateChangeClass>) {
        use StateChangeClass::*;
        (
            vec![ActionLabel::new(0, 1), ActionLabel::new(2, 0), ActionLabel::new(1, 1)],
            vec![Deposit, NoOsc, Remove],
        )
    }

    #[test]
    fn forward_produces_normalized_distribution() {
        let params = tiny_params(StreamSet::ALL, 3);
        let mut r = rng(11);
        let (actions, states) = sample_histories();
        for _ in 0..20 {
            let window = random_window(&mut r, 4, 3);
            let (probs, _) =
                forward_sample(&params, Some(&window), &actions, &states, OovPolicy::Strict)
                    .unwrap();
            let sum: f64 = probs.probs().iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(probs.probs().iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn untrained_model_is_near_uniform() {
        let params = tiny_params(StreamSet::ALL, 4);
        let (actions, states) = sample_histories();
        let window = random_window(&mut rng(12), 4, 3);
        let (probs, _) =
            forward_sample(&params, Some(&window), &actions, &states, OovPolicy::Strict).unwrap();
        let l = loss(&[probs], &[StateChangeClass::Deposit]).unwrap();
        assert!((l - 9.0_f64.ln()).abs() < 0.1, "init loss {l}");
    }

    #[test]
    fn zeroed_fusion_head_gives_uniform_distribution() {
        let mut params = tiny_params(StreamSet::ALL, 5);
        for (name, _, slice) in params.tree_mut().tensors_mut() {
            if name.starts_with("fusion.") {
                slice.fill(0.0);
            }
        }
        let (actions, states) = sample_histories();
        let window = random_window(&mut rng(13), 2, 3);
        let (probs, _) =
            forward_sample(&params, Some(&window), &actions, &states, OovPolicy::Strict).unwrap();
        for &p in probs.probs() {
            assert!((p - 1.0 / 9.0).abs() < 1e-12);
        }
    }

    /// Every parameter gradient of the full three-stream network against
    /// central finite differences.
    #[test]
    fn full_network_gradients_match_finite_differences() {
        let params = tiny_params(StreamSet::ALL, 6);
        let (actions, states) = sample_histories();
        let window = random_window(&mut rng(14), 3, 3);
        let target = StateChangeClass::Construct;

        let objective = |p: &ModelParams| {
            let (probs, _) =
                forward_sample(p, Some(&window), &actions, &states, OovPolicy::Strict).unwrap();
            loss(&[probs], &[target]).unwrap()
        };

        let (_, cache) =
            forward_sample(&params, Some(&window), &actions, &states, OovPolicy::Strict).unwrap();
        let mut grads = ParamTree::zeros_like(params.tree());
        backward_sample(&params, &cache, target, 1.0, &mut grads);
        let grad_tensors = grads.tensors();

        let h = 1e-5;
        let mut checked = 0;
        for (k, (name, _, gslice)) in grad_tensors.iter().enumerate() {
            for i in 0..gslice.len() {
                let mut plus = params.clone();
                plus.tree_mut().tensors_mut()[k].2[i] += h;
                let mut minus = params.clone();
                minus.tree_mut().tensors_mut()[k].2[i] -= h;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let analytic = gslice[i];
                let denom = analytic.abs().max(numeric.abs()).max(1e-4);
                assert!(
                    (analytic - numeric).abs() / denom < 1e-4,
                    "{name}[{i}]: analytic {analytic} vs numeric {numeric}"
                );
                checked += 1;
            }
        }
        assert!(checked > 300, "checked only {checked} parameters");
    }

    #[test]
    fn single_stream_gradients_match_finite_differences() {
        for streams in [
            StreamSet { visual: true, action: false, state: false },
            StreamSet { visual: false, action: true, state: false },
            StreamSet { visual: false, action: false, state: true },
        ] {
            let params = tiny_params(streams, 7);
            let (actions, states) = sample_histories();
            let window = random_window(&mut rng(15), 2, 3);
            let target = StateChangeClass::Other;
            let objective = |p: &ModelParams| {
                let (probs, _) =
                    forward_sample(p, Some(&window), &actions, &states, OovPolicy::Strict)
                        .unwrap();
                loss(&[probs], &[target]).unwrap()
            };
            let (_, cache) =
                forward_sample(&params, Some(&window), &actions, &states, OovPolicy::Strict)
                    .unwrap();
            let mut grads = ParamTree::zeros_like(params.tree());
            backward_sample(&params, &cache, target, 1.0, &mut grads);
            let h = 1e-5;
            for (k, (name, _, gslice)) in grads.tensors().iter().enumerate() {
                for i in 0..gslice.len() {
                    let mut plus = params.clone();
                    plus.tree_mut().tensors_mut()[k].2[i] += h;
                    let mut minus = params.clone();
                    minus.tree_mut().tensors_mut()[k].2[i] -= h;
                    let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
                    let analytic = gslice[i];
                    let denom = analytic.abs().max(numeric.abs()).max(1e-4);
                    assert!(
                        (analytic - numeric).abs() / denom < 1e-4,
                        "[{streams}] {name}[{i}]: {analytic} vs {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn time_permutation_changes_visual_encoding() {
        let params = tiny_params(StreamSet::ALL, 8);
        let mut r = rng(16);
        let mut changed = 0;
        for _ in 0..20 {
            let window = random_window(&mut r, 4, 3);
            let mut permuted = window.clone();
            // Swap the first two time steps.
            let row0 = window.row(0).to_owned();
            let row1 = window.row(1).to_owned();
            permuted.row_mut(0).assign(&row1);
            permuted.row_mut(1).assign(&row0);
            let a = encode_visual(&params, &window).unwrap();
            let b = encode_visual(&params, &permuted).unwrap();
            if (&a - &b).mapv(f64::abs).sum() > 1e-9 {
                changed += 1;
            }
        }
        assert!(changed >= 19, "only {changed}/20 permutations changed the code");
    }

    #[test]
    fn single_token_histories_encode() {
        let params = tiny_params(StreamSet::ALL, 9);
        let a = encode_action_history(&params, &[ActionLabel::new(1, 1)], OovPolicy::Strict)
            .unwrap();
        assert_eq!(a.len(), 3);
        let s = encode_state_history(&params, &[StateChangeClass::Deposit]).unwrap();
        assert_eq!(s.len(), 3);
        assert!(a.iter().chain(s.iter()).all(|v| v.is_finite()));
    }

    #[test]
    fn noun_change_and_order_change_move_the_encodings() {
        use StateChangeClass::*;
        let params = tiny_params(StreamSet::ALL, 10);
        let base = vec![ActionLabel::new(0, 0), ActionLabel::new(2, 1)];
        let nudged = vec![ActionLabel::new(0, 1), ActionLabel::new(2, 1)];
        let a = encode_action_history(&params, &base, OovPolicy::Strict).unwrap();
        let b = encode_action_history(&params, &nudged, OovPolicy::Strict).unwrap();
        assert!((&a - &b).mapv(f64::abs).sum() > 1e-9);

        let s1 = encode_state_history(&params, &[Deposit, Remove]).unwrap();
        let s2 = encode_state_history(&params, &[Remove, Deposit]).unwrap();
        assert!((&s1 - &s2).mapv(f64::abs).sum() > 1e-9);
    }

    #[test]
    fn all_zero_window_encodes_finitely() {
        let params = tiny_params(StreamSet::ALL, 11);
        let window = Array2::zeros((3, 3));
        let v = encode_visual(&params, &window).unwrap();
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn wrong_dimension_is_a_shape_error() {
        let params = tiny_params(StreamSet::ALL, 12);
        let window = Array2::zeros((3, 5));
        assert!(matches!(
            encode_visual(&params, &window),
            Err(OscaError::Shape(_))
        ));
    }

    #[test]
    fn oov_policy_controls_unknown_tokens() {
        let params = tiny_params(StreamSet::ALL, 13);
        let history = vec![ActionLabel::new(99, 0)];
        assert!(encode_action_history(&params, &history, OovPolicy::Strict).is_err());
        let unk = encode_action_history(&params, &history, OovPolicy::MapUnknown).unwrap();
        assert!(unk.iter().all(|v| v.is_finite()));
        // The unknown row is its own embedding, distinct from real verbs.
        let known = encode_action_history(&params, &[ActionLabel::new(0, 0)], OovPolicy::Strict)
            .unwrap();
        assert!((&unk - &known).mapv(f64::abs).sum() > 1e-9);
    }

    #[test]
    fn fuse_predict_validates_stream_vectors() {
        let params = tiny_params(StreamSet::ALL, 14);
        let v = Array1::zeros(3);
        let a = Array1::zeros(3);
        let s = Array1::zeros(3);
        fuse_predict(&params, Some(&v), Some(&a), Some(&s)).unwrap();
        assert!(fuse_predict(&params, Some(&v), Some(&a), None).is_err());
        let wide = Array1::zeros(5);
        assert!(fuse_predict(&params, Some(&wide), Some(&a), Some(&s)).is_err());

        let vid_only = tiny_params(
            StreamSet { visual: true, action: false, state: false },
            14,
        );
        fuse_predict(&vid_only, Some(&v), None, None).unwrap();
        assert!(fuse_predict(&vid_only, Some(&v), Some(&a), None).is_err());
    }

    #[test]
    fn visual_only_model_ignores_history_override() {
        use StateChangeClass::*;
        let params = tiny_params(StreamSet { visual: true, action: false, state: false }, 15);
        let (actions, states) = sample_histories();
        let sample = DecisionSample {
            video_id: "v".into(),
            decision_index: 3,
            visual_window: random_window(&mut rng(17), 3, 3),
            action_history: actions,
            state_history: states,
            target: Deposit,
        };
        let plain = predict(&sample, &params, None).unwrap();
        let scrambled = RecognizedHistories {
            action_history: vec![ActionLabel::new(1, 0); 3],
            state_history: vec![Deform; 3],
        };
        let overridden = predict(&sample, &params, Some(&scrambled)).unwrap();
        assert_eq!(plain, overridden);
    }

    #[test]
    fn recognized_history_length_mismatch_is_rejected() {
        use StateChangeClass::*;
        let params = tiny_params(StreamSet::ALL, 16);
        let (actions, states) = sample_histories();
        let sample = DecisionSample {
            video_id: "v".into(),
            decision_index: 3,
            visual_window: random_window(&mut rng(18), 3, 3),
            action_history: actions,
            state_history: states,
            target: Deposit,
        };
        let short = RecognizedHistories {
            action_history: vec![ActionLabel::new(0, 0)],
            state_history: vec![Deposit],
        };
        assert!(predict(&sample, &params, Some(&short)).is_err());
    }

    #[test]
    fn same_seed_same_model_different_seed_different_model() {
        let a = tiny_params(StreamSet::ALL, 20);
        let b = tiny_params(StreamSet::ALL, 20);
        let c = tiny_params(StreamSet::ALL, 21);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn tensor_views_align_between_const_and_mut() {
        let mut params = tiny_params(StreamSet::ALL, 22);
        let names: Vec<String> = params.tensors().iter().map(|(n, _, _)| n.clone()).collect();
        let names_mut: Vec<String> = params
            .tree_mut()
            .tensors_mut()
            .iter()
            .map(|(n, _, _)| n.clone())
            .collect();
        assert_eq!(names, names_mut);
        assert!(names.contains(&"visual.lstm.fwd.w_x".to_string()));
        assert!(names.contains(&"action.verb_emb.table".to_string()));
        assert!(names.contains(&"fusion.1.b".to_string()));
    }
}
