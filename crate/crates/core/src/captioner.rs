//! Gated recurrent caption generator: forward step, teacher-forced loss,
//! reverse-mode gradients and the training loop.
//!
//! The cell reads `[x_t ; v_img]` where `x_t = U[w_t]`. Its input weights are
//! stored split into a word part and an image part; the image part plus the
//! gate bias is computed once per caption.
//!
//! ```text
//! h_0 = tanh(W_init v + b_init)
//! z   = σ(Wx_z x + Wv_z v + U_z h + b_z)
//! r   = σ(Wx_r x + Wv_r v + U_r h + b_r)
//! c   = tanh(Wx_c x + Wv_c v + U_c (r ⊙ h) + b_c)
//! h'  = (1 − z) ⊙ h + z ⊙ c
//! logits = M h' + b_out
//! ```

use crate::converter::{Affine, EmbeddingTables};
use crate::error::{Error, Result};
use crate::model::{CaptionModel, ModelParams};
use crate::numerics::{
    matvec_add_into, matvec_transpose_add_into, outer_add_into, softmax, Matrix, SeededRng, Vector,
};
use crate::vocab::{TokenId, TokenKind, Number, BOS};

#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub w_input_z: Matrix,
    pub w_input_r: Matrix,
    pub w_input_c: Matrix,
    pub w_image_z: Matrix,
    pub w_image_r: Matrix,
    pub w_image_c: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_c: Matrix,
    pub b_z: Vector,
    pub b_r: Vector,
    pub b_c: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionerParams {
    pub cell: GruCell,
    /// Maps the image feature to the initial hidden state (through tanh).
    pub init: Affine,
}

/// Per-image quantities shared by every step of one caption.
#[derive(Clone, Debug)]
pub struct ImageContext {
    pub h0: Vector,
    image_z: Vec<f64>,
    image_r: Vec<f64>,
    image_c: Vec<f64>,
}

#[derive(Clone, Debug)]
struct StepState {
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
    rh: Vec<f64>,
    h: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl CaptionerParams {
    pub fn init(embed_dim: usize, feature_dim: usize, hidden_dim: usize, rng: &mut SeededRng) -> Self {
        let bound_in = 1.0 / ((embed_dim + feature_dim) as f64).sqrt();
        let bound_h = 1.0 / (hidden_dim as f64).sqrt();
        let mut m = |rows: usize, cols: usize, bound: f64| {
            let data = (0..rows * cols).map(|_| rng.uniform_range(-bound, bound)).collect();
            Matrix::from_vec(rows, cols, data).expect("shape")
        };
        let cell = GruCell {
            w_input_z: m(hidden_dim, embed_dim, bound_in),
            w_input_r: m(hidden_dim, embed_dim, bound_in),
            w_input_c: m(hidden_dim, embed_dim, bound_in),
            w_image_z: m(hidden_dim, feature_dim, bound_in),
            w_image_r: m(hidden_dim, feature_dim, bound_in),
            w_image_c: m(hidden_dim, feature_dim, bound_in),
            u_z: m(hidden_dim, hidden_dim, bound_h),
            u_r: m(hidden_dim, hidden_dim, bound_h),
            u_c: m(hidden_dim, hidden_dim, bound_h),
            b_z: Vector::zeros(hidden_dim),
            b_r: Vector::zeros(hidden_dim),
            b_c: Vector::zeros(hidden_dim),
        };
        let init = Affine {
            weight: m(hidden_dim, feature_dim, 1.0 / (feature_dim as f64).sqrt()),
            bias: Vector::zeros(hidden_dim),
        };
        CaptionerParams { cell, init }
    }

    pub fn hidden_dim(&self) -> usize {
        self.cell.u_z.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.cell.w_input_z.cols()
    }

    pub fn feature_dim(&self) -> usize {
        self.cell.w_image_z.cols()
    }

    pub fn image_context(&self, feature: &[f64]) -> Result<ImageContext> {
        if feature.len() != self.feature_dim() {
            return Err(Error::shape(format!(
                "image feature has dimension {}, captioner expects {}",
                feature.len(),
                self.feature_dim()
            )));
        }
        let h = self.hidden_dim();
        let mut h0 = vec![0.0; h];
        self.init.apply_into(feature, &mut h0);
        for v in &mut h0 {
            *v = v.tanh();
        }
        let gate = |w: &Matrix, b: &Vector| {
            let mut out = b.as_slice().to_vec();
            matvec_add_into(w, feature, &mut out);
            out
        };
        Ok(ImageContext {
            h0: Vector::from_vec(h0),
            image_z: gate(&self.cell.w_image_z, &self.cell.b_z),
            image_r: gate(&self.cell.w_image_r, &self.cell.b_r),
            image_c: gate(&self.cell.w_image_c, &self.cell.b_c),
        })
    }

    fn step(&self, ctx: &ImageContext, x: &[f64], h_prev: &[f64]) -> StepState {
        let cell = &self.cell;
        let n = self.hidden_dim();
        let mut z = ctx.image_z.clone();
        matvec_add_into(&cell.w_input_z, x, &mut z);
        matvec_add_into(&cell.u_z, h_prev, &mut z);
        let mut r = ctx.image_r.clone();
        matvec_add_into(&cell.w_input_r, x, &mut r);
        matvec_add_into(&cell.u_r, h_prev, &mut r);
        for i in 0..n {
            z[i] = sigmoid(z[i]);
            r[i] = sigmoid(r[i]);
        }
        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let mut c = ctx.image_c.clone();
        matvec_add_into(&cell.w_input_c, x, &mut c);
        matvec_add_into(&cell.u_c, &rh, &mut c);
        let mut h = vec![0.0; n];
        for i in 0..n {
            c[i] = c[i].tanh();
            h[i] = (1.0 - z[i]) * h_prev[i] + z[i] * c[i];
        }
        StepState { z, r, c, rh, h }
    }

    /// One decode step from a prepared image context: returns the logits and
    /// the new hidden state.
    pub fn step_logits(
        &self,
        ctx: &ImageContext,
        tables: &EmbeddingTables,
        state: &[f64],
        w_prev: TokenId,
    ) -> Result<(Vector, Vector)> {
        if w_prev.index() >= tables.vocab_size() {
            return Err(Error::data(format!(
                "token {w_prev} outside vocabulary of {}",
                tables.vocab_size()
            )));
        }
        if state.len() != self.hidden_dim() {
            return Err(Error::shape(format!(
                "hidden state of length {}, expected {}",
                state.len(),
                self.hidden_dim()
            )));
        }
        let s = self.step(ctx, tables.u.row(w_prev.index()), state);
        let mut logits = tables.b_out.as_slice().to_vec();
        matvec_add_into(&tables.m, &s.h, &mut logits);
        Ok((Vector::from_vec(logits), Vector::from_vec(s.h)))
    }
}

fn check_tables(params: &CaptionerParams, tables: &EmbeddingTables) -> Result<()> {
    if tables.u.cols() != params.embed_dim() || tables.m.cols() != params.hidden_dim() {
        return Err(Error::shape(format!(
            "tables are {}/{} wide, captioner expects {}/{}",
            tables.u.cols(),
            tables.m.cols(),
            params.embed_dim(),
            params.hidden_dim()
        )));
    }
    Ok(())
}

/// `x = U[w_prev]`, new state from the cell, `logits = M·state + b_out`.
/// Softmax is left to the caller.
pub fn forward_step(
    params: &CaptionerParams,
    tables: &EmbeddingTables,
    state: &[f64],
    w_prev: TokenId,
    feature: &[f64],
) -> Result<(Vector, Vector)> {
    check_tables(params, tables)?;
    let ctx = params.image_context(feature)?;
    params.step_logits(&ctx, tables, state, w_prev)
}

struct Trace {
    ctx: ImageContext,
    steps: Vec<StepState>,
    probs: Vec<Vector>,
    loss: f64,
}

fn check_tokens(tokens: &[TokenId], vocab_size: usize) -> Result<()> {
    if tokens.first() != Some(&BOS) {
        return Err(Error::data("caption tokens must start with <bos>"));
    }
    if let Some(t) = tokens.iter().find(|t| t.index() >= vocab_size) {
        return Err(Error::data(format!("token {t} outside vocabulary of {vocab_size}")));
    }
    Ok(())
}

fn forward_sequence(
    params: &CaptionerParams,
    tables: &EmbeddingTables,
    feature: &[f64],
    tokens: &[TokenId],
) -> Result<Trace> {
    check_tables(params, tables)?;
    check_tokens(tokens, tables.vocab_size())?;
    let ctx = params.image_context(feature)?;
    let mut steps: Vec<StepState> = Vec::with_capacity(tokens.len());
    let mut probs = Vec::with_capacity(tokens.len());
    let mut loss = 0.0;
    for t in 0..tokens.len().saturating_sub(1) {
        let h_prev = steps.last().map_or(ctx.h0.as_slice(), |s| s.h.as_slice());
        let s = params.step(&ctx, tables.u.row(tokens[t].index()), h_prev);
        let mut logits = tables.b_out.as_slice().to_vec();
        matvec_add_into(&tables.m, &s.h, &mut logits);
        let p = softmax(&logits)?;
        let target = p[tokens[t + 1].index()];
        if target == 0.0 {
            return Err(Error::non_finite(format!(
                "target token {} has probability zero at step {t}",
                tokens[t + 1]
            )));
        }
        loss -= target.ln();
        steps.push(s);
        probs.push(p);
    }
    if !loss.is_finite() {
        return Err(Error::non_finite("caption loss"));
    }
    Ok(Trace { ctx, steps, probs, loss })
}

/// Teacher-forced negative log-likelihood of `tokens[1..]` given the image.
pub fn nll_loss(
    params: &CaptionerParams,
    tables: &EmbeddingTables,
    feature: &[f64],
    tokens: &[TokenId],
) -> Result<f64> {
    Ok(forward_sequence(params, tables, feature, tokens)?.loss)
}

/// Gradients with respect to the assembled tables.
#[derive(Clone, Debug, PartialEq)]
pub struct TableGrads {
    pub u: Matrix,
    pub m: Matrix,
    pub b_out: Vector,
}

impl TableGrads {
    pub fn zeros_like(tables: &EmbeddingTables) -> Self {
        TableGrads {
            u: Matrix::zeros(tables.u.rows(), tables.u.cols()),
            m: Matrix::zeros(tables.m.rows(), tables.m.cols()),
            b_out: Vector::zeros(tables.b_out.len()),
        }
    }
}

/// Accumulates the gradient of one caption's loss into `grads` (cell and
/// initial-state map) and `table_grads`. Returns the loss.
fn accumulate_sequence(
    params: &CaptionerParams,
    tables: &EmbeddingTables,
    feature: &[f64],
    tokens: &[TokenId],
    grads: &mut CaptionerParams,
    table_grads: &mut TableGrads,
) -> Result<f64> {
    let trace = forward_sequence(params, tables, feature, tokens)?;
    let n = params.hidden_dim();
    let cell = &params.cell;
    let mut dh = vec![0.0; n];
    let mut da_z = vec![0.0; n];
    let mut da_r = vec![0.0; n];
    let mut da_c = vec![0.0; n];
    let mut d_rh = vec![0.0; n];
    let mut dx = vec![0.0; params.embed_dim()];
    for t in (0..trace.steps.len()).rev() {
        let s = &trace.steps[t];
        let h_prev = if t == 0 { trace.ctx.h0.as_slice() } else { trace.steps[t - 1].h.as_slice() };
        let mut dlogits = trace.probs[t].clone().into_vec();
        dlogits[tokens[t + 1].index()] -= 1.0;
        for (g, d) in table_grads.b_out.iter_mut().zip(&dlogits) {
            *g += d;
        }
        outer_add_into(&mut table_grads.m, &dlogits, &s.h);
        matvec_transpose_add_into(&tables.m, &dlogits, &mut dh);

        let mut dh_prev = vec![0.0; n];
        for i in 0..n {
            let dz = dh[i] * (s.c[i] - h_prev[i]);
            let dc = dh[i] * s.z[i];
            dh_prev[i] = dh[i] * (1.0 - s.z[i]);
            da_c[i] = dc * (1.0 - s.c[i] * s.c[i]);
            da_z[i] = dz * s.z[i] * (1.0 - s.z[i]);
        }
        d_rh.fill(0.0);
        matvec_transpose_add_into(&cell.u_c, &da_c, &mut d_rh);
        for i in 0..n {
            let dr = d_rh[i] * h_prev[i];
            dh_prev[i] += d_rh[i] * s.r[i];
            da_r[i] = dr * s.r[i] * (1.0 - s.r[i]);
        }
        matvec_transpose_add_into(&cell.u_z, &da_z, &mut dh_prev);
        matvec_transpose_add_into(&cell.u_r, &da_r, &mut dh_prev);

        let x = tables.u.row(tokens[t].index());
        let g = &mut grads.cell;
        outer_add_into(&mut g.w_input_z, &da_z, x);
        outer_add_into(&mut g.w_input_r, &da_r, x);
        outer_add_into(&mut g.w_input_c, &da_c, x);
        outer_add_into(&mut g.w_image_z, &da_z, feature);
        outer_add_into(&mut g.w_image_r, &da_r, feature);
        outer_add_into(&mut g.w_image_c, &da_c, feature);
        outer_add_into(&mut g.u_z, &da_z, h_prev);
        outer_add_into(&mut g.u_r, &da_r, h_prev);
        outer_add_into(&mut g.u_c, &da_c, &s.rh);
        for i in 0..n {
            g.b_z[i] += da_z[i];
            g.b_r[i] += da_r[i];
            g.b_c[i] += da_c[i];
        }

        dx.fill(0.0);
        matvec_transpose_add_into(&cell.w_input_z, &da_z, &mut dx);
        matvec_transpose_add_into(&cell.w_input_r, &da_r, &mut dx);
        matvec_transpose_add_into(&cell.w_input_c, &da_c, &mut dx);
        for (g, d) in table_grads.u.row_mut(tokens[t].index()).iter_mut().zip(&dx) {
            *g += d;
        }
        dh = dh_prev;
    }
    if !trace.steps.is_empty() {
        let da0: Vec<f64> = dh
            .iter()
            .zip(trace.ctx.h0.iter())
            .map(|(d, h)| d * (1.0 - h * h))
            .collect();
        outer_add_into(&mut grads.init.weight, &da0, feature);
        for (g, d) in grads.init.bias.iter_mut().zip(&da0) {
            *g += d;
        }
    }
    if !dh.iter().all(|v| v.is_finite()) {
        return Err(Error::non_finite("gradient"));
    }
    Ok(trace.loss)
}

/// Pushes table gradients back onto the word parameters and, through the
/// category rows, onto the converter.
pub fn table_grads_to_params(model: &CaptionModel, table_grads: &TableGrads, grads: &mut ModelParams) {
    let text_end = model.vocab.text_end();
    let w = &mut grads.words;
    for i in 0..text_end {
        for (g, d) in w.u_text.row_mut(i).iter_mut().zip(table_grads.u.row(i)) {
            *g += d;
        }
        for (g, d) in w.m_text.row_mut(i).iter_mut().zip(table_grads.m.row(i)) {
            *g += d;
        }
        w.b_text[i] += table_grads.b_out[i];
    }
    let known = model.known_categories();
    for (i, entry) in model.vocab.entries().iter().enumerate().skip(text_end) {
        let TokenKind::Category { category, number } = entry.kind else {
            continue;
        };
        let proto = &model.categories[category].prototype;
        let conv = &mut grads.converter;
        let (input, output) = match number {
            Number::Singular => (&mut conv.input_singular, &mut conv.output_singular),
            Number::Plural => (&mut conv.input_plural, &mut conv.output_plural),
        };
        let du = table_grads.u.row(i);
        outer_add_into(&mut input.weight, du, proto);
        for (g, d) in input.bias.iter_mut().zip(du) {
            *g += d;
        }
        let dm = table_grads.m.row(i);
        outer_add_into(&mut output.weight, dm, proto);
        for (g, d) in output.bias.iter_mut().zip(dm) {
            *g += d;
        }
        if category < known {
            match number {
                Number::Singular => grads.words.b_singular[category] += table_grads.b_out[i],
                Number::Plural => grads.words.b_plural[category] += table_grads.b_out[i],
            }
        }
    }
}

/// Loss and exact gradients of every trainable parameter for one caption.
pub fn backward(
    model: &CaptionModel,
    tables: &EmbeddingTables,
    feature: &[f64],
    tokens: &[TokenId],
) -> Result<(f64, ModelParams)> {
    let mut grads = model.params.zeros_like();
    let mut table_grads = TableGrads::zeros_like(tables);
    let loss = accumulate_sequence(
        &model.params.captioner,
        tables,
        feature,
        tokens,
        &mut grads.captioner,
        &mut table_grads,
    )?;
    table_grads_to_params(model, &table_grads, &mut grads);
    Ok((loss, grads))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainable {
    All,
    /// Only the four converter maps are updated.
    ConverterOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub clip_norm: f64,
    /// Decoupled weight decay on the converter weight matrices. Directions
    /// of feature space no known prototype spans would otherwise keep their
    /// random initial weights and pass sample noise straight into new rows.
    pub converter_decay: f64,
    pub trainable: Trainable,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            clip_norm: 5.0,
            converter_decay: 0.5,
            trainable: Trainable::All,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.beta1, self.beta2, self.epsilon, self.clip_norm];
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be finite and non-negative"));
        }
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::config("optimizer hyperparameters out of range"));
        }
        if !(self.converter_decay >= 0.0 && self.converter_decay.is_finite()) {
            return Err(Error::config("converter_decay must be finite and non-negative"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub feature: Vector,
    pub tokens: Vec<TokenId>,
}

/// First/second-moment adaptive optimizer with bias correction.
struct Adam {
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    fn new(params: &ModelParams) -> Self {
        let shapes: Vec<usize> = params.blocks().iter().map(|(_, b)| b.len()).collect();
        Adam {
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn update(&mut self, params: &mut ModelParams, grads: &ModelParams, cfg: &TrainConfig, update_bias: bool) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.step as i32);
        let grads = grads.blocks();
        for (k, (name, p)) in params.blocks_mut().into_iter().enumerate() {
            if !is_trainable(name, cfg.trainable, update_bias) {
                continue;
            }
            let g = grads[k].1;
            let decay = if ModelParams::is_converter_block(name) && !name.ends_with(".bias") {
                cfg.learning_rate * cfg.converter_decay
            } else {
                0.0
            };
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon) + decay * p[i];
            }
        }
    }
}

fn is_trainable(block: &str, trainable: Trainable, converter_bias: bool) -> bool {
    let converter = ModelParams::is_converter_block(block);
    if converter && !converter_bias && block.ends_with(".bias") {
        return false;
    }
    match trainable {
        Trainable::All => true,
        Trainable::ConverterOnly => converter,
    }
}

/// Mini-batch training. Category rows are re-derived from the converter at
/// every batch. Returns the trained model and the per-epoch mean loss per
/// predicted token.
pub fn train(
    model: &CaptionModel,
    examples: &[TrainingExample],
    cfg: &TrainConfig,
) -> Result<(CaptionModel, Vec<f64>)> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::data("no training examples"));
    }
    for (i, ex) in examples.iter().enumerate() {
        for t in &ex.tokens {
            if let Some(TokenKind::Category { category, .. }) = model.vocab.entry(*t).map(|e| e.kind) {
                if model.is_novel_category(category) {
                    return Err(Error::data(format!(
                        "training example {i} mentions novel category '{}'",
                        model.categories[category].name
                    )));
                }
            }
        }
    }
    let mut model = model.clone();
    let mut adam = Adam::new(&model.params);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let rng = SeededRng::new(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.substream(epoch as u64).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let tables = model.tables()?;
            let mut grads = model.params.zeros_like();
            let mut table_grads = TableGrads::zeros_like(&tables);
            let mut batch_loss = 0.0;
            for &i in batch {
                let ex = &examples[i];
                batch_loss += accumulate_sequence(
                    &model.params.captioner,
                    &tables,
                    &ex.feature,
                    &ex.tokens,
                    &mut grads.captioner,
                    &mut table_grads,
                )
                .map_err(|e| Error::non_finite(format!("epoch {epoch}, batch {b}: {e}")))?;
                epoch_tokens += ex.tokens.len().saturating_sub(1);
            }
            if !batch_loss.is_finite() {
                return Err(Error::non_finite(format!("loss is {batch_loss} at epoch {epoch}, batch {b}")));
            }
            epoch_loss += batch_loss;
            table_grads_to_params(&model, &table_grads, &mut grads);
            let scale = 1.0 / batch.len() as f64;
            let mut norm_sq = 0.0;
            for (name, g) in grads.blocks_mut() {
                if !is_trainable(name, cfg.trainable, model.config.converter_bias) {
                    g.fill(0.0);
                }
                for v in g.iter_mut() {
                    *v *= scale;
                    norm_sq += *v * *v;
                }
            }
            let norm = norm_sq.sqrt();
            if !norm.is_finite() {
                return Err(Error::non_finite(format!("gradient norm at epoch {epoch}, batch {b}")));
            }
            if norm > cfg.clip_norm {
                let f = cfg.clip_norm / norm;
                for (_, g) in grads.blocks_mut() {
                    for v in g.iter_mut() {
                        *v *= f;
                    }
                }
            }
            adam.update(&mut model.params, &grads, cfg, model.config.converter_bias);
        }
        let mean = epoch_loss / epoch_tokens.max(1) as f64;
        log::info!("epoch {epoch}: mean loss {mean:.4} nats/token");
        curve.push(mean);
    }
    Ok((model, curve))
}

/// `epoch,mean_loss` lines.
pub fn format_loss_curve(curve: &[f64]) -> String {
    let mut out = String::new();
    for (i, l) in curve.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}
