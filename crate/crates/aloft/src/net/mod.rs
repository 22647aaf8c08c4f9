//! Q-value networks over observation windows.
//!
//! Three variants share one parameter container and forward path:
//!
//! * `Dqn` encodes only the latest observation and maps it straight to
//!   action values, so it is blind to history.
//! * `Drqn` folds the window through an LSTM and reads action values off the
//!   final hidden state.
//! * `DrqnTa` additionally scores every encoded frame against the previous
//!   hidden state, softmax-normalizes the scores, and feeds the weighted sum
//!   of frame features to the head. The weights are returned to the caller,
//!   which is what makes the selection inspectable.

mod checkpoint;

pub use checkpoint::{load_qnet, save_qnet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Tape, Tensor, TensorError};

/// Which network architecture a parameter set implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Dqn,
    Drqn,
    DrqnTa,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Variant::Dqn => "dqn",
            Variant::Drqn => "drqn",
            Variant::DrqnTa => "drqn_ta",
        };
        f.write_str(name)
    }
}

/// One convolutional stage of the encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub filters: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
}

/// Architecture hyperparameters; fully determines every parameter shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub variant: Variant,
    /// Observation shape `[channels, height, width]`.
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    /// Encoder stages; may be empty, in which case the observation is
    /// flattened and passed straight to the fully connected layer.
    pub conv_layers: Vec<ConvSpec>,
    /// Encoder output length (the per-frame feature vector).
    pub feature_dim: usize,
    /// LSTM state width.
    pub hidden_dim: usize,
    /// Width of the attention scoring space.
    pub attention_dim: usize,
    /// Hidden layer width of the action-value head.
    pub head_hidden: usize,
    pub n_actions: usize,
    /// Observation window length fed to `q_forward`.
    pub window: usize,
}

impl NetConfig {
    /// Default architecture for a 1-D depth-ray observation: three
    /// single-row conv stages (kernel widths 8/4/3, strides 2/2/1) feeding
    /// 32-wide feature and recurrent layers. Sized for 32 rays; any ray
    /// count the kernel chain fits (24, 32, 48, ...) validates.
    pub fn for_depth_rays(variant: Variant, n_rays: usize, window: usize) -> NetConfig {
        NetConfig {
            variant,
            in_channels: 1,
            in_height: 1,
            in_width: n_rays,
            conv_layers: vec![
                ConvSpec {
                    filters: 8,
                    kh: 1,
                    kw: 8,
                    stride: 2,
                },
                ConvSpec {
                    filters: 16,
                    kh: 1,
                    kw: 4,
                    stride: 2,
                },
                ConvSpec {
                    filters: 16,
                    kh: 1,
                    kw: 3,
                    stride: 1,
                },
            ],
            feature_dim: 32,
            hidden_dim: 32,
            attention_dim: 24,
            head_hidden: 32,
            n_actions: 3,
            window,
        }
    }

    /// Spatial shape after each conv stage, then the flattened length.
    pub fn conv_chain(&self) -> Result<(Vec<[usize; 3]>, usize), TensorError> {
        let mut c = self.in_channels;
        let mut h = self.in_height;
        let mut w = self.in_width;
        let mut stages = Vec::new();
        for (i, spec) in self.conv_layers.iter().enumerate() {
            if spec.stride == 0 || spec.filters == 0 {
                return Err(TensorError::InvalidShape {
                    shape: vec![spec.filters, spec.stride],
                    reason: format!("conv stage {i}: filters and stride must be >= 1"),
                });
            }
            if spec.kh > h || spec.kw > w {
                return Err(TensorError::InvalidShape {
                    shape: vec![spec.kh, spec.kw],
                    reason: format!("conv stage {i}: kernel exceeds {h}x{w} input"),
                });
            }
            h = (h - spec.kh) / spec.stride + 1;
            w = (w - spec.kw) / spec.stride + 1;
            c = spec.filters;
            stages.push([c, h, w]);
        }
        Ok((stages, c * h * w))
    }

    /// Width of the vector entering the action-value head.
    pub fn head_input_dim(&self) -> usize {
        match self.variant {
            Variant::Dqn => self.feature_dim,
            Variant::Drqn => self.hidden_dim,
            Variant::DrqnTa => self.feature_dim,
        }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let positive = [
            ("in_channels", self.in_channels),
            ("in_height", self.in_height),
            ("in_width", self.in_width),
            ("feature_dim", self.feature_dim),
            ("hidden_dim", self.hidden_dim),
            ("attention_dim", self.attention_dim),
            ("head_hidden", self.head_hidden),
            ("n_actions", self.n_actions),
            ("window", self.window),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(TensorError::InvalidShape {
                    shape: vec![v],
                    reason: format!("{name} must be >= 1"),
                });
            }
        }
        self.conv_chain().map(|_| ())
    }
}

// ── parameters ──

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub w: Tensor,
    pub b: Tensor,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub convs: Vec<ConvLayer>,
    pub fc_w: Tensor,
    pub fc_b: Tensor,
}

#[derive(Debug, Clone)]
pub struct LstmParams {
    pub wi: Tensor,
    pub ui: Tensor,
    pub bi: Tensor,
    pub wf: Tensor,
    pub uf: Tensor,
    pub bf: Tensor,
    pub wo: Tensor,
    pub uo: Tensor,
    pub bo: Tensor,
    pub wg: Tensor,
    pub ug: Tensor,
    pub bg: Tensor,
}

/// Additive attention parameters: score_i = w . tanh(wa h_prev + ua v_i + ba).
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub w: Tensor,
    pub wa: Tensor,
    pub ua: Tensor,
    pub ba: Tensor,
}

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Complete parameter set for one network variant.
#[derive(Debug, Clone)]
pub struct QNetworkParams {
    pub config: NetConfig,
    pub encoder: EncoderParams,
    pub lstm: Option<LstmParams>,
    pub attention: Option<AttentionParams>,
    pub head: HeadParams,
}

impl QNetworkParams {
    /// Calls `f` with every named parameter in a fixed documented order:
    /// encoder stages, fully connected layer, LSTM gates, attention, head.
    /// Checkpointing, optimizer state, and initialization all key off these
    /// names, so the order and spelling are load-bearing.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        for (i, layer) in self.encoder.convs.iter().enumerate() {
            f(&format!("enc.conv{i}.w"), &layer.w);
            f(&format!("enc.conv{i}.b"), &layer.b);
        }
        f("enc.fc.w", &self.encoder.fc_w);
        f("enc.fc.b", &self.encoder.fc_b);
        if let Some(l) = &self.lstm {
            f("lstm.wi", &l.wi);
            f("lstm.ui", &l.ui);
            f("lstm.bi", &l.bi);
            f("lstm.wf", &l.wf);
            f("lstm.uf", &l.uf);
            f("lstm.bf", &l.bf);
            f("lstm.wo", &l.wo);
            f("lstm.uo", &l.uo);
            f("lstm.bo", &l.bo);
            f("lstm.wg", &l.wg);
            f("lstm.ug", &l.ug);
            f("lstm.bg", &l.bg);
        }
        if let Some(a) = &self.attention {
            f("att.w", &a.w);
            f("att.wa", &a.wa);
            f("att.ua", &a.ua);
            f("att.ba", &a.ba);
        }
        f("head.w1", &self.head.w1);
        f("head.b1", &self.head.b1);
        f("head.w2", &self.head.w2);
        f("head.b2", &self.head.b2);
    }

    /// Mutable counterpart of [`visit`](Self::visit), same order.
    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, layer) in self.encoder.convs.iter_mut().enumerate() {
            f(&format!("enc.conv{i}.w"), &mut layer.w);
            f(&format!("enc.conv{i}.b"), &mut layer.b);
        }
        f("enc.fc.w", &mut self.encoder.fc_w);
        f("enc.fc.b", &mut self.encoder.fc_b);
        if let Some(l) = &mut self.lstm {
            f("lstm.wi", &mut l.wi);
            f("lstm.ui", &mut l.ui);
            f("lstm.bi", &mut l.bi);
            f("lstm.wf", &mut l.wf);
            f("lstm.uf", &mut l.uf);
            f("lstm.bf", &mut l.bf);
            f("lstm.wo", &mut l.wo);
            f("lstm.uo", &mut l.uo);
            f("lstm.bo", &mut l.bo);
            f("lstm.wg", &mut l.wg);
            f("lstm.ug", &mut l.ug);
            f("lstm.bg", &mut l.bg);
        }
        if let Some(a) = &mut self.attention {
            f("att.w", &mut a.w);
            f("att.wa", &mut a.wa);
            f("att.ua", &mut a.ua);
            f("att.ba", &mut a.ba);
        }
        f("head.w1", &mut self.head.w1);
        f("head.b1", &mut self.head.b1);
        f("head.w2", &mut self.head.w2);
        f("head.b2", &mut self.head.b2);
    }

    /// Named clones of every parameter, in visit order.
    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    pub fn n_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }

    /// Copy of the parameter set whose tensors are tracked leaves on `tape`,
    /// ready for a differentiable forward pass.
    pub fn track(&self, tape: &mut Tape) -> QNetworkParams {
        let mut tracked = self.clone();
        tracked.visit_mut(&mut |_, t| *t = tape.var(t));
        tracked
    }

    /// Parameter shapes implied by `config`, all zero-filled.
    pub fn zeros(config: &NetConfig) -> Result<QNetworkParams, TensorError> {
        config.validate()?;
        let (_, flat) = config.conv_chain()?;
        let mut in_c = config.in_channels;
        let mut convs = Vec::new();
        for spec in &config.conv_layers {
            convs.push(ConvLayer {
                w: Tensor::zeros(vec![spec.filters, in_c, spec.kh, spec.kw]),
                b: Tensor::zeros(vec![spec.filters]),
                stride: spec.stride,
            });
            in_c = spec.filters;
        }
        let (m, r, a) = (config.feature_dim, config.hidden_dim, config.attention_dim);
        let encoder = EncoderParams {
            convs,
            fc_w: Tensor::zeros(vec![m, flat]),
            fc_b: Tensor::zeros(vec![m]),
        };
        let lstm = match config.variant {
            Variant::Dqn => None,
            Variant::Drqn | Variant::DrqnTa => Some(LstmParams {
                wi: Tensor::zeros(vec![r, m]),
                ui: Tensor::zeros(vec![r, r]),
                bi: Tensor::zeros(vec![r]),
                wf: Tensor::zeros(vec![r, m]),
                uf: Tensor::zeros(vec![r, r]),
                bf: Tensor::zeros(vec![r]),
                wo: Tensor::zeros(vec![r, m]),
                uo: Tensor::zeros(vec![r, r]),
                bo: Tensor::zeros(vec![r]),
                wg: Tensor::zeros(vec![r, m]),
                ug: Tensor::zeros(vec![r, r]),
                bg: Tensor::zeros(vec![r]),
            }),
        };
        let attention = match config.variant {
            Variant::DrqnTa => Some(AttentionParams {
                w: Tensor::zeros(vec![a]),
                wa: Tensor::zeros(vec![a, r]),
                ua: Tensor::zeros(vec![a, m]),
                ba: Tensor::zeros(vec![a]),
            }),
            _ => None,
        };
        let d_in = config.head_input_dim();
        let head = HeadParams {
            w1: Tensor::zeros(vec![config.head_hidden, d_in]),
            b1: Tensor::zeros(vec![config.head_hidden]),
            w2: Tensor::zeros(vec![config.n_actions, config.head_hidden]),
            b2: Tensor::zeros(vec![config.n_actions]),
        };
        Ok(QNetworkParams {
            config: config.clone(),
            encoder,
            lstm,
            attention,
            head,
        })
    }
}

pub(crate) fn xavier(
    rng: &mut ChaCha8Rng,
    fan_in: usize,
    fan_out: usize,
    shape: Vec<usize>,
) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape, data).expect("xavier: valid shape")
}

/// Fresh parameters: Xavier-uniform weights, zero biases, and a forget-gate
/// bias of one so early training does not erase the cell state. Draw order
/// follows [`QNetworkParams::visit`], making initialization a pure function
/// of the config and the generator state.
pub fn init_params(config: &NetConfig, rng: &mut ChaCha8Rng) -> Result<QNetworkParams, TensorError> {
    let mut params = QNetworkParams::zeros(config)?;
    let mut in_c = config.in_channels;
    for (layer, spec) in params.encoder.convs.iter_mut().zip(&config.conv_layers) {
        let fan_in = in_c * spec.kh * spec.kw;
        let fan_out = spec.filters * spec.kh * spec.kw;
        layer.w = xavier(rng, fan_in, fan_out, layer.w.shape().to_vec());
        in_c = spec.filters;
    }
    let (_, flat) = config.conv_chain()?;
    let (m, r, a) = (config.feature_dim, config.hidden_dim, config.attention_dim);
    params.encoder.fc_w = xavier(rng, flat, m, vec![m, flat]);
    if let Some(l) = &mut params.lstm {
        for w in [&mut l.wi, &mut l.wf, &mut l.wo, &mut l.wg] {
            *w = xavier(rng, m, r, vec![r, m]);
        }
        for u in [&mut l.ui, &mut l.uf, &mut l.uo, &mut l.ug] {
            *u = xavier(rng, r, r, vec![r, r]);
        }
        l.bf = Tensor::full(vec![r], 1.0);
    }
    if let Some(att) = &mut params.attention {
        att.w = xavier(rng, a, 1, vec![a]);
        att.wa = xavier(rng, r, a, vec![a, r]);
        att.ua = xavier(rng, m, a, vec![a, m]);
    }
    let d_in = config.head_input_dim();
    params.head.w1 = xavier(rng, d_in, config.head_hidden, vec![config.head_hidden, d_in]);
    params.head.w2 = xavier(
        rng,
        config.head_hidden,
        config.n_actions,
        vec![config.n_actions, config.head_hidden],
    );
    Ok(params)
}

// ── forward passes ──

/// Per-frame feature vector produced by the encoder.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub v: Tensor,
}

/// LSTM hidden and cell state, both `[hidden_dim]`.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        LstmState {
            h: Tensor::zeros(vec![hidden_dim]),
            c: Tensor::zeros(vec![hidden_dim]),
        }
    }
}

/// Softmax-normalized frame weights, `[window]`, oldest frame first.
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub weights: Tensor,
}

/// Action values plus, for the attention variant, the frame weights used.
#[derive(Debug, Clone)]
pub struct QOutput {
    pub q: Tensor,
    pub attention: Option<AttentionWeights>,
}

/// Encodes one observation `[C, H, W]` into a feature vector `[feature_dim]`.
pub fn encode(
    tape: &mut Tape,
    params: &QNetworkParams,
    obs: &Tensor,
) -> Result<EncoderOutput, TensorError> {
    let cfg = &params.config;
    let expect = [cfg.in_channels, cfg.in_height, cfg.in_width];
    if obs.shape() != expect {
        return Err(TensorError::ShapeMismatch {
            op: "encode",
            lhs: obs.shape().to_vec(),
            rhs: expect.to_vec(),
        });
    }
    let mut x = obs.clone();
    for layer in &params.encoder.convs {
        let c = tape.conv2d(&x, &layer.w, layer.stride)?;
        let b = tape.bias_ch(&c, &layer.b)?;
        x = tape.relu(&b);
    }
    let flat = tape.reshape(&x, vec![x.numel()])?;
    let lin = tape.matvec(&params.encoder.fc_w, &flat)?;
    let biased = tape.add(&lin, &params.encoder.fc_b)?;
    let v = tape.relu(&biased);
    Ok(EncoderOutput { v })
}

/// One LSTM transition from `state` on input feature `v`.
pub fn lstm_step(
    tape: &mut Tape,
    lstm: &LstmParams,
    v: &Tensor,
    state: &LstmState,
) -> Result<LstmState, TensorError> {
    let gate = |tape: &mut Tape, w: &Tensor, u: &Tensor, b: &Tensor| -> Result<Tensor, TensorError> {
        let wx = tape.matvec(w, v)?;
        let uh = tape.matvec(u, &state.h)?;
        let s = tape.add(&wx, &uh)?;
        tape.add(&s, b)
    };
    let i_lin = gate(tape, &lstm.wi, &lstm.ui, &lstm.bi)?;
    let i = tape.sigmoid(&i_lin);
    let f_lin = gate(tape, &lstm.wf, &lstm.uf, &lstm.bf)?;
    let f = tape.sigmoid(&f_lin);
    let o_lin = gate(tape, &lstm.wo, &lstm.uo, &lstm.bo)?;
    let o = tape.sigmoid(&o_lin);
    let g_lin = gate(tape, &lstm.wg, &lstm.ug, &lstm.bg)?;
    let g = tape.tanh(&g_lin);
    let fc = tape.mul(&f, &state.c)?;
    let ig = tape.mul(&i, &g)?;
    let c = tape.add(&fc, &ig)?;
    let tc = tape.tanh(&c);
    let h = tape.mul(&o, &tc)?;
    Ok(LstmState { h, c })
}

/// Scores each frame feature against the previous hidden state and returns
/// the softmax-normalized weights.
pub fn attention_scores(
    tape: &mut Tape,
    att: &AttentionParams,
    h_prev: &Tensor,
    features: &[EncoderOutput],
) -> Result<AttentionWeights, TensorError> {
    if features.is_empty() {
        return Err(TensorError::InvalidShape {
            shape: vec![0],
            reason: "attention needs at least one frame".into(),
        });
    }
    let wh = tape.matvec(&att.wa, h_prev)?;
    let mut scores = Vec::with_capacity(features.len());
    for frame in features {
        let uv = tape.matvec(&att.ua, &frame.v)?;
        let s = tape.add(&wh, &uv)?;
        let sb = tape.add(&s, &att.ba)?;
        let t = tape.tanh(&sb);
        scores.push(tape.dot(&att.w, &t)?);
    }
    let refs: Vec<&Tensor> = scores.iter().collect();
    let logits = tape.concat0(&refs)?;
    let weights = tape.softmax(&logits)?;
    Ok(AttentionWeights { weights })
}

/// Weighted sum of frame features under the given attention weights.
pub fn context_vector(
    tape: &mut Tape,
    weights: &AttentionWeights,
    features: &[EncoderOutput],
) -> Result<Tensor, TensorError> {
    if weights.weights.shape() != [features.len()] {
        return Err(TensorError::ShapeMismatch {
            op: "context_vector",
            lhs: weights.weights.shape().to_vec(),
            rhs: vec![features.len()],
        });
    }
    let mut acc: Option<Tensor> = None;
    for (i, frame) in features.iter().enumerate() {
        let wi = tape.index(&weights.weights, i)?;
        let term = tape.smul(&wi, &frame.v)?;
        acc = Some(match acc {
            None => term,
            Some(prev) => tape.add(&prev, &term)?,
        });
    }
    Ok(acc.expect("features checked non-empty"))
}

/// Two-layer action-value head: relu(w1 x + b1) mapped linearly to one value
/// per action.
pub fn q_head(tape: &mut Tape, head: &HeadParams, x: &Tensor) -> Result<Tensor, TensorError> {
    let l1 = tape.matvec(&head.w1, x)?;
    let l1b = tape.add(&l1, &head.b1)?;
    let hid = tape.relu(&l1b);
    let l2 = tape.matvec(&head.w2, &hid)?;
    tape.add(&l2, &head.b2)
}

/// Full forward pass over an observation window (oldest frame first, length
/// exactly `config.window`), producing action values.
pub fn q_forward(
    tape: &mut Tape,
    params: &QNetworkParams,
    window: &[Tensor],
) -> Result<QOutput, TensorError> {
    let cfg = &params.config;
    if window.len() != cfg.window {
        return Err(TensorError::ShapeMismatch {
            op: "q_forward",
            lhs: vec![window.len()],
            rhs: vec![cfg.window],
        });
    }
    match cfg.variant {
        Variant::Dqn => {
            let last = window.last().expect("window is non-empty");
            let feat = encode(tape, params, last)?;
            let q = q_head(tape, &params.head, &feat.v)?;
            Ok(QOutput { q, attention: None })
        }
        Variant::Drqn => {
            let lstm = params.lstm.as_ref().expect("drqn has lstm params");
            let mut state = LstmState::zeros(cfg.hidden_dim);
            for obs in window {
                let feat = encode(tape, params, obs)?;
                state = lstm_step(tape, lstm, &feat.v, &state)?;
            }
            let q = q_head(tape, &params.head, &state.h)?;
            Ok(QOutput { q, attention: None })
        }
        Variant::DrqnTa => {
            let lstm = params.lstm.as_ref().expect("drqn_ta has lstm params");
            let att = params.attention.as_ref().expect("drqn_ta has attention params");
            let mut features = Vec::with_capacity(window.len());
            for obs in window {
                features.push(encode(tape, params, obs)?);
            }
            let mut state = LstmState::zeros(cfg.hidden_dim);
            for feat in &features[..window.len() - 1] {
                state = lstm_step(tape, lstm, &feat.v, &state)?;
            }
            let weights = attention_scores(tape, att, &state.h, &features)?;
            let context = context_vector(tape, &weights, &features)?;
            let q = q_head(tape, &params.head, &context)?;
            Ok(QOutput {
                q,
                attention: Some(weights),
            })
        }
    }
}
