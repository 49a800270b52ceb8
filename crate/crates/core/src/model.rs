//! ST-VQA with temporal attention.
//!
//! * Text encoder: two stacked LSTMs over the `L × E` question-answer
//!   embedding; output is `[h1_last ; h2_last]`, `1 × H`.
//! * Video encoder: two stacked LSTMs over the `N × D` clip features; row `t`
//!   of the output is `[h1_t ; h2_t]`, `N × H`.
//! * Attention: `w_s = tanh(eps_v W_v + eps_w W_w + b_s) W_s` with the `1 × h`
//!   text term broadcast over the `N` frames, `alpha = softmax(w_s)`, and
//!   `omega_a = sum_t alpha_t eps_v[t]`.
//! * Decoder: `d_f = tanh(omega_a W_a + b_a)`, score `d_r = (d_f ∘ eps_w) W_d + b_d`.
//!
//! Each LSTM layer has `H / 2` hidden units and starts from zero hidden and
//! cell state. Gate columns are ordered input, forget, cell candidate, output:
//!
//! ```text
//! z = x W_x + h W_h + b
//! i = σ(z_i)   f = σ(z_f)   g = tanh(z_g)   o = σ(z_o)
//! c' = f ∘ c + i ∘ g
//! h' = o ∘ tanh(c')
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dataset::DatasetRow;
use crate::error::{Error, Result};
use crate::features::{cap_frames, concat_features, ClipFeatures};
use crate::rng;
use crate::tensor::{Matrix, Scalar};
use crate::text::{embed_qa, tokenize, EmbeddingTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Word embedding width `E`.
    pub embed_dim: usize,
    /// Video feature width `D = D_a + D_m`.
    pub video_dim: usize,
    /// Encoder output width `H`; each stacked layer has `H / 2` units.
    pub hidden: usize,
    /// Attention width `h`.
    pub attn_hidden: usize,
    /// Frame cap; longer clips are uniformly subsampled. 0 disables the cap.
    pub max_frames: usize,
}

impl ModelConfig {
    /// Full-size widths: GloVe 300, VGG-16 + C3D fc7 (4096 + 4096), H = 512, h = 256.
    pub fn reference() -> Self {
        Self {
            embed_dim: 300,
            video_dim: 8192,
            hidden: 512,
            attn_hidden: 256,
            max_frames: 0,
        }
    }

    pub fn layer_width(&self) -> usize {
        self.hidden / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.video_dim == 0 || self.hidden == 0 || self.attn_hidden == 0 {
            return Err(Error::Config("model dimensions must be at least 1".into()));
        }
        if self.hidden % 2 != 0 {
            return Err(Error::Config(format!(
                "hidden width H must be even (found {})",
                self.hidden
            )));
        }
        Ok(())
    }

    /// Recover widths from parameter shapes.
    pub fn from_params<T: Scalar>(p: &ModelParams<T>, max_frames: usize) -> Self {
        let k = p.text[0].w_h.rows();
        Self {
            embed_dim: p.text[0].w_x.rows(),
            video_dim: p.video[0].w_x.rows(),
            hidden: 2 * k,
            attn_hidden: p.w_s.rows(),
            max_frames,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer<P> {
    pub w_x: P,
    pub w_h: P,
    pub b: P,
}

/// All learnable tensors, generic over the tensor handle so the same layout
/// serves concrete matrices, tape variables and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<P> {
    pub text: [LstmLayer<P>; 2],
    pub video: [LstmLayer<P>; 2],
    /// `H × h`
    pub w_v: P,
    /// `H × h`
    pub w_w: P,
    /// `1 × h`
    pub b_s: P,
    /// `h × 1`
    pub w_s: P,
    /// `H × H`
    pub w_a: P,
    /// `1 × H`
    pub b_a: P,
    /// `H × 1`
    pub w_d: P,
    /// `1 × 1`
    pub b_d: P,
}

pub type ModelParams<T> = Params<Matrix<T>>;

pub const PARAM_COUNT: usize = 20;

pub const PARAM_NAMES: [&str; PARAM_COUNT] = [
    "text.0.w_x",
    "text.0.w_h",
    "text.0.b",
    "text.1.w_x",
    "text.1.w_h",
    "text.1.b",
    "video.0.w_x",
    "video.0.w_h",
    "video.0.b",
    "video.1.w_x",
    "video.1.w_h",
    "video.1.b",
    "w_v",
    "w_w",
    "b_s",
    "w_s",
    "w_a",
    "b_a",
    "w_d",
    "b_d",
];

impl<P> Params<P> {
    pub fn from_array(a: [P; PARAM_COUNT]) -> Self {
        let [t0x, t0h, t0b, t1x, t1h, t1b, v0x, v0h, v0b, v1x, v1h, v1b, w_v, w_w, b_s, w_s, w_a, b_a, w_d, b_d] =
            a;
        Self {
            text: [
                LstmLayer { w_x: t0x, w_h: t0h, b: t0b },
                LstmLayer { w_x: t1x, w_h: t1h, b: t1b },
            ],
            video: [
                LstmLayer { w_x: v0x, w_h: v0h, b: v0b },
                LstmLayer { w_x: v1x, w_h: v1h, b: v1b },
            ],
            w_v,
            w_w,
            b_s,
            w_s,
            w_a,
            b_a,
            w_d,
            b_d,
        }
    }

    /// Tensors in [`PARAM_NAMES`] order.
    pub fn refs(&self) -> [&P; PARAM_COUNT] {
        let [t0, t1] = &self.text;
        let [v0, v1] = &self.video;
        [
            &t0.w_x, &t0.w_h, &t0.b, &t1.w_x, &t1.w_h, &t1.b, &v0.w_x, &v0.w_h, &v0.b, &v1.w_x,
            &v1.w_h, &v1.b, &self.w_v, &self.w_w, &self.b_s, &self.w_s, &self.w_a, &self.b_a,
            &self.w_d, &self.b_d,
        ]
    }

    pub fn refs_mut(&mut self) -> [&mut P; PARAM_COUNT] {
        let [t0, t1] = &mut self.text;
        let [v0, v1] = &mut self.video;
        [
            &mut t0.w_x, &mut t0.w_h, &mut t0.b, &mut t1.w_x, &mut t1.w_h, &mut t1.b,
            &mut v0.w_x, &mut v0.w_h, &mut v0.b, &mut v1.w_x, &mut v1.w_h, &mut v1.b,
            &mut self.w_v, &mut self.w_w, &mut self.b_s, &mut self.w_s, &mut self.w_a,
            &mut self.b_a, &mut self.w_d, &mut self.b_d,
        ]
    }

    pub fn map<Q>(&self, mut f: impl FnMut(&P) -> Q) -> Params<Q> {
        Params::from_array(self.refs().map(&mut f))
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &P)> {
        PARAM_NAMES.into_iter().zip(self.refs())
    }
}

impl<T: Scalar> ModelParams<T> {
    fn shapes(config: &ModelConfig) -> [(usize, usize); PARAM_COUNT] {
        let k = config.layer_width();
        let (e, d, hh, a) = (config.embed_dim, config.video_dim, config.hidden, config.attn_hidden);
        [
            (e, 4 * k),
            (k, 4 * k),
            (1, 4 * k),
            (k, 4 * k),
            (k, 4 * k),
            (1, 4 * k),
            (d, 4 * k),
            (k, 4 * k),
            (1, 4 * k),
            (k, 4 * k),
            (k, 4 * k),
            (1, 4 * k),
            (hh, a),
            (hh, a),
            (1, a),
            (a, 1),
            (hh, hh),
            (1, hh),
            (hh, 1),
            (1, 1),
        ]
    }

    /// Input width of the affine map each tensor belongs to.
    fn fan_in(config: &ModelConfig) -> [usize; PARAM_COUNT] {
        let k = config.layer_width();
        let (e, d, hh, a) = (config.embed_dim, config.video_dim, config.hidden, config.attn_hidden);
        let t0 = e + k;
        let t1 = 2 * k;
        let v0 = d + k;
        [
            t0, t0, t0, t1, t1, t1, v0, v0, v0, t1, t1, t1, 2 * hh, 2 * hh, 2 * hh, a, hh, hh, hh,
            hh,
        ]
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        Params::from_array(Self::shapes(config).map(|(r, c)| Matrix::zeros(r, c)))
    }

    /// Every entry uniform in `[-k, k]`, `k = 1 / sqrt(fan_in)` of its affine
    /// map. Values are drawn in `f64` so `f32` and `f64` models start from
    /// the same point up to rounding.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let shapes = Self::shapes(config);
        let fans = Self::fan_in(config);
        let mut i = 0;
        let tensors = shapes.map(|(r, c)| {
            let bound = 1.0 / (fans[i] as f64).sqrt();
            let mut g = rng::stream(seed, &format!("init/{}", PARAM_NAMES[i]));
            i += 1;
            let data = (0..r * c).map(|_| T::lit(g.gen_range(-bound..=bound))).collect();
            Matrix::from_vec(r, c, data)
        });
        Ok(Params::from_array(tensors))
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        config.validate()?;
        for ((name, m), shape) in self.named().zip(Self::shapes(config)) {
            if m.shape() != shape {
                return Err(Error::Shape(format!(
                    "parameter {name} is {:?}, expected {shape:?}",
                    m.shape()
                )));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite(format!("parameter {name}")));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        self.map(Matrix::cast)
    }

    pub fn num_scalars(&self) -> usize {
        self.refs().iter().map(|m| m.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.refs().iter().all(|m| m.is_finite())
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.refs_mut().into_iter().zip(other.refs()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|m| m.scale(k))
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Params<Var> {
        self.map(|m| tape.leaf(m.clone()))
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VQAC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Checkpoint layout (little-endian): magic `VQAC`, version u32, element
/// width u8 (4 or 8), tensor count u32, then per tensor: name length u32,
/// UTF-8 name, rows u32, cols u32, row-major values.
pub fn write_checkpoint<T: Scalar, W: Write>(params: &ModelParams<T>, w: &mut W) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    w.write_u8(T::WIDTH)?;
    w.write_u32::<LittleEndian>(PARAM_COUNT as u32)?;
    for (name, m) in params.named() {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(m.rows() as u32)?;
        w.write_u32::<LittleEndian>(m.cols() as u32)?;
        for &v in m.as_slice() {
            v.write_le(w)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(r: &mut R) -> std::result::Result<ModelParams<T>, String> {
    let io = |e: std::io::Error| e.to_string();
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(format!("bad magic {magic:?}"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let width = r.read_u8().map_err(io)?;
    let count = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    if count != PARAM_COUNT {
        return Err(format!("expected {PARAM_COUNT} tensors, found {count}"));
    }
    let mut tensors: Vec<Option<Matrix<T>>> = vec![None; PARAM_COUNT];
    for _ in 0..count {
        let len = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(io)?;
        let name = String::from_utf8(name).map_err(|e| e.to_string())?;
        let slot = PARAM_NAMES
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| format!("unknown tensor `{name}`"))?;
        let rows = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let cols = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let v = match width {
                4 => T::from_f32(f32::read_le(r).map_err(io)?),
                8 => T::from_f64(f64::read_le(r).map_err(io)?),
                w => return Err(format!("unsupported element width {w}")),
            }
            .ok_or("value not representable")?;
            data.push(v);
        }
        if tensors[slot].replace(Matrix::from_vec(rows, cols, data)).is_some() {
            return Err(format!("tensor `{name}` repeated"));
        }
    }
    let tensors: Vec<Matrix<T>> = tensors
        .into_iter()
        .zip(PARAM_NAMES)
        .map(|(t, n)| t.ok_or_else(|| format!("tensor `{n}` missing")))
        .collect::<std::result::Result<_, _>>()?;
    let arr: [Matrix<T>; PARAM_COUNT] = tensors.try_into().expect("count checked");
    Ok(Params::from_array(arr))
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, params: &ModelParams<T>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint(params, &mut buf).expect("in-memory write");
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelParams<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let params = read_checkpoint(&mut bytes.as_slice()).map_err(|message| Error::Format {
        kind: "checkpoint",
        path: path.display().to_string(),
        message,
    })?;
    let config = ModelConfig::from_params(&params, 0);
    params.validate(&config)?;
    Ok(params)
}

// ---------------------------------------------------------------------------
// Forward pass on a tape

fn lstm_layer<T: Scalar>(tape: &mut Tape<T>, layer: &LstmLayer<Var>, inputs: &[Var], width: usize) -> Vec<Var> {
    let mut h = tape.leaf(Matrix::zeros(1, width));
    let mut c = tape.leaf(Matrix::zeros(1, width));
    let mut hidden = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let zx = tape.matmul(x, layer.w_x);
        let zh = tape.matmul(h, layer.w_h);
        let z = tape.add(zx, zh);
        let z = tape.add(z, layer.b);
        let zi = tape.slice_cols(z, 0, width);
        let zf = tape.slice_cols(z, width, 2 * width);
        let zg = tape.slice_cols(z, 2 * width, 3 * width);
        let zo = tape.slice_cols(z, 3 * width, 4 * width);
        let i = tape.sigmoid(zi);
        let f = tape.sigmoid(zf);
        let g = tape.tanh(zg);
        let o = tape.sigmoid(zo);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        c = tape.add(fc, ig);
        let tc = tape.tanh(c);
        h = tape.mul(o, tc);
        hidden.push(h);
    }
    hidden
}

fn stacked<T: Scalar>(tape: &mut Tape<T>, layers: &[LstmLayer<Var>; 2], seq: Var, width: usize) -> (Vec<Var>, Vec<Var>) {
    let steps = tape.value(seq).rows();
    let rows: Vec<Var> = (0..steps).map(|t| tape.select_row(seq, t)).collect();
    let h1 = lstm_layer(tape, &layers[0], &rows, width);
    let h2 = lstm_layer(tape, &layers[1], &h1, width);
    (h1, h2)
}

/// `L × E` embedding → `1 × H` encoded text.
pub fn text_encode_on<T: Scalar>(tape: &mut Tape<T>, p: &Params<Var>, phi_w: Var, width: usize) -> Var {
    let (h1, h2) = stacked(tape, &p.text, phi_w, width);
    let last1 = *h1.last().expect("non-empty sequence");
    let last2 = *h2.last().expect("non-empty sequence");
    tape.concat_cols(&[last1, last2])
}

/// `N × D` features → `N × H` encoded video.
pub fn video_encode_on<T: Scalar>(tape: &mut Tape<T>, p: &Params<Var>, phi_v: Var, width: usize) -> Var {
    let (h1, h2) = stacked(tape, &p.video, phi_v, width);
    let rows: Vec<Var> = h1
        .iter()
        .zip(&h2)
        .map(|(&a, &b)| tape.concat_cols(&[a, b]))
        .collect();
    tape.concat_rows(&rows)
}

/// Returns `(alpha, omega_a)`. `video_proj` is `eps_v W_v`, which does not
/// depend on the candidate and can be shared.
pub fn attend_on<T: Scalar>(tape: &mut Tape<T>, p: &Params<Var>, eps_v: Var, video_proj: Var, eps_w: Var) -> (Var, Var) {
    let text_proj = tape.matmul(eps_w, p.w_w);
    let text_proj = tape.add(text_proj, p.b_s);
    let pre = tape.add_row(video_proj, text_proj);
    let act = tape.tanh(pre);
    let logits = tape.matmul(act, p.w_s);
    let alpha = tape.softmax(logits);
    let weighted = tape.scale_rows(eps_v, alpha);
    let omega = tape.sum_rows(weighted);
    (alpha, omega)
}

/// `1 × 1` score.
pub fn decode_on<T: Scalar>(tape: &mut Tape<T>, p: &Params<Var>, omega_a: Var, eps_w: Var) -> Var {
    let df = tape.matmul(omega_a, p.w_a);
    let df = tape.add(df, p.b_a);
    let df = tape.tanh(df);
    let gated = tape.mul(df, eps_w);
    let dr = tape.matmul(gated, p.w_d);
    tape.add(dr, p.b_d)
}

/// Model inputs for one row: capped video features and one embedded
/// question-answer sequence per candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct Example<T> {
    pub video: Matrix<T>,
    pub texts: Vec<Matrix<T>>,
    pub label: usize,
}

impl<T: Scalar> Example<T> {
    pub fn cast<U: Scalar>(&self) -> Example<U> {
        Example {
            video: self.video.cast(),
            texts: self.texts.iter().map(Matrix::cast).collect(),
            label: self.label,
        }
    }
}

pub fn prepare_example(row: &DatasetRow, features: &ClipFeatures, table: &EmbeddingTable, config: &ModelConfig) -> Result<Example<f32>> {
    if features.clip_id != row.clip_id {
        return Err(Error::Shape(format!(
            "row `{}` refers to clip `{}` but features are for `{}`",
            row.row_id, row.clip_id, features.clip_id
        )));
    }
    let video = cap_frames(&concat_features(features), config.max_frames);
    if video.cols() != config.video_dim {
        return Err(Error::Shape(format!(
            "clip `{}` has feature width {}, model expects {}",
            row.clip_id,
            video.cols(),
            config.video_dim
        )));
    }
    if table.dim() != config.embed_dim {
        return Err(Error::Shape(format!(
            "embedding width {} does not match model E = {}",
            table.dim(),
            config.embed_dim
        )));
    }
    let q = tokenize(&row.question);
    let texts = row
        .candidates
        .iter()
        .map(|c| embed_qa(&q, &tokenize(c), table).map(|e| e.matrix))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::invalid(&row.row_id, e.to_string()))?;
    Ok(Example {
        video,
        texts,
        label: row.label,
    })
}

/// Candidate score variables for one example, in candidate order.
pub fn forward_scores<T: Scalar>(tape: &mut Tape<T>, p: &Params<Var>, ex: &Example<T>, width: usize) -> Vec<Var> {
    let phi_v = tape.leaf(ex.video.clone());
    let eps_v = video_encode_on(tape, p, phi_v, width);
    let video_proj = tape.matmul(eps_v, p.w_v);
    ex.texts
        .iter()
        .map(|t| {
            let phi_w = tape.leaf(t.clone());
            let eps_w = text_encode_on(tape, p, phi_w, width);
            let (_, omega) = attend_on(tape, p, eps_v, video_proj, eps_w);
            decode_on(tape, p, omega, eps_w)
        })
        .collect()
}

pub fn example_scores<T: Scalar>(params: &ModelParams<T>, ex: &Example<T>) -> Vec<T> {
    let width = params.text[0].w_h.rows();
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    forward_scores(&mut tape, &p, ex, width)
        .into_iter()
        .map(|v| tape.value(v).get(0, 0))
        .collect()
}

// ---------------------------------------------------------------------------
// Standalone operations

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedText<T>(pub Matrix<T>);

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedVideo<T>(pub Matrix<T>);

#[derive(Clone, Debug, PartialEq)]
pub struct Attention<T> {
    /// `N × 1`, sums to one.
    pub alpha: Matrix<T>,
    /// `1 × H`
    pub omega_a: Matrix<T>,
}

fn check_finite<T: Scalar>(m: &Matrix<T>, what: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub fn text_encode<T: Scalar>(phi_w: &Matrix<T>, params: &ModelParams<T>) -> Result<EncodedText<T>> {
    if phi_w.rows() == 0 {
        return Err(Error::Shape("text sequence is empty".into()));
    }
    if phi_w.cols() != params.text[0].w_x.rows() {
        return Err(Error::Shape(format!(
            "text embedding width {} does not match E = {}",
            phi_w.cols(),
            params.text[0].w_x.rows()
        )));
    }
    check_finite(phi_w, "text embedding")?;
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let x = tape.leaf(phi_w.clone());
    let out = text_encode_on(&mut tape, &p, x, params.text[0].w_h.rows());
    Ok(EncodedText(tape.value(out).clone()))
}

pub fn video_encode<T: Scalar>(phi_v: &Matrix<T>, params: &ModelParams<T>) -> Result<EncodedVideo<T>> {
    if phi_v.rows() == 0 {
        return Err(Error::Shape("video has no frames".into()));
    }
    if phi_v.cols() != params.video[0].w_x.rows() {
        return Err(Error::Shape(format!(
            "video feature width {} does not match D = {}",
            phi_v.cols(),
            params.video[0].w_x.rows()
        )));
    }
    check_finite(phi_v, "video features")?;
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let x = tape.leaf(phi_v.clone());
    let out = video_encode_on(&mut tape, &p, x, params.video[0].w_h.rows());
    Ok(EncodedVideo(tape.value(out).clone()))
}

pub fn attend<T: Scalar>(eps_v: &Matrix<T>, eps_w: &Matrix<T>, params: &ModelParams<T>) -> Result<Attention<T>> {
    if eps_v.rows() == 0 {
        return Err(Error::Shape("attention over zero frames".into()));
    }
    let h = params.w_v.rows();
    if eps_v.cols() != h || eps_w.shape() != (1, h) {
        return Err(Error::Shape(format!(
            "attention expects N×{h} and 1×{h}, got {:?} and {:?}",
            eps_v.shape(),
            eps_w.shape()
        )));
    }
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let ev = tape.leaf(eps_v.clone());
    let ew = tape.leaf(eps_w.clone());
    let proj = tape.matmul(ev, p.w_v);
    let (alpha, omega) = attend_on(&mut tape, &p, ev, proj, ew);
    Ok(Attention {
        alpha: tape.value(alpha).clone(),
        omega_a: tape.value(omega).clone(),
    })
}

pub fn decode<T: Scalar>(omega_a: &Matrix<T>, eps_w: &Matrix<T>, params: &ModelParams<T>) -> Result<T> {
    let h = params.w_a.rows();
    if omega_a.shape() != (1, h) || eps_w.shape() != (1, h) {
        return Err(Error::Shape(format!("decoder expects 1×{h} inputs")));
    }
    check_finite(omega_a, "attended features")?;
    check_finite(eps_w, "encoded text")?;
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let o = tape.leaf(omega_a.clone());
    let w = tape.leaf(eps_w.clone());
    let out = decode_on(&mut tape, &p, o, w);
    let score = tape.value(out).get(0, 0);
    if !score.is_finite() {
        return Err(Error::NonFinite("decoder score".into()));
    }
    Ok(score)
}

/// One score per candidate, in candidate order.
pub fn score_candidates<T: Scalar>(
    row: &DatasetRow,
    features: &ClipFeatures,
    table: &EmbeddingTable,
    params: &ModelParams<T>,
    config: &ModelConfig,
) -> Result<Vec<T>> {
    let ex = prepare_example(row, features, table, config)?.cast::<T>();
    let scores = example_scores(params, &ex);
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("scores of row `{}`", row.row_id)));
    }
    Ok(scores)
}

/// Index of the highest score; ties go to the lowest index.
pub fn predict<T: Scalar>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
