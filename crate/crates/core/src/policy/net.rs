//! Small dual-head convolutional classifier over downsampled SegDepth images.
//!
//! Layout: two strided 5×5 convolutions with ReLU, a dense ReLU layer, and
//! two independent 7-way softmax heads (yaw, pitch). Activations are stored
//! row-major HWC so each convolution is one GEMM over an im2col buffer.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::softmax;
use super::{ActionClass, ClassDistribution, PolicyError, Result, DEFAULT_DELTA_DEG, NUM_CLASSES};
use crate::ir::SegDepthImage;

pub const MODEL_FILE_VERSION: &str = "1.0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub input_w: usize,
    pub input_h: usize,
    pub channels: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input_w: 64,
            input_h: 64,
            channels: 3,
            conv1_filters: 8,
            conv2_filters: 16,
            kernel: 5,
            stride: 2,
            padding: 2,
            hidden: 64,
            classes: NUM_CLASSES,
        }
    }
}

/// Spatial and parameter sizes derived from an [`Architecture`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct Shapes {
    pub h1: usize,
    pub w1: usize,
    pub h2: usize,
    pub w2: usize,
    pub k1: usize,
    pub k2: usize,
    pub flat: usize,
    pub off: Offsets,
    pub n_params: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Offsets {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub w3: usize,
    pub b3: usize,
    pub wy: usize,
    pub by: usize,
    pub wp: usize,
    pub bp: usize,
}

fn out_dim(n: usize, a: &Architecture) -> usize {
    (n + 2 * a.padding - a.kernel) / a.stride + 1
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let ok = self.classes == NUM_CLASSES
            && self.kernel > 0
            && self.stride > 0
            && self.input_w + 2 * self.padding >= self.kernel
            && self.input_h + 2 * self.padding >= self.kernel
            && [self.channels, self.conv1_filters, self.conv2_filters, self.hidden].iter().all(|&n| n > 0);
        if !ok {
            return Err(PolicyError::ModelFile(format!("unsupported architecture {self:?}")));
        }
        let s = self.shapes();
        if s.h1 + 2 * self.padding < self.kernel || s.w1 + 2 * self.padding < self.kernel {
            return Err(PolicyError::ModelFile(format!("architecture {self:?} collapses after conv1")));
        }
        Ok(())
    }

    pub(crate) fn shapes(&self) -> Shapes {
        let (h1, w1) = (out_dim(self.input_h, self), out_dim(self.input_w, self));
        let (h2, w2) = (out_dim(h1, self), out_dim(w1, self));
        let k1 = self.kernel * self.kernel * self.channels;
        let k2 = self.kernel * self.kernel * self.conv1_filters;
        let flat = h2 * w2 * self.conv2_filters;
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let off = Offsets {
            w1: take(k1 * self.conv1_filters),
            b1: take(self.conv1_filters),
            w2: take(k2 * self.conv2_filters),
            b2: take(self.conv2_filters),
            w3: take(flat * self.hidden),
            b3: take(self.hidden),
            wy: take(self.hidden * self.classes),
            by: take(self.classes),
            wp: take(self.hidden * self.classes),
            bp: take(self.classes),
        };
        Shapes { h1, w1, h2, w2, k1, k2, flat, off, n_params: at }
    }

    pub fn parameter_count(&self) -> usize {
        self.shapes().n_params
    }
}

/// `C = A·B` (or `C += A·B` when `accumulate`) with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    c: &mut [f32],
    accumulate: bool,
) {
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserted extents bound every index sgemm touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            if accumulate { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Fills `col` (rows = output positions, cols = kernel taps × channels).
fn im2col(input: &[f32], h: usize, w: usize, c: usize, a: &Architecture, oh: usize, ow: usize, col: &mut [f32]) {
    let k = a.kernel;
    let kk = k * k * c;
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut col[(oy * ow + ox) * kk..][..kk];
            let mut j = 0;
            for ky in 0..k {
                let iy = (oy * a.stride + ky) as isize - a.padding as isize;
                for kx in 0..k {
                    let ix = (ox * a.stride + kx) as isize - a.padding as isize;
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                        row[j..j + c].fill(0.0);
                    } else {
                        let src = (iy as usize * w + ix as usize) * c;
                        row[j..j + c].copy_from_slice(&input[src..src + c]);
                    }
                    j += c;
                }
            }
        }
    }
}

/// Scatter-adds an im2col gradient back onto the input gradient.
fn col2im(dcol: &[f32], h: usize, w: usize, c: usize, a: &Architecture, oh: usize, ow: usize, dinput: &mut [f32]) {
    dinput.fill(0.0);
    let k = a.kernel;
    let kk = k * k * c;
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &dcol[(oy * ow + ox) * kk..][..kk];
            let mut j = 0;
            for ky in 0..k {
                let iy = (oy * a.stride + ky) as isize - a.padding as isize;
                for kx in 0..k {
                    let ix = (ox * a.stride + kx) as isize - a.padding as isize;
                    if iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize {
                        let dst = (iy as usize * w + ix as usize) * c;
                        for ch in 0..c {
                            dinput[dst + ch] += row[j + ch];
                        }
                    }
                    j += c;
                }
            }
        }
    }
}

fn add_bias_relu(x: &mut [f32], bias: &[f32]) {
    for chunk in x.chunks_exact_mut(bias.len()) {
        for (v, b) in chunk.iter_mut().zip(bias) {
            *v = (*v + b).max(0.0);
        }
    }
}

/// Reusable activation buffers for one forward/backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Scratch {
    pub x: Vec<f32>,
    pub col1: Vec<f32>,
    pub a1: Vec<f32>,
    pub col2: Vec<f32>,
    pub a2: Vec<f32>,
    pub a3: Vec<f32>,
    pub logits: [[f32; NUM_CLASSES]; 2],
    // Backward buffers.
    pub d3: Vec<f32>,
    pub d2: Vec<f32>,
    pub dcol2: Vec<f32>,
    pub d1: Vec<f32>,
}

impl Scratch {
    pub fn new(a: &Architecture) -> Self {
        let s = a.shapes();
        Self {
            x: vec![0.0; a.input_h * a.input_w * a.channels],
            col1: vec![0.0; s.h1 * s.w1 * s.k1],
            a1: vec![0.0; s.h1 * s.w1 * a.conv1_filters],
            col2: vec![0.0; s.h2 * s.w2 * s.k2],
            a2: vec![0.0; s.flat],
            a3: vec![0.0; a.hidden],
            logits: [[0.0; NUM_CLASSES]; 2],
            d3: vec![0.0; a.hidden],
            d2: vec![0.0; s.flat],
            dcol2: vec![0.0; s.h2 * s.w2 * s.k2],
            d1: vec![0.0; s.h1 * s.w1 * a.conv1_filters],
        }
    }
}

/// Forward pass over `s.x`; fills every activation buffer and the logits.
pub(crate) fn forward(a: &Architecture, p: &[f32], s: &mut Scratch) {
    let sh = a.shapes();
    let o = sh.off;
    let (n1, n2) = (a.conv1_filters, a.conv2_filters);

    im2col(&s.x, a.input_h, a.input_w, a.channels, a, sh.h1, sh.w1, &mut s.col1);
    gemm(sh.h1 * sh.w1, sh.k1, n1, &s.col1, (sh.k1, 1), &p[o.w1..], (n1, 1), &mut s.a1, false);
    add_bias_relu(&mut s.a1, &p[o.b1..o.b1 + n1]);

    im2col(&s.a1, sh.h1, sh.w1, n1, a, sh.h2, sh.w2, &mut s.col2);
    gemm(sh.h2 * sh.w2, sh.k2, n2, &s.col2, (sh.k2, 1), &p[o.w2..], (n2, 1), &mut s.a2, false);
    add_bias_relu(&mut s.a2, &p[o.b2..o.b2 + n2]);

    gemm(1, sh.flat, a.hidden, &s.a2, (sh.flat, 1), &p[o.w3..], (a.hidden, 1), &mut s.a3, false);
    add_bias_relu(&mut s.a3, &p[o.b3..o.b3 + a.hidden]);

    for (h, (w, b)) in [(o.wy, o.by), (o.wp, o.bp)].into_iter().enumerate() {
        let mut z = [0.0f32; NUM_CLASSES];
        gemm(1, a.hidden, NUM_CLASSES, &s.a3, (a.hidden, 1), &p[w..], (NUM_CLASSES, 1), &mut z, false);
        for (zi, bi) in z.iter_mut().zip(&p[b..b + NUM_CLASSES]) {
            *zi += bi;
        }
        s.logits[h] = z;
    }
}

/// Backward pass given logit gradients for both heads; writes the parameter
/// gradient into `g` (overwritten). Requires a preceding [`forward`] on `s`.
pub(crate) fn backward(a: &Architecture, p: &[f32], s: &mut Scratch, dlogits: [[f32; NUM_CLASSES]; 2], g: &mut [f32]) {
    let sh = a.shapes();
    let o = sh.off;
    let (n1, n2) = (a.conv1_filters, a.conv2_filters);

    // Heads.
    s.d3.fill(0.0);
    for (h, (w, b)) in [(o.wy, o.by), (o.wp, o.bp)].into_iter().enumerate() {
        let dz = &dlogits[h];
        gemm(a.hidden, 1, NUM_CLASSES, &s.a3, (1, 1), dz, (NUM_CLASSES, 1), &mut g[w..w + a.hidden * NUM_CLASSES], false);
        g[b..b + NUM_CLASSES].copy_from_slice(dz);
        gemm(1, NUM_CLASSES, a.hidden, dz, (NUM_CLASSES, 1), &p[w..], (1, NUM_CLASSES), &mut s.d3, true);
    }

    // Dense.
    for (d, &act) in s.d3.iter_mut().zip(&s.a3) {
        if act <= 0.0 {
            *d = 0.0;
        }
    }
    gemm(sh.flat, 1, a.hidden, &s.a2, (1, 1), &s.d3, (a.hidden, 1), &mut g[o.w3..o.w3 + sh.flat * a.hidden], false);
    g[o.b3..o.b3 + a.hidden].copy_from_slice(&s.d3);
    gemm(1, a.hidden, sh.flat, &s.d3, (a.hidden, 1), &p[o.w3..], (1, a.hidden), &mut s.d2, false);

    // Conv2.
    for (d, &act) in s.d2.iter_mut().zip(&s.a2) {
        if act <= 0.0 {
            *d = 0.0;
        }
    }
    let m2 = sh.h2 * sh.w2;
    gemm(sh.k2, m2, n2, &s.col2, (1, sh.k2), &s.d2, (n2, 1), &mut g[o.w2..o.w2 + sh.k2 * n2], false);
    let gb2 = &mut g[o.b2..o.b2 + n2];
    gb2.fill(0.0);
    for row in s.d2.chunks_exact(n2) {
        for (gb, d) in gb2.iter_mut().zip(row) {
            *gb += d;
        }
    }
    gemm(m2, n2, sh.k2, &s.d2, (n2, 1), &p[o.w2..], (1, n2), &mut s.dcol2, false);
    col2im(&s.dcol2, sh.h1, sh.w1, n1, a, sh.h2, sh.w2, &mut s.d1);

    // Conv1.
    for (d, &act) in s.d1.iter_mut().zip(&s.a1) {
        if act <= 0.0 {
            *d = 0.0;
        }
    }
    let m1 = sh.h1 * sh.w1;
    gemm(sh.k1, m1, n1, &s.col1, (1, sh.k1), &s.d1, (n1, 1), &mut g[o.w1..o.w1 + sh.k1 * n1], false);
    let gb1 = &mut g[o.b1..o.b1 + n1];
    gb1.fill(0.0);
    for row in s.d1.chunks_exact(n1) {
        for (gb, d) in gb1.iter_mut().zip(row) {
            *gb += d;
        }
    }
}

/// Loads a SegDepth image into the scratch input, scaled to `[0, 1]`.
pub(crate) fn load_input(a: &Architecture, img: &SegDepthImage, s: &mut Scratch) -> Result<()> {
    let found = img.dimensions();
    if (found.0 as usize, found.1 as usize) != (a.input_w, a.input_h) || a.channels != 3 {
        return Err(PolicyError::DimensionMismatch { expected: (a.input_w as u32, a.input_h as u32), found });
    }
    for (x, &b) in s.x.iter_mut().zip(img.as_raw()) {
        *x = b as f32 / 255.0;
    }
    Ok(())
}

/// Head outputs for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub yaw: ClassDistribution,
    pub pitch: ClassDistribution,
    pub action: ActionClass,
}

pub(crate) fn probs_from_logits(z: &[f32; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    softmax(&z.map(|v| v as f64))
}

/// Trained dual-head classifier `I_DS → (p_yaw, p_pitch)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    arch: Architecture,
    params: Vec<f32>,
    /// Loss weight the model was trained with.
    pub lambda: f64,
    pub delta_yaw_deg: f64,
    pub delta_pitch_deg: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: String,
    architecture: Architecture,
    lambda: f64,
    delta_yaw_deg: f64,
    delta_pitch_deg: f64,
    parameter_count: usize,
    /// Little-endian f32 parameters, base64.
    params: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

impl PolicyModel {
    /// He-uniform weights and zero biases from `rng`.
    pub fn init<R: Rng>(arch: Architecture, lambda: f64, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let s = arch.shapes();
        let o = s.off;
        let mut params = vec![0.0f32; s.n_params];
        let layers = [
            (o.w1, s.k1 * arch.conv1_filters, s.k1),
            (o.w2, s.k2 * arch.conv2_filters, s.k2),
            (o.w3, s.flat * arch.hidden, s.flat),
            (o.wy, arch.hidden * NUM_CLASSES, arch.hidden),
            (o.wp, arch.hidden * NUM_CLASSES, arch.hidden),
        ];
        for (at, n, fan_in) in layers {
            let limit = (6.0 / fan_in as f64).sqrt();
            for w in &mut params[at..at + n] {
                *w = rng.random_range(-limit..limit) as f32;
            }
        }
        Ok(Self { arch, params, lambda, delta_yaw_deg: DEFAULT_DELTA_DEG, delta_pitch_deg: DEFAULT_DELTA_DEG })
    }

    pub fn from_params(arch: Architecture, params: Vec<f32>, lambda: f64) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.parameter_count() {
            return Err(PolicyError::ModelFile(format!(
                "expected {} parameters, found {}",
                arch.parameter_count(),
                params.len()
            )));
        }
        if params.iter().any(|w| !w.is_finite()) {
            return Err(PolicyError::ModelFile("non-finite parameter".into()));
        }
        Ok(Self { arch, params, lambda, delta_yaw_deg: DEFAULT_DELTA_DEG, delta_pitch_deg: DEFAULT_DELTA_DEG })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    /// Forward pass on a SegDepth image of the model's input size. Ties in
    /// the argmax go to the lower class index.
    pub fn predict(&self, img: &SegDepthImage) -> Result<Prediction> {
        let mut s = Scratch::new(&self.arch);
        self.predict_with(img, &mut s)
    }

    pub(crate) fn predict_with(&self, img: &SegDepthImage, s: &mut Scratch) -> Result<Prediction> {
        load_input(&self.arch, img, s)?;
        forward(&self.arch, &self.params, s);
        let yaw = ClassDistribution(probs_from_logits(&s.logits[0]));
        let pitch = ClassDistribution(probs_from_logits(&s.logits[1]));
        let action = ActionClass::with_deltas(yaw.argmax(), pitch.argmax(), self.delta_yaw_deg, self.delta_pitch_deg)?;
        Ok(Prediction { yaw, pitch, action })
    }

    /// Hex SHA-256 prefix of the parameter bytes.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for w in &self.params {
            h.update(w.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn to_json(&self, provenance: Option<serde_json::Value>) -> String {
        let bytes: Vec<u8> = self.params.iter().flat_map(|w| w.to_le_bytes()).collect();
        let file = ModelFile {
            version: MODEL_FILE_VERSION.into(),
            architecture: self.arch,
            lambda: self.lambda,
            delta_yaw_deg: self.delta_yaw_deg,
            delta_pitch_deg: self.delta_pitch_deg,
            parameter_count: self.params.len(),
            params: B64.encode(bytes),
            provenance,
        };
        serde_json::to_string_pretty(&file).expect("model file serializes")
    }

    /// Parses a model file. With `expected`, a different architecture is
    /// rejected.
    pub fn from_json(text: &str, expected: Option<&Architecture>) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| PolicyError::ModelFile(e.to_string()))?;
        let major = file.version.split('.').next().unwrap_or("");
        if major != MODEL_FILE_VERSION.split('.').next().unwrap() {
            return Err(PolicyError::ModelFile(format!("unsupported version {}", file.version)));
        }
        if let Some(exp) = expected {
            if *exp != file.architecture {
                return Err(PolicyError::ModelFile(format!(
                    "architecture mismatch: expected {exp:?}, file has {:?}",
                    file.architecture
                )));
            }
        }
        let bytes = B64.decode(&file.params).map_err(|e| PolicyError::ModelFile(format!("params: {e}")))?;
        if bytes.len() != file.parameter_count * 4 {
            return Err(PolicyError::ModelFile(format!(
                "params: {} bytes for {} parameters",
                bytes.len(),
                file.parameter_count
            )));
        }
        let params = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let mut m = Self::from_params(file.architecture, params, file.lambda)?;
        m.delta_yaw_deg = file.delta_yaw_deg;
        m.delta_pitch_deg = file.delta_pitch_deg;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>, provenance: Option<serde_json::Value>) -> Result<()> {
        std::fs::write(path, self.to_json(provenance))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, expected: Option<&Architecture>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?, expected)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> Architecture {
        Architecture { input_w: 8, input_h: 8, conv1_filters: 2, conv2_filters: 3, hidden: 5, ..Architecture::default() }
    }

    #[test]
    fn default_shapes() {
        let s = Architecture::default().shapes();
        assert_eq!((s.h1, s.w1, s.h2, s.w2, s.flat), (32, 32, 16, 16, 4096));
        assert_eq!(s.n_params, 608 + 3216 + 262_208 + 2 * 455);
    }

    /// Backprop against central differences of the summed head losses.
    #[test]
    fn backward_matches_finite_differences() {
        let arch = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = PolicyModel::init(arch, 0.1, &mut rng).unwrap();
        let mut s = Scratch::new(&arch);
        for x in &mut s.x {
            *x = rng.random_range(0.0..1.0);
        }
        let x0 = s.x.clone();
        let t = [super::super::smooth_label(2).unwrap().0, super::super::smooth_label(5).unwrap().0];
        let loss_at = |p: &[f32]| {
            let mut s = Scratch::new(&arch);
            s.x.copy_from_slice(&x0);
            forward(&arch, p, &mut s);
            (0..2)
                .map(|h| super::super::loss::categorical_cross_entropy(&t[h], &probs_from_logits(&s.logits[h])))
                .sum::<f64>()
        };
        forward(&arch, model.params(), &mut s);
        let mut dl = [[0.0f32; 7]; 2];
        for h in 0..2 {
            let p = probs_from_logits(&s.logits[h]);
            for i in 0..7 {
                dl[h][i] = (p[i] - t[h][i]) as f32;
            }
        }
        let mut g = vec![0.0f32; arch.parameter_count()];
        backward(&arch, model.params(), &mut s, dl, &mut g);

        let eps = 1e-3f32;
        let mut checked = 0;
        for k in (0..g.len()).step_by(7) {
            let mut p = model.params().to_vec();
            p[k] += eps;
            let up = loss_at(&p);
            p[k] -= 2.0 * eps;
            let down = loss_at(&p);
            let fd = (up - down) / (2.0 * eps as f64);
            let err = (fd - g[k] as f64).abs();
            assert!(err < 2e-3 + 2e-2 * fd.abs(), "param {k}: fd {fd} analytic {}", g[k]);
            checked += 1;
        }
        assert!(checked > 50);
    }

    #[test]
    fn json_round_trip_and_arch_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = PolicyModel::init(tiny(), 0.1, &mut rng).unwrap();
        let text = m.to_json(None);
        assert_eq!(PolicyModel::from_json(&text, Some(&tiny())).unwrap(), m);
        assert!(PolicyModel::from_json(&text, Some(&Architecture::default())).is_err());
        let bumped = text.replace("\"version\": \"1.0\"", "\"version\": \"2.0\"");
        assert!(PolicyModel::from_json(&bumped, None).is_err());
    }

    #[test]
    fn predict_rejects_wrong_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = PolicyModel::init(tiny(), 0.1, &mut rng).unwrap();
        let img = SegDepthImage::from_rgb(image::RgbImage::new(16, 16));
        assert!(matches!(m.predict(&img), Err(PolicyError::DimensionMismatch { .. })));
        let ok = SegDepthImage::from_rgb(image::RgbImage::new(8, 8));
        let p = m.predict(&ok).unwrap();
        p.yaw.validate().unwrap();
        p.pitch.validate().unwrap();
    }
}
