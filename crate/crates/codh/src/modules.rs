//! The four detector-head building blocks: LECA/EGCA global context
//! calibration, SR/CR feature compression, and the AFE/CCR residual
//! relational blocks, all expressed over the gradient tape.

use crate::rng::init_tensor;
use crate::tape::{Tape, VarId};
use crate::tensor::{integer_sqrt, ConvSpec, Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModuleError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("input length {len} shorter than kernel {k}")]
    InputShorterThanKernel { len: usize, k: usize },
    #[error("non-integral output channels: {channels} * beta {beta}")]
    NonIntegralChannels { channels: usize, beta: f64 },
    #[error("RoI count {n} is not a perfect square")]
    RoiCountNotSquare { n: usize },
    #[error("strict mode requires RoI count == feature dim, got {n} vs {d}")]
    StrictShapeMismatch { n: usize, d: usize },
    #[error("EGCA expects {expected} leca configs for this strategy, got {actual}")]
    LecaCount { expected: usize, actual: usize },
}

pub type Result<T> = std::result::Result<T, ModuleError>;

// ---------------------------------------------------------------- LECA/EGCA

/// k-tap conv1d over a channel descriptor, optionally sigmoid-gated.
#[derive(Debug, Clone)]
pub struct LecaConfig {
    pub k: usize,
    /// Conv weights, shape `[1, 1, k]`.
    pub weights: Tensor,
    pub gate: bool,
}

impl LecaConfig {
    pub fn seeded(seed: u64, name: &str, k: usize, gate: bool) -> Self {
        LecaConfig {
            k,
            weights: init_tensor(seed, name, vec![1, 1, k], k),
            gate,
        }
    }

    pub fn param_count(&self) -> u64 {
        self.k as u64
    }

    fn conv_spec(&self) -> ConvSpec {
        ConvSpec::same_1d(1, 1, self.k)
    }
}

/// Conv1d over a length-C vector treated as one channel; output length C.
pub fn leca_forward(tape: &mut Tape, v: VarId, cfg: &LecaConfig) -> Result<VarId> {
    let c = tape.value(v).len();
    if c < cfg.k {
        return Err(ModuleError::InputShorterThanKernel { len: c, k: cfg.k });
    }
    let x = tape.reshape(v, vec![1, 1, c])?;
    let w = tape.leaf(cfg.weights.clone());
    let y = tape.conv1d(x, w, None, cfg.conv_spec())?;
    let y = if cfg.gate { tape.sigmoid(y) } else { y };
    Ok(tape.reshape(y, vec![c])?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EgcaStrategy {
    FusionFirst,
    ExtractionFirst,
}

#[derive(Debug, Clone)]
pub struct EgcaConfig {
    pub strategy: EgcaStrategy,
    /// One config for fusion-first, four (one per pyramid level) for
    /// extraction-first.
    pub lecas: Vec<LecaConfig>,
}

impl EgcaConfig {
    pub fn seeded(seed: u64, name: &str, strategy: EgcaStrategy, k: usize, gate: bool) -> Self {
        let n = match strategy {
            EgcaStrategy::FusionFirst => 1,
            EgcaStrategy::ExtractionFirst => 4,
        };
        let lecas = (0..n)
            .map(|i| LecaConfig::seeded(seed, &format!("{name}.leca{i}"), k, gate))
            .collect();
        EgcaConfig { strategy, lecas }
    }

    pub fn param_count(&self) -> u64 {
        self.lecas.iter().map(LecaConfig::param_count).sum()
    }

    fn validate(&self) -> Result<()> {
        let expected = match self.strategy {
            EgcaStrategy::FusionFirst => 1,
            EgcaStrategy::ExtractionFirst => 4,
        };
        if self.lecas.len() != expected {
            return Err(ModuleError::LecaCount {
                expected,
                actual: self.lecas.len(),
            });
        }
        Ok(())
    }
}

/// Fused global context gate from the four pyramid levels, shape `[C]`.
/// Pyramid levels are rank-3 `[C, H, W]` tape values.
pub fn egca_gate(tape: &mut Tape, pyr: &[VarId; 4], cfg: &EgcaConfig) -> Result<VarId> {
    cfg.validate()?;
    let c = tape.value(pyr[0]).shape()[0];
    let mut descriptors = Vec::with_capacity(4);
    for &level in pyr {
        let t = tape.value(level);
        t.expect_rank(3, "pyramid level")?;
        t.expect_axis(0, c, "pyramid level")?;
        let shape = t.shape().to_vec();
        let batched = tape.reshape(level, vec![1, shape[0], shape[1], shape[2]])?;
        let pooled = tape.gap(batched)?;
        descriptors.push(tape.reshape(pooled, vec![c])?);
    }
    match cfg.strategy {
        EgcaStrategy::FusionFirst => {
            let mut fused = descriptors[0];
            for &d in &descriptors[1..] {
                fused = tape.add(fused, d)?;
            }
            leca_forward(tape, fused, &cfg.lecas[0])
        }
        EgcaStrategy::ExtractionFirst => {
            // Sum the per-level conv outputs pre-gate, then one sigmoid.
            let mut refined = Vec::with_capacity(4);
            for (i, &d) in descriptors.iter().enumerate() {
                let ungated = LecaConfig {
                    gate: false,
                    ..cfg.lecas[i].clone()
                };
                refined.push(leca_forward(tape, d, &ungated)?);
            }
            let mut fused = refined[0];
            for &r in &refined[1..] {
                fused = tape.add(fused, r)?;
            }
            Ok(if cfg.lecas[0].gate {
                tape.sigmoid(fused)
            } else {
                fused
            })
        }
    }
}

/// Scale every RoI's channel c by gate[c] at every spatial position.
pub fn egca_apply_gate(tape: &mut Tape, rois: VarId, gate: VarId) -> Result<VarId> {
    Ok(tape.scale_channels(rois, gate, false)?)
}

pub fn egca_forward(
    tape: &mut Tape,
    pyr: &[VarId; 4],
    rois: VarId,
    cfg: &EgcaConfig,
) -> Result<VarId> {
    let c = tape.value(pyr[0]).shape()[0];
    tape.value(rois).expect_axis(1, c, "roi batch")?;
    let gate = egca_gate(tape, pyr, cfg)?;
    egca_apply_gate(tape, rois, gate)
}

// ------------------------------------------------------------------- SR/CR

/// Spatial reduction: flatten 7x7 to 49 and compress with a strided conv1d.
#[derive(Debug, Clone)]
pub struct SrConfig {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub channels: usize,
    /// Shape `[channels, channels, kernel]`.
    pub weights: Tensor,
}

impl SrConfig {
    pub fn seeded(seed: u64, name: &str) -> Self {
        Self::seeded_with(seed, name, 5, 2, 2, 256)
    }

    pub fn seeded_with(
        seed: u64,
        name: &str,
        kernel: usize,
        stride: usize,
        padding: usize,
        channels: usize,
    ) -> Self {
        SrConfig {
            kernel,
            stride,
            padding,
            channels,
            weights: init_tensor(
                seed,
                name,
                vec![channels, channels, kernel],
                channels * kernel,
            ),
        }
    }

    pub fn param_count(&self) -> u64 {
        (self.channels * self.channels * self.kernel) as u64
    }

    pub fn conv_spec(&self) -> ConvSpec {
        ConvSpec {
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            in_channels: self.channels,
            out_channels: self.channels,
            grouped: false,
            bias: false,
        }
    }

    pub fn out_len(&self, input: usize) -> Result<usize> {
        Ok(self.conv_spec().out_len(input)?)
    }
}

/// `[N, C, 7, 7]` -> `[N, C, out]` (25 at the defaults).
pub fn sr_forward(tape: &mut Tape, rois: VarId, cfg: &SrConfig) -> Result<VarId> {
    let t = tape.value(rois);
    t.expect_rank(4, "sr input")?;
    t.expect_axis(1, cfg.channels, "sr input")?;
    t.expect_axis(2, 7, "sr input")?;
    t.expect_axis(3, 7, "sr input")?;
    let n = t.shape()[0];
    let flat = tape.reshape(rois, vec![n, cfg.channels, 49])?;
    let w = tape.leaf(cfg.weights.clone());
    Ok(tape.conv1d(flat, w, None, cfg.conv_spec())?)
}

/// Channel reduction: pointwise projection 256 -> beta*256.
#[derive(Debug, Clone)]
pub struct CrConfig {
    pub beta: f64,
    pub channels: usize,
    /// Shape `[out_channels, channels, 1]`.
    pub weights: Tensor,
}

impl CrConfig {
    pub fn out_channels(channels: usize, beta: f64) -> Result<usize> {
        let exact = beta * channels as f64;
        let rounded = exact.round();
        if !(beta > 0.0 && beta <= 1.0) || (exact - rounded).abs() > 1e-9 || rounded < 1.0 {
            return Err(ModuleError::NonIntegralChannels { channels, beta });
        }
        Ok(rounded as usize)
    }

    pub fn seeded(seed: u64, name: &str, beta: f64) -> Result<Self> {
        Self::seeded_with(seed, name, 256, beta)
    }

    pub fn seeded_with(seed: u64, name: &str, channels: usize, beta: f64) -> Result<Self> {
        let out = Self::out_channels(channels, beta)?;
        Ok(CrConfig {
            beta,
            channels,
            weights: init_tensor(seed, name, vec![out, channels, 1], channels),
        })
    }

    pub fn param_count(&self) -> u64 {
        self.weights.len() as u64
    }

    pub fn conv_spec(&self) -> ConvSpec {
        ConvSpec::pointwise(self.channels, self.weights.shape()[0])
    }
}

/// `[N, C, L]` -> `[N, beta*C, L]`; spatial axis untouched.
pub fn cr_forward(tape: &mut Tape, x: VarId, cfg: &CrConfig) -> Result<VarId> {
    tape.value(x).expect_rank(3, "cr input")?;
    tape.value(x).expect_axis(1, cfg.channels, "cr input")?;
    let w = tape.leaf(cfg.weights.clone());
    Ok(tape.conv1d(x, w, None, cfg.conv_spec())?)
}

// -------------------------------------------------------------------- ECA

/// Channel recalibration: per-instance gap, k-tap conv1d over channels,
/// sigmoid, channel-wise rescale. Weights shape `[1, 1, k]`.
pub fn eca_forward(tape: &mut Tape, x: VarId, k: usize, weights: VarId) -> Result<VarId> {
    let t = tape.value(x);
    t.expect_rank(4, "eca input")?;
    let (n, c) = (t.shape()[0], t.shape()[1]);
    let pooled = tape.gap(x)?;
    let desc = tape.reshape(pooled, vec![n, 1, c])?;
    let conv = tape.conv1d(desc, weights, None, ConvSpec::same_1d(1, 1, k))?;
    let gate = tape.sigmoid(conv);
    let gate = tape.reshape(gate, vec![n, c])?;
    Ok(tape.scale_channels(x, gate, true)?)
}

// ---------------------------------------------------------------- AFE/CCR

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfeVariant {
    Standard,
    /// Inserts a depthwise 3x3 (+ ReLU) after the ECA stage.
    Inverted,
}

/// Residual expansion block over the square feature map of one instance.
#[derive(Debug, Clone)]
pub struct AfeConfig {
    pub r: usize,
    /// F1/F2 kernel size, 1 or 3.
    pub k2: usize,
    /// Inner ECA kernel size.
    pub k3: usize,
    pub use_eca: bool,
    pub variant: AfeVariant,
    /// Shape `[r, 1, k2, k2]`.
    pub f1: Tensor,
    /// Shape `[1, r, k2, k2]`.
    pub f2: Tensor,
    /// Shape `[1, 1, k3]`.
    pub eca: Tensor,
    /// Shape `[r, 1, 3, 3]` when variant is Inverted.
    pub depthwise: Option<Tensor>,
}

impl AfeConfig {
    pub fn seeded(seed: u64, name: &str) -> Self {
        Self::seeded_with(seed, name, 16, 1, 3, true, AfeVariant::Standard)
    }

    pub fn seeded_with(
        seed: u64,
        name: &str,
        r: usize,
        k2: usize,
        k3: usize,
        use_eca: bool,
        variant: AfeVariant,
    ) -> Self {
        let depthwise = match variant {
            AfeVariant::Standard => None,
            AfeVariant::Inverted => Some(init_tensor(
                seed,
                &format!("{name}.dw"),
                vec![r, 1, 3, 3],
                9,
            )),
        };
        AfeConfig {
            r,
            k2,
            k3,
            use_eca,
            variant,
            f1: init_tensor(seed, &format!("{name}.f1"), vec![r, 1, k2, k2], k2 * k2),
            f2: init_tensor(
                seed,
                &format!("{name}.f2"),
                vec![1, r, k2, k2],
                r * k2 * k2,
            ),
            eca: init_tensor(seed, &format!("{name}.eca"), vec![1, 1, k3], k3),
            depthwise,
        }
    }

    /// Weight-only parameter count; 2*k2^2*r + k3 for the standard variant.
    pub fn param_count(&self) -> u64 {
        let base = 2 * self.k2 as u64 * self.k2 as u64 * self.r as u64;
        let eca = if self.use_eca { self.k3 as u64 } else { 0 };
        let dw = self.depthwise.as_ref().map(|d| d.len() as u64).unwrap_or(0);
        base + eca + dw
    }

    pub fn zero_f2(&mut self) {
        self.f2 = Tensor::zeros(self.f2.shape().to_vec());
    }
}

/// `Y_out = IT(F2(ECA(ReLU(F1(T(X)))))) + X` over `[N, d]`, d a perfect square.
pub fn afe_forward(tape: &mut Tape, x: VarId, cfg: &AfeConfig) -> Result<VarId> {
    let t = tape.value(x);
    t.expect_rank(2, "afe input")?;
    let (n, d) = (t.shape()[0], t.shape()[1]);
    let side = integer_sqrt(d).ok_or(TensorError::NotPerfectSquare { dim: d })?;

    let map = tape.reshape(x, vec![n, 1, side, side])?;
    let f1 = tape.leaf(cfg.f1.clone());
    let f1_spec = ConvSpec {
        kernel: cfg.k2,
        stride: 1,
        padding: cfg.k2 / 2,
        in_channels: 1,
        out_channels: cfg.r,
        grouped: false,
        bias: false,
    };
    let expanded = tape.conv2d(map, f1, None, f1_spec)?;
    let mut h = tape.relu(expanded);
    if cfg.use_eca {
        let eca_w = tape.leaf(cfg.eca.clone());
        h = eca_forward(tape, h, cfg.k3, eca_w)?;
    }
    if let Some(dw) = &cfg.depthwise {
        let dw_id = tape.leaf(dw.clone());
        let dw_spec = ConvSpec {
            kernel: 3,
            stride: 1,
            padding: 1,
            in_channels: cfg.r,
            out_channels: cfg.r,
            grouped: true,
            bias: false,
        };
        h = tape.conv2d(h, dw_id, None, dw_spec)?;
        h = tape.relu(h);
    }
    let f2 = tape.leaf(cfg.f2.clone());
    let f2_spec = ConvSpec {
        kernel: cfg.k2,
        stride: 1,
        padding: cfg.k2 / 2,
        in_channels: cfg.r,
        out_channels: 1,
        grouped: false,
        bias: false,
    };
    let squeezed = tape.conv2d(h, f2, None, f2_spec)?;
    let flat = tape.reshape(squeezed, vec![n, d])?;
    Ok(tape.add(flat, x)?)
}

/// AFE applied across instances: same block, transposed input and output.
#[derive(Debug, Clone)]
pub struct CcrConfig {
    pub inner: AfeConfig,
    /// When set, additionally requires N == d.
    pub strict: bool,
}

impl CcrConfig {
    pub fn seeded(seed: u64, name: &str) -> Self {
        CcrConfig {
            inner: AfeConfig::seeded(seed, name),
            strict: false,
        }
    }

    pub fn param_count(&self) -> u64 {
        self.inner.param_count()
    }
}

pub fn ccr_forward(tape: &mut Tape, x: VarId, cfg: &CcrConfig) -> Result<VarId> {
    let t = tape.value(x);
    t.expect_rank(2, "ccr input")?;
    let (n, d) = (t.shape()[0], t.shape()[1]);
    if integer_sqrt(n).is_none() {
        return Err(ModuleError::RoiCountNotSquare { n });
    }
    if cfg.strict && n != d {
        return Err(ModuleError::StrictShapeMismatch { n, d });
    }
    let flipped = tape.transpose(x)?;
    let enhanced = afe_forward(tape, flipped, &cfg.inner)?;
    Ok(tape.transpose(enhanced)?)
}

// ------------------------------------------------------------- accounting

pub enum ModuleConfigRef<'a> {
    Leca(&'a LecaConfig),
    Egca(&'a EgcaConfig),
    Sr(&'a SrConfig),
    Cr(&'a CrConfig),
    Afe(&'a AfeConfig),
    Ccr(&'a CcrConfig),
}

/// Weight-only counts reproduce the published closed forms; `detailed`
/// would add biases, but none of these convolutions carry one.
pub fn module_param_count(cfg: ModuleConfigRef<'_>, _detailed: bool) -> u64 {
    match cfg {
        ModuleConfigRef::Leca(c) => c.param_count(),
        ModuleConfigRef::Egca(c) => c.param_count(),
        ModuleConfigRef::Sr(c) => c.param_count(),
        ModuleConfigRef::Cr(c) => c.param_count(),
        ModuleConfigRef::Afe(c) => c.param_count(),
        ModuleConfigRef::Ccr(c) => c.param_count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn run1<F>(f: F) -> Tensor
    where
        F: FnOnce(&mut Tape) -> VarId,
    {
        let mut tape = Tape::new();
        let out = f(&mut tape);
        tape.value(out).clone()
    }

    #[test]
    fn leca_zero_weights() {
        let cfg = LecaConfig {
            k: 5,
            weights: Tensor::zeros(vec![1, 1, 5]),
            gate: true,
        };
        let out = run1(|t| {
            let v = t.leaf(Tensor::filled(vec![8], 1.5));
            leca_forward(t, v, &cfg).unwrap()
        });
        assert!(out.data().iter().all(|&v| v == 0.5));

        let ungated = LecaConfig {
            gate: false,
            ..cfg.clone()
        };
        let out = run1(|t| {
            let v = t.leaf(Tensor::filled(vec![8], 1.5));
            leca_forward(t, v, &ungated).unwrap()
        });
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn leca_center_spike_is_identity() {
        let cfg = LecaConfig {
            k: 5,
            weights: Tensor::new(vec![1, 1, 5], vec![0.0, 0.0, 1.0, 0.0, 0.0]).unwrap(),
            gate: false,
        };
        let out = run1(|t| {
            let v = t.leaf(Tensor::filled(vec![7], 1.0));
            leca_forward(t, v, &cfg).unwrap()
        });
        assert_eq!(out.data(), &[1.0; 7]);
    }

    #[test]
    fn leca_rejects_short_input() {
        let cfg = LecaConfig::seeded(0, "l", 5, true);
        let mut tape = Tape::new();
        let v = tape.leaf(Tensor::filled(vec![3], 1.0));
        assert!(matches!(
            leca_forward(&mut tape, v, &cfg),
            Err(ModuleError::InputShorterThanKernel { len: 3, k: 5 })
        ));
    }

    fn tiny_pyramid(tape: &mut Tape, c: usize, value: f64) -> [VarId; 4] {
        [
            tape.leaf(Tensor::filled(vec![c, 8, 8], value)),
            tape.leaf(Tensor::filled(vec![c, 4, 4], value)),
            tape.leaf(Tensor::filled(vec![c, 2, 2], value)),
            tape.leaf(Tensor::filled(vec![c, 1, 1], value)),
        ]
    }

    #[test]
    fn egca_zero_everything_halves_rois() {
        let cfg = EgcaConfig {
            strategy: EgcaStrategy::FusionFirst,
            lecas: vec![LecaConfig {
                k: 5,
                weights: Tensor::zeros(vec![1, 1, 5]),
                gate: true,
            }],
        };
        let mut tape = Tape::new();
        let pyr = tiny_pyramid(&mut tape, 16, 0.0);
        let rois = tape.leaf(Tensor::filled(vec![3, 16, 7, 7], 2.0));
        let out = egca_forward(&mut tape, &pyr, rois, &cfg).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn egca_unit_gate_is_identity() {
        let mut tape = Tape::new();
        let rois_t = crate::rng::normal_tensor(3, "rois", vec![2, 16, 7, 7]);
        let rois = tape.leaf(rois_t.clone());
        let ones = tape.leaf(Tensor::filled(vec![16], 1.0));
        let out = egca_apply_gate(&mut tape, rois, ones).unwrap();
        assert_eq!(tape.value(out), &rois_t);
    }

    #[test]
    fn egca_channel_mismatch_errors() {
        let cfg = EgcaConfig::seeded(0, "egca", EgcaStrategy::FusionFirst, 5, true);
        let mut tape = Tape::new();
        let pyr = tiny_pyramid(&mut tape, 16, 0.0);
        let rois = tape.leaf(Tensor::zeros(vec![2, 8, 7, 7]));
        assert!(egca_forward(&mut tape, &pyr, rois, &cfg).is_err());
    }

    #[test]
    fn egca_param_counts() {
        let fusion = EgcaConfig::seeded(0, "e", EgcaStrategy::FusionFirst, 5, true);
        assert_eq!(fusion.param_count(), 5);
        let extraction = EgcaConfig::seeded(0, "e", EgcaStrategy::ExtractionFirst, 5, true);
        assert_eq!(extraction.param_count(), 20);
    }

    #[test]
    fn sr_output_length_and_params() {
        let cfg = SrConfig::seeded(0, "sr");
        assert_eq!(cfg.out_len(49).unwrap(), 25);
        assert_eq!(cfg.param_count(), 327_680);

        let mut tape = Tape::new();
        let rois = tape.leaf(crate::rng::normal_tensor(1, "r", vec![2, 256, 7, 7]));
        let out = sr_forward(&mut tape, rois, &cfg).unwrap();
        assert_eq!(tape.value(out).shape(), &[2, 256, 25]);
    }

    #[test]
    fn sr_rejects_wrong_spatial() {
        let cfg = SrConfig::seeded(0, "sr");
        let mut tape = Tape::new();
        let rois = tape.leaf(Tensor::zeros(vec![1, 256, 5, 5]));
        assert!(sr_forward(&mut tape, rois, &cfg).is_err());
    }

    #[test]
    fn sr_strided_sampling_with_center_tap() {
        // One channel-matched center tap, stride 2: outputs are the even
        // positions of the flattened input.
        let c = 4usize;
        let mut w = Tensor::zeros(vec![c, c, 5]);
        for ch in 0..c {
            let idx = (ch * c + ch) * 5 + 2;
            w.data_mut()[idx] = 1.0;
        }
        let cfg = SrConfig {
            kernel: 5,
            stride: 2,
            padding: 2,
            channels: c,
            weights: w,
        };
        let input = crate::rng::normal_tensor(9, "x", vec![1, c, 7, 7]);
        let mut tape = Tape::new();
        let rois = tape.leaf(input.clone());
        let out = sr_forward(&mut tape, rois, &cfg).unwrap();
        let out = tape.value(out);
        for ch in 0..c {
            for p in 0..25 {
                assert_eq!(
                    out.data()[(ch) * 25 + p],
                    input.data()[ch * 49 + 2 * p],
                );
            }
        }
    }

    #[test]
    fn cr_param_count_and_selection() {
        let cfg = CrConfig::seeded(0, "cr", 0.5).unwrap();
        assert_eq!(cfg.weights.shape(), &[128, 256, 1]);
        assert_eq!(cfg.param_count(), 32_768);
        assert!(CrConfig::seeded(0, "cr", 0.3).is_err());

        // top-half identity projection selects the first 128 channels
        let mut w = Tensor::zeros(vec![128, 256, 1]);
        for i in 0..128 {
            w.data_mut()[i * 256 + i] = 1.0;
        }
        let sel = CrConfig {
            beta: 0.5,
            channels: 256,
            weights: w,
        };
        let x = crate::rng::normal_tensor(4, "x", vec![1, 256, 3]);
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let out = cr_forward(&mut tape, xid, &sel).unwrap();
        assert_eq!(tape.value(out).data(), &x.data()[..128 * 3]);
    }

    #[test]
    fn cr_identity_at_beta_one() {
        let mut w = Tensor::zeros(vec![256, 256, 1]);
        for i in 0..256 {
            w.data_mut()[i * 256 + i] = 1.0;
        }
        let cfg = CrConfig {
            beta: 1.0,
            channels: 256,
            weights: w,
        };
        let x = crate::rng::normal_tensor(5, "x", vec![2, 256, 4]);
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let out = cr_forward(&mut tape, xid, &cfg).unwrap();
        assert_eq!(tape.value(out), &x);
    }

    #[test]
    fn eca_zero_weights_halve() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(vec![2, 3, 2, 2], 4.0));
        let w = tape.leaf(Tensor::zeros(vec![1, 1, 3]));
        let out = eca_forward(&mut tape, x, 3, w).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn eca_matches_hand_rolled_oracle() {
        let x = crate::rng::normal_tensor(6, "x", vec![2, 4, 2, 2]);
        let w = crate::rng::normal_tensor(6, "w", vec![1, 1, 3]);
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let wid = tape.leaf(w.clone());
        let out = eca_forward(&mut tape, xid, 3, wid).unwrap();
        let got = tape.value(out);

        // oracle: mean -> conv(k=3, pad 1) -> sigmoid -> scale
        for n in 0..2 {
            let mut means = [0.0f64; 4];
            for c in 0..4 {
                let mut acc = 0.0;
                for p in 0..4 {
                    acc += x.data()[(n * 4 + c) * 4 + p];
                }
                means[c] = acc / 4.0;
            }
            for c in 0..4 {
                let mut conv = 0.0;
                for t in 0..3i64 {
                    let pos = c as i64 + t - 1;
                    if pos >= 0 && pos < 4 {
                        conv += means[pos as usize] * w.data()[t as usize];
                    }
                }
                let a = 1.0 / (1.0 + (-conv).exp());
                for p in 0..4 {
                    let i = (n * 4 + c) * 4 + p;
                    assert_eq!(got.data()[i], x.data()[i] * a);
                }
            }
        }
    }

    #[test]
    fn afe_zero_f2_is_identity() {
        let mut cfg = AfeConfig::seeded(0, "afe");
        cfg.zero_f2();
        let x = crate::rng::normal_tensor(7, "x", vec![3, 16]);
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let out = afe_forward(&mut tape, xid, &cfg).unwrap();
        assert_eq!(tape.value(out), &x);
    }

    #[test]
    fn afe_param_counts() {
        assert_eq!(AfeConfig::seeded(0, "a").param_count(), 35);
        let k3variant =
            AfeConfig::seeded_with(0, "a", 16, 3, 3, true, AfeVariant::Standard);
        assert_eq!(k3variant.param_count(), 2 * 9 * 16 + 3);
        let inverted = AfeConfig::seeded_with(0, "a", 16, 1, 3, true, AfeVariant::Inverted);
        assert_eq!(inverted.param_count(), 35 + 16 * 9);
    }

    #[test]
    fn afe_rejects_non_square_dim() {
        let cfg = AfeConfig::seeded(0, "afe");
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![2, 15]));
        assert!(afe_forward(&mut tape, x, &cfg).is_err());
    }

    #[test]
    fn ccr_is_transposed_afe() {
        let cfg = CcrConfig::seeded(0, "ccr");
        let x = crate::rng::normal_tensor(8, "x", vec![9, 16]);
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let out = ccr_forward(&mut tape, xid, &cfg).unwrap();
        let got = tape.value(out).clone();

        let mut tape2 = Tape::new();
        let xid2 = tape2.leaf(x);
        let flipped = tape2.transpose(xid2).unwrap();
        let enhanced = afe_forward(&mut tape2, flipped, &cfg.inner).unwrap();
        let back = tape2.transpose(enhanced).unwrap();
        assert_eq!(&got, tape2.value(back));
    }

    #[test]
    fn ccr_preconditions() {
        let cfg = CcrConfig::seeded(0, "ccr");
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![15, 16]));
        assert!(matches!(
            ccr_forward(&mut tape, x, &cfg),
            Err(ModuleError::RoiCountNotSquare { n: 15 })
        ));

        let strict = CcrConfig {
            strict: true,
            ..CcrConfig::seeded(0, "ccr")
        };
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![4, 16]));
        assert!(matches!(
            ccr_forward(&mut tape, x, &strict),
            Err(ModuleError::StrictShapeMismatch { n: 4, d: 16 })
        ));
    }

    #[test]
    fn param_formula_grid() {
        for k in [3usize, 5, 7] {
            let cfg = EgcaConfig::seeded(0, "e", EgcaStrategy::FusionFirst, k, true);
            assert_eq!(module_param_count(ModuleConfigRef::Egca(&cfg), false), k as u64);
        }
        for kp in [3usize, 5] {
            let cfg = SrConfig::seeded_with(0, "s", kp, 2, kp / 2, 256);
            assert_eq!(
                module_param_count(ModuleConfigRef::Sr(&cfg), false),
                (256 * 256 * kp) as u64
            );
        }
        for k2 in [1usize, 3] {
            for r in [8usize, 16, 32] {
                let cfg = AfeConfig::seeded_with(0, "a", r, k2, 3, true, AfeVariant::Standard);
                assert_eq!(
                    module_param_count(ModuleConfigRef::Afe(&cfg), false),
                    (2 * k2 * k2 * r + 3) as u64
                );
                let ccr = CcrConfig {
                    inner: cfg,
                    strict: false,
                };
                assert_eq!(
                    module_param_count(ModuleConfigRef::Ccr(&ccr), false),
                    (2 * k2 * k2 * r + 3) as u64
                );
            }
        }
    }
}
