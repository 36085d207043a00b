//! Closed-form parameter accounting: FC1 compression, per-module additions,
//! and projected per-detector totals against published baselines.
//!
//! Published totals are opaque constants; only the head-network deltas are
//! computed from first principles. Counts are weight-only, matching the
//! published formulas (biases cancel between the baseline and compressed
//! FC1 layers).

use crate::head::{HeadConfig, SlotKind};
use crate::modules::{CrConfig, ModuleError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParamError {
    #[error(transparent)]
    Module(#[from] ModuleError),
    #[error("unknown detector/backbone combination: {0}")]
    UnknownDetector(String),
}

pub type Result<T> = std::result::Result<T, ParamError>;

/// Baseline FC1: 256 channels x 7 x 7 spatial x 1024 outputs.
pub const FC1_BASELINE: u64 = 256 * 49 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Detector {
    Faster,
    Libra,
    DoubleHead,
    Cascade,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backbone {
    R50,
    R101,
}

/// Published whole-detector totals in millions.
pub fn baseline_millions(detector: Detector, backbone: Backbone) -> f64 {
    match (detector, backbone) {
        (Detector::Faster, Backbone::R50) => 41.53,
        (Detector::Libra, Backbone::R50) => 41.79,
        (Detector::DoubleHead, Backbone::R50) => 47.12,
        (Detector::Cascade, Backbone::R50) => 69.17,
        (Detector::Faster, Backbone::R101) => 60.52,
        (Detector::Libra, Backbone::R101) => 60.78,
        (Detector::DoubleHead, Backbone::R101) => 66.27,
        (Detector::Cascade, Backbone::R101) => 88.16,
    }
}

/// Published totals (millions) for the modified detectors, for comparison.
pub fn published_modified_millions(detector: Detector, backbone: Backbone) -> f64 {
    match (detector, backbone) {
        (Detector::Faster, Backbone::R50) => 35.56,
        (Detector::Libra, Backbone::R50) => 35.84,
        (Detector::DoubleHead, Backbone::R50) => 41.15,
        (Detector::Cascade, Backbone::R50) => 51.28,
        (Detector::Faster, Backbone::R101) => 54.57,
        (Detector::Libra, Backbone::R101) => 54.83,
        (Detector::DoubleHead, Backbone::R101) => 60.38,
        (Detector::Cascade, Backbone::R101) => 70.27,
    }
}

pub fn parse_detector(name: &str) -> Result<Detector> {
    match name.to_ascii_lowercase().as_str() {
        "faster" => Ok(Detector::Faster),
        "libra" => Ok(Detector::Libra),
        "doublehead" => Ok(Detector::DoubleHead),
        "cascade" => Ok(Detector::Cascade),
        other => Err(ParamError::UnknownDetector(other.into())),
    }
}

pub fn parse_backbone(name: &str) -> Result<Backbone> {
    match name.to_ascii_lowercase().as_str() {
        "r50" => Ok(Backbone::R50),
        "r101" => Ok(Backbone::R101),
        other => Err(ParamError::UnknownDetector(other.into())),
    }
}

/// Round half away from zero to two decimals.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// FC1 weight count after spatial/channel compression.
/// `alpha = None` means the full 7x7 spatial extent; `beta = None` means no
/// channel reduction.
pub fn fc1_params(alpha: Option<u32>, beta: Option<f64>) -> Result<u64> {
    let spatial = alpha.map(|a| (a * a) as u64).unwrap_or(49);
    let channels = match beta {
        Some(beta) => CrConfig::out_channels(256, beta).map_err(ParamError::Module)? as u64,
        None => 256,
    };
    Ok(channels * spatial * 1024)
}

/// Per-component counts and the projected whole-detector total.
#[derive(Debug, Clone)]
pub struct ParamReport {
    pub label: String,
    pub fc1: u64,
    pub sr: u64,
    pub cr: u64,
    pub egca: u64,
    pub afe: u64,
    pub ccr: u64,
    /// Signed per-detector reduction versus the baseline head, raw units.
    pub reduction: i64,
    pub baseline_millions: f64,
    /// baseline - reduction, rounded to two decimals.
    pub projected_millions: f64,
}

impl ParamReport {
    fn project(label: String, components: Components, baseline: f64, stages: u64) -> ParamReport {
        let per_stage = (FC1_BASELINE as i64 - components.fc1 as i64)
            - components.sr as i64
            - components.cr as i64
            - components.egca as i64
            - components.afe as i64
            - components.ccr as i64;
        let reduction = per_stage * stages as i64;
        ParamReport {
            label,
            fc1: components.fc1,
            sr: components.sr,
            cr: components.cr,
            egca: components.egca,
            afe: components.afe,
            ccr: components.ccr,
            reduction,
            baseline_millions: baseline,
            projected_millions: round2(baseline - reduction as f64 / 1e6),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Components {
    fc1: u64,
    sr: u64,
    cr: u64,
    egca: u64,
    afe: u64,
    ccr: u64,
}

fn slot_components(cfg: &HeadConfig) -> (u64, u64) {
    let block = &cfg.block;
    let per_block = 2 * (block.k2 * block.k2 * block.r) as u64
        + if block.use_eca { block.k3 as u64 } else { 0 };
    let mut afe = 0;
    let mut ccr = 0;
    for kind in cfg.arrangement.slot_kinds() {
        match kind {
            SlotKind::Afe => afe += per_block,
            SlotKind::Ccr => ccr += per_block,
        }
    }
    (afe, ccr)
}

/// Signed parameter reduction of a configured head versus the plain
/// two-FC baseline head, per detector (cascade counts all three stages).
pub fn reduction_vs_baseline(cfg: &HeadConfig) -> Result<i64> {
    let alpha = if cfg.use_sr { Some(5) } else { None };
    let fc1 = fc1_params(alpha, cfg.beta)?;
    let sr = if cfg.use_sr { 256 * 256 * 5 } else { 0 };
    let cr = match cfg.beta {
        Some(beta) => 256 * CrConfig::out_channels(256, beta).map_err(ParamError::Module)? as u64,
        None => 0,
    };
    let egca = if cfg.use_egca { cfg.egca_k as u64 } else { 0 };
    let (afe, ccr) = slot_components(cfg);
    let per_stage = (FC1_BASELINE as i64 - fc1 as i64)
        - sr as i64
        - cr as i64
        - egca as i64
        - afe as i64
        - ccr as i64;
    Ok(per_stage * cfg.stages as i64)
}

/// The ten published {alpha, beta} compression combinations, projected onto
/// the Faster/ResNet-50 baseline. Rows account the FC1/SR/CR delta only;
/// the attention blocks add a double-digit number of weights and vanish in
/// the rounding.
pub fn table7_report() -> Vec<ParamReport> {
    let baseline = baseline_millions(Detector::Faster, Backbone::R50);
    let combos: [(Option<u32>, Option<f64>); 10] = [
        (None, None),
        (None, Some(0.5)),
        (None, Some(0.25)),
        (Some(5), None),
        (Some(4), None),
        (Some(3), None),
        (Some(2), None),
        (Some(5), Some(0.5)),
        (Some(4), Some(0.5)),
        (Some(3), Some(0.5)),
    ];
    combos
        .iter()
        .map(|&(alpha, beta)| {
            let label = match (alpha, beta) {
                (None, None) => "Baseline".to_string(),
                (a, b) => format!(
                    "{{{}, {}}}",
                    a.map(|v| v.to_string()).unwrap_or_else(|| "None".into()),
                    b.map(|v| v.to_string()).unwrap_or_else(|| "None".into()),
                ),
            };
            let is_baseline = alpha.is_none() && beta.is_none();
            let components = Components {
                fc1: if is_baseline {
                    FC1_BASELINE
                } else {
                    fc1_params(alpha, beta).expect("fixed combos are valid")
                },
                sr: if alpha.is_some() { 256 * 256 * 5 } else { 0 },
                cr: match beta {
                    Some(b) => {
                        256 * CrConfig::out_channels(256, b).expect("fixed combos are valid")
                            as u64
                    }
                    None => 0,
                },
                ..Components::default()
            };
            ParamReport::project(label, components, baseline, 1)
        })
        .collect()
}

/// Spatial-reduction variants at alpha = 5 on the Faster/ResNet-50 baseline.
pub fn table8_report() -> Vec<ParamReport> {
    let baseline = baseline_millions(Detector::Faster, Backbone::R50);
    let fc1 = fc1_params(Some(5), None).expect("valid");
    let variants: [(&str, u64); 4] = [
        ("SR", 256 * 256 * 5),
        ("SR_Conv3", 256 * 256 * 9),
        ("SR_Conv3_Group", 256 * 9),
        ("RoIAlign_5x5", 0),
    ];
    variants
        .iter()
        .map(|&(label, sr)| {
            let components = Components {
                fc1,
                sr,
                ..Components::default()
            };
            ParamReport::project(label.to_string(), components, baseline, 1)
        })
        .collect()
}

/// Projected total for one detector/backbone: the published baseline minus
/// the configured head's reduction (cascade deploys AFE-FC2-AFE over three
/// stages).
pub fn table10_deltas(detector: Detector, backbone: Backbone) -> Result<ParamReport> {
    let cfg = match detector {
        Detector::Cascade => {
            let mut cfg = HeadConfig::default_with("AFE-FC2-AFE")
                .expect("fixed arrangement parses");
            cfg.stages = 3;
            cfg
        }
        _ => HeadConfig::default_with("AFE-FC2-CCR").expect("fixed arrangement parses"),
    };
    let (afe, ccr) = slot_components(&cfg);
    let components = Components {
        fc1: fc1_params(Some(5), None)?,
        sr: 256 * 256 * 5,
        cr: 0,
        egca: cfg.egca_k as u64,
        afe,
        ccr,
    };
    let label = format!("{detector:?}/{backbone:?}");
    let report = ParamReport::project(
        label,
        components,
        baseline_millions(detector, backbone),
        cfg.stages as u64,
    );
    debug_assert_eq!(report.reduction, reduction_vs_baseline(&cfg)?);
    Ok(report)
}

pub const ALL_DETECTORS: [Detector; 4] = [
    Detector::Faster,
    Detector::Libra,
    Detector::DoubleHead,
    Detector::Cascade,
];
pub const ALL_BACKBONES: [Backbone; 2] = [Backbone::R50, Backbone::R101];
