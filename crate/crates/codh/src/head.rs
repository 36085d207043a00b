//! Full head assembly: RoI features -> EGCA -> SR/CR -> FC1 -> slots ->
//! FC2 -> slots -> classification/regression feature branches, for every
//! supported AFE/CCR arrangement plus the three-stage cascade.

use crate::modules::{
    afe_forward, ccr_forward, cr_forward, egca_forward, sr_forward, AfeConfig, AfeVariant,
    CcrConfig, CrConfig, EgcaConfig, EgcaStrategy, ModuleError, SrConfig,
};
use crate::rng::init_tensor;
use crate::tape::{Tape, VarId};
use crate::tensor::{integer_sqrt, Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("arrangement parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("invalid head configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Module(#[from] ModuleError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, HeadError>;

// ------------------------------------------------------------ arrangement

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Afe,
    Ccr,
}

impl SlotKind {
    fn name(self) -> &'static str {
        match self {
            SlotKind::Afe => "AFE",
            SlotKind::Ccr => "CCR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Slot {
    Single(SlotKind),
    /// Independently weighted branches whose outputs are summed.
    Parallel(Vec<SlotKind>),
    /// Branch routing: the named module feeds only its named output.
    Split { cls: SlotKind, reg: SlotKind },
}

/// Module slots around the second shared FC layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arrangement {
    pub pre: Vec<Slot>,
    pub post: Vec<Slot>,
}

impl Arrangement {
    pub fn parse(text: &str) -> Result<Arrangement> {
        parse_arrangement(text)
    }

    /// Canonical textual form; series repeats collapse to `xN`.
    pub fn canonical(&self) -> String {
        let mut parts = Vec::new();
        push_side(&mut parts, &self.pre);
        parts.push("FC2".to_string());
        push_side(&mut parts, &self.post);
        parts.join("-")
    }

    pub fn contains_ccr(&self) -> bool {
        self.pre.iter().chain(&self.post).any(slot_has_ccr)
    }

    pub fn slot_kinds(&self) -> Vec<SlotKind> {
        let mut out = Vec::new();
        for slot in self.pre.iter().chain(&self.post) {
            match slot {
                Slot::Single(k) => out.push(*k),
                Slot::Parallel(ks) => out.extend(ks.iter().copied()),
                Slot::Split { cls, reg } => {
                    out.push(*cls);
                    out.push(*reg);
                }
            }
        }
        out
    }
}

fn slot_has_ccr(slot: &Slot) -> bool {
    match slot {
        Slot::Single(k) => *k == SlotKind::Ccr,
        Slot::Parallel(ks) => ks.contains(&SlotKind::Ccr),
        Slot::Split { cls, reg } => *cls == SlotKind::Ccr || *reg == SlotKind::Ccr,
    }
}

fn push_side(parts: &mut Vec<String>, slots: &[Slot]) {
    let mut i = 0;
    while i < slots.len() {
        match &slots[i] {
            Slot::Single(k) => {
                let mut run = 1;
                while i + run < slots.len() && slots[i + run] == slots[i] {
                    run += 1;
                }
                if run > 1 {
                    parts.push(format!("{}x{run}", k.name()));
                } else {
                    parts.push(k.name().to_string());
                }
                i += run;
            }
            Slot::Parallel(ks) => {
                let names: Vec<_> = ks.iter().map(|k| k.name()).collect();
                parts.push(format!("{{{}}}", names.join(",")));
                i += 1;
            }
            Slot::Split { cls, reg } => {
                parts.push(format!("{{{}_cls,{}_reg}}", cls.name(), reg.name()));
                i += 1;
            }
        }
    }
}

fn parse_arrangement(text: &str) -> Result<Arrangement> {
    // normalize: uppercase, strip whitespace, map the typeset multiply sign
    let mut norm = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            continue;
        }
        if ch == '\u{d7}' || ch == '*' {
            norm.push('X');
        } else {
            norm.push(ch.to_ascii_uppercase());
        }
    }

    let mut tokens = Vec::new(); // (start offset, token text)
    let bytes = norm.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let start = i;
        if bytes[i] == b'{' {
            let end = norm[i..].find('}').map(|e| i + e).ok_or(HeadError::Parse {
                pos: start,
                msg: "unclosed '{'".into(),
            })?;
            tokens.push((start, norm[i..=end].to_string()));
            i = end + 1;
            if i < bytes.len() {
                if bytes[i] != b'-' {
                    return Err(HeadError::Parse {
                        pos: i,
                        msg: format!("expected '-' after group, found '{}'", norm[i..].chars().next().unwrap()),
                    });
                }
                i += 1;
            }
        } else {
            let end = norm[i..]
                .find('-')
                .map(|e| i + e)
                .unwrap_or(norm.len());
            if end == i {
                return Err(HeadError::Parse {
                    pos: i,
                    msg: "empty token".into(),
                });
            }
            tokens.push((start, norm[i..end].to_string()));
            i = end + 1;
        }
    }

    let mut pre = Vec::new();
    let mut post = Vec::new();
    let mut fc2_seen = false;
    for (pos, tok) in tokens {
        if tok == "FC2" {
            if fc2_seen {
                return Err(HeadError::Parse {
                    pos,
                    msg: "multiple FC2 tokens".into(),
                });
            }
            fc2_seen = true;
            continue;
        }
        let slot = parse_slot(&tok, pos)?;
        if fc2_seen {
            post.extend(slot);
        } else {
            pre.extend(slot);
        }
    }
    if !fc2_seen {
        return Err(HeadError::Parse {
            pos: 0,
            msg: "missing FC2 token".into(),
        });
    }
    Ok(Arrangement { pre, post })
}

fn parse_kind(tok: &str, pos: usize) -> Result<SlotKind> {
    match tok {
        "AFE" => Ok(SlotKind::Afe),
        "CCR" => Ok(SlotKind::Ccr),
        other => Err(HeadError::Parse {
            pos,
            msg: format!("unknown module '{other}'"),
        }),
    }
}

fn parse_slot(tok: &str, pos: usize) -> Result<Vec<Slot>> {
    if let Some(inner) = tok.strip_prefix('{').and_then(|t| t.strip_suffix('}')) {
        let parts: Vec<&str> = inner.split(',').collect();
        if parts.len() != 2 {
            return Err(HeadError::Parse {
                pos,
                msg: format!("group must contain exactly two entries: '{tok}'"),
            });
        }
        let suffixed = parts.iter().any(|p| p.contains('_'));
        if suffixed {
            let mut cls = None;
            let mut reg = None;
            for p in &parts {
                let (base, role) = p.split_once('_').ok_or(HeadError::Parse {
                    pos,
                    msg: format!("mixed routed/unrouted entries in '{tok}'"),
                })?;
                let kind = parse_kind(base, pos)?;
                match role {
                    "CLS" => cls = Some(kind),
                    "REG" => reg = Some(kind),
                    other => {
                        return Err(HeadError::Parse {
                            pos,
                            msg: format!("unknown branch role '_{other}'"),
                        })
                    }
                }
            }
            match (cls, reg) {
                (Some(cls), Some(reg)) => Ok(vec![Slot::Split { cls, reg }]),
                _ => Err(HeadError::Parse {
                    pos,
                    msg: format!("split group needs one _cls and one _reg entry: '{tok}'"),
                }),
            }
        } else {
            let kinds = parts
                .iter()
                .map(|p| parse_kind(p, pos))
                .collect::<Result<Vec<_>>>()?;
            Ok(vec![Slot::Parallel(kinds)])
        }
    } else if let Some((base, count)) = tok.split_once('X') {
        let kind = parse_kind(base, pos)?;
        let n: usize = count.parse().map_err(|_| HeadError::Parse {
            pos,
            msg: format!("bad repeat count in '{tok}'"),
        })?;
        if n == 0 {
            return Err(HeadError::Parse {
                pos,
                msg: "repeat count must be positive".into(),
            });
        }
        Ok(vec![Slot::Single(kind); n])
    } else {
        Ok(vec![Slot::Single(parse_kind(tok, pos)?)])
    }
}

// ----------------------------------------------------------------- config

/// AFE/CCR hyperparameters shared by every slot instance.
#[derive(Debug, Clone, Copy)]
pub struct BlockHyper {
    pub r: usize,
    pub k2: usize,
    pub k3: usize,
    pub use_eca: bool,
    pub variant: AfeVariant,
}

impl Default for BlockHyper {
    fn default() -> Self {
        BlockHyper {
            r: 16,
            k2: 1,
            k3: 3,
            use_eca: true,
            variant: AfeVariant::Standard,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeadConfig {
    pub arrangement: Arrangement,
    pub use_egca: bool,
    pub use_sr: bool,
    pub beta: Option<f64>,
    pub block: BlockHyper,
    pub egca_k: usize,
    /// 1 or 3 (cascade).
    pub stages: u32,
    /// Shared FC feature width.
    pub d: usize,
    /// When set, the head consumes pre-flattened `[N, in_features]` inputs
    /// and EGCA/SR/CR must be off (small-scale gradient checking).
    pub in_features: Option<usize>,
}

impl HeadConfig {
    pub fn default_with(arrangement: &str) -> Result<Self> {
        Ok(HeadConfig {
            arrangement: Arrangement::parse(arrangement)?,
            use_egca: true,
            use_sr: true,
            beta: None,
            block: BlockHyper::default(),
            egca_k: 5,
            stages: 1,
            d: 1024,
            in_features: None,
        })
    }

    /// Tiny pre-flattened configuration for gradient checking.
    pub fn tiny(arrangement: &str, n_features: usize, d: usize) -> Result<Self> {
        Ok(HeadConfig {
            arrangement: Arrangement::parse(arrangement)?,
            use_egca: false,
            use_sr: false,
            beta: None,
            block: BlockHyper::default(),
            egca_k: 5,
            stages: 1,
            d,
            in_features: Some(n_features),
        })
    }

    fn validate(&self) -> Result<()> {
        if self.stages != 1 && self.stages != 3 {
            return Err(HeadError::Config(format!(
                "stages must be 1 or 3, got {}",
                self.stages
            )));
        }
        if self.stages == 3 && self.arrangement.contains_ccr() {
            return Err(HeadError::Config(
                "cascade deployment forbids CCR slots".into(),
            ));
        }
        if self
            .arrangement
            .pre
            .iter()
            .any(|s| matches!(s, Slot::Split { .. }))
        {
            return Err(HeadError::Config(
                "split slots are only supported after FC2".into(),
            ));
        }
        if self.in_features.is_some() && (self.use_egca || self.use_sr || self.beta.is_some()) {
            return Err(HeadError::Config(
                "pre-flattened input excludes EGCA/SR/CR".into(),
            ));
        }
        Ok(())
    }
}

// ------------------------------------------------------------------ build

#[derive(Debug, Clone)]
pub enum BlockModule {
    Afe(AfeConfig),
    Ccr(CcrConfig),
}

impl BlockModule {
    pub fn param_count(&self) -> u64 {
        match self {
            BlockModule::Afe(c) => c.param_count(),
            BlockModule::Ccr(c) => c.param_count(),
        }
    }

    pub fn zero_f2(&mut self) {
        match self {
            BlockModule::Afe(c) => c.zero_f2(),
            BlockModule::Ccr(c) => c.inner.zero_f2(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum SlotModule {
    Single(BlockModule),
    Parallel(Vec<BlockModule>),
    Split { cls: BlockModule, reg: BlockModule },
}

impl SlotModule {
    pub fn blocks_mut(&mut self) -> Vec<&mut BlockModule> {
        match self {
            SlotModule::Single(b) => vec![b],
            SlotModule::Parallel(bs) => bs.iter_mut().collect(),
            SlotModule::Split { cls, reg } => vec![cls, reg],
        }
    }

    pub fn blocks(&self) -> Vec<&BlockModule> {
        match self {
            SlotModule::Single(b) => vec![b],
            SlotModule::Parallel(bs) => bs.iter().collect(),
            SlotModule::Split { cls, reg } => vec![cls, reg],
        }
    }
}

/// A built head with seeded deterministic weights.
#[derive(Debug, Clone)]
pub struct Head {
    pub cfg: HeadConfig,
    pub egca: Option<EgcaConfig>,
    pub sr: Option<SrConfig>,
    pub cr: Option<CrConfig>,
    pub fc1_w: Tensor,
    pub fc1_b: Tensor,
    pub fc2_w: Tensor,
    pub fc2_b: Tensor,
    pub pre: Vec<SlotModule>,
    pub post: Vec<SlotModule>,
}

impl Head {
    pub fn fc1_in_width(&self) -> usize {
        self.fc1_w.shape()[0]
    }

    pub fn zero_all_slot_f2(&mut self) {
        for slot in self.pre.iter_mut().chain(self.post.iter_mut()) {
            for block in slot.blocks_mut() {
                block.zero_f2();
            }
        }
    }

    pub fn slot_param_count(&self) -> u64 {
        self.pre
            .iter()
            .chain(&self.post)
            .flat_map(|s| s.blocks())
            .map(|b| b.param_count())
            .sum()
    }
}

fn build_block(kind: SlotKind, hyper: &BlockHyper, seed: u64, name: &str) -> BlockModule {
    let afe = AfeConfig::seeded_with(
        seed,
        name,
        hyper.r,
        hyper.k2,
        hyper.k3,
        hyper.use_eca,
        hyper.variant,
    );
    match kind {
        SlotKind::Afe => BlockModule::Afe(afe),
        SlotKind::Ccr => BlockModule::Ccr(CcrConfig {
            inner: afe,
            strict: false,
        }),
    }
}

fn build_slots(slots: &[Slot], hyper: &BlockHyper, seed: u64, prefix: &str) -> Vec<SlotModule> {
    slots
        .iter()
        .enumerate()
        .map(|(i, slot)| match slot {
            Slot::Single(k) => {
                SlotModule::Single(build_block(*k, hyper, seed, &format!("{prefix}{i}")))
            }
            Slot::Parallel(ks) => SlotModule::Parallel(
                ks.iter()
                    .enumerate()
                    .map(|(j, k)| build_block(*k, hyper, seed, &format!("{prefix}{i}.b{j}")))
                    .collect(),
            ),
            Slot::Split { cls, reg } => SlotModule::Split {
                cls: build_block(*cls, hyper, seed, &format!("{prefix}{i}.cls")),
                reg: build_block(*reg, hyper, seed, &format!("{prefix}{i}.reg")),
            },
        })
        .collect()
}

pub fn build_head(cfg: &HeadConfig, seed: u64) -> Result<Head> {
    cfg.validate()?;
    let egca = cfg.use_egca.then(|| {
        EgcaConfig::seeded(seed, "egca", EgcaStrategy::FusionFirst, cfg.egca_k, true)
    });
    let sr = cfg.use_sr.then(|| SrConfig::seeded(seed, "sr"));
    let cr = match cfg.beta {
        Some(beta) => Some(CrConfig::seeded(seed, "cr", beta)?),
        None => None,
    };

    let fc1_in = match cfg.in_features {
        Some(w) => w,
        None => {
            let channels = cr.as_ref().map(|c| c.weights.shape()[0]).unwrap_or(256);
            let spatial = match &sr {
                Some(sr) => sr.out_len(49)?,
                None => 49,
            };
            channels * spatial
        }
    };

    let head = Head {
        cfg: cfg.clone(),
        egca,
        sr,
        cr,
        fc1_w: init_tensor(seed, "fc1.w", vec![fc1_in, cfg.d], fc1_in),
        fc1_b: init_tensor(seed, "fc1.b", vec![cfg.d], fc1_in),
        fc2_w: init_tensor(seed, "fc2.w", vec![cfg.d, cfg.d], cfg.d),
        fc2_b: init_tensor(seed, "fc2.b", vec![cfg.d], cfg.d),
        pre: build_slots(&cfg.arrangement.pre, &cfg.block, seed, "pre"),
        post: build_slots(&cfg.arrangement.post, &cfg.block, seed, "post"),
    };
    Ok(head)
}

// ---------------------------------------------------------------- forward

/// Feature branches before the class/box projections; equal unless a split
/// slot routed them separately.
#[derive(Debug, Clone, Copy)]
pub struct HeadOutputs {
    pub cls: VarId,
    pub reg: VarId,
}

enum Stream {
    Shared(VarId),
    Split { cls: VarId, reg: VarId },
}

fn apply_block(tape: &mut Tape, x: VarId, block: &BlockModule) -> Result<VarId> {
    Ok(match block {
        BlockModule::Afe(cfg) => afe_forward(tape, x, cfg)?,
        BlockModule::Ccr(cfg) => ccr_forward(tape, x, cfg)?,
    })
}

fn apply_slot_to_var(tape: &mut Tape, x: VarId, slot: &SlotModule) -> Result<VarId> {
    match slot {
        SlotModule::Single(b) => apply_block(tape, x, b),
        SlotModule::Parallel(bs) => {
            // branches share one skip connection: x + sum of residual
            // corrections, so zeroed branches leave x untouched
            let mut acc: Option<VarId> = None;
            for b in bs {
                let y = apply_block(tape, x, b)?;
                let corr = tape.sub(y, x)?;
                acc = Some(match acc {
                    Some(a) => tape.add(a, corr)?,
                    None => corr,
                });
            }
            let corr = acc.expect("parallel slot has at least one branch");
            Ok(tape.add(x, corr)?)
        }
        SlotModule::Split { .. } => unreachable!("split handled at stream level"),
    }
}

fn apply_slot(tape: &mut Tape, stream: Stream, slot: &SlotModule) -> Result<Stream> {
    match (stream, slot) {
        (Stream::Shared(x), SlotModule::Split { cls, reg }) => Ok(Stream::Split {
            cls: apply_block(tape, x, cls)?,
            reg: apply_block(tape, x, reg)?,
        }),
        (Stream::Split { .. }, SlotModule::Split { .. }) => Err(HeadError::Config(
            "cannot split an already split stream".into(),
        )),
        (Stream::Shared(x), slot) => Ok(Stream::Shared(apply_slot_to_var(tape, x, slot)?)),
        (Stream::Split { cls, reg }, slot) => Ok(Stream::Split {
            cls: apply_slot_to_var(tape, cls, slot)?,
            reg: apply_slot_to_var(tape, reg, slot)?,
        }),
    }
}

fn check_ccr_precondition(head: &Head, n: usize) -> Result<()> {
    if head.cfg.arrangement.contains_ccr() && integer_sqrt(n).is_none() {
        return Err(HeadError::Module(ModuleError::RoiCountNotSquare { n }));
    }
    Ok(())
}

/// Shared FC stack plus slots over pre-flattened features `[N, fc1_in]`.
pub fn head_forward_features(tape: &mut Tape, head: &Head, x: VarId) -> Result<HeadOutputs> {
    let n = tape.value(x).shape()[0];
    check_ccr_precondition(head, n)?;

    let fc1_w = tape.leaf(head.fc1_w.clone());
    let fc1_b = tape.leaf(head.fc1_b.clone());
    let h = tape.affine(x, fc1_w, fc1_b)?;
    let mut h = tape.relu(h);
    for slot in &head.pre {
        h = apply_slot_to_var(tape, h, slot)?;
    }
    let fc2_w = tape.leaf(head.fc2_w.clone());
    let fc2_b = tape.leaf(head.fc2_b.clone());
    let h2 = tape.affine(h, fc2_w, fc2_b)?;
    let h2 = tape.relu(h2);
    let mut stream = Stream::Shared(h2);
    for slot in &head.post {
        stream = apply_slot(tape, stream, slot)?;
    }
    Ok(match stream {
        Stream::Shared(v) => HeadOutputs { cls: v, reg: v },
        Stream::Split { cls, reg } => HeadOutputs { cls, reg },
    })
}

/// Full pipeline from pyramid features and an RoI batch `[N, 256, 7, 7]`.
pub fn head_forward(
    tape: &mut Tape,
    head: &Head,
    pyr: &[VarId; 4],
    rois: VarId,
) -> Result<HeadOutputs> {
    let n = tape.value(rois).shape()[0];
    check_ccr_precondition(head, n)?;

    let mut x = rois;
    if let Some(egca) = &head.egca {
        x = egca_forward(tape, pyr, x, egca)?;
    }
    let mut x = match &head.sr {
        Some(sr) => sr_forward(tape, x, sr)?,
        None => {
            let shape = tape.value(x).shape().to_vec();
            tape.reshape(x, vec![shape[0], shape[1], shape[2] * shape[3]])?
        }
    };
    if let Some(cr) = &head.cr {
        x = cr_forward(tape, x, cr)?;
    }
    let shape = tape.value(x).shape().to_vec();
    let flat = tape.reshape(x, vec![shape[0], shape[1] * shape[2]])?;
    head_forward_features(tape, head, flat)
}

/// Three independent stages over the same RoI batch.
pub fn cascade_forward(
    tape: &mut Tape,
    heads: &[Head; 3],
    pyr: &[VarId; 4],
    rois: VarId,
) -> Result<Vec<HeadOutputs>> {
    for head in heads {
        if head.cfg.arrangement.contains_ccr() {
            return Err(HeadError::Config(
                "cascade deployment forbids CCR slots".into(),
            ));
        }
    }
    heads
        .iter()
        .map(|head| head_forward(tape, head, pyr, rois))
        .collect()
}

/// All 13 published arrangement labels in canonical form.
pub const TABLE6_ARRANGEMENTS: [&str; 13] = [
    "FC2-AFE-CCR",
    "FC2-CCR-AFE",
    "AFE-CCR-FC2",
    "CCR-AFE-FC2",
    "AFE-FC2-CCR",
    "CCR-FC2-AFE",
    "AFE-FC2-AFE",
    "CCR-FC2-CCR",
    "FC2-{AFE,CCR}",
    "FC2-{CCR_cls,AFE_reg}",
    "FC2-{AFE_cls,CCR_reg}",
    "AFEx2-FC2-CCRx2",
    "{AFE,AFE}-FC2-{CCR,CCR}",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_best_row() {
        let a = Arrangement::parse("AFE-FC2-CCR").unwrap();
        assert_eq!(a.pre, vec![Slot::Single(SlotKind::Afe)]);
        assert_eq!(a.post, vec![Slot::Single(SlotKind::Ccr)]);
        assert_eq!(a.canonical(), "AFE-FC2-CCR");
    }

    #[test]
    fn parse_parallel_and_split() {
        let a = Arrangement::parse("FC2-{AFE,CCR}").unwrap();
        assert_eq!(
            a.post,
            vec![Slot::Parallel(vec![SlotKind::Afe, SlotKind::Ccr])]
        );
        let s = Arrangement::parse("FC2-{CCR_cls,AFE_reg}").unwrap();
        assert_eq!(
            s.post,
            vec![Slot::Split {
                cls: SlotKind::Ccr,
                reg: SlotKind::Afe,
            }]
        );
    }

    #[test]
    fn parse_series_multiplier() {
        let a = Arrangement::parse("AFE\u{d7}2-FC2-CCR\u{d7}2").unwrap();
        assert_eq!(a.pre.len(), 2);
        assert_eq!(a.post.len(), 2);
        assert_eq!(a.canonical(), "AFEx2-FC2-CCRx2");
    }

    #[test]
    fn parse_degenerate_post() {
        let a = Arrangement::parse("AFE-FC2").unwrap();
        assert!(a.post.is_empty());
        assert_eq!(a.canonical(), "AFE-FC2");
    }

    #[test]
    fn parse_round_trips_all_table6_forms() {
        for text in TABLE6_ARRANGEMENTS {
            let a = Arrangement::parse(text).unwrap();
            assert_eq!(a.canonical(), text, "canonical mismatch for {text}");
            assert_eq!(Arrangement::parse(&a.canonical()).unwrap(), a);
        }
    }

    #[test]
    fn parse_errors_carry_position() {
        assert!(matches!(
            Arrangement::parse("AFE-CCR"),
            Err(HeadError::Parse { .. })
        ));
        assert!(matches!(
            Arrangement::parse("FC2-FC2"),
            Err(HeadError::Parse { pos: 4, .. })
        ));
        assert!(matches!(
            Arrangement::parse("AFE-FC2-XYZ"),
            Err(HeadError::Parse { pos: 8, .. })
        ));
    }

    #[test]
    fn parse_is_case_and_space_insensitive() {
        let a = Arrangement::parse(" afe - fc2 - ccr ").unwrap();
        assert_eq!(a.canonical(), "AFE-FC2-CCR");
    }

    #[test]
    fn build_default_fc1_extents() {
        let cfg = HeadConfig::default_with("AFE-FC2-CCR").unwrap();
        let head = build_head(&cfg, 0).unwrap();
        assert_eq!(head.fc1_w.shape(), &[6400, 1024]);
    }

    #[test]
    fn build_no_sr_fc1_extents() {
        let mut cfg = HeadConfig::default_with("AFE-FC2-CCR").unwrap();
        cfg.use_sr = false;
        let head = build_head(&cfg, 0).unwrap();
        assert_eq!(head.fc1_w.shape(), &[12544, 1024]);
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = HeadConfig::default_with("AFE-FC2-CCR").unwrap();
        let a = build_head(&cfg, 17).unwrap();
        let b = build_head(&cfg, 17).unwrap();
        assert_eq!(a.fc1_w, b.fc1_w);
        assert_eq!(a.fc2_w, b.fc2_w);
        let c = build_head(&cfg, 18).unwrap();
        assert_ne!(a.fc1_w, c.fc1_w);
    }

    #[test]
    fn cascade_config_rejects_ccr() {
        let mut cfg = HeadConfig::default_with("AFE-FC2-CCR").unwrap();
        cfg.stages = 3;
        assert!(matches!(build_head(&cfg, 0), Err(HeadError::Config(_))));
        let mut ok = HeadConfig::default_with("AFE-FC2-AFE").unwrap();
        ok.stages = 3;
        assert!(build_head(&ok, 0).is_ok());
    }

    #[test]
    fn tiny_head_shapes_and_ccr_guard() {
        let cfg = HeadConfig::tiny("AFE-FC2-CCR", 16, 16).unwrap();
        let head = build_head(&cfg, 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(crate::rng::normal_tensor(2, "x", vec![16, 16]));
        let out = head_forward_features(&mut tape, &head, x).unwrap();
        assert_eq!(tape.value(out.cls).shape(), &[16, 16]);
        assert_eq!(tape.value(out.reg).shape(), &[16, 16]);

        // 15 RoIs: CCR precondition must fail before any compute
        let mut tape = Tape::new();
        let bad = tape.leaf(crate::rng::normal_tensor(2, "x", vec![15, 16]));
        let before = tape.len();
        let err = head_forward_features(&mut tape, &head, bad);
        assert!(err.is_err());
        assert_eq!(tape.len(), before);
    }

    #[test]
    fn zeroed_slots_collapse_to_plain_head() {
        let cfg = HeadConfig::tiny("AFE-FC2-CCR", 16, 16).unwrap();
        let mut head = build_head(&cfg, 3).unwrap();
        head.zero_all_slot_f2();

        let plain_cfg = HeadConfig::tiny("FC2", 16, 16).unwrap();
        let plain = build_head(&plain_cfg, 3).unwrap();

        let x = crate::rng::normal_tensor(4, "x", vec![16, 16]);
        let mut t1 = Tape::new();
        let x1 = t1.leaf(x.clone());
        let o1 = head_forward_features(&mut t1, &head, x1).unwrap();
        let mut t2 = Tape::new();
        let x2 = t2.leaf(x);
        let o2 = head_forward_features(&mut t2, &plain, x2).unwrap();
        assert_eq!(t1.value(o1.cls), t2.value(o2.cls));
    }

    #[test]
    fn split_routes_branches_separately() {
        let cfg = HeadConfig::tiny("FC2-{AFE_cls,CCR_reg}", 16, 16).unwrap();
        let head = build_head(&cfg, 5).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(crate::rng::normal_tensor(6, "x", vec![16, 16]));
        let out = head_forward_features(&mut tape, &head, x).unwrap();
        assert_ne!(tape.value(out.cls), tape.value(out.reg));
    }
}
