use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, PadMode};

/// Which parallel branches each block convolution trains with.
///
/// The 3×3 branch is always present. A fused model carries only the 3×3 branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BranchMask {
    pub conv1x1: bool,
    pub identity: bool,
}

impl BranchMask {
    pub const FULL: BranchMask = BranchMask {
        conv1x1: true,
        identity: true,
    };
    pub const PLAIN: BranchMask = BranchMask {
        conv1x1: false,
        identity: false,
    };

    /// bit 0: 3×3 (always set), bit 1: 1×1, bit 2: identity.
    pub fn bits(self) -> u8 {
        1 | (self.conv1x1 as u8) << 1 | (self.identity as u8) << 2
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        if bits & 1 == 0 || bits & !0b111 != 0 {
            return None;
        }
        Some(Self {
            conv1x1: bits & 0b10 != 0,
            identity: bits & 0b100 != 0,
        })
    }
}

impl Default for BranchMask {
    fn default() -> Self {
        Self::FULL
    }
}

/// Residual/attention switches of one block, plus trainability of the
/// shared attention scalars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpabConfig {
    pub use_residual: bool,
    pub use_attention: bool,
    pub train_attention_a: bool,
    pub train_attention_b: bool,
}

impl SpabConfig {
    pub const fn variant(variant: Variant) -> Self {
        let (use_residual, use_attention) = match variant {
            Variant::Span => (true, true),
            Variant::NoRes => (false, true),
            Variant::NoAtt => (true, false),
            Variant::Empty => (false, false),
        };
        Self {
            use_residual,
            use_attention,
            train_attention_a: false,
            train_attention_b: false,
        }
    }

    pub fn kind(&self) -> Variant {
        match (self.use_residual, self.use_attention) {
            (true, true) => Variant::Span,
            (false, true) => Variant::NoRes,
            (true, false) => Variant::NoAtt,
            (false, false) => Variant::Empty,
        }
    }
}

impl Default for SpabConfig {
    fn default() -> Self {
        Self::variant(Variant::Span)
    }
}

/// Ablation variants of the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Span,
    NoRes,
    NoAtt,
    Empty,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Span, Variant::NoRes, Variant::NoAtt, Variant::Empty];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Span => "span",
            Variant::NoRes => "nores",
            Variant::NoAtt => "noatt",
            Variant::Empty => "empty",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpanConfig {
    /// Upscaling factor r.
    pub scale: usize,
    /// Image channels C (3 for RGB).
    pub image_channels: usize,
    /// Feature channels C'.
    pub channels: usize,
    /// Number of blocks B.
    pub blocks: usize,
    pub block: SpabConfig,
    pub activation: Activation,
    pub padding: PadMode,
    pub branches: BranchMask,
}

impl SpanConfig {
    /// Six blocks of 48 channels.
    pub fn paper(scale: usize) -> Self {
        Self {
            scale,
            image_channels: 3,
            channels: 48,
            blocks: 6,
            block: SpabConfig::default(),
            activation: Activation::Silu,
            padding: PadMode::Zero,
            branches: BranchMask::FULL,
        }
    }

    /// Smaller preset. The channel count is an estimate chosen to land near
    /// 426K parameters at ×4, not a published value.
    pub fn small(scale: usize) -> Self {
        Self {
            channels: 40,
            ..Self::paper(scale)
        }
    }

    /// 16 channels, six blocks: the desk-scale training preset.
    pub fn desk(scale: usize) -> Self {
        Self {
            channels: 16,
            ..Self::paper(scale)
        }
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        let (a, b) = (self.block.train_attention_a, self.block.train_attention_b);
        self.block = SpabConfig::variant(v);
        self.block.train_attention_a = a;
        self.block.train_attention_b = b;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(2..=4).contains(&self.scale) {
            problems.push(format!("scale must be 2, 3 or 4, got {}", self.scale));
        }
        if self.image_channels == 0 {
            problems.push("image_channels must be positive".to_string());
        }
        if self.channels == 0 {
            problems.push("channels must be positive".to_string());
        }
        if self.blocks == 0 {
            problems.push("blocks must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Index of the block output tapped as the third concat input: `O_{B-1}`.
    pub fn late_tap(&self) -> usize {
        self.blocks - 1
    }

    /// Receptive-field radius in input pixels: one per 3×3 convolution on the path.
    pub fn receptive_radius(&self) -> usize {
        3 * self.blocks + 3
    }
}
