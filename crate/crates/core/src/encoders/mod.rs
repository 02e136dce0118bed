//! The four shape-preserving visual encoders of a Mix-SSM block.
//!
//! Every branch maps an `[H, W, C]` feature map to a feature map of the same
//! shape.

mod conv;
mod mlp;
mod msa;
mod ssm;

pub use conv::ConvBranch;
pub use mlp::MlpBranch;
pub use msa::MsaBranch;
pub use ssm::{cross_merge, cross_scan, scan_orders, SsmBranch, SsmProjections};

use serde::{Deserialize, Serialize};

/// Which encoding strategy a branch implements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchKind {
    Ssm,
    Conv,
    Mlp,
    Msa,
}

impl BranchKind {
    pub const ALL: [BranchKind; 4] = [BranchKind::Ssm, BranchKind::Conv, BranchKind::Mlp, BranchKind::Msa];

    pub fn name(self) -> &'static str {
        match self {
            BranchKind::Ssm => "ssm",
            BranchKind::Conv => "conv",
            BranchKind::Mlp => "mlp",
            BranchKind::Msa => "msa",
        }
    }
}

impl std::fmt::Display for BranchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BranchKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        BranchKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s) || (s.eq_ignore_ascii_case("cnn") && *k == BranchKind::Conv))
            .ok_or_else(|| crate::Error::Config(format!("unknown branch {s:?}")))
    }
}

pub(crate) fn expect_map(op: &'static str, v: &crate::Tensor<impl crate::Real>, channels: usize) -> crate::Result<(usize, usize)> {
    match *v.shape() {
        [h, w, c] if c == channels && h > 0 && w > 0 => Ok((h, w)),
        _ => Err(crate::Error::shape(
            op,
            format!("expected [H, W, {channels}] feature map, got {:?}", v.shape()),
        )),
    }
}
