use std::fmt;

use super::bf16::bf16_quantize;

/// Storage precision of a buffer.
///
/// `Bf16` is storage-only: arithmetic on BF16 data is carried out after
/// promotion, and results are produced at [`Precision::working`] precision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Precision {
    Fp64,
    Fp32,
    Bf16,
}

impl Precision {
    /// Precision used for intermediates derived from data stored at `self`.
    pub fn working(self) -> Precision {
        match self {
            Precision::Fp64 => Precision::Fp64,
            Precision::Fp32 | Precision::Bf16 => Precision::Fp32,
        }
    }

    /// Working precision for a result combining operands of both precisions.
    pub fn combine(self, other: Precision) -> Precision {
        if self == Precision::Fp64 || other == Precision::Fp64 {
            Precision::Fp64
        } else {
            Precision::Fp32
        }
    }

    /// Rounds `x` to the nearest value representable at this precision.
    #[inline]
    pub fn round(self, x: f64) -> f64 {
        match self {
            Precision::Fp64 => x,
            Precision::Fp32 => x as f32 as f64,
            Precision::Bf16 => bf16_quantize(x as f32) as f64,
        }
    }

    /// Unit roundoff.
    pub fn epsilon(self) -> f64 {
        match self {
            Precision::Fp64 => f64::EPSILON,
            Precision::Fp32 => f32::EPSILON as f64,
            Precision::Bf16 => 2f64.powi(-7),
        }
    }

    /// Orthogonality tolerance for a basis stored at this precision.
    pub fn ortho_tol(self) -> f64 {
        match self {
            Precision::Fp64 => 1e-12,
            Precision::Fp32 => 1e-5,
            Precision::Bf16 => 1e-4,
        }
    }

    /// Checkpoint dtype code.
    pub fn code(self) -> u8 {
        match self {
            Precision::Fp64 => 0,
            Precision::Fp32 => 1,
            Precision::Bf16 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Precision> {
        match code {
            0 => Some(Precision::Fp64),
            1 => Some(Precision::Fp32),
            2 => Some(Precision::Bf16),
            _ => None,
        }
    }

    pub fn bytes_per_element(self) -> usize {
        match self {
            Precision::Fp64 => 8,
            Precision::Fp32 => 4,
            Precision::Bf16 => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::Fp64 => "fp64",
            Precision::Fp32 => "fp32",
            Precision::Bf16 => "bf16",
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fp64" | "f64" => Ok(Precision::Fp64),
            "fp32" | "f32" => Ok(Precision::Fp32),
            "bf16" | "bfp16" => Ok(Precision::Bf16),
            other => Err(format!("unknown precision `{other}` (expected fp64, fp32 or bf16)")),
        }
    }
}
