//! Optimizer configuration.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matcore::Precision;

/// Which companion matrix a factor stores next to its basis `Q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Parametrization {
    /// Stores the Kronecker factor `S` in ambient coordinates.
    Old,
    /// Stores `P = QᵀSQ`, the factor expressed in the current basis.
    New,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// Shampoo with KL-whitened factor statistics and tracked eigenvalues.
    KlShampoo,
    /// KL-whitened factors, Adam run in the factor eigenbasis.
    KlSoap,
    /// Unwhitened factors, Adam run in the factor eigenbasis.
    Soap,
}

impl Method {
    pub fn whitened(self) -> bool {
        matches!(self, Method::KlShampoo | Method::KlSoap)
    }

    pub fn uses_adam(self) -> bool {
        matches!(self, Method::KlSoap | Method::Soap)
    }

    /// Whether per-factor eigenvalues are tracked.
    pub fn tracks_eigenvalues(self) -> bool {
        self.whitened()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Selection {
    Full,
    Random,
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BasisSolver {
    Qr,
    Eig,
}

/// How Adam's second moment is carried across a basis rotation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RotateV {
    /// Left untouched.
    None,
    /// `v ← (O₁ᵀ √v O₂)^⊙2`.
    Approx,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    /// Learning rate γ.
    pub gamma: f64,
    /// EMA weight on the new factor statistic and the eigenvalue estimate.
    pub beta2: f64,
    /// EMA weight on the new gradient in the first moment (Adam variants).
    pub beta1: f64,
    /// ε inside every inverse square root.
    pub damping: f64,
    /// Basis refresh interval T.
    pub interval: u64,
    /// Subspace fraction B; block size is `max(2, round(B·d))`.
    pub subspace_fraction: f64,
    /// Inner subspace passes per refresh.
    pub inner_steps: usize,
    pub method: Method,
    pub parametrization: Parametrization,
    pub selection: Selection,
    pub basis_solver: BasisSolver,
    pub storage: Precision,
    pub weight_decay: f64,
    pub seed: u64,
    /// Reset λᵢ to diag(Pᵢ) after each basis refresh.
    pub refresh_lambda: bool,
    pub rotate_v: RotateV,
    /// Canonicalize QR factors. Only disabled to demonstrate why it is needed.
    pub sign_fix: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            gamma: 1e-2,
            beta2: 0.05,
            beta1: 0.1,
            damping: 1e-8,
            interval: 10,
            subspace_fraction: 1.0,
            inner_steps: 1,
            method: Method::KlShampoo,
            parametrization: Parametrization::New,
            selection: Selection::Full,
            basis_solver: BasisSolver::Qr,
            storage: Precision::Fp32,
            weight_decay: 0.0,
            seed: 0,
            refresh_lambda: false,
            rotate_v: RotateV::None,
            sign_fix: true,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(field.to_string(), msg));
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("lr", format!("learning rate must be finite and non-negative, got {}", self.gamma));
        }
        if !(self.beta2 > 0.0 && self.beta2 <= 1.0) {
            return bad("beta2", format!("must lie in (0, 1], got {}", self.beta2));
        }
        if !(self.beta1 > 0.0 && self.beta1 <= 1.0) {
            return bad("beta1", format!("must lie in (0, 1], got {}", self.beta1));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return bad("damping", format!("must be finite and non-negative, got {}", self.damping));
        }
        if self.interval == 0 {
            return bad("T", "refresh interval must be at least 1".into());
        }
        if !(self.subspace_fraction > 0.0 && self.subspace_fraction <= 1.0) {
            return bad("B", format!("must lie in (0, 1], got {}", self.subspace_fraction));
        }
        if self.inner_steps == 0 {
            return bad("K", "inner steps must be at least 1".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("wd", format!("must be finite and non-negative, got {}", self.weight_decay));
        }
        let full = self.selection == Selection::Full;
        if full != (self.subspace_fraction == 1.0) {
            return bad(
                "B",
                format!(
                    "selection {} requires {}, got B = {}",
                    self.selection,
                    if full { "B = 1" } else { "B < 1" },
                    self.subspace_fraction
                ),
            );
        }
        if self.basis_solver == BasisSolver::Eig && self.parametrization == Parametrization::Old {
            return bad("basis", "the eig basis solver needs the new parametrization".into());
        }
        Ok(())
    }
}

macro_rules! named_enum {
    ($ty:ty, $what:literal, { $($variant:path => [$($name:literal),+]),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let name = match self { $($variant => named_enum!(@first $($name),+)),+ };
                f.write_str(name)
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
                let lower = s.to_ascii_lowercase();
                $( if [$($name),+].contains(&lower.as_str()) { return Ok($variant); } )+
                Err(format!("unknown {} `{}`", $what, s))
            }
        }
    };
    (@first $first:literal $(, $rest:literal)*) => { $first };
}

named_enum!(Parametrization, "parametrization", {
    Parametrization::Old => ["old"],
    Parametrization::New => ["new"],
});

named_enum!(Method, "method", {
    Method::KlShampoo => ["kl-shampoo", "kl_shampoo"],
    Method::KlSoap => ["kl-soap", "kl_soap"],
    Method::Soap => ["soap"],
});

named_enum!(Selection, "selection", {
    Selection::Full => ["full"],
    Selection::Random => ["random"],
    Selection::Greedy => ["greedy"],
});

named_enum!(BasisSolver, "basis solver", {
    BasisSolver::Qr => ["qr"],
    BasisSolver::Eig => ["eig"],
});

named_enum!(RotateV, "rotate-v mode", {
    RotateV::None => ["none"],
    RotateV::Approx => ["approx"],
});

/// Parses a fraction written as `p/q` or as a decimal.
pub fn parse_fraction(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let num: f64 = num.trim().parse().map_err(|_| format!("bad numerator in `{s}`"))?;
        let den: f64 = den.trim().parse().map_err(|_| format!("bad denominator in `{s}`"))?;
        if den == 0.0 {
            return Err(format!("zero denominator in `{s}`"));
        }
        Ok(num / den)
    } else {
        s.parse().map_err(|_| format!("`{s}` is not a number or fraction"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        OptimConfig::default().validate().unwrap();
    }

    #[test]
    fn full_selection_iff_unit_fraction() {
        let mut c = OptimConfig { selection: Selection::Greedy, ..Default::default() };
        assert!(c.validate().is_err());
        c.subspace_fraction = 0.5;
        c.validate().unwrap();
        c.selection = Selection::Full;
        assert!(c.validate().is_err());
    }

    #[test]
    fn eig_requires_new_parametrization() {
        let c = OptimConfig {
            basis_solver: BasisSolver::Eig,
            parametrization: Parametrization::Old,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn enum_names_round_trip() {
        for m in [Method::KlShampoo, Method::KlSoap, Method::Soap] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("sgd".parse::<Method>().is_err());
        assert_eq!("GREEDY".parse::<Selection>().unwrap(), Selection::Greedy);
    }

    #[test]
    fn fractions() {
        assert_eq!(parse_fraction("1/4").unwrap(), 0.25);
        assert_eq!(parse_fraction("0.5").unwrap(), 0.5);
        assert!(parse_fraction("1/0").is_err());
        assert!(parse_fraction("half").is_err());
    }
}
