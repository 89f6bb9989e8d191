use std::ops::{Add, AddAssign};

/// Snapshot of operation counters.
///
/// `mm` counts full-size matrix products, `smm` counts subspace products and
/// `smm_fraction_sum` accumulates each subspace product's cost relative to a
/// full product (B² for a `d×b · b×b` product with `b = B·d`).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CostCounts {
    pub mm: u64,
    pub smm: u64,
    pub qr: u64,
    pub eig: u64,
    pub smm_fraction_sum: f64,
}

impl CostCounts {
    /// Counters accumulated since `earlier`.
    pub fn since(&self, earlier: &CostCounts) -> CostCounts {
        CostCounts {
            mm: self.mm - earlier.mm,
            smm: self.smm - earlier.smm,
            qr: self.qr - earlier.qr,
            eig: self.eig - earlier.eig,
            smm_fraction_sum: self.smm_fraction_sum - earlier.smm_fraction_sum,
        }
    }

    /// Cost in units of one full mm.
    pub fn mm_equivalent(&self) -> f64 {
        self.mm as f64 + self.smm_fraction_sum
    }
}

impl Add for CostCounts {
    type Output = CostCounts;

    fn add(self, rhs: CostCounts) -> CostCounts {
        CostCounts {
            mm: self.mm + rhs.mm,
            smm: self.smm + rhs.smm,
            qr: self.qr + rhs.qr,
            eig: self.eig + rhs.eig,
            smm_fraction_sum: self.smm_fraction_sum + rhs.smm_fraction_sum,
        }
    }
}

impl AddAssign for CostCounts {
    fn add_assign(&mut self, rhs: CostCounts) {
        *self = *self + rhs;
    }
}

/// Operation counter owned by one layer.
///
/// A product is a full `mm` when every dimension is one of the layer's
/// `(d₁, d₂)`; anything involving a strictly smaller dimension is an `smm`.
/// Diagonal scalings and elementwise operations are never charged.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CostLedger {
    layer_dims: Option<(usize, usize)>,
    counts: CostCounts,
}

impl CostLedger {
    /// A ledger that charges every product as a full `mm`.
    pub fn new() -> Self {
        CostLedger::default()
    }

    pub fn for_layer(d1: usize, d2: usize) -> Self {
        CostLedger {
            layer_dims: Some((d1, d2)),
            counts: CostCounts::default(),
        }
    }

    pub fn layer_dims(&self) -> Option<(usize, usize)> {
        self.layer_dims
    }

    pub fn counts(&self) -> CostCounts {
        self.counts
    }

    pub fn mm_count(&self) -> u64 {
        self.counts.mm
    }

    pub fn smm_count(&self) -> u64 {
        self.counts.smm
    }

    pub fn qr_count(&self) -> u64 {
        self.counts.qr
    }

    pub fn eig_count(&self) -> u64 {
        self.counts.eig
    }

    pub fn smm_fraction_sum(&self) -> f64 {
        self.counts.smm_fraction_sum
    }

    /// Charges an `m×k · k×n` product, classifying it against the layer dims.
    pub fn charge_product(&mut self, m: usize, k: usize, n: usize) {
        match self.layer_dims {
            Some((d1, d2)) => {
                let full = [m, k, n].iter().all(|&x| x == d1 || x == d2);
                if full {
                    self.counts.mm += 1;
                } else {
                    let r = m.max(k).max(n);
                    self.charge_subspace(m, k, n, (r, r, r));
                }
            }
            None => self.counts.mm += 1,
        }
    }

    /// Charges an `m×k · k×n` product as a subspace product standing in for
    /// the full product of shape `full = (M, K, N)`; its fraction is `mkn/MKN`.
    pub fn charge_subspace(&mut self, m: usize, k: usize, n: usize, full: (usize, usize, usize)) {
        let reference = full.0 as f64 * full.1 as f64 * full.2 as f64;
        self.counts.smm += 1;
        self.counts.smm_fraction_sum += (m * k * n) as f64 / reference;
    }

    pub fn charge_qr(&mut self) {
        self.counts.qr += 1;
    }

    pub fn charge_eig(&mut self) {
        self.counts.eig += 1;
    }

    pub fn reset(&mut self) {
        self.counts = CostCounts::default();
    }
}
