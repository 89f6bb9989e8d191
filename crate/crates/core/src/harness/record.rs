use std::io::Write;

use crate::error::Result;

/// One CSV row: losses before the update at `step` and cumulative operation
/// counts over all layers.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub step: u64,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub mm: u64,
    pub smm: u64,
    pub qr: u64,
    pub eig: u64,
    /// Root-sum-square over layers of `off(P₁)_F`; absent under the old parametrization.
    pub offdiag_p1: Option<f64>,
    pub offdiag_p2: Option<f64>,
    pub wall_ms: f64,
}

pub const CSV_HEADER: &str = "step,train_loss,eval_loss,mm,smm,qr,eig,offdiag_P1,offdiag_P2,wall_ms";

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:e}")).unwrap_or_default()
}

impl RunRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:e},{:e},{},{},{},{},{},{},{:e}",
            self.step,
            self.train_loss,
            self.eval_loss,
            self.mm,
            self.smm,
            self.qr,
            self.eig,
            opt(self.offdiag_p1),
            opt(self.offdiag_p2),
            self.wall_ms
        )
    }
}

pub fn write_csv(records: &[RunRecord], mut out: impl Write) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.csv_line())?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_shape() {
        let r = RunRecord {
            step: 3,
            train_loss: 0.5,
            eval_loss: 1e-7,
            mm: 10,
            smm: 2,
            qr: 4,
            eig: 0,
            offdiag_p1: Some(0.25),
            offdiag_p2: None,
            wall_ms: 0.0,
        };
        let mut buf = Vec::new();
        write_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, format!("{CSV_HEADER}\n3,5e-1,1e-7,10,2,4,0,2.5e-1,,0e0\n"));
        let fields: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(fields.len(), CSV_HEADER.split(',').count());
        assert_eq!(fields[2].parse::<f64>().unwrap(), 1e-7);
    }
}
