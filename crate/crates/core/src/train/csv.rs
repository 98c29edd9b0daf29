use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::MetricsRecord;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "epoch,train_acc,train_loss,val_acc,val_loss,epoch_time_ms";

/// Six significant digits, shortest form: fixed notation for exponents in
/// `-4..6`, scientific otherwise, trailing zeros dropped.
pub fn format_sig6(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..6).contains(&exp) {
        trim(&format!("{:.*}", (5 - exp) as usize, v))
    } else {
        format!("{}e{}{:02}", trim(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

/// Writes the header and one line per record.
pub fn write_metrics_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Validation("no metrics records to write".into()));
    }
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch,
            format_sig6(r.train_acc),
            format_sig6(r.train_loss),
            format_sig6(r.val_acc),
            format_sig6(r.val_loss),
            r.epoch_time_ms
        )
        .expect("writing to a String");
    }
    fs::write(path, out)?;
    Ok(())
}
