use std::fmt::Write;

use crate::canonical::format_f64;
use crate::risk::TraceRow;

pub const DIAGNOSTICS_HEADER: &str = "stage,index,estimate,bound,aux";

/// Trace rows as CSV with a header; floats carry 17 significant digits.
pub fn diagnostics_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from(DIAGNOSTICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.stage, r.index, format_f64(r.estimate), format_f64(r.bound), format_f64(r.aux));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_rows() {
        let rows = [TraceRow { stage: "cmc", index: 0, estimate: 1e-3, bound: 2e-3, aux: 4.0 }];
        let csv = diagnostics_csv(&rows);
        assert_eq!(
            csv,
            "stage,index,estimate,bound,aux\ncmc,0,1.0000000000000000e-3,2.0000000000000000e-3,4.0000000000000000e0\n"
        );
    }
}
