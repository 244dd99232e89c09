//! Result CSV: `overhead,scope,erasure_rate,trials,K,scheme,seed`.

use std::io::Write;
use std::path::Path;

use super::{ExperimentResult, HarnessError, Row};

pub const HEADER: &str = "overhead,scope,erasure_rate,trials,K,scheme,seed";

/// Formats with 10 significant digits, `%g` style: fixed notation for
/// exponents in `[-5, 10)`, otherwise scientific; trailing zeros dropped.
pub fn format_float(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let sci = format!("{x:.9e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..10).contains(&exp) {
        let decimals = (9 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}")).to_string()
    } else {
        format!("{}e{exp}", trim(mantissa))
    }
}

fn trim(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn write_csv<W: Write>(result: &ExperimentResult, mut w: W) -> std::io::Result<()> {
    write!(w, "{HEADER}\n")?;
    for r in &result.rows {
        write!(
            w,
            "{},{},{},{},{},{},{}\n",
            format_float(r.overhead),
            r.scope,
            format_float(r.erasure_rate),
            r.trials,
            r.k,
            r.scheme,
            r.seed
        )?;
    }
    Ok(())
}

pub fn emit_csv(result: &ExperimentResult, path: &Path) -> Result<(), HarnessError> {
    let file = std::fs::File::create(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    write_csv(result, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn parse_csv(text: &str) -> Result<Vec<Row>, HarnessError> {
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(HarnessError::Io("missing or wrong CSV header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |m: String| HarnessError::Io(format!("CSV line {}: {m}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(format!("expected 7 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
            let int = |s: &str| s.parse::<u64>().map_err(|e| bad(format!("{s:?}: {e}")));
            Ok(Row {
                overhead: num(f[0])?,
                scope: f[1].parse().map_err(bad)?,
                erasure_rate: num(f[2])?,
                trials: int(f[3])? as usize,
                k: int(f[4])? as usize,
                scheme: f[5].to_string(),
                seed: int(f[6])?,
            })
        })
        .collect()
}
