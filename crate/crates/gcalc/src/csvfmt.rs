//! Numeric formatting for CSV output: every float is written with 17
//! significant digits so values round-trip bit-exactly through text.

/// Format with 17 significant digits in scientific notation.
///
/// `f64` round-trips through 17 significant decimal digits, so equal bit
/// patterns produce byte-identical fields and re-parsing recovers the exact
/// value.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}
