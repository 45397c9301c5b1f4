//! Counter-based random variates.
//!
//! Each variate is a pure function of the key `(seed, path, step)`: there is
//! no generator state to carry between calls, so any worker can produce the
//! variate for any cell and a batch is reproducible bit-for-bit regardless of
//! how paths are distributed across threads. Normal variates are obtained by
//! applying the inverse standard-normal CDF to the cell's uniform draw.

// Published coefficient tables are kept verbatim, digits and all.
#![allow(clippy::excessive_precision)]

/// Weyl increment used by the SplitMix64 finalizer.
const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer: a bijective avalanche mix on 64 bits.
#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64 pseudo-random bits for the cell `(seed, path, step)`.
///
/// Three chained finalizer rounds decorrelate the key words; flipping any
/// single input bit reshuffles the whole output word.
#[inline]
pub fn cell_bits(seed: u64, path: u64, step: u64) -> u64 {
    let a = splitmix(seed);
    let b = splitmix(a ^ path.wrapping_mul(0xA24B_AED4_963E_E407));
    splitmix(b ^ step.wrapping_mul(0x9FB2_1C65_1E98_DF25))
}

/// Uniform draw in the open interval (0, 1) for the cell.
///
/// Uses the top 53 bits shifted to the lattice midpoints, so 0 and 1 are
/// unreachable and the inverse CDF below stays finite.
#[inline]
pub fn cell_uniform(seed: u64, path: u64, step: u64) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    ((cell_bits(seed, path, step) >> 11) as f64 + 0.5) * SCALE
}

/// Standard normal draw for the cell, via [`normal_inv_cdf`].
#[inline]
pub fn cell_normal(seed: u64, path: u64, step: u64) -> f64 {
    normal_inv_cdf(cell_uniform(seed, path, step))
}

/// Inverse of the standard normal CDF (Wichura's PPND16 rational fits).
///
/// Absolute accuracy is about 1e-15 over (0, 1); the tails switch to fits in
/// sqrt(-ln p). Out-of-range arguments return NaN (0 and 1 map to -/+inf).
pub fn normal_inv_cdf(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        // Central region: rational fit in r = 0.180625 - q^2.
        let r = 0.180625 - q * q;
        let num = poly(
            &[
                3.387_132_872_796_366_608e0,
                1.331_416_678_917_843_774_5e2,
                1.971_590_950_306_551_442_7e3,
                1.373_169_376_550_946_112_5e4,
                4.592_195_393_154_987_145_7e4,
                6.726_577_092_700_870_085_3e4,
                3.343_057_558_358_812_810_5e4,
                2.509_080_928_730_122_672_7e3,
            ],
            r,
        );
        let den = poly(
            &[
                1.0,
                4.231_333_070_160_091_125_2e1,
                6.871_870_074_920_579_083e2,
                5.394_196_021_424_751_107_7e3,
                2.121_379_430_158_659_586_7e4,
                3.930_789_580_009_271_061e4,
                2.872_908_573_572_194_267_4e4,
                5.226_495_278_852_854_561e3,
            ],
            r,
        );
        return q * num / den;
    }

    // Tail regions: fit in r = sqrt(-ln(min(p, 1-p))).
    let lower = q < 0.0;
    let r = if lower { p } else { 1.0 - p };
    let mut r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        r -= 1.6;
        let num = poly(
            &[
                1.423_437_110_749_683_577_34e0,
                4.630_337_846_156_545_295_9e0,
                5.769_497_221_460_691_405_5e0,
                3.647_848_324_763_204_605_04e0,
                1.270_458_252_452_368_382_58e0,
                2.417_807_251_774_506_117_7e-1,
                2.272_384_498_926_918_458_33e-2,
                7.745_450_142_783_414_076_4e-4,
            ],
            r,
        );
        let den = poly(
            &[
                1.0,
                2.053_191_626_637_758_821_87e0,
                1.676_384_830_183_803_849_4e0,
                6.897_673_349_851_000_045_5e-1,
                1.481_039_764_274_800_745_9e-1,
                1.519_866_656_361_645_719_66e-2,
                5.475_938_084_995_344_946e-4,
                1.050_750_071_644_416_843_24e-9,
            ],
            r,
        );
        num / den
    } else {
        r -= 5.0;
        let num = poly(
            &[
                6.657_904_643_501_103_777_2e0,
                5.463_784_911_164_114_369_9e0,
                1.784_826_539_917_291_335_8e0,
                2.965_605_718_285_048_912_3e-1,
                2.653_218_952_657_612_309_3e-2,
                1.242_660_947_388_078_438_6e-3,
                2.711_555_568_743_487_578_15e-5,
                2.010_334_399_292_288_132_65e-7,
            ],
            r,
        );
        let den = poly(
            &[
                1.0,
                5.998_322_065_558_879_376_9e-1,
                1.369_298_809_227_358_053_1e-1,
                1.487_536_129_085_061_485_25e-2,
                7.868_691_311_456_132_591e-4,
                1.846_318_317_510_054_681_8e-5,
                1.421_511_758_316_445_888_7e-7,
                2.044_263_103_389_939_785_64e-15,
            ],
            r,
        );
        num / den
    };
    if lower {
        -x
    } else {
        x
    }
}

/// Horner evaluation with ascending coefficients.
#[inline]
fn poly(coeffs: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for &c in coeffs.iter().rev() {
        acc = acc * x + c;
    }
    acc
}
