//! Adaptive Gauss-Kronrod (7/15) quadrature on finite intervals.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for the odd-indexed Kronrod nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

const MAX_DEPTH: u32 = 48;

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
}

/// Returns `(kronrod, |kronrod - gauss|, kronrod applied to |f|)`.
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut absolute = fc.abs() * WGK[7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let (lo, hi) = (f(center - dx), f(center + dx));
        kronrod += WGK[j] * (lo + hi);
        absolute += WGK[j] * (lo.abs() + hi.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (lo + hi);
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs(), absolute * half.abs())
}

fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> Result<Integral> {
    let (value, error, absolute) = gk15(f, a, b);
    // below this the estimate is rounding noise
    let floor = 50.0 * f64::EPSILON * absolute;
    if error <= tol.max(floor) || (b - a).abs() <= 64.0 * f64::EPSILON * a.abs().max(b.abs()).max(1.0) {
        return Ok(Integral { value, error });
    }
    if depth >= MAX_DEPTH || !value.is_finite() {
        return Err(Error::QuadratureFailure { a, b });
    }
    let mid = 0.5 * (a + b);
    let left = adapt(f, a, mid, 0.5 * tol, depth + 1)?;
    let right = adapt(f, mid, b, 0.5 * tol, depth + 1)?;
    Ok(Integral {
        value: left.value + right.value,
        error: left.error + right.error,
    })
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<Integral> {
    if a == b {
        return Ok(Integral { value: 0.0, error: 0.0 });
    }
    if b < a {
        let r = adapt(&f, b, a, tol, 0)?;
        return Ok(Integral {
            value: -r.value,
            error: r.error,
        });
    }
    adapt(&f, a, b, tol, 0)
}

/// Integrates over `[a, b]` after splitting at the interior `breaks`, which
/// should mark the known kinks or jumps of the integrand.
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: f64,
) -> Result<Integral> {
    let mut points: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let n_pieces = points.len() + 1;
    let piece_tol = tol / n_pieces as f64;
    let mut lo = a;
    let mut total = Integral { value: 0.0, error: 0.0 };
    for hi in points.into_iter().chain(std::iter::once(b)) {
        let piece = integrate(&f, lo, hi, piece_tol)?;
        total.value += piece.value;
        total.error += piece.error;
        lo = hi;
    }
    Ok(total)
}
