//! Scalar math routed through `libm` (or implemented here) so results do
//! not depend on the platform's C library.

/// `2^(j/32)` for `j = 0..32`, correctly rounded.
const EXP2_TABLE: [f64; 32] = [
    1.0,
    1.0218971486541166,
    1.0442737824274138,
    1.0671404006768237,
    1.0905077326652577,
    1.1143867425958924,
    1.1387886347566916,
    1.1637248587775775,
    1.189207115002721,
    1.215247359980469,
    1.241857812073484,
    1.2690509571917332,
    1.2968395546510096,
    1.3252366431597413,
    1.3542555469368927,
    1.383909881963832,
    1.4142135623730951,
    1.4451808069770467,
    1.4768261459394993,
    1.5091644275934228,
    1.5422108254079407,
    1.5759808451078865,
    1.6104903319492543,
    1.645755478153965,
    1.681792830507429,
    1.718619298122478,
    1.7562521603732995,
    1.7947090750031072,
    1.8340080864093424,
    1.8741676341103,
    1.9152065613971474,
    1.9571441241754002,
];

/// `e^x` by range reduction `x = (32m + j)·ln2/32 + r` with `|r| ≤ ln2/64`,
/// a table lookup for `2^(j/32)` and a degree-6 polynomial for `e^r`.
/// Agrees with a correctly rounded result to a few ulp.
#[inline]
pub fn exp(x: f64) -> f64 {
    const INV_STEP: f64 = 32.0 * core::f64::consts::LOG2_E;
    const STEP_HI: f64 = 6.931_471_803_691_238_2e-1 / 32.0;
    const STEP_LO: f64 = 1.908_214_929_270_587_7e-10 / 32.0;
    // round to nearest through the 2^52 + 2^51 shifter
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    if x.is_nan() {
        return x;
    }
    if x > 709.782_712_893_384 {
        return f64::INFINITY;
    }
    if x < -745.133_219_101_941_1 {
        return 0.0;
    }
    let kf = (x * INV_STEP + SHIFT) - SHIFT;
    let r = (x - kf * STEP_HI) - kf * STEP_LO;
    let r2 = r * r;
    // Estrin-style grouping keeps the dependency chain short
    let p01 = 1.0 + r;
    let p23 = 0.5 + r * (1.0 / 6.0);
    let p45 = 1.0 / 24.0 + r * (1.0 / 120.0);
    let p = p01 + r2 * (p23 + r2 * (p45 + r2 * (1.0 / 720.0)));
    let k = kf as i64;
    let j = k.rem_euclid(32) as usize;
    let m = k.div_euclid(32);
    let v = p * EXP2_TABLE[j];
    if m > 1023 {
        v * pow2(m - 1) * 2.0
    } else if m >= -1022 {
        v * pow2(m)
    } else {
        v * pow2(m + 600) * pow2(-600)
    }
}

/// `e^x` for every element of a slice of non-positive arguments, in place.
///
/// Branch-free so the loop vectorises: arguments below -708 are clamped
/// (their exponentials are below 1e-307), `k = round(x / ln2)` comes from
/// the shifter, `2^k` is assembled from integer bits, and `e^r` with
/// `|r| ≤ ln2/2` uses a degree-12 polynomial (relative error < 1e-15).
pub fn exp_nonpositive_in_place(xs: &mut [f64]) {
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const C: [f64; 13] = [
        1.0,
        1.0,
        1.0 / 2.0,
        1.0 / 6.0,
        1.0 / 24.0,
        1.0 / 120.0,
        1.0 / 720.0,
        1.0 / 5_040.0,
        1.0 / 40_320.0,
        1.0 / 362_880.0,
        1.0 / 3_628_800.0,
        1.0 / 39_916_800.0,
        1.0 / 479_001_600.0,
    ];
    for v in xs.iter_mut() {
        let x = v.max(-708.0);
        let y = x * core::f64::consts::LOG2_E + SHIFT;
        let kf = y - SHIFT;
        let k = y.to_bits().wrapping_sub(SHIFT.to_bits());
        let r = (x - kf * LN2_HI) - kf * LN2_LO;
        let r2 = r * r;
        let r4 = r2 * r2;
        let r8 = r4 * r4;
        let a = (C[0] + r * C[1]) + r2 * (C[2] + r * C[3]);
        let b = (C[4] + r * C[5]) + r2 * (C[6] + r * C[7]);
        let c = (C[8] + r * C[9]) + r2 * (C[10] + r * C[11]) + r4 * C[12];
        let p = a + r4 * b + r8 * c;
        *v = p * f64::from_bits(k.wrapping_add(1023) << 52);
    }
}

#[inline]
fn pow2(k: i64) -> f64 {
    // callers keep k within the normal exponent range [-1022, 1023]
    f64::from_bits(((k + 1023) as u64) << 52)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn tan(x: f64) -> f64 {
    libm::tan(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub fn lgamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Dot product with four interleaved accumulators. The reduction order is
/// fixed, so results are bitwise reproducible.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Sum with the same fixed four-lane order as [`dot`].
#[inline]
pub fn sum(a: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i];
        acc[1] += a[i + 1];
        acc[2] += a[i + 2];
        acc[3] += a[i + 3];
    }
    let mut tail = 0.0;
    for v in &a[chunks * 4..] {
        tail += v;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
