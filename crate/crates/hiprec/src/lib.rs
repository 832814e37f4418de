//! High-precision rational reference arithmetic for test oracles.
//!
//! Everything here is exact `BigRational` arithmetic with explicit truncation
//! control: each series is summed until the next term is below the requested
//! decimal precision, and intermediate results are snapped to a fixed decimal
//! denominator so numerators stay small. The functions return values whose
//! absolute error is below `10^-digits`; callers typically request 50-60
//! digits and compare `f64` implementations at far looser tolerances.
//!
//! This crate is a dev-dependency only. It shares no code with the library
//! under test.

use num_bigint::{BigInt, Sign};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Rat = BigRational;

/// `n / d` as an exact rational.
pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

pub fn from_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Exact rational value of an `f64` (every finite f64 is a dyadic rational).
pub fn from_f64(x: f64) -> Rat {
    assert!(x.is_finite(), "cannot convert non-finite f64");
    BigRational::from_float(x).expect("finite f64 is rational")
}

fn pow10(digits: u32) -> BigInt {
    BigInt::from(10u32).pow(digits)
}

/// Round `x` to the nearest multiple of `10^-digits`. Keeps denominators from
/// growing without bound inside long series sums.
pub fn truncate(x: &Rat, digits: u32) -> Rat {
    let scale = pow10(digits);
    let scaled = x * Rat::from_integer(scale.clone());
    Rat::new(scaled.round().to_integer(), scale)
}

/// Correctly rounded `f64` from a rational, via a 25-significant-digit
/// decimal string (Rust's f64 parser rounds correctly).
pub fn to_f64(x: &Rat) -> f64 {
    if x.is_zero() {
        return 0.0;
    }
    let digits_before = x.abs().to_integer().to_string().len() as i32;
    // 25 significant digits regardless of magnitude.
    let frac_digits = (25 - digits_before).max(1) as u32;
    let s = to_decimal_string(x, frac_digits);
    s.parse::<f64>().expect("decimal string parses")
}

/// Decimal expansion of `x` with `digits` digits after the point.
pub fn to_decimal_string(x: &Rat, digits: u32) -> String {
    let neg = x.is_negative();
    let ax = x.abs();
    let scale = pow10(digits);
    let scaled = (&ax * Rat::from_integer(scale.clone())).round().to_integer();
    let (int_part, frac_part) = (scaled.clone() / &scale, scaled % &scale);
    let mut frac_str = frac_part.to_string();
    while (frac_str.len() as u32) < digits {
        frac_str.insert(0, '0');
    }
    let sign = if neg { "-" } else { "" };
    format!("{sign}{int_part}.{frac_str}")
}

/// arctan of a rational with |x| <= 1, by the alternating Taylor series.
/// Truncation error is bounded by the first omitted term.
fn atan_small(x: &Rat, digits: u32) -> Rat {
    let work = digits + 10;
    let eps = Rat::new(BigInt::one(), pow10(work));
    let x2 = x * x;
    let mut term = x.clone();
    let mut sum = Rat::zero();
    let mut k: i64 = 0;
    while term.abs() > eps {
        let contrib = &term / Rat::from_integer(BigInt::from(2 * k + 1));
        if k % 2 == 0 {
            sum += contrib;
        } else {
            sum -= contrib;
        }
        term = truncate(&(&term * &x2), work + 10);
        k += 1;
        assert!(k < 200_000, "atan series failed to converge");
    }
    truncate(&sum, work)
}

/// pi via Machin's formula: pi/4 = 4 atan(1/5) - atan(1/239).
pub fn pi(digits: u32) -> Rat {
    let work = digits + 10;
    let a = atan_small(&rat(1, 5), work);
    let b = atan_small(&rat(1, 239), work);
    truncate(
        &(Rat::from_integer(BigInt::from(4)) * (Rat::from_integer(BigInt::from(4)) * a - b)),
        digits + 5,
    )
}

/// arctan for any rational argument. |x| > 1 reflects through pi/2; values
/// in (1/2, 1] get one half-angle reduction
/// atan(x) = 2 atan(x / (1 + sqrt(1 + x^2))) so the series stays geometric.
pub fn atan(x: &Rat, digits: u32) -> Rat {
    if x.is_zero() {
        return Rat::zero();
    }
    let ax = x.abs();
    let val = if ax > Rat::one() {
        let half_pi = pi(digits + 5) / Rat::from_integer(BigInt::from(2));
        half_pi - atan_reduced(&ax.recip(), digits + 5)
    } else {
        atan_reduced(&ax, digits)
    };
    if x.is_negative() {
        -val
    } else {
        val
    }
}

fn atan_reduced(x: &Rat, digits: u32) -> Rat {
    debug_assert!(!x.is_negative());
    if *x > rat(1, 2) {
        let one_plus = Rat::one() + sqrt(&(Rat::one() + x * x), digits + 10);
        let reduced = truncate(&(x / one_plus), digits + 15);
        Rat::from_integer(BigInt::from(2)) * atan_small(&reduced, digits + 5)
    } else {
        atan_small(x, digits)
    }
}

/// exp(x) by Taylor series with argument reduction exp(x) = exp(x/2^k)^(2^k).
pub fn exp(x: &Rat, digits: u32) -> Rat {
    let work = digits + 20;
    let mut halvings = 0u32;
    let mut arg = x.clone();
    let half = rat(1, 2);
    while arg.abs() > half {
        arg /= Rat::from_integer(BigInt::from(2));
        halvings += 1;
        assert!(halvings < 64, "exp argument too large for oracle");
    }
    let eps = Rat::new(BigInt::one(), pow10(work));
    let mut term = Rat::one();
    let mut sum = Rat::one();
    let mut k: i64 = 1;
    loop {
        term = truncate(&(&term * &arg / Rat::from_integer(BigInt::from(k))), work + 10);
        if term.abs() <= eps {
            break;
        }
        sum += &term;
        k += 1;
        assert!(k < 10_000, "exp series failed to converge");
    }
    for _ in 0..halvings {
        sum = truncate(&(&sum * &sum), work);
    }
    truncate(&sum, digits + 5)
}

/// sqrt of a nonnegative rational by Newton iteration to `digits` places.
pub fn sqrt(x: &Rat, digits: u32) -> Rat {
    assert!(!x.is_negative(), "sqrt of negative rational");
    if x.is_zero() {
        return Rat::zero();
    }
    let work = digits + 10;
    let eps = Rat::new(BigInt::one(), pow10(work));
    let mut guess = from_f64(to_f64_rough(x).sqrt().max(f64::MIN_POSITIVE));
    loop {
        let next = truncate(
            &((&guess + x / &guess) / Rat::from_integer(BigInt::from(2))),
            work + 10,
        );
        let delta = (&next - &guess).abs();
        guess = next;
        if delta <= eps {
            break;
        }
    }
    truncate(&guess, digits + 5)
}

/// Integer power, exact.
pub fn powi(x: &Rat, k: u32) -> Rat {
    let mut out = Rat::one();
    for _ in 0..k {
        out *= x;
    }
    out
}

// Rough f64 estimate used only to seed Newton iterations; balances decimal
// magnitudes when numerator/denominator overflow f64.
fn to_f64_rough(x: &Rat) -> f64 {
    if let (Some(n), Some(d)) = (x.numer().to_f64(), x.denom().to_f64()) {
        if n.is_finite() && d.is_finite() && d != 0.0 {
            return n / d;
        }
    }
    let nd = x.numer().to_string().len() as i32;
    let dd = x.denom().to_string().len() as i32;
    let shift = nd - dd;
    let approx = to_f64_rough(&truncate(&(x / pow10_rat(shift)), 30));
    approx * 10f64.powi(shift)
}

fn pow10_rat(k: i32) -> Rat {
    if k >= 0 {
        Rat::from_integer(pow10(k as u32))
    } else {
        Rat::new(BigInt::one(), pow10((-k) as u32))
    }
}

/// Sum of arctan over a slice of rationals (the Lagrangian angle reference).
pub fn atan_sum(xs: &[Rat], digits: u32) -> Rat {
    let mut sum = Rat::zero();
    for x in xs {
        sum += atan(x, digits + 5);
    }
    truncate(&sum, digits)
}

fn big(s: &str) -> BigInt {
    BigInt::parse_bytes(s.as_bytes(), 10).expect("valid integer literal")
}

/// Parse a decimal literal like "-0.6123..." into an exact rational.
pub fn from_decimal_str(s: &str) -> Rat {
    let (sign, body) = match s.strip_prefix('-') {
        Some(rest) => (Sign::Minus, rest),
        None => (Sign::Plus, s),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    let digits = frac_part.len() as u32;
    let joined = format!("{int_part}{frac_part}");
    let numer = big(&joined);
    let numer = if sign == Sign::Minus { -numer } else { numer };
    Rat::new(numer, pow10(digits))
}
