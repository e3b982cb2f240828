//! Spherical Bessel functions of the first kind, their positive roots, and
//! Legendre polynomials.

/// `j_l(x)` for `x >= 0`.
pub fn spherical_jn(l: usize, x: f64) -> f64 {
    if x == 0.0 {
        return if l == 0 { 1.0 } else { 0.0 };
    }
    if x > l as f64 {
        // upward recurrence is stable above the turning point
        let j0 = x.sin() / x;
        if l == 0 {
            return j0;
        }
        let mut prev = j0;
        let mut cur = x.sin() / (x * x) - x.cos() / x;
        for k in 1..l {
            let next = (2 * k + 1) as f64 / x * cur - prev;
            prev = cur;
            cur = next;
        }
        cur
    } else {
        series(l, x)
    }
}

/// Power series `x^l / (2l+1)!! · Σ_k (−x²/2)^k / (k! (2l+3)(2l+5)…(2l+2k+1))`.
fn series(l: usize, x: f64) -> f64 {
    // x^l / (2l+1)!!
    let mut lead = 1.0;
    for k in 0..l {
        lead *= x / (2 * k + 3) as f64;
    }
    let y = -0.5 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= y / (k as f64 * (2 * l + 2 * k + 1) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    lead * sum
}

/// Legendre polynomial `P_l(x)` by the three-term recurrence.
pub fn legendre(l: usize, x: f64) -> f64 {
    match l {
        0 => 1.0,
        1 => x,
        _ => {
            let (mut p0, mut p1) = (1.0, x);
            for k in 1..l {
                let p2 = ((2 * k + 1) as f64 * x * p1 - k as f64 * p0) / (k + 1) as f64;
                p0 = p1;
                p1 = p2;
            }
            p1
        }
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// First `n_roots` positive roots of `j_l` for every `l < n_orders`,
/// `roots[l][n]`. Roots of `j_0` are bracketed by a coarse scan; roots of
/// `j_l` interlace those of `j_{l−1}` and are bracketed by them.
pub fn spherical_jn_roots(n_orders: usize, n_roots: usize) -> Vec<Vec<f64>> {
    if n_orders == 0 {
        return Vec::new();
    }
    let needed = n_roots + n_orders;
    let mut prev = Vec::with_capacity(needed);
    let step = 0.1;
    let mut x = step;
    let mut fx = spherical_jn(0, x);
    while prev.len() < needed {
        let x2 = x + step;
        let f2 = spherical_jn(0, x2);
        if (fx > 0.0) != (f2 > 0.0) {
            prev.push(bisect(|t| spherical_jn(0, t), x, x2));
        }
        x = x2;
        fx = f2;
    }
    let mut out = vec![prev[..n_roots].to_vec()];
    for l in 1..n_orders {
        let count = needed - l;
        let cur: Vec<f64> = (0..count)
            .map(|k| bisect(|t| spherical_jn(l, t), prev[k], prev[k + 1]))
            .collect();
        out.push(cur[..n_roots].to_vec());
        prev = cur;
    }
    out
}
