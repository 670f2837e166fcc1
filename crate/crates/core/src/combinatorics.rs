//! Exact hypothesis counts with arbitrary-precision integers.

use num_bigint::BigUint;
use num_traits::{One, Zero};

/// `C(n, k)`, zero when `k > n`.
pub fn binomial(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// `C(n, k)` for signed arguments, zero outside `0 <= k <= n`.
fn binomial_signed(n: i64, k: i64) -> BigUint {
    if n < 0 || k < 0 || k > n {
        BigUint::zero()
    } else {
        binomial(n as usize, k as usize)
    }
}

/// Number of data-association children of an `objects`-object hypothesis
/// given `returns` returns: `sum_n C(M,n) C(m,n) n!`.
pub fn count_associations(objects: usize, returns: usize) -> BigUint {
    let mut total = BigUint::zero();
    // C(M,n) * m!/(m-n)!, built incrementally.
    let mut choose_objects = BigUint::one();
    let mut falling = BigUint::one();
    for n in 0..=objects.min(returns) {
        if n > 0 {
            choose_objects = choose_objects * (objects - n + 1) / n;
            falling *= returns - n + 1;
        }
        total += &choose_objects * &falling;
    }
    total
}

/// Grandchild count of an `objects`-object hypothesis over `pixels` birth
/// pixels: every birth instance (pixel subset) and death instance (object
/// subset) followed by every association of the surviving and newborn
/// objects.
pub fn count_grandchildren(objects: usize, returns: usize, pixels: usize) -> BigUint {
    count_grandchildren_with(objects, returns, pixels, objects)
}

/// As [`count_grandchildren`] with only `death_eligible` of the objects able
/// to die (zero when deaths are impossible).
pub fn count_grandchildren_with(
    objects: usize,
    returns: usize,
    pixels: usize,
    death_eligible: usize,
) -> BigUint {
    let death_eligible = death_eligible.min(objects);
    let mut assoc_cache: Vec<Option<BigUint>> = vec![None; objects + pixels + 1];
    let death_counts: Vec<BigUint> = (0..=death_eligible).map(|d| binomial(death_eligible, d)).collect();
    let mut total = BigUint::zero();
    for births in 0..=pixels {
        let birth_instances = binomial(pixels, births);
        for (deaths, death_instances) in death_counts.iter().enumerate() {
            let after = objects + births - deaths;
            let assoc = assoc_cache[after].get_or_insert_with(|| count_associations(after, returns));
            total += &birth_instances * death_instances * &*assoc;
        }
    }
    total
}

/// Grandchild count read literally from the published closed form: a sum
/// over net growth `K = 0..=N` plus a sum over net shrinkage running from
/// `K = -1` to `M`, with the instance multiplicities `a_{M+K}` and `a_{M-K}`.
pub fn count_grandchildren_closed_form_literal(objects: usize, returns: usize, pixels: usize) -> BigUint {
    closed_form(objects, returns, pixels, -1)
}

/// The same closed form with the shrinkage sum starting at `K = 1`, so the
/// zero-net-change term is counted once.
pub fn count_grandchildren_closed_form_corrected(
    objects: usize,
    returns: usize,
    pixels: usize,
) -> BigUint {
    closed_form(objects, returns, pixels, 1)
}

fn closed_form(objects: usize, returns: usize, pixels: usize, shrink_start: i64) -> BigUint {
    let m_obj = objects as i64;
    let n_pix = pixels as i64;
    let assoc = |count: i64| -> BigUint {
        if count < 0 {
            BigUint::zero()
        } else {
            count_associations(count as usize, returns)
        }
    };
    let mut total = BigUint::zero();
    for k in 0..=n_pix {
        // a_{M+K} = sum_j C(N, K+j) C(M, j)
        let mut a = BigUint::zero();
        for j in 0..=n_pix {
            a += binomial_signed(n_pix, k + j) * binomial_signed(m_obj, j);
        }
        total += a * assoc(m_obj + k);
    }
    for k in shrink_start..=m_obj {
        // a_{M-K} = sum_{j=0}^{M-K} C(M, K+j) C(N, j)
        let mut a = BigUint::zero();
        for j in 0..=(m_obj - k) {
            a += binomial_signed(m_obj, k + j) * binomial_signed(n_pix, j);
        }
        total += a * assoc(m_obj - k);
    }
    total
}

/// Lossy conversion for reporting.
pub fn to_f64(n: &BigUint) -> f64 {
    n.to_string().parse().unwrap_or(f64::INFINITY)
}
