//! Correctly rounded floating point summation (Shewchuk's partials, with the
//! final half-way correction used by CPython's `math.fsum`). The result does
//! not depend on the order of the inputs.

use num_traits::Float;

pub fn exact_sum<F: Float, I: IntoIterator<Item = F>>(values: I) -> F {
    let mut partials: Vec<F> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != F::zero() {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }

    let mut n = partials.len();
    if n == 0 {
        return F::zero();
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = F::zero();
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != F::zero() {
            break;
        }
    }
    if n > 0 {
        let prev = partials[n - 1];
        if (lo < F::zero() && prev < F::zero()) || (lo > F::zero() && prev > F::zero()) {
            let y = lo + lo;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
    }
    hi
}
