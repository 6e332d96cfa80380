/// Correctly rounded sum of `values` (Shewchuk's partials plus a final
/// half-way correction). The result does not depend on the order of the
/// inputs. `partials` is scratch space.
pub(crate) fn exact_sum(values: impl Iterator<Item = f64>, partials: &mut Vec<f64>) -> f64 {
    partials.clear();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    let Some(mut k) = partials.len().checked_sub(1) else {
        return 0.0;
    };
    let mut hi = partials[k];
    let mut lo = 0.0;
    while k > 0 {
        k -= 1;
        let x = hi;
        let y = partials[k];
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    if k > 0 && ((lo < 0.0 && partials[k - 1] < 0.0) || (lo > 0.0 && partials[k - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cancellation_and_rounding() {
        let mut p = Vec::new();
        assert_eq!(exact_sum([1e16, 1.0, -1e16].into_iter(), &mut p), 1.0);
        assert_eq!(exact_sum([0.1; 10].into_iter(), &mut p), 1.0);
        assert_eq!(exact_sum(std::iter::empty(), &mut p), 0.0);
        // 1 + 2^-53 + 2^-106 rounds up only because of the last term
        let e = 2f64.powi(-53);
        assert_eq!(exact_sum([1.0, e, e * e].into_iter(), &mut p), 1.0 + 2.0 * e);
    }

    proptest! {
        #[test]
        fn order_independent(mut v in prop::collection::vec(-1e6f64..1e6, 0..60), seed in any::<u64>()) {
            let mut p = Vec::new();
            let a = exact_sum(v.iter().copied(), &mut p);
            let n = v.len();
            if n > 1 {
                let mut s = seed;
                for i in (1..n).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    v.swap(i, (s >> 33) as usize % (i + 1));
                }
            }
            prop_assert_eq!(a, exact_sum(v.iter().copied(), &mut p));
            let doubled: Vec<f64> = v.iter().chain(&v).copied().collect();
            prop_assert_eq!(2.0 * a, exact_sum(doubled.into_iter(), &mut p));
        }
    }
}
