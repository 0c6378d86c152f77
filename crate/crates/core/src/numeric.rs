//! Shared numeric helpers: normal special functions, compensated summation,
//! trapezoid integration with breakpoint splitting, golden-section search.

/// sqrt(2*pi)
pub(crate) const SQRT_TWO_PI: f64 = 2.506_628_274_631_000_5;

pub(crate) fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// Standard normal pdf.
pub(crate) fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_TWO_PI
}

/// Normal pdf with standard deviation `sigma`, centered at 0.
pub(crate) fn normal_pdf(x: f64, sigma: f64) -> f64 {
    std_normal_pdf(x / sigma) / sigma
}

/// Standard normal cdf.
pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Kahan-compensated accumulator. Keeps long Monte Carlo sums stable.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Composite trapezoid of `g` sampled on the uniform grid `lo + j*step`,
/// `j = 0..n-1`. `n >= 2`.
pub(crate) fn trapezoid<F: Fn(f64) -> f64>(lo: f64, step: f64, n: usize, g: F) -> f64 {
    debug_assert!(n >= 2);
    let mut acc = KahanSum::default();
    acc.add(0.5 * g(lo));
    for j in 1..n - 1 {
        acc.add(g(lo + j as f64 * step));
    }
    acc.add(0.5 * g(lo + (n - 1) as f64 * step));
    acc.value() * step
}

/// Trapezoid over the same grid for an integrand with a single jump at
/// `break_x`. The cell containing the jump is split; `g_left`/`g_right`
/// supply the one-sided limits at the break. A break sitting on a grid
/// node never evaluates `g` at the discontinuity itself: the node acts
/// as the right end of the left cell (at `g_left`) and the left end of
/// the right cell (at `g_right`).
pub(crate) fn trapezoid_with_break<F, L, R>(
    lo: f64,
    step: f64,
    n: usize,
    g: F,
    break_x: f64,
    g_left: L,
    g_right: R,
) -> f64
where
    F: Fn(f64) -> f64,
    L: Fn() -> f64,
    R: Fn() -> f64,
{
    debug_assert!(n >= 2);
    let hi = lo + (n - 1) as f64 * step;
    if break_x < lo || break_x > hi {
        return trapezoid(lo, step, n, g);
    }
    let t = (break_x - lo) / step;
    let nearest = t.round().clamp(0.0, (n - 1) as f64) as usize;
    if (t - nearest as f64).abs() <= 1e-9 {
        // jump exactly on a node
        let mut acc = KahanSum::default();
        for j in 0..n {
            let w = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
            if j == nearest {
                if j == 0 {
                    acc.add(0.5 * g_right());
                } else if j == n - 1 {
                    acc.add(0.5 * g_left());
                } else {
                    acc.add(0.5 * (g_left() + g_right()));
                }
            } else {
                acc.add(w * g(lo + j as f64 * step));
            }
        }
        return acc.value() * step;
    }
    let cell = (t.floor() as usize).min(n - 2);
    let xa = lo + cell as f64 * step;
    let xb = xa + step;

    let mut acc = KahanSum::default();
    // full cells before and after the split cell
    acc.add(0.5 * g(lo) * step);
    for j in 1..n - 1 {
        let w = if j == cell || j == cell + 1 { 0.5 } else { 1.0 };
        acc.add(w * g(lo + j as f64 * step) * step);
    }
    acc.add(0.5 * g(hi) * step);
    // split cell: [xa, break] with the left limit, [break, xb] with the right
    acc.add(0.5 * (break_x - xa) * (g(xa) + g_left()));
    acc.add(0.5 * (xb - break_x) * (g_right() + g(xb)));
    acc.value()
}

/// Golden-section search for the minimum of `f` on `[a, b]`.
/// Stops once the interval is narrower than `xtol`. Returns `(x, f(x))`.
pub(crate) fn golden_section_min<F: FnMut(f64) -> f64>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    xtol: f64,
    max_iters: usize,
) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    if a > b {
        std::mem::swap(&mut a, &mut b);
    }
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..max_iters {
        if (b - a).abs() <= xtol {
            break;
        }
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    if f1 < f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Sample standard deviation (n-1 denominator) from raw sums.
pub(crate) fn sample_std(sum: f64, sum_sq: f64, n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let var = (sum_sq - sum * sum / nf) / (nf - 1.0);
    var.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn erf_reference_points() {
        assert_relative_eq!(erf(0.0), 0.0);
        assert_relative_eq!(erf(1.0), 0.842_700_792_949_714_9, epsilon = 1e-12);
        assert_relative_eq!(erf(-1.0), -erf(1.0));
    }

    #[test]
    fn trapezoid_quadratic() {
        // int_0^1 x^2 dx = 1/3
        let v = trapezoid(0.0, 1.0 / 4096.0, 4097, |x| x * x);
        assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-7);
    }

    #[test]
    fn trapezoid_break_step_function() {
        // int_{-1}^{1} sign(x) dx = 0, exact with the split; note 0 is a
        // grid node here, so this also exercises the one-sided handling
        let g = |x: f64| if x > 0.0 { 1.0 } else { -1.0 };
        let v = trapezoid_with_break(-1.0, 2.0 / 64.0, 65, g, 0.0, || -1.0, || 1.0);
        assert_relative_eq!(v, 0.0, epsilon = 1e-12);
        // int_{-1}^{1} H(x - 0.3) dx = 0.7
        let h = |x: f64| if x > 0.3 { 1.0 } else { 0.0 };
        let v = trapezoid_with_break(-1.0, 2.0 / 64.0, 65, h, 0.3, || 0.0, || 1.0);
        assert_relative_eq!(v, 0.7, epsilon = 1e-12);
    }

    #[test]
    fn trapezoid_break_on_node_uses_one_sided_limits() {
        // break at 0.5 == node of a step-1/4 grid; a jump integrand must
        // not be sampled at the discontinuity itself
        let g = |x: f64| {
            assert!((x - 0.5).abs() > 1e-12, "evaluated at the jump");
            if x > 0.5 {
                2.0
            } else {
                -1.0
            }
        };
        // int_{-1}^{1} = -1 * 1.5 + 2 * 0.5 = -0.5
        let v = trapezoid_with_break(-1.0, 0.25, 9, g, 0.5, || -1.0, || 2.0);
        assert_relative_eq!(v, -0.5, epsilon = 1e-12);
        // break at the very first node
        let v = trapezoid_with_break(-1.0, 0.25, 9, |_| 3.0, -1.0, || -100.0, || 3.0);
        assert_relative_eq!(v, 6.0, epsilon = 1e-12);
    }

    #[test]
    fn golden_finds_parabola_min() {
        let (x, _) = golden_section_min(|x| (x - 1.7) * (x - 1.7), -4.0, 4.0, 1e-10, 200);
        assert!((x - 1.7).abs() < 1e-8);
    }

    #[test]
    fn kahan_long_sum() {
        let mut k = KahanSum::default();
        for _ in 0..10_000_000 {
            k.add(0.1);
        }
        assert_relative_eq!(k.value(), 1e6, epsilon = 1e-6);
    }
}
