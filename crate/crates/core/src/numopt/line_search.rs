//! Strong-Wolfe line search with cubic interpolation (bracketing + zoom).

/// Outcome of a line search along direction `d` from `x`.
pub(crate) struct LineSearchOutcome {
    pub step: f64,
    pub f: f64,
    pub grad: Vec<f64>,
    pub evaluations: usize,
    /// Both strong-Wolfe conditions hold at the returned step.
    pub wolfe: bool,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct WolfeParams {
    pub c1: f64,
    pub c2: f64,
    pub max_evals: usize,
    pub tolerance_change: f64,
}

/// Minimizer of the cubic through `(x1, f1, g1)` and `(x2, f2, g2)`, clamped
/// to `bounds` (defaults to the interval spanned by the two points).
pub(crate) fn cubic_interpolate(
    (x1, f1, g1): (f64, f64, f64),
    (x2, f2, g2): (f64, f64, f64),
    bounds: Option<(f64, f64)>,
) -> f64 {
    let (lo, hi) = bounds.unwrap_or(if x1 <= x2 { (x1, x2) } else { (x2, x1) });
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    if d2_sq >= 0.0 {
        let d2 = d2_sq.sqrt();
        let min_pos = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if min_pos.is_finite() {
            return min_pos.max(lo).min(hi);
        }
    }
    (lo + hi) / 2.0
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Point {
    t: f64,
    f: f64,
    g: Vec<f64>,
    gtd: f64,
}

/// Searches `t > 0` so that `f(x + t d)` satisfies the strong-Wolfe
/// conditions. Returns `None` when no point with sufficient decrease is found.
///
/// Non-finite objective values are treated as +∞, which forces bracketing
/// back toward smaller steps.
pub(crate) fn strong_wolfe<F>(
    eval: &mut F,
    x: &[f64],
    d: &[f64],
    f0: f64,
    g0: &[f64],
    t_init: f64,
    params: WolfeParams,
) -> Option<LineSearchOutcome>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let gtd0 = dot(g0, d);
    let d_norm = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut xt = vec![0.0; n];
    let mut evals = 0usize;

    let mut probe = |t: f64, evals: &mut usize| -> Point {
        for i in 0..n {
            xt[i] = x[i] + t * d[i];
        }
        let mut g = vec![0.0; n];
        let mut f = eval(&xt, &mut g);
        *evals += 1;
        let mut gtd = dot(&g, d);
        if !f.is_finite() || !gtd.is_finite() {
            f = f64::INFINITY;
            gtd = f64::NAN;
        }
        Point { t, f, g, gtd }
    };
    let armijo = |p: &Point| p.f <= f0 + params.c1 * p.t * gtd0;
    let curvature = |p: &Point| p.gtd.abs() <= -params.c2 * gtd0;

    let mut prev = Point {
        t: 0.0,
        f: f0,
        g: g0.to_vec(),
        gtd: gtd0,
    };
    let mut cur = probe(t_init, &mut evals);
    let mut iter = 0usize;

    let (mut a, mut b) = loop {
        if iter >= params.max_evals {
            let origin = Point {
                t: 0.0,
                f: f0,
                g: g0.to_vec(),
                gtd: gtd0,
            };
            break (origin, cur);
        }
        if !armijo(&cur) || (iter > 1 && cur.f >= prev.f) {
            break (prev, cur);
        }
        if curvature(&cur) {
            return Some(LineSearchOutcome {
                step: cur.t,
                f: cur.f,
                grad: cur.g,
                evaluations: evals,
                wolfe: true,
            });
        }
        if cur.gtd >= 0.0 {
            break (prev, cur);
        }
        let min_step = cur.t + 0.01 * (cur.t - prev.t);
        let max_step = cur.t * 10.0;
        let t_next = cubic_interpolate(
            (prev.t, prev.f, prev.gtd),
            (cur.t, cur.f, cur.gtd),
            Some((min_step, max_step)),
        );
        prev = cur;
        cur = probe(t_next, &mut evals);
        iter += 1;
    };

    // zoom: `a` always holds the lowest objective found inside the bracket
    if b.f < a.f {
        std::mem::swap(&mut a, &mut b);
    }
    let mut insufficient_progress = false;
    let mut done = false;
    while !done && iter < params.max_evals {
        if (b.t - a.t).abs() * d_norm < params.tolerance_change {
            break;
        }
        let (lo, hi) = if a.t <= b.t { (a.t, b.t) } else { (b.t, a.t) };
        let mut t = if b.f.is_finite() && b.gtd.is_finite() {
            cubic_interpolate((a.t, a.f, a.gtd), (b.t, b.f, b.gtd), None)
        } else {
            (a.t + b.t) / 2.0
        };
        let eps = 0.1 * (hi - lo);
        if (hi - t).min(t - lo) < eps {
            if insufficient_progress || t >= hi || t <= lo {
                t = if (t - hi).abs() < (t - lo).abs() {
                    hi - eps
                } else {
                    lo + eps
                };
                insufficient_progress = false;
            } else {
                insufficient_progress = true;
            }
        } else {
            insufficient_progress = false;
        }
        let p = probe(t, &mut evals);
        iter += 1;
        if !armijo(&p) || p.f >= a.f {
            b = p;
            if b.f < a.f {
                std::mem::swap(&mut a, &mut b);
            }
        } else {
            if curvature(&p) {
                done = true;
            } else if p.gtd * (b.t - a.t) >= 0.0 {
                b = std::mem::replace(&mut a, p);
                continue;
            }
            a = p;
        }
    }

    if a.t > 0.0 && armijo(&a) && a.f < f0 {
        let wolfe = curvature(&a);
        Some(LineSearchOutcome {
            step: a.t,
            f: a.f,
            grad: a.g,
            evaluations: evals,
            wolfe,
        })
    } else {
        None
    }
}
