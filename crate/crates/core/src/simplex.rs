//! Bounded Nelder-Mead minimiser.

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_iterations: usize,
    /// Convergence when the spread of objective values across the simplex
    /// drops below this.
    pub ftol: f64,
    /// Convergence when every vertex lies within this distance (per
    /// coordinate) of the best vertex.
    pub xtol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            ftol: 1e-8,
            xtol: 1e-10,
        }
    }
}

fn clamp_into(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

/// Minimises `f` starting from `x0` with initial edge lengths `steps`.
/// Points are clamped into `bounds` before evaluation. Non-finite values
/// are treated as `+inf`.
pub fn minimize(
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    steps: &[f64],
    bounds: &[(f64, f64)],
    opts: SimplexOptions,
) -> SimplexResult {
    let n = x0.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut start = x0.to_vec();
    clamp_into(&mut start, bounds);
    simplex.push(start.clone());
    for i in 0..n {
        let mut v = start.clone();
        v[i] += steps[i];
        if v[i] > bounds[i].1 {
            v[i] = start[i] - steps[i];
        }
        clamp_into(&mut v, bounds);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iterations {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        if (values[0].is_finite() && spread.abs() <= opts.ftol) || diameter <= opts.xtol {
            converged = values[0].is_finite();
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let toward = |coef: f64| {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + coef * (c - w))
                .collect();
            clamp_into(&mut p, bounds);
            p
        };

        let reflected = toward(1.0);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = toward(2.0);
            let fe = eval(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let p = toward(0.5);
            let v = eval(&p);
            (p, v)
        } else {
            let p = toward(-0.5);
            let v = eval(&p);
            (p, v)
        };
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].clone();
        for i in 1..=n {
            for j in 0..n {
                simplex[i][j] = best[j] + 0.5 * (simplex[i][j] - best[j]);
            }
            values[i] = eval(&simplex[i]);
        }
    }

    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    SimplexResult {
        x: simplex[best].clone(),
        fx: values[best],
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let r = minimize(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &[0.5, 0.5],
            &[(-5.0, 5.0), (-5.0, 5.0)],
            SimplexOptions {
                ftol: 1e-14,
                ..Default::default()
            },
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn respects_bounds() {
        let r = minimize(
            |x| (x[0] - 10.0).powi(2),
            &[0.0],
            &[1.0],
            &[(-1.0, 2.0)],
            SimplexOptions::default(),
        );
        assert!((r.x[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn iteration_cap() {
        let r = minimize(
            |x| (x[0] - 3.0).powi(2),
            &[0.0],
            &[1e-6],
            &[(-10.0, 10.0)],
            SimplexOptions {
                max_iterations: 3,
                ftol: 0.0,
                xtol: 0.0,
            },
        );
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
    }
}
