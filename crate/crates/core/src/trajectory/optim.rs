//! Smooth nonlinear programming by the method of multipliers.
//!
//! `min f(x)  s.t.  c(x) = 0,  g(x) <= 0` is solved as a sequence of
//! unconstrained minimizations of the Powell-Hestenes-Rockafellar augmented
//! Lagrangian. Each subproblem is minimized by a regularized Newton method on
//! the exact Hessian, which problems provide in bordered band form: a
//! symmetric band over all variables but the last, plus one dense border
//! row/column for the last variable.

pub(crate) trait ConstrainedProblem {
    fn dim(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn num_ineq(&self) -> usize;
    /// Half-bandwidth of the Hessian restricted to the first `dim() - 1` variables.
    fn bandwidth(&self) -> usize;
    /// Objective value; writes its gradient into `grad`.
    fn objective(&self, x: &[f64], grad: &mut [f64]) -> f64;
    fn constraints(&self, x: &[f64], eq: &mut [f64], ineq: &mut [f64]);
    /// `grad += J_eq(x)ᵀ·w_eq + J_ineq(x)ᵀ·w_ineq`
    fn add_jacobian_transpose(&self, x: &[f64], w_eq: &[f64], w_ineq: &[f64], grad: &mut [f64]);
    /// Adds `∇²f + Σ w_eq_i ∇²c_i + μ·J_eqᵀJ_eq` and, for every `j` with
    /// `w_ineq[j] > 0`, `w_ineq_j ∇²g_j + μ·∇g_j∇g_jᵀ`.
    fn add_augmented_hessian(
        &self,
        x: &[f64],
        w_eq: &[f64],
        w_ineq: &[f64],
        penalty: f64,
        hess: &mut BorderedBand,
    );
}

/// Symmetric matrix whose leading `n-1` block is banded; the last
/// row/column is dense.
#[derive(Debug, Clone)]
pub(crate) struct BorderedBand {
    n: usize,
    bw: usize,
    /// lower band of the leading block, row-major, `(bw + 1)` slots per row
    band: Vec<f64>,
    border: Vec<f64>,
    corner: f64,
}

impl BorderedBand {
    pub fn new(n: usize, bw: usize) -> Self {
        assert!(n >= 1);
        BorderedBand {
            n,
            bw,
            band: vec![0.0; (n - 1) * (bw + 1)],
            border: vec![0.0; n - 1],
            corner: 0.0,
        }
    }

    pub fn clear(&mut self) {
        self.band.iter_mut().for_each(|v| *v = 0.0);
        self.border.iter_mut().for_each(|v| *v = 0.0);
        self.corner = 0.0;
    }

    /// Adds `v` to entry (i, j) and, implicitly, (j, i).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let last = self.n - 1;
        if i == last {
            if j == last {
                self.corner += v;
            } else {
                self.border[j] += v;
            }
        } else {
            debug_assert!(i - j <= self.bw, "entry ({i},{j}) outside band {}", self.bw);
            self.band[i * (self.bw + 1) + (i - j)] += v;
        }
    }

    #[cfg(test)]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let last = self.n - 1;
        if i == last {
            if j == last {
                self.corner
            } else {
                self.border[j]
            }
        } else if i - j <= self.bw {
            self.band[i * (self.bw + 1) + (i - j)]
        } else {
            0.0
        }
    }

    fn diag_scale(&self) -> f64 {
        (0..self.n - 1)
            .map(|i| self.band[i * (self.bw + 1)].abs())
            .fold(self.corner.abs(), f64::max)
            .max(1.0)
    }

    /// Solves `(H + shift·I)·d = rhs` by banded Cholesky with a Schur
    /// complement on the border. `None` when the shifted matrix is not
    /// positive definite.
    fn solve_shifted(&self, shift: f64, rhs: &[f64]) -> Option<Vec<f64>> {
        let m = self.n - 1;
        let w = self.bw + 1;
        let mut l = self.band.clone();
        for i in 0..m {
            l[i * w] += shift;
        }
        for i in 0..m {
            let j0 = i.saturating_sub(self.bw);
            for j in j0..=i {
                let mut sum = l[i * w + (i - j)];
                let k0 = j0.max(j.saturating_sub(self.bw));
                for k in k0..j {
                    sum -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return None;
                    }
                    l[i * w] = sum.sqrt();
                } else {
                    l[i * w + (i - j)] = sum / l[j * w];
                }
            }
        }
        let solve = |b: &[f64]| -> Vec<f64> {
            let mut y = b.to_vec();
            for i in 0..m {
                let j0 = i.saturating_sub(self.bw);
                let mut s = y[i];
                for j in j0..i {
                    s -= l[i * w + (i - j)] * y[j];
                }
                y[i] = s / l[i * w];
            }
            for i in (0..m).rev() {
                let mut s = y[i];
                for k in (i + 1)..(i + w).min(m) {
                    s -= l[k * w + (k - i)] * y[k];
                }
                y[i] = s / l[i * w];
            }
            y
        };
        let y = solve(&self.border);
        let z = solve(&rhs[..m]);
        let schur = self.corner + shift - dot(&self.border, &y);
        if !(schur > 0.0) || !schur.is_finite() {
            return None;
        }
        let last = (rhs[m] - dot(&self.border, &z)) / schur;
        let mut d: Vec<f64> = z.iter().zip(&y).map(|(zi, yi)| zi - yi * last).collect();
        d.push(last);
        Some(d)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AlSettings {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for AlSettings {
    fn default() -> Self {
        AlSettings {
            feasibility_tol: 1e-11,
            optimality_tol: 1e-6,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            max_penalty: 1e10,
            max_outer: 40,
            max_inner: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct AlReport {
    pub converged: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub objective: f64,
    /// max |c_i| and max positive g_j
    pub infeasibility: f64,
    pub stationarity: f64,
    pub penalty: f64,
}

struct Augmented<'a, P> {
    problem: &'a P,
    eq_mult: Vec<f64>,
    ineq_mult: Vec<f64>,
    penalty: f64,
    eq: Vec<f64>,
    ineq: Vec<f64>,
    w_eq: Vec<f64>,
    w_ineq: Vec<f64>,
}

impl<P: ConstrainedProblem> Augmented<'_, P> {
    /// Value and gradient; leaves the effective multipliers in `w_eq`/`w_ineq`.
    fn value_grad(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mu = self.penalty;
        let mut value = self.problem.objective(x, grad);
        self.problem.constraints(x, &mut self.eq, &mut self.ineq);
        for i in 0..self.eq.len() {
            let c = self.eq[i];
            value += self.eq_mult[i] * c + 0.5 * mu * c * c;
            self.w_eq[i] = self.eq_mult[i] + mu * c;
        }
        for j in 0..self.ineq.len() {
            let shifted = (self.ineq_mult[j] + mu * self.ineq[j]).max(0.0);
            value += (shifted * shifted - self.ineq_mult[j] * self.ineq_mult[j]) / (2.0 * mu);
            self.w_ineq[j] = shifted;
        }
        self.problem
            .add_jacobian_transpose(x, &self.w_eq, &self.w_ineq, grad);
        value
    }

    fn value(&mut self, x: &[f64], scratch: &mut [f64]) -> f64 {
        self.value_grad(x, scratch)
    }
}

#[derive(Debug, Clone, Copy)]
struct NewtonReport {
    iterations: usize,
    grad_norm: f64,
}

fn newton_minimize<P: ConstrainedProblem>(
    aug: &mut Augmented<'_, P>,
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> NewtonReport {
    let n = x.len();
    let mut grad = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut hess = BorderedBand::new(n, aug.problem.bandwidth());
    let mut shift_rel: f64 = 0.0;
    let mut report = NewtonReport {
        iterations: 0,
        grad_norm: f64::INFINITY,
    };
    for iter in 0..max_iter {
        let value = aug.value_grad(x, &mut grad);
        report.iterations = iter;
        report.grad_norm = inf_norm(&grad);
        if report.grad_norm <= tol || !value.is_finite() {
            break;
        }
        hess.clear();
        aug.problem
            .add_augmented_hessian(x, &aug.w_eq, &aug.w_ineq, aug.penalty, &mut hess);
        let scale = hess.diag_scale();
        let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();

        let mut accepted = false;
        shift_rel /= 4.0;
        if shift_rel < 1e-14 {
            shift_rel = 0.0;
        }
        for _ in 0..60 {
            let Some(dir) = hess.solve_shifted(shift_rel * scale, &neg_grad) else {
                shift_rel = (shift_rel * 10.0).max(1e-12);
                continue;
            };
            let slope = dot(&grad, &dir);
            if !(slope < 0.0) {
                shift_rel = (shift_rel * 10.0).max(1e-12);
                continue;
            }
            let mut step = 1.0;
            for _ in 0..30 {
                for i in 0..n {
                    trial[i] = x[i] + step * dir[i];
                }
                let v = aug.value(&trial, &mut scratch);
                if v.is_finite() && v <= value + 1e-4 * step * slope {
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if accepted {
                x.copy_from_slice(&trial);
                if step < 1.0 {
                    shift_rel = (shift_rel * 2.0).max(1e-12);
                }
                break;
            }
            shift_rel = (shift_rel * 100.0).max(1e-10);
        }
        if !accepted {
            break;
        }
    }
    report
}

fn infeasibility(eq: &[f64], ineq: &[f64]) -> f64 {
    let e = eq.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    ineq.iter().fold(e, |m, g| m.max(*g))
}

/// Violation including complementarity, used to drive the penalty schedule.
fn al_violation(eq: &[f64], ineq: &[f64], ineq_mult: &[f64], penalty: f64) -> f64 {
    let e = eq.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    ineq.iter()
        .zip(ineq_mult)
        .fold(e, |m, (g, nu)| m.max(g.max(-nu / penalty).abs()))
}

pub(crate) fn solve_augmented_lagrangian<P: ConstrainedProblem>(
    problem: &P,
    x: &mut [f64],
    settings: &AlSettings,
) -> AlReport {
    let n = problem.dim();
    debug_assert_eq!(x.len(), n);
    let mut aug = Augmented {
        problem,
        eq_mult: vec![0.0; problem.num_eq()],
        ineq_mult: vec![0.0; problem.num_ineq()],
        penalty: settings.initial_penalty,
        eq: vec![0.0; problem.num_eq()],
        ineq: vec![0.0; problem.num_ineq()],
        w_eq: vec![0.0; problem.num_eq()],
        w_ineq: vec![0.0; problem.num_ineq()],
    };
    let mut report = AlReport {
        converged: false,
        outer_iterations: 0,
        inner_iterations: 0,
        objective: f64::NAN,
        infeasibility: f64::INFINITY,
        stationarity: f64::INFINITY,
        penalty: aug.penalty,
    };
    let mut prev_violation = f64::INFINITY;
    let mut inner_tol: f64 = 1e-3;
    let mut scratch = vec![0.0; n];

    for outer in 0..settings.max_outer {
        report.outer_iterations = outer + 1;
        let inner = newton_minimize(&mut aug, x, inner_tol, settings.max_inner);
        report.inner_iterations += inner.iterations;
        report.stationarity = inner.grad_norm;

        report.objective = problem.objective(x, &mut scratch);
        problem.constraints(x, &mut aug.eq, &mut aug.ineq);
        report.infeasibility = infeasibility(&aug.eq, &aug.ineq);
        let violation = al_violation(&aug.eq, &aug.ineq, &aug.ineq_mult, aug.penalty);

        for i in 0..aug.eq.len() {
            aug.eq_mult[i] += aug.penalty * aug.eq[i];
        }
        for j in 0..aug.ineq.len() {
            aug.ineq_mult[j] = (aug.ineq_mult[j] + aug.penalty * aug.ineq[j]).max(0.0);
        }

        if violation <= settings.feasibility_tol
            && report.infeasibility <= settings.feasibility_tol
            && inner.grad_norm <= settings.optimality_tol
        {
            report.converged = true;
            break;
        }
        if !report.objective.is_finite() {
            break;
        }
        if violation > 0.25 * prev_violation && aug.penalty < settings.max_penalty {
            aug.penalty = (aug.penalty * settings.penalty_growth).min(settings.max_penalty);
        }
        prev_violation = violation;
        inner_tol = (inner_tol * 0.1).max(settings.optimality_tol);
    }
    report.penalty = aug.penalty;
    report
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
