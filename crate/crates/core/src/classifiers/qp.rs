//! Sequential pairwise-update solver for the SVM dual.
//!
//! Solves
//!
//! ```text
//! min_a  1/2 a'Qa + p'a
//! s.t.   y'a = delta,  0 <= a_t <= C_t
//! ```
//!
//! with `Q_ij = y_i y_j K_ij` and `y_t` in {-1, +1}. In `nu` mode the extra
//! constraint `e'a = const` is kept by only pairing variables of the same sign.
//! Working-set selection uses second-order information; indefinite kernels
//! fall back to a small positive curvature so the solver never assumes PSD.

use log::warn;

const TAU: f64 = 1e-12;

/// Row access to `Q`.
pub trait QMatrix {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Copies row `i` of `Q` (signs included) into `out`.
    fn row_into(&mut self, i: usize, out: &mut [f64]);
    fn diag(&self, i: usize) -> f64;
}

/// Fully materialised `Q`, row-major.
#[derive(Clone, Debug)]
pub struct DenseQ {
    n: usize,
    q: Vec<f64>,
}

impl DenseQ {
    /// Builds `Q` from a kernel matrix and labels.
    pub fn from_kernel(kernel: &[f64], y: &[f64]) -> Self {
        let n = y.len();
        assert_eq!(kernel.len(), n * n);
        let mut q = kernel.to_vec();
        for i in 0..n {
            for j in 0..n {
                q[i * n + j] *= y[i] * y[j];
            }
        }
        Self { n, q }
    }

    /// Uses `q` as-is (already signed).
    pub fn from_q(n: usize, q: Vec<f64>) -> Self {
        assert_eq!(q.len(), n * n);
        Self { n, q }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.n + j]
    }
}

impl QMatrix for DenseQ {
    fn len(&self) -> usize {
        self.n
    }

    fn row_into(&mut self, i: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.q[i * self.n..(i + 1) * self.n]);
    }

    fn diag(&self, i: usize) -> f64 {
        self.q[i * self.n + i]
    }
}

/// Settings of one solve.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverParams {
    /// KKT violation tolerance.
    pub eps: f64,
    /// Iteration cap as a multiple of the problem size.
    pub max_iter_per_var: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            max_iter_per_var: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub alpha: Vec<f64>,
    /// Value of `1/2 a'Qa + p'a` at `alpha`.
    pub objective: f64,
    /// Offset such that the decision value is `sum y_i a_i K(x_i, x) - rho`.
    pub rho: f64,
    /// Margin estimate of the nu formulation (zero otherwise).
    pub r: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Problem data besides `Q`.
#[derive(Clone, Debug)]
pub struct QpProblem {
    pub p: Vec<f64>,
    pub y: Vec<f64>,
    pub upper: Vec<f64>,
    /// Feasible starting point.
    pub alpha0: Vec<f64>,
    pub nu: bool,
}

struct State<'a, Q: QMatrix> {
    q: &'a mut Q,
    y: &'a [f64],
    upper: &'a [f64],
    alpha: Vec<f64>,
    grad: Vec<f64>,
    qd: Vec<f64>,
    row_a: Vec<f64>,
    row_b: Vec<f64>,
}

impl<Q: QMatrix> State<'_, Q> {
    #[inline]
    fn is_upper(&self, t: usize) -> bool {
        self.alpha[t] >= self.upper[t]
    }

    #[inline]
    fn is_lower(&self, t: usize) -> bool {
        self.alpha[t] <= 0.0
    }

    /// Maximal violating pair with second-order choice of `j`.
    fn select_standard(&mut self, eps: f64) -> Option<(usize, usize)> {
        let n = self.alpha.len();
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax_idx = None;
        for t in 0..n {
            if self.y[t] > 0.0 {
                if !self.is_upper(t) && -self.grad[t] >= gmax {
                    gmax = -self.grad[t];
                    gmax_idx = Some(t);
                }
            } else if !self.is_lower(t) && self.grad[t] >= gmax {
                gmax = self.grad[t];
                gmax_idx = Some(t);
            }
        }
        let i = gmax_idx?;
        self.q.row_into(i, &mut self.row_a);
        let mut gmax2 = f64::NEG_INFINITY;
        let mut best = None;
        let mut obj_min = f64::INFINITY;
        for j in 0..n {
            let (grad_diff, quad) = if self.y[j] > 0.0 {
                if self.is_lower(j) {
                    continue;
                }
                gmax2 = gmax2.max(self.grad[j]);
                (
                    gmax + self.grad[j],
                    self.qd[i] + self.qd[j] - 2.0 * self.y[i] * self.row_a[j],
                )
            } else {
                if self.is_upper(j) {
                    continue;
                }
                gmax2 = gmax2.max(-self.grad[j]);
                (
                    gmax - self.grad[j],
                    self.qd[i] + self.qd[j] + 2.0 * self.y[i] * self.row_a[j],
                )
            };
            if grad_diff > 0.0 {
                let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                if obj <= obj_min {
                    obj_min = obj;
                    best = Some(j);
                }
            }
        }
        if gmax + gmax2 < eps {
            return None;
        }
        best.map(|j| (i, j))
    }

    /// Same-sign pair selection for the nu formulation.
    fn select_nu(&mut self, eps: f64) -> Option<(usize, usize)> {
        let n = self.alpha.len();
        let (mut gmaxp, mut gmaxn) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let (mut ip, mut in_) = (None, None);
        for t in 0..n {
            if self.y[t] > 0.0 {
                if !self.is_upper(t) && -self.grad[t] >= gmaxp {
                    gmaxp = -self.grad[t];
                    ip = Some(t);
                }
            } else if !self.is_lower(t) && self.grad[t] >= gmaxn {
                gmaxn = self.grad[t];
                in_ = Some(t);
            }
        }
        if let Some(ip) = ip {
            self.q.row_into(ip, &mut self.row_a);
        }
        if let Some(in_) = in_ {
            self.q.row_into(in_, &mut self.row_b);
        }
        let (mut gmaxp2, mut gmaxn2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut best = None;
        let mut obj_min = f64::INFINITY;
        for j in 0..n {
            let (grad_diff, quad) = if self.y[j] > 0.0 {
                if self.is_lower(j) {
                    continue;
                }
                gmaxp2 = gmaxp2.max(self.grad[j]);
                let Some(ip) = ip else { continue };
                (gmaxp + self.grad[j], self.qd[ip] + self.qd[j] - 2.0 * self.row_a[j])
            } else {
                if self.is_upper(j) {
                    continue;
                }
                gmaxn2 = gmaxn2.max(-self.grad[j]);
                let Some(in_) = in_ else { continue };
                (gmaxn - self.grad[j], self.qd[in_] + self.qd[j] - 2.0 * self.row_b[j])
            };
            if grad_diff > 0.0 {
                let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                if obj <= obj_min {
                    obj_min = obj;
                    best = Some(j);
                }
            }
        }
        if (gmaxp + gmaxp2).max(gmaxn + gmaxn2) < eps {
            return None;
        }
        let j = best?;
        let i = if self.y[j] > 0.0 { ip? } else { in_? };
        Some((i, j))
    }

    fn update(&mut self, i: usize, j: usize) {
        self.q.row_into(i, &mut self.row_a);
        self.q.row_into(j, &mut self.row_b);
        let (ci, cj) = (self.upper[i], self.upper[j]);
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);

        if self.y[i] != self.y[j] {
            let mut quad = self.qd[i] + self.qd[j] + 2.0 * self.row_a[j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > ci - cj {
                if ai > ci {
                    ai = ci;
                    aj = ci - diff;
                }
            } else if aj > cj {
                aj = cj;
                ai = cj + diff;
            }
        } else {
            let mut quad = self.qd[i] + self.qd[j] - 2.0 * self.row_a[j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > ci {
                if ai > ci {
                    ai = ci;
                    aj = sum - ci;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > cj {
                if aj > cj {
                    aj = cj;
                    ai = sum - cj;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }

        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for (k, g) in self.grad.iter_mut().enumerate() {
            *g += self.row_a[k] * di + self.row_b[k] * dj;
        }
    }

    fn rho_standard(&self) -> f64 {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut nr_free, mut sum_free) = (0usize, 0.0);
        for t in 0..self.alpha.len() {
            let yg = self.y[t] * self.grad[t];
            if self.is_upper(t) {
                if self.y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if self.is_lower(t) {
                if self.y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                nr_free += 1;
                sum_free += yg;
            }
        }
        if nr_free > 0 {
            sum_free / nr_free as f64
        } else {
            (ub + lb) / 2.0
        }
    }

    /// Returns `(rho, r)` for the nu formulation.
    fn rho_nu(&self) -> (f64, f64) {
        let mut side = [(f64::INFINITY, f64::NEG_INFINITY, 0usize, 0.0f64); 2];
        for t in 0..self.alpha.len() {
            let s = &mut side[usize::from(self.y[t] < 0.0)];
            let g = self.grad[t];
            if self.is_upper(t) {
                s.1 = s.1.max(g);
            } else if self.is_lower(t) {
                s.0 = s.0.min(g);
            } else {
                s.2 += 1;
                s.3 += g;
            }
        }
        let r_of = |(ub, lb, nr, sum): (f64, f64, usize, f64)| {
            if nr > 0 {
                sum / nr as f64
            } else {
                (ub + lb) / 2.0
            }
        };
        let (r1, r2) = (r_of(side[0]), r_of(side[1]));
        ((r1 - r2) / 2.0, (r1 + r2) / 2.0)
    }
}

/// Runs the solver to the requested KKT tolerance.
pub fn solve<Q: QMatrix>(q: &mut Q, problem: &QpProblem, params: SolverParams) -> QpSolution {
    let n = q.len();
    assert_eq!(problem.p.len(), n);
    assert_eq!(problem.y.len(), n);
    assert_eq!(problem.upper.len(), n);
    assert_eq!(problem.alpha0.len(), n);

    let qd: Vec<f64> = (0..n).map(|i| q.diag(i)).collect();
    let mut grad = problem.p.clone();
    let mut row = vec![0.0; n];
    for i in 0..n {
        let a = problem.alpha0[i];
        if a != 0.0 {
            q.row_into(i, &mut row);
            for (g, qij) in grad.iter_mut().zip(&row) {
                *g += a * qij;
            }
        }
    }

    let mut st = State {
        q,
        y: &problem.y,
        upper: &problem.upper,
        alpha: problem.alpha0.clone(),
        grad,
        qd,
        row_a: vec![0.0; n],
        row_b: vec![0.0; n],
    };

    let max_iter = params.max_iter_per_var.saturating_mul(n.max(1));
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let pair = if problem.nu {
            st.select_nu(params.eps)
        } else {
            st.select_standard(params.eps)
        };
        let Some((i, j)) = pair else {
            converged = true;
            break;
        };
        st.update(i, j);
        iterations += 1;
    }
    if !converged {
        warn!("dual solver hit the iteration cap ({max_iter}) before reaching eps={}", params.eps);
    }

    let (rho, r) = if problem.nu {
        st.rho_nu()
    } else {
        (st.rho_standard(), 0.0)
    };
    let objective = 0.5
        * st.alpha
            .iter()
            .zip(&st.grad)
            .zip(&problem.p)
            .map(|((a, g), p)| a * (g + p))
            .sum::<f64>();
    QpSolution {
        alpha: st.alpha,
        objective,
        rho,
        r,
        iterations,
        converged,
    }
}

/// Objective `1/2 a'Qa + p'a` evaluated directly.
pub fn objective<Q: QMatrix>(q: &mut Q, p: &[f64], alpha: &[f64]) -> f64 {
    let n = alpha.len();
    let mut row = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        q.row_into(i, &mut row);
        let qa: f64 = row.iter().zip(alpha).map(|(a, b)| a * b).sum();
        total += alpha[i] * (0.5 * qa + p[i]);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_closed_form() {
        // x = +1 (y=+1) and x = -1 (y=-1), linear kernel: K = [[1,-1],[-1,1]].
        // Dual optimum of the C problem (C large) is a = 0.5 for both.
        let kernel = vec![1.0, -1.0, -1.0, 1.0];
        let y = vec![1.0, -1.0];
        let mut q = DenseQ::from_kernel(&kernel, &y);
        let problem = QpProblem {
            p: vec![-1.0; 2],
            y,
            upper: vec![10.0; 2],
            alpha0: vec![0.0; 2],
            nu: false,
        };
        let sol = solve(&mut q, &problem, SolverParams { eps: 1e-12, ..SolverParams::default() });
        assert!(sol.converged);
        assert!((sol.alpha[0] - 0.5).abs() < 1e-9);
        assert!((sol.alpha[1] - 0.5).abs() < 1e-9);
        assert!((sol.objective + 0.5).abs() < 1e-9);
        assert!(sol.rho.abs() < 1e-9);
        let direct = objective(&mut q, &problem.p, &sol.alpha);
        assert!((direct - sol.objective).abs() < 1e-12);
    }

    #[test]
    fn indefinite_kernel_terminates() {
        // Negative diagonal: the solver must still make progress and stop.
        let kernel = vec![-1.0, 0.5, 0.2, 0.5, -0.5, 0.1, 0.2, 0.1, -2.0];
        let y = vec![1.0, -1.0, 1.0];
        let mut q = DenseQ::from_kernel(&kernel, &y);
        let problem = QpProblem {
            p: vec![-1.0; 3],
            y,
            upper: vec![1.0; 3],
            alpha0: vec![0.0; 3],
            nu: false,
        };
        let sol = solve(&mut q, &problem, SolverParams::default());
        assert!(sol.converged);
        let eq: f64 = sol.alpha.iter().zip(&problem.y).map(|(a, y)| a * y).sum();
        assert!(eq.abs() < 1e-12);
        assert!(sol.alpha.iter().all(|&a| (0.0..=1.0).contains(&a)));
    }
}
