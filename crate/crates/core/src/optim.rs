//! Optimizer pieces shared by the alignment and reconstruction loops.

use std::collections::VecDeque;

/// Adam with bias correction. The learning rate is supplied per step and per
/// parameter so callers can group parameters and schedule rates.
#[derive(Clone, Debug)]
pub(crate) struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n: usize, eps: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps,
        }
    }

    /// Applies one update in place. `lr(i)` is the rate of parameter `i`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: impl Fn(usize) -> f64) {
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, ((p, g), (m, v))) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .enumerate()
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr(i) * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Log-linear interpolation from `start` to `end` over `total` iterations.
pub(crate) fn exp_lr(start: f64, end: f64, iteration: usize, total: usize) -> f64 {
    let t = (iteration as f64 / total.max(1) as f64).clamp(0.0, 1.0);
    (start.ln() * (1.0 - t) + end.ln() * t).exp()
}

/// Step-size multiplier of the accept/reject policy: a rejected step halves
/// it, an accepted one grows it back toward 1.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Damping(f64);

impl Damping {
    pub fn new() -> Self {
        Damping(1.0)
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn accept(&mut self) {
        self.0 = (self.0 * 1.25).min(1.0);
    }

    pub fn reject(&mut self) {
        self.0 *= 0.5;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS inverse-Hessian approximation.
#[derive(Clone, Debug)]
pub(crate) struct Lbfgs {
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

impl Lbfgs {
    pub fn new(memory: usize) -> Self {
        Lbfgs {
            memory,
            pairs: VecDeque::with_capacity(memory),
        }
    }

    /// `H·g` by the two-loop recursion. Without curvature pairs `H` is the
    /// identity scaled so the step has length `initial_step`.
    pub fn direction(&self, g: &[f64], initial_step: f64) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(q, y)| *q -= a * y);
            alphas.push(a);
        }
        let gamma = match self.pairs.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => initial_step / dot(g, g).sqrt().max(f64::MIN_POSITIVE),
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(q, s)| *q += (a - b) * s);
        }
        q
    }

    /// Records a step `s` and gradient change `y`; pairs without positive
    /// curvature are dropped.
    pub fn update(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if !(sy > 1e-300) {
            return;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    pub fn reset(&mut self) {
        self.pairs.clear();
    }
}
