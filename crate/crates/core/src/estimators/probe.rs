//! Access instrumentation for the stencil-index contract tests.

use std::cell::RefCell;

use super::{ObservationAccess, Observed};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Role {
    Gain,
    Drift,
    Increment,
}

pub struct Instrumented<'a> {
    inner: Observed<'a>,
    log: RefCell<Vec<(Role, usize)>>,
}

impl<'a> Instrumented<'a> {
    pub fn new(inner: Observed<'a>) -> Self {
        Self {
            inner,
            log: RefCell::new(Vec::new()),
        }
    }

    /// Splits the access log into per-step groups, each opened by a gain
    /// read, as `(n, gain position indices, increment position indices)`.
    pub fn stencil_groups(&self) -> Vec<(usize, Vec<usize>, Vec<usize>)> {
        let mut out: Vec<(usize, Vec<usize>, Vec<usize>)> = Vec::new();
        for &(role, n) in self.log.borrow().iter() {
            let stencil = vec![n - 1, n, n + 1];
            match role {
                Role::Gain => out.push((n, stencil, Vec::new())),
                Role::Increment => out.last_mut().expect("gain read first").2.extend(stencil),
                Role::Drift => {}
            }
        }
        out
    }
}

impl ObservationAccess for Instrumented<'_> {
    fn tau(&self) -> f64 {
        self.inner.tau()
    }
    fn n_obs(&self) -> usize {
        self.inner.n_obs()
    }
    fn d(&self) -> usize {
        self.inner.d()
    }
    fn gain_point(&self, n: usize) -> (&[f64], &[f64]) {
        self.log.borrow_mut().push((Role::Gain, n));
        self.inner.gain_point(n)
    }
    fn drift_point(&self, n: usize) -> (&[f64], &[f64]) {
        self.log.borrow_mut().push((Role::Drift, n));
        self.inner.drift_point(n)
    }
    fn increment_into(&self, n: usize, out: &mut [f64]) {
        self.log.borrow_mut().push((Role::Increment, n));
        self.inner.increment_into(n, out)
    }
}
