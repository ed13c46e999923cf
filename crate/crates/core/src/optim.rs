//! RMSprop over a [`Parameters`] tree.

use alloc::string::String;
use alloc::vec::Vec;

use crate::math;
use crate::nn::{Param, Parameters};

#[derive(Debug, Clone)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    square_avg: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(lr: f64, decay: f64, eps: f64) -> Self {
        RmsProp { lr, decay, eps, square_avg: Vec::new() }
    }

    /// `s <- decay s + (1 - decay) g^2`, `theta <- theta - lr g / (sqrt(s) + eps)`.
    pub fn step<P: Parameters + ?Sized>(&mut self, model: &mut P) {
        let (lr, decay, eps) = (self.lr, self.decay, self.eps);
        let state = &mut self.square_avg;
        let mut idx = 0;
        model.visit_mut("", &mut |_: &str, p: &mut Param| {
            if state.len() <= idx {
                state.push(alloc::vec![0.0; p.value.len()]);
            }
            let s = &mut state[idx];
            for ((w, &g), sq) in p.value.iter_mut().zip(&p.grad).zip(s.iter_mut()) {
                *sq = decay * *sq + (1.0 - decay) * g * g;
                *w -= lr * g / (math::sqrt(*sq) + eps);
            }
            idx += 1;
        });
    }
}

/// Flattened copy of every parameter value, in traversal order.
pub fn snapshot<P: Parameters + ?Sized>(model: &P) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    model.visit("", &mut |name, p| out.push((String::from(name), p.value.clone())));
    out
}

pub fn restore<P: Parameters + ?Sized>(model: &mut P, snap: &[(String, Vec<f64>)]) {
    let mut it = snap.iter();
    model.visit_mut("", &mut |_, p| {
        let (_, v) = it.next().expect("snapshot matches model");
        p.value.copy_from_slice(v);
    });
}
