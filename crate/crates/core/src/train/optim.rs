//! SGD with momentum and weight decay, and Adam.

use crate::error::{Error, Result};
use crate::nn::checkpoint::{restore, Checkpoint};
use crate::nn::Param;
use crate::scalar::Scalar;
use crate::tensor::io::TypedAny;
use crate::tensor::Tensor;

pub const ADAM_EPS: f64 = 1e-8;

/// Reject the step if any gradient is non-finite, naming the parameter.
fn check_finite<T: Scalar>(owner: &str, params: &[Param<T>]) -> Result<()> {
    for p in params {
        if !p.grad.all_finite() {
            return Err(Error::NonFinite(format!("gradient for {owner}/{}", p.name)));
        }
    }
    Ok(())
}

fn check_len(owner: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::InvalidArgument(format!(
            "{owner}: optimizer holds {expected} buffers, got {got} parameters"
        )));
    }
    Ok(())
}

/// `v ← μv + (g + λθ)`, `θ ← θ − η·v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(params: &[Param<T>], lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Sgd { lr, momentum, weight_decay, velocity: params.iter().map(|p| Tensor::zeros(p.value.dims())).collect() }
    }

    pub fn step(&mut self, owner: &str, params: &mut [Param<T>]) -> Result<()> {
        check_len(owner, self.velocity.len(), params.len())?;
        check_finite(owner, params)?;
        let (lr, mu, wd) = (T::of(self.lr), T::of(self.momentum), T::of(self.weight_decay));
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            for ((theta, g), vel) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(v.data_mut()) {
                *vel = mu * *vel + (*g + wd * *theta);
                *theta -= lr * *vel;
            }
        }
        Ok(())
    }

    pub fn save(&self, ckpt: &mut Checkpoint, prefix: &str, params: &[Param<T>])
    where
        T: TypedAny,
    {
        for (p, v) in params.iter().zip(&self.velocity) {
            ckpt.push(format!("{prefix}/{}.velocity", p.name), v.clone());
        }
    }

    pub fn load(&mut self, ckpt: &Checkpoint, prefix: &str, params: &[Param<T>]) -> Result<()>
    where
        T: TypedAny,
    {
        for (p, v) in params.iter().zip(&mut self.velocity) {
            restore(ckpt, &format!("{prefix}/{}.velocity", p.name), v)?;
        }
        Ok(())
    }
}

/// Adam with bias correction: `θ ← θ − η·m̂/(√v̂ + 1e-8)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &[Param<T>], lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.dims())).collect();
        Adam { lr, beta1, beta2, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, owner: &str, params: &mut [Param<T>]) -> Result<()> {
        check_len(owner, self.m.len(), params.len())?;
        check_finite(owner, params)?;
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let (lr, eps) = (T::of(self.lr), T::of(ADAM_EPS));
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let it = p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((theta, g), (mi, vi)) in it {
                *mi = b1 * *mi + (T::one() - b1) * *g;
                *vi = b2 * *vi + (T::one() - b2) * *g * *g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn save(&self, ckpt: &mut Checkpoint, prefix: &str, params: &[Param<T>])
    where
        T: TypedAny,
    {
        ckpt.put_u64(format!("{prefix}/step"), self.step);
        for ((p, m), v) in params.iter().zip(&self.m).zip(&self.v) {
            ckpt.push(format!("{prefix}/{}.m", p.name), m.clone());
            ckpt.push(format!("{prefix}/{}.v", p.name), v.clone());
        }
    }

    pub fn load(&mut self, ckpt: &Checkpoint, prefix: &str, params: &[Param<T>]) -> Result<()>
    where
        T: TypedAny,
    {
        self.step = ckpt.get_u64(&format!("{prefix}/step"))?;
        for ((p, m), v) in params.iter().zip(&mut self.m).zip(&mut self.v) {
            restore(ckpt, &format!("{prefix}/{}.m", p.name), m)?;
            restore(ckpt, &format!("{prefix}/{}.v", p.name), v)?;
        }
        Ok(())
    }
}
