//! Adam with bias correction, the sole supported optimizer.
//!
//! Moment buffers are allocated on the first step and keyed by parameter
//! position, so callers must present parameters in a stable order (the
//! model's `named_parameters` order). State can be saved to disk and
//! restored bit-exactly; values are widened to f64 on disk, which is
//! lossless for both element types.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const STATE_MAGIC: &[u8; 10] = b"RCNF-ADAM\n";
const STATE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments<F: Scalar> {
    m: Tensor<F>,
    u: Tensor<F>,
}

#[derive(Debug, Clone)]
pub struct Adam<F: Scalar> {
    config: AdamConfig,
    step: u64,
    moments: Vec<Moments<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Completed update count.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all parameters:
    /// m ← β₁m + (1−β₁)g, u ← β₂u + (1−β₂)g², p ← p − α·m̂/(√û + ε)
    /// with m̂, û the bias-corrected moments.
    ///
    /// `grads` aligns with `params`; a `None` gradient is an error naming
    /// the parameter.
    pub fn step(
        &mut self,
        params: &mut [(String, &mut Tensor<F>)],
        grads: &[Option<&Tensor<F>>],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape {
                op: "adam_step",
                detail: format!("{} parameters but {} gradients", params.len(), grads.len()),
            });
        }
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|(_, p)| Moments {
                    m: Tensor::zeros(p.shape().to_vec()),
                    u: Tensor::zeros(p.shape().to_vec()),
                })
                .collect();
        } else if self.moments.len() != params.len() {
            return Err(Error::Shape {
                op: "adam_step",
                detail: format!(
                    "state tracks {} parameters, got {}",
                    self.moments.len(),
                    params.len()
                ),
            });
        }

        self.step += 1;
        let t = self.step as i32;
        let alpha = F::from_f64(self.config.learning_rate);
        let beta1 = F::from_f64(self.config.beta1);
        let beta2 = F::from_f64(self.config.beta2);
        let eps = F::from_f64(self.config.epsilon);
        let one = F::one();
        let m_corr = one - beta1.powi(t);
        let u_corr = one - beta2.powi(t);

        for (((name, param), grad), state) in
            params.iter_mut().zip(grads).zip(self.moments.iter_mut())
        {
            let grad = grad.ok_or_else(|| Error::MissingGradient { name: name.clone() })?;
            if grad.shape() != param.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    detail: format!(
                        "parameter '{name}' is {:?} but gradient is {:?}",
                        param.shape(),
                        grad.shape()
                    ),
                });
            }
            if state.m.shape() != param.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    detail: format!(
                        "parameter '{name}' is {:?} but optimizer state is {:?}",
                        param.shape(),
                        state.m.shape()
                    ),
                });
            }
            let p = param.data_mut();
            let g = grad.data();
            let m = state.m.data_mut();
            let u = state.u.data_mut();
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (one - beta1) * g[i];
                u[i] = beta2 * u[i] + (one - beta2) * g[i] * g[i];
                let m_hat = m[i] / m_corr;
                let u_hat = u[i] / u_corr;
                p[i] -= alpha * m_hat / (u_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Write the full state (step count, hyperparameters, moments).
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(STATE_MAGIC).map_err(io)?;
        w.write_all(&STATE_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&self.step.to_le_bytes()).map_err(io)?;
        for v in [
            self.config.learning_rate,
            self.config.beta1,
            self.config.beta2,
            self.config.epsilon,
        ] {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.write_all(&(self.moments.len() as u64).to_le_bytes()).map_err(io)?;
        for s in &self.moments {
            w.write_all(&(s.m.rank() as u32).to_le_bytes()).map_err(io)?;
            for &d in s.m.shape() {
                w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
            }
            for t in [&s.m, &s.u] {
                for &v in t.data() {
                    w.write_all(&v.as_f64().to_le_bytes()).map_err(io)?;
                }
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io = |e| Error::io(path, e);

        let mut magic = [0u8; 10];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != STATE_MAGIC {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                detail: "not an optimizer state file".into(),
            });
        }
        let version = read_u32(&mut r, path)?;
        if version != STATE_VERSION {
            return Err(Error::UnknownFormatVersion {
                found: version.to_string(),
                supported: STATE_VERSION,
            });
        }
        let step = read_u64(&mut r, path)?;
        let learning_rate = read_f64(&mut r, path)?;
        let beta1 = read_f64(&mut r, path)?;
        let beta2 = read_f64(&mut r, path)?;
        let epsilon = read_f64(&mut r, path)?;
        let n = read_u64(&mut r, path)? as usize;
        let mut moments = Vec::with_capacity(n);
        for _ in 0..n {
            let rank = read_u32(&mut r, path)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut r, path)? as usize);
            }
            let numel: usize = shape.iter().product();
            let read_tensor = |r: &mut BufReader<File>| -> Result<Tensor<F>> {
                let mut data = Vec::with_capacity(numel);
                for _ in 0..numel {
                    data.push(F::from_f64(read_f64(r, path)?));
                }
                Tensor::new(shape.clone(), data)
            };
            let m = read_tensor(&mut r)?;
            let u = read_tensor(&mut r)?;
            moments.push(Moments { m, u });
        }
        Ok(Adam {
            config: AdamConfig {
                learning_rate,
                beta1,
                beta2,
                epsilon,
            },
            step,
            moments,
        })
    }
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read, path: &Path) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(f64::from_le_bytes(b))
}
