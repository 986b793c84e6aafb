//! Named persistent parameters with gradient buffers.

use rand::Rng;

use crate::scalar::{lit, Scalar};
use crate::{NnError, Result};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param<S> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<S>,
    pub grad: Vec<S>,
}

/// Ordered collection of named parameters. Order is registration order
/// and is part of the persistence contract.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, values: Vec<S>) -> Result<ParamId> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(NnError::BadParam(format!("duplicate parameter {name}")));
        }
        if values.len() != rows * cols {
            return Err(NnError::BadParam(format!(
                "{name}: {} values for {rows}x{cols}",
                values.len()
            )));
        }
        let grad = vec![S::zero(); values.len()];
        self.params.push(Param {
            name: name.to_string(),
            rows,
            cols,
            values,
            grad,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Registers a matrix initialized uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn add_uniform_fan_in(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let values: Vec<S> = (0..rows * cols)
            .map(|_| lit::<S>(rng.gen_range(-bound..bound)))
            .collect();
        self.add(name, rows, cols, values)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.add(name, rows, cols, vec![S::zero(); rows * cols])
    }

    pub fn add_ones(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.add(name, rows, cols, vec![S::one(); rows * cols])
    }

    pub fn get(&self, id: ParamId) -> &Param<S> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<S> {
        &mut self.params[id.0]
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<S>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total scalar count across all parameters.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            for g in &mut p.grad {
                *g = S::zero();
            }
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, grad: &[S]) {
        let p = &mut self.params[id.0];
        debug_assert_eq!(p.grad.len(), grad.len());
        for (g, &d) in p.grad.iter_mut().zip(grad) {
            *g += d;
        }
    }

    /// Copies every value from `src`; shapes and names must match exactly.
    /// This is the hard target-sync primitive.
    pub fn copy_values_from(&mut self, src: &ParamStore<S>) -> Result<()> {
        if self.params.len() != src.params.len() {
            return Err(NnError::BadParam(format!(
                "store size mismatch: {} vs {}",
                self.params.len(),
                src.params.len()
            )));
        }
        for (dst, s) in self.params.iter_mut().zip(&src.params) {
            if dst.name != s.name || dst.rows != s.rows || dst.cols != s.cols {
                return Err(NnError::BadParam(format!(
                    "parameter layout mismatch at {}",
                    dst.name
                )));
            }
            dst.values.copy_from_slice(&s.values);
        }
        Ok(())
    }
}
