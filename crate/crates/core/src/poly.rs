//! Multivariate polynomials given as coefficient/exponent term lists.
//!
//! Used for user-specified blocks of an interconnection without an
//! expression parser.

use alloc::sync::Arc;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent float methods exist when std is in the graph
use num_traits::Float;

use crate::dynsys::{CouplingMap, TimeVaryingField};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coef: f64,
    pub exponents: Vec<u32>,
}

/// `Σ coef · Π x_k^{e_k}` in a fixed number of variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    vars: usize,
    terms: Vec<Term>,
}

impl Polynomial {
    pub fn new(vars: usize, terms: Vec<Term>) -> Result<Self> {
        for t in &terms {
            if t.exponents.len() != vars {
                return Err(invalid(
                    "polynomial",
                    alloc::format!(
                        "term has {} exponents, expected {vars}",
                        t.exponents.len()
                    ),
                ));
            }
            if !t.coef.is_finite() {
                return Err(invalid("polynomial", "non-finite coefficient"));
            }
        }
        Ok(Self { vars, terms })
    }

    pub fn zero(vars: usize) -> Self {
        Self {
            vars,
            terms: Vec::new(),
        }
    }

    pub fn vars(&self) -> usize {
        self.vars
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.coef
                    * t.exponents
                        .iter()
                        .zip(x)
                        .map(|(&e, &xi)| xi.powi(e as i32))
                        .product::<f64>()
            })
            .sum()
    }

    /// Writes `∂p/∂x_k` into `out`.
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for t in &self.terms {
            for k in 0..self.vars {
                let ek = t.exponents[k];
                if ek == 0 {
                    continue;
                }
                let mut p = t.coef * ek as f64;
                for (j, (&e, &xj)) in t.exponents.iter().zip(x).enumerate() {
                    let pow = if j == k { e - 1 } else { e };
                    p *= xj.powi(pow as i32);
                }
                out[k] += p;
            }
        }
    }
}

/// Vector of polynomials `R^vars → R^len`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMap {
    vars: usize,
    components: Vec<Polynomial>,
}

impl PolyMap {
    pub fn new(vars: usize, components: Vec<Polynomial>) -> Result<Self> {
        if components.iter().any(|p| p.vars() != vars) {
            return Err(invalid("polynomial", "component variable count differs"));
        }
        Ok(Self { vars, components })
    }

    pub fn vars(&self) -> usize {
        self.vars
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.components) {
            *o = p.eval(x);
        }
    }

    /// Row-major `len × vars` Jacobian.
    pub fn jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, p) in self.components.iter().enumerate() {
            p.gradient_into(x, &mut out[i * self.vars..(i + 1) * self.vars]);
        }
    }

    /// Autonomous square field; requires `len == vars`.
    pub fn into_field(self) -> Result<TimeVaryingField> {
        if self.len() != self.vars {
            return Err(crate::Error::DimensionMismatch {
                block: "polynomial field".into(),
                expected: self.vars,
                got: self.len(),
            });
        }
        let dim = self.vars;
        let me = Arc::new(self);
        let e = me.clone();
        Ok(TimeVaryingField::new(
            dim,
            move |_t, z, out| e.eval_into(z, out),
            move |_t, z, out| me.jacobian_into(z, out),
        ))
    }

    pub fn into_coupling(self) -> CouplingMap {
        let (vars, len) = (self.vars, self.len());
        let me = Arc::new(self);
        let e = me.clone();
        CouplingMap::new(
            vars,
            len,
            move |x, out| e.eval_into(x, out),
            move |x, out| me.jacobian_into(x, out),
        )
    }
}
