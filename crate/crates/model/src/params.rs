use ndarray::Array2;
use nomen_core::rng::XorShiftRng;

use crate::ModelError;

/// Named parameter tensors in registration order. Vectors are stored as
/// single-row matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub names: Vec<String>,
    pub values: Vec<Array2<f64>>,
}

impl Params {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Rounds every value to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            v.mapv_inplace(|x| x as f32 as f64);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    Zeros,
    Ones,
    /// Uniform on ±sqrt(6 / (fan_in + fan_out)).
    Xavier,
    Normal(f64),
    /// LSTM gate bias: zeros with the forget block (second quarter) at one.
    ForgetBias,
}

/// Collects parameter declarations; indices are stable for a given config.
#[derive(Default)]
pub(crate) struct ParamBuilder {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    inits: Vec<Init>,
}

impl ParamBuilder {
    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Init) -> usize {
        self.names.push(name.into());
        self.shapes.push((rows, cols));
        self.inits.push(init);
        self.names.len() - 1
    }

    pub fn initialize(&self, rng: &mut XorShiftRng) -> Params {
        let values = self
            .shapes
            .iter()
            .zip(&self.inits)
            .map(|(&(r, c), init)| match *init {
                Init::Zeros => Array2::zeros((r, c)),
                Init::Ones => Array2::ones((r, c)),
                Init::Xavier => {
                    let a = (6.0 / (r + c) as f64).sqrt();
                    Array2::from_shape_simple_fn((r, c), || (2.0 * rng.next_f64() - 1.0) * a)
                }
                Init::Normal(std) => Array2::from_shape_simple_fn((r, c), || rng.normal() * std),
                Init::ForgetBias => Array2::from_shape_fn((r, c), |(_, j)| if (c / 4..c / 2).contains(&j) { 1.0 } else { 0.0 }),
            })
            .collect();
        Params { names: self.names.clone(), values }
    }

    /// Checks that `params` has exactly the declared names and shapes.
    pub fn check(&self, params: &Params) -> Result<(), ModelError> {
        if params.names != self.names {
            return Err(ModelError::Shape(format!(
                "expected {} tensors named per config, found {}",
                self.names.len(),
                params.names.len()
            )));
        }
        for ((name, &(r, c)), v) in self.names.iter().zip(&self.shapes).zip(&params.values) {
            if v.dim() != (r, c) {
                return Err(ModelError::Shape(format!("{name}: expected {r}x{c}, found {:?}", v.dim())));
            }
        }
        Ok(())
    }
}
