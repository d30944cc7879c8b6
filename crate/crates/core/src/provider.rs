//! The brace-force provider interface shared by materials, trained models
//! and the remote coupling client.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("protocol misuse: {0}")]
    ProtocolMisuse(&'static str),
    #[error("provider fault: {0}")]
    Fault(String),
}

/// Stateful displacement→force element.
///
/// `snapshot` stores the current state in a single slot; `restore` returns
/// to it. Integrators use the pair to evaluate trial displacements without
/// committing them.
pub trait BraceProvider {
    /// Resets the element at deformation `x0` and returns the force there.
    fn init(&mut self, x0: f64) -> Result<f64, ProviderError>;
    /// Moves the element to deformation `x` and returns the force.
    fn step(&mut self, x: f64) -> Result<f64, ProviderError>;
    fn snapshot(&mut self) -> Result<(), ProviderError>;
    fn restore(&mut self) -> Result<(), ProviderError>;
}

impl<P: BraceProvider + ?Sized> BraceProvider for Box<P> {
    fn init(&mut self, x0: f64) -> Result<f64, ProviderError> {
        (**self).init(x0)
    }
    fn step(&mut self, x: f64) -> Result<f64, ProviderError> {
        (**self).step(x)
    }
    fn snapshot(&mut self) -> Result<(), ProviderError> {
        (**self).snapshot()
    }
    fn restore(&mut self) -> Result<(), ProviderError> {
        (**self).restore()
    }
}

/// Wraps a provider and records every force it returns from `step`.
pub struct Recording<P> {
    inner: P,
    pub forces: Vec<f64>,
}

impl<P> Recording<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            forces: Vec::new(),
        }
    }

    pub fn into_inner(self) -> P {
        self.inner
    }
}

impl<P: BraceProvider> BraceProvider for Recording<P> {
    fn init(&mut self, x0: f64) -> Result<f64, ProviderError> {
        let f = self.inner.init(x0)?;
        self.forces.push(f);
        Ok(f)
    }
    fn step(&mut self, x: f64) -> Result<f64, ProviderError> {
        let f = self.inner.step(x)?;
        self.forces.push(f);
        Ok(f)
    }
    fn snapshot(&mut self) -> Result<(), ProviderError> {
        self.inner.snapshot()
    }
    fn restore(&mut self) -> Result<(), ProviderError> {
        self.inner.restore()
    }
}
