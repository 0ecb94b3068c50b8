use serde::{Deserialize, Serialize};

/// Pointwise nonlinearity of the random-feature layer.
///
/// Every activation declares whether it is odd. The Gaussian-equivalent
/// coefficients assume an odd activation and reject the others.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    /// Linear features; used to check closed forms.
    Identity,
    Relu,
}

impl Activation {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
        }
    }

    pub fn is_odd(self) -> bool {
        matches!(self, Activation::Tanh | Activation::Identity)
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
            Activation::Relu => "relu",
        }
    }
}
