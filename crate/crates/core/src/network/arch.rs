//! Architecture strings such as
//! `conv:32@3x3,maxpool:2x2,flatten,dense:128:relu,dense:10:identity`.
//!
//! ```text
//! arch  := layer ("," layer)*
//! layer := "conv:" INT "@" INT "x" INT | "maxpool:" INT "x" INT | "flatten"
//!        | "dense:" INT [":relu" | ":tanh" | ":identity"]
//! ```

use std::fmt;
use std::str::FromStr;

use super::Activation;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerDesc {
    Conv { filters: usize, kernel: (usize, usize) },
    MaxPool { window: (usize, usize) },
    Flatten,
    Dense { units: usize, activation: Option<Activation> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Arch(Vec<LayerDesc>);

impl Arch {
    pub fn new(layers: Vec<LayerDesc>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Validation("empty architecture".into()));
        }
        Ok(Arch(layers))
    }

    pub fn layers(&self) -> &[LayerDesc] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn positive(s: &str, what: &str) -> Result<usize> {
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(Error::Validation(format!("{what}: expected a positive integer, got `{s}`"))),
    }
}

fn extents(s: &str, what: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once('x')
        .ok_or_else(|| Error::Validation(format!("{what}: expected HxW, got `{s}`")))?;
    Ok((positive(a, what)?, positive(b, what)?))
}

impl FromStr for LayerDesc {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or_default();
        let rest: Vec<&str> = parts.collect();
        match (kind, rest.as_slice()) {
            ("flatten", []) => Ok(LayerDesc::Flatten),
            ("maxpool", [w]) => Ok(LayerDesc::MaxPool {
                window: extents(w, "maxpool window")?,
            }),
            ("conv", [spec]) => {
                let (filters, kernel) = spec
                    .split_once('@')
                    .ok_or_else(|| Error::Validation(format!("conv: expected N@KxE, got `{spec}`")))?;
                Ok(LayerDesc::Conv {
                    filters: positive(filters, "conv filters")?,
                    kernel: extents(kernel, "conv kernel")?,
                })
            }
            ("dense", [units]) => Ok(LayerDesc::Dense {
                units: positive(units, "dense units")?,
                activation: None,
            }),
            ("dense", [units, act]) => Ok(LayerDesc::Dense {
                units: positive(units, "dense units")?,
                activation: Some(act.parse()?),
            }),
            _ => Err(Error::Validation(format!("cannot parse layer `{s}`"))),
        }
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::new(s.split(',').map(str::parse).collect::<Result<_>>()?)
    }
}

impl fmt::Display for LayerDesc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerDesc::Conv { filters, kernel } => write!(f, "conv:{filters}@{}x{}", kernel.0, kernel.1),
            LayerDesc::MaxPool { window } => write!(f, "maxpool:{}x{}", window.0, window.1),
            LayerDesc::Flatten => f.write_str("flatten"),
            LayerDesc::Dense { units, activation: None } => write!(f, "dense:{units}"),
            LayerDesc::Dense {
                units,
                activation: Some(a),
            } => write!(f, "dense:{units}:{a}"),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}
