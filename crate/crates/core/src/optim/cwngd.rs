use super::{apply_all, per_sample_gradients, StepStats};
use crate::error::{Error, Result};
use crate::fim::{component_fim_with, damped_solve_with, kernel_damped_solve, make_groups, Executor};
use crate::network::{LayerParams, Network, PerSampleGrads};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CwNgdConfig {
    pub learning_rate: f64,
    pub damping: f64,
}

impl Default for CwNgdConfig {
    fn default() -> Self {
        CwNgdConfig {
            learning_rate: 1.0,
            damping: 1e-4,
        }
    }
}

impl CwNgdConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("learning rate", self.learning_rate), ("damping", self.damping)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Which formulation solves each component block.
///
/// `Primal` factors the `N x N` block directly. `Kernel` works in the
/// `P x P` sample space and gives the same update. `Auto` takes whichever
/// matrix is smaller.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SolveRoute {
    #[default]
    Auto,
    Primal,
    Kernel,
}

/// A configured CW-NGD optimizer.
#[derive(Clone, Debug, Default)]
pub struct CwNgd {
    pub config: CwNgdConfig,
    pub route: SolveRoute,
    executor: Executor,
}

impl CwNgd {
    pub fn new(config: CwNgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(CwNgd {
            config,
            route: SolveRoute::Auto,
            executor: Executor::Serial,
        })
    }

    pub fn with_executor(mut self, executor: Executor) -> Self {
        self.executor = executor;
        self
    }

    pub fn with_route(mut self, route: SolveRoute) -> Self {
        self.route = route;
        self
    }

    pub fn executor(&self) -> &Executor {
        &self.executor
    }

    fn layer_update(&self, layer: usize, net: &Network, grads: &PerSampleGrads) -> Result<LayerParams> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("per-sample gradient"));
        }
        let map = make_groups(net.layer(layer), layer)?;
        let kernel = match self.route {
            SolveRoute::Auto => map.group_size() > grads.batch(),
            SolveRoute::Primal => false,
            SolveRoute::Kernel => true,
        };
        let gamma = self.config.damping;
        if kernel {
            kernel_damped_solve(grads, &map, gamma, &self.executor)
        } else {
            let blocks = component_fim_with(grads, &map, &self.executor)?;
            damped_solve_with(&blocks, &map, &grads.mean(), gamma, &self.executor)
        }
    }

    /// One cross-entropy step on the batch. On error the network is left
    /// untouched.
    pub fn step(&self, net: &mut Network, x: &Tensor, y: &Tensor) -> Result<StepStats> {
        let (stats, grads) = per_sample_gradients(net, x, y)?;
        let updates = grads
            .iter()
            .map(|(l, g)| Ok((*l, self.layer_update(*l, net, g)?)))
            .collect::<Result<Vec<_>>>()?;
        apply_all(net, &updates, -self.config.learning_rate)?;
        Ok(stats)
    }
}

/// Preconditioned updates `U` for every trainable layer, given the
/// per-sample derivative of any loss with respect to the network output.
///
/// The caller applies `W -= alpha * U`. `d_out` holds each sample's own
/// derivative, not divided by the batch size.
pub fn cwngd_updates(net: &Network, x: &Tensor, d_out: Tensor, opt: &CwNgd) -> Result<Vec<(usize, LayerParams)>> {
    if !d_out.is_finite() {
        return Err(Error::NonFinite("output gradient"));
    }
    let cache = net.forward_prop(x)?;
    let mut updates = Vec::new();
    for item in crate::network::backprop_per_sample(net, cache, d_out)? {
        let (l, g) = item?;
        updates.push((l, opt.layer_update(l, net, &g)?));
    }
    Ok(updates)
}

/// One CW-NGD step with a serial executor and automatic solve route.
pub fn cwngd_step(net: &mut Network, x: &Tensor, y: &Tensor, cfg: &CwNgdConfig) -> Result<StepStats> {
    CwNgd::new(*cfg)?.step(net, x, y)
}
