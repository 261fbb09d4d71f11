use crate::error::{Error, Result};

/// Architecture hyperparameters of the score network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Number of stacked EDP-GNN layers.
    pub layers: usize,
    /// Message-passing steps per multi-channel GNN.
    pub mp_steps: usize,
    /// Channels emitted by every learned adjacency.
    pub channels: usize,
    /// Node feature width of each message-passing step, also the MLP hidden width.
    pub hidden: usize,
    /// Width of optional input node features.
    pub node_features: usize,
    /// Number of noise levels the network is conditioned on.
    pub levels: usize,
    /// Intermediate adjacencies are produced by edge MLPs (otherwise fixed to the input).
    pub learnable_adj: bool,
    /// Adjacencies carry several channels (otherwise one).
    pub multi_channel: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 5,
            mp_steps: 4,
            channels: 4,
            hidden: 16,
            node_features: 0,
            levels: 6,
            learnable_adj: true,
            multi_channel: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("mp_steps", self.mp_steps),
            ("channels", self.channels),
            ("hidden", self.hidden),
            ("levels", self.levels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("model.{name} must be positive")));
            }
        }
        if self.multi_channel && self.channels < 2 {
            return Err(Error::invalid("multi-channel model needs channels >= 2"));
        }
        Ok(())
    }

    /// Channels of the preprocessed input adjacency.
    pub fn input_channels(&self) -> usize {
        if self.multi_channel {
            2
        } else {
            1
        }
    }

    /// Channels emitted by a learned adjacency.
    pub fn learned_channels(&self) -> usize {
        if self.multi_channel {
            self.channels
        } else {
            1
        }
    }

    /// Node features entering the first layer: input features plus weighted degree.
    pub fn input_features(&self) -> usize {
        self.node_features + 1
    }

    /// Node features produced by one multi-channel GNN.
    pub fn output_features(&self) -> usize {
        self.mp_steps * self.hidden
    }

    /// Short label of the ablation cell, e.g. `A=Y C=N`.
    pub fn variant_label(&self) -> String {
        let yn = |b: bool| if b { 'Y' } else { 'N' };
        format!("A={} C={}", yn(self.learnable_adj), yn(self.multi_channel))
    }
}
