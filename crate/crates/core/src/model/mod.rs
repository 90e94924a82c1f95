//! Network architectures, their configuration, and checkpointing.

pub mod config;
pub mod net;

pub use config::{read_model_config, write_model_config, Arch, ModelConfig};
pub use net::{
    config_sidecar_path, window_leaves, BindMode, Bindings, GroupCount, Model, Param, ParamGroup,
    ParamReport, Trace,
};
