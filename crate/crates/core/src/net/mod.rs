//! Declarative layer stacks, shape inference, execution and checkpoints.

mod checkpoint;
mod exec;
mod params;
mod spec;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint, MAGIC, VERSION,
};
pub(crate) use checkpoint::{encode_tensor, Reader};
pub use exec::{backward, forward, run_forward, Forward, ForwardOptions};
pub use params::{init_layer, init_params, init_params_with, layer_rng, InitScheme, Checkpoint, ParamPair, INIT_STD};
pub use spec::{
    reference_spec, small_reference_spec, Architecture, EndpointMode, LayerKind, LayerSpec, NetworkSpec,
};
