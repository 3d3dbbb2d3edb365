//! The two multilinear-mixing autoencoders.
//!
//! An encoder (1-D over the spectrum, or 3-D over an `s x s` patch) produces
//! abundances through a softmax. A bias-free linear decoder whose weights are
//! the endmembers yields the linear mixture `y`. A two-block skip-connected
//! head maps `[y, y.x]` to two logits whose softmax gives `P`, and the
//! reconstruction is `(1-P) y / (1 - P y)`.

mod checkpoint;
mod network;
mod plan;
mod train;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, save_checkpoint};
pub use network::{batch_inputs, init_network, mlm_head, slot, ForwardVars, Network, NetworkSpec};
pub use plan::{
    build_dnnsc, build_encoder_1d, build_encoder_3d, encoder_trace, spatial_kernel, DnnscDims, EncoderBlock, Mode,
    TraceStep,
};
pub use train::{infer_maps, loss_history_csv, train, Inference, TrainConfig};
