//! Minimal neural-network kernel: a reverse-mode tape, MLPs over flat `f64`
//! parameter vectors, Adam, momentum-averaged copies, and a checkpoint
//! format. Everything downstream (encoders, value functions, policies) is
//! built from these pieces; nothing here knows about environments or
//! training protocols.

pub mod checkpoint;
pub mod mlp;
pub mod optim;
pub mod tape;

pub use mlp::{Activation, Mlp, MlpBinding};
pub use optim::{momentum_update, Adam};
pub use tape::{Grads, Tape, Var};
