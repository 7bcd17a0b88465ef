//! Neural generation of sentences from table rows: an order-free row encoder,
//! an attention GRU decoder that can copy cell words, baselines and BLEU
//! evaluation, on a small reverse-mode autodiff engine.

pub mod autodiff;
pub mod baselines;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod synthetic;
pub mod table;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig, ModelFlags};
pub use table::{Instance, RawTable, TableRow};
pub use vocab::Vocabulary;
