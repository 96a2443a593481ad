//! One module per subcommand.

pub mod analysis;
pub mod gen_data;
pub mod gradcheck;
pub mod synth;
pub mod train;

pub use analysis::{corr, dci, eval};
pub use gen_data::gen_data;
pub use gradcheck::gradcheck_cmd;
pub use synth::synth;
pub use train::train;
