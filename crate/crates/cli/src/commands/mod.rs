mod eval;
mod gen_data;
mod gradcheck;
mod infer;
mod train;

pub use eval::eval;
pub use gen_data::gen_data;
pub use gradcheck::gradcheck;
pub use infer::infer;
pub use train::train;
