pub mod data;
pub mod deform;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;
pub mod viz;
