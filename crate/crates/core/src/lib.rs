pub mod model;
pub mod poly;
pub mod sampling;
pub mod relaxation;
pub mod certify;
pub mod mc;
