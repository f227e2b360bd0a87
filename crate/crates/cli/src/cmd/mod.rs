pub mod advantages;
pub mod gradcheck;
pub mod kd;
pub mod score;
pub mod train;
