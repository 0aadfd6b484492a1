pub mod distributions;
pub mod ams;
pub mod trace;
pub mod kams;
pub mod packet;
pub mod analysis;
pub mod sweep;
