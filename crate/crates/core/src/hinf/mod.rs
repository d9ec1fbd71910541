pub mod gradient;
pub mod norm;
pub mod oracle;
pub mod riccati;
