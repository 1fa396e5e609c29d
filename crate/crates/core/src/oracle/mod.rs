pub mod exact;
pub mod fuzz;
pub mod naive;
pub mod report;
