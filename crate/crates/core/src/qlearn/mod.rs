//! placeholder
#[derive(Debug, Clone)]
pub struct TrainerConfig;
