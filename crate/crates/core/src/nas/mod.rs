//! placeholder
#[derive(Debug, Clone)]
pub struct ArchParams;
#[derive(Debug, Clone)]
pub struct Genotype;
