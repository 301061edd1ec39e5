//! Discrete energy minimization: max-flow/min-cut for binary problems and
//! alpha-expansion with label costs for Potts multi-label problems.

mod binary;
mod expansion;
mod maxflow;

pub use binary::BinaryEnergy;
pub use expansion::{alpha_expansion, ExpansionResult, MultiLabelProblem};
pub use maxflow::{min_cut, FlowNetwork, MinCut};
