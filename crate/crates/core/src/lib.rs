// `!(x > 0.0)` guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod cli;
pub mod clock;
pub mod mitigation;
pub mod positioning;
pub mod ranging;
pub mod scenario;
pub mod tdma;
pub mod tracking;
pub mod types;
