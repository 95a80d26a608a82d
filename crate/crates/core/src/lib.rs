pub mod authz;
pub mod bench;
pub mod domain;
pub mod graph;
pub mod mediator;
pub mod scenario;
pub mod trace;
