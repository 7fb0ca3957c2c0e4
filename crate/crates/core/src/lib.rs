pub mod churnsim;
pub mod client;
pub mod gp;
pub mod metrics;
pub mod proto;
pub mod server;
