pub mod causal_api;
pub mod cli;
pub mod cfm_train;
pub mod kvfile;
pub mod metrics;
pub mod numkit;
pub mod ode_engine;
pub mod scm_data;
pub mod velocity_net;
