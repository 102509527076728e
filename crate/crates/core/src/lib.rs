pub mod assignment;
pub mod model;
pub mod reminder;
pub mod time;
pub mod notify;
pub mod board;
pub mod metrics;
pub mod sim;
