pub mod archive;
pub mod atm;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod federated;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod mud;
pub mod networks;
pub mod seeding;

pub use error::{Error, Result};
