//! Simulation of a bridge that lets inscriptions on a UTXO chain drive
//! smart contracts on an account-model chain, settled by a staked
//! validator committee.

pub mod amount_serde;
pub mod brc20;
pub mod bridge;
pub mod btc;
pub mod committee;
pub mod crypto;
pub mod evm;
pub mod experiment;
pub mod inscription;
pub mod pbft;
pub mod scenario;
pub mod sim;
pub mod units;
