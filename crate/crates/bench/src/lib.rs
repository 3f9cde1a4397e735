//! Shared inputs for the criterion benches.

use hpc_core::zoo::{self, AutomatonModel, Model, ProcessModel};

/// Source text of a zoo model's main file.
pub fn source(id: &str) -> &'static str {
    zoo::find(id).expect("zoo id").main.text
}

pub fn process(id: &str) -> ProcessModel {
    zoo::load_process_model(id).expect("zoo process model")
}

pub fn automaton(id: &str) -> AutomatonModel {
    match zoo::load(id).expect("zoo model") {
        Model::Automaton(a) => a,
        Model::Process(_) => panic!("{id} is a process model"),
    }
}
